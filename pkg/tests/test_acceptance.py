"""Acceptance criteria 1 to 8.

Each test prints a single ``CRITERION n: PASS|FAIL`` line and records it for
the terminal summary.  The sweep fixtures run the default grids at cutoff 15
with 2000 trajectories per point and take roughly half an hour in total.
"""
import numpy as np
import pytest

from conftest import channel, record_acceptance, zero_generator
from hybridcnot.device import (
    MHZ,
    US,
    collapse_operators,
    frame_energies,
    hamiltonian,
    lambda_and_gate_time,
    quality_factors,
    table1_params,
)
from hybridcnot.evolve import EvolutionConfig, evolve_master, evolve_schrodinger, frame_transform
from hybridcnot.experiments import (
    DEFAULT_CS,
    DEFAULT_DELTAS,
    REFERENCE_MINIMA,
    REFERENCE_TOLERANCE,
    SolverConfig,
    SweepSpec,
    run_c_sweep,
    run_delta_sweep,
    run_point,
)
from hybridcnot.fock import (
    DensityMatrix,
    HilbertSpec,
    StateVector,
    annihilation,
    fidelity,
    qutrit_state,
    qutrit_transition,
)
from hybridcnot.gate import apply_ideal_unitary, initial_plus_state, word_infidelities

ALPHA = 1.25
SWEEP_SOLVER = SolverConfig("trajectories", cutoff=15, n_traj=2000, seed=0)


def report(capsys, number, ok, detail):
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    record_acceptance(line)
    with capsys.disabled():
        print("\n" + line)


@pytest.fixture(scope="module")
def delta_sweep(params):
    return run_delta_sweep(SweepSpec("delta", DEFAULT_DELTAS, solver=SWEEP_SOLVER, params=params))


@pytest.fixture(scope="module")
def c_sweep(params):
    return run_c_sweep(SweepSpec("c", DEFAULT_CS, solver=SWEEP_SOLVER, params=params))


def test_criterion_1_truth_table(params, capsys):
    spec = HilbertSpec.uniform(3, 15)
    lam, t_gate = lambda_and_gate_time(params)
    gen = hamiltonian(params, spec, "effective")
    cfg = EvolutionConfig(t_gate, integrator="exact")
    infid = word_infidelities(lambda psi: evolve_schrodinger(gen, psi, cfg).states[-1], ALPHA, spec,
                              HilbertSpec.uniform(3, 25))
    worst = max(infid.values())
    ok = len(infid) == 16 and worst <= 1e-4
    report(capsys, 1, ok, f"16 words at cutoff 15, worst 1 - F = {worst:.2e} (limit 1e-4)")
    assert ok


def test_criterion_2_oracle_equivalence(params, capsys):
    spec = HilbertSpec.uniform(3, 15)
    lam, t_gate = lambda_and_gate_time(params)
    gen = hamiltonian(params, spec, "effective")
    cfg = EvolutionConfig(t_gate, integrator="exact")
    rng = np.random.default_rng(7)
    worst = 1.0
    for _ in range(50):
        amps = rng.normal(size=spec.dim) + 1j * rng.normal(size=spec.dim)
        amps.reshape(3, -1)[2] = 0
        psi = StateVector(amps, spec.dims).normalized()
        out = evolve_schrodinger(gen, psi, cfg).states[-1]
        worst = min(worst, fidelity(apply_ideal_unitary(psi, lam, t_gate), out))
    ok = worst >= 1 - 1e-9
    report(capsys, 2, ok, f"50 random states, min F = 1 - {1 - worst:.2e} (limit 1 - 1e-9)")
    assert ok


def test_criterion_3_derived_scalars(params, capsys):
    g2, g3 = (float(f"{x / MHZ:.3g}") for x in params.g[1:])
    _, t_gate = lambda_and_gate_time(params)
    q = quality_factors(params, 45 * US)
    q_ref = (9.16e5, 9.07e5, 8.99e5)
    q_ok = all(abs(a - b) <= 0.005 * b for a, b in zip(q, q_ref))
    ok = (g2, g3) == (5.51, 6.36) and abs(t_gate / US - 0.74) <= 0.005 and q_ok
    report(capsys, 3, ok, f"g2 = {g2} MHz, g3 = {g3} MHz, t_gate = {t_gate / US:.4f} us, "
                          f"Q = {', '.join(f'{x:.4g}' for x in q)}")
    assert ok


def _bound_check(result, variable, capsys, number):
    values = (-0.1, 0.0, 0.1) if variable == "delta" else (-0.05, 0.0, 0.05)
    table = result.table()
    parts, ok = [], True
    for k, ref in REFERENCE_MINIMA[variable].items():
        rows = [table[k][v] for v in values]
        worst = min(rows, key=lambda r: r.fidelity)
        comp = min(r.compensated_fidelity for r in rows)
        good = worst.fidelity >= ref - REFERENCE_TOLERANCE
        ok &= good
        parts.append(f"kappa_inv {k:g} us: min F = {worst.fidelity:.4f} +- {worst.stderr:.4f} "
                     f"vs {ref - REFERENCE_TOLERANCE:.4f} (phase-compensated {comp:.4f})")
    report(capsys, number, ok, "; ".join(parts))
    return ok


def test_criterion_4_delta_bounds(delta_sweep, capsys):
    assert _bound_check(delta_sweep, "delta", capsys, 4)


def test_criterion_5_mismatch_bounds(c_sweep, capsys):
    assert _bound_check(c_sweep, "c", capsys, 5)


def test_criterion_6_solver_cross_validation(params, capsys):
    traj = SolverConfig("trajectories", cutoff=6, n_traj=2000, seed=11)
    master = SolverConfig("master", cutoff=6)
    parts, ok = [], True
    for delta in (-0.1, 0.0, 0.1):
        a = run_point(params, delta, 0.0, 45 * US, traj)
        b = run_point(params, delta, 0.0, 45 * US, master)
        diff = abs(a.fidelity - b.fidelity)
        ok &= diff <= 3 * a.stderr
        parts.append(f"delta {delta:+g}: |dF| = {diff:.4f} vs 3 SE = {3 * a.stderr:.4f}")
    report(capsys, 6, ok, "cutoff 6; " + "; ".join(parts))
    assert ok


def _damped_population(kappa, step, cutoff=3):
    rho = np.zeros((cutoff + 1, cutoff + 1))
    rho[1, 1] = 1
    cfg = EvolutionConfig(2 / kappa, method="rk4_master", step=step)
    res = evolve_master(zero_generator((cutoff + 1,)), [channel(kappa, annihilation(cutoff))],
                        DensityMatrix(rho, (cutoff + 1,)), cfg)
    return res.states[-1].entries[1, 1].real


def test_criterion_7_physics_suite(params, capsys):
    checks = {}

    # trace and positivity on a dissipative gate run, recorded along the way
    spec = HilbertSpec.uniform(3, 3)
    _, t_gate = lambda_and_gate_time(params)
    gen = hamiltonian(params, spec, "full", "rotating", drop_gprime=True)
    times = tuple(np.linspace(0.1, 1.0, 10) * t_gate)
    res = evolve_master(gen, collapse_operators(params, spec), initial_plus_state(3, ALPHA, spec).density(),
                        EvolutionConfig(t_gate, method="rk4_master", integrator="exact", record_times=times))
    checks["trace drift"] = (res.trace_drift, res.trace_drift <= 1e-7)
    lmin = min(res.min_eigenvalues)
    checks["min eigenvalue"] = (lmin, res.positivity_ok and lmin >= -1e-6 and len(res.min_eigenvalues) == 10)

    kappa = 1 / (45 * US)
    err = abs(_damped_population(kappa, 0.02 / kappa) - np.exp(-2.0))
    checks["damped cavity"] = (err, err <= 1e-6)

    gamma = 1 / (20 * US)
    dtimes = tuple(np.linspace(0.5, 3, 6) / gamma)
    plus = qutrit_state({"g": 1, "e": 1}).normalized()
    deph = evolve_master(zero_generator((3,)), [channel(gamma, qutrit_transition("e", "e"))], plus.density(),
                         EvolutionConfig(dtimes[-1], method="rk4_master", step=0.02 / gamma, record_times=dtimes))
    err = max(abs(abs(r.entries[0, 1]) - 0.5 * np.exp(-gamma * t / 2)) for t, r in zip(dtimes, deph.states))
    checks["pure dephasing"] = (err, err <= 1e-6)

    h = 0.1 / kappa
    ref = _damped_population(kappa, h / 4)
    ratio = abs(_damped_population(kappa, h) - ref) / abs(_damped_population(kappa, h / 2) - ref)
    checks["rk4 ratio"] = (ratio, abs(ratio - 16) <= 3)

    spec4 = HilbertSpec.uniform(3, 4)
    psi = initial_plus_state(3, ALPHA, spec4)
    rec = tuple(np.linspace(0.25, 1.0, 4) * t_gate)
    lab = evolve_schrodinger(hamiltonian(params, spec4, "lab"), psi,
                             EvolutionConfig(t_gate, integrator="exact", record_times=rec))
    inter = evolve_schrodinger(hamiltonian(params, spec4, "full", "interaction"), psi,
                               EvolutionConfig(t_gate, record_times=rec))
    shift = frame_energies(params, spec4, "interaction")
    err = max(np.max(np.abs(frame_transform(a, shift, t, 1).amplitudes - b.amplitudes))
              for t, a, b in zip(rec, lab.states, inter.states))
    checks["frame equivalence"] = (err, err <= 1e-6)

    lams = table1_params().lambdas
    resid = float(np.max(np.abs(lams - lams[0])) / abs(lams[0]))
    checks["lambda residual"] = (resid, resid < 1e-12)

    ok = all(good for _, good in checks.values())
    detail = ", ".join(f"{name} {val:.3g}{'' if good else ' (FAIL)'}" for name, (val, good) in checks.items())
    report(capsys, 7, ok, detail)
    assert ok


def test_criterion_8_monotonicity(delta_sweep, c_sweep, capsys):
    issues = delta_sweep.monotonicity() + c_sweep.monotonicity()
    ok = not issues
    detail = "no ordering violations beyond 3 SE" if ok else f"{len(issues)} violation(s): " + "; ".join(issues)
    report(capsys, 8, ok, detail)
    assert ok
