"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 a physics threshold
was not met, 3 numerical failure or an interrupted run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .device import (
    US,
    diagnose_conditions,
    hamiltonian,
    lambda_and_gate_time,
    quality_factors,
)
from .evolve import (
    DimensionGuardError,
    EvolutionConfig,
    InstabilityError,
    StepSizeError,
    evolve_schrodinger,
)
from .experiments import (
    REFERENCE_MINIMA,
    REFERENCE_TOLERANCE,
    SweepSpec,
    rotation_errors,
    run_convergence,
    run_sweep,
)
from .fock import HilbertSpec, StateVector, fidelity
from .gate import GhzSpec, ghz_target, initial_plus_state, word_infidelities

EXIT_OK, EXIT_USAGE, EXIT_PHYSICS, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("hybridcnot")


class UsageError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file or preset name (default: table1 preset)")
    common.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("--seed", type=int, help="trajectory seed")
    common.add_argument("--cutoff", type=int, help="Fock cutoff per cavity")
    common.add_argument("--solver", choices=("trajectories", "master"), help="solver back end")
    common.add_argument("--n-traj", type=int, help="number of trajectories")
    common.add_argument("--output-dir", help="directory for CSV and manifest files")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="hybridcnot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagnose", parents=[common], help="check coupling conditions and derived scalars")
    p.add_argument("--threshold", type=float, help="minimum acceptable ratio (default from config)")

    p = sub.add_parser("verify-gate", parents=[common], help="truth table of the effective gate")
    p.add_argument("--threshold", type=float, help="maximum infidelity per word")

    p = sub.add_parser("sweep", parents=[common], help="fidelity sweep over delta or c")
    p.add_argument("--var", required=True, choices=("delta", "c"))
    p.add_argument("--grid", type=_floats, help="comma-separated grid values")
    p.add_argument("--kappa-inv-us", type=_floats, help="comma-separated cavity lifetimes in microseconds")

    p = sub.add_parser("ghz", parents=[common], help="GHZ preparation with the effective gate")
    p.add_argument("--n-cats", type=int)
    p.add_argument("--m-spectators", type=int)

    p = sub.add_parser("converge", parents=[common], help="cutoff and step convergence at delta = c = 0")
    p.add_argument("--cutoffs", type=_ints)
    p.add_argument("--resolutions", type=_floats)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides = [("solver", "seed", args.seed), ("solver", "n_traj", args.n_traj),
                 ("solver", "method", args.solver)]
    if args.cutoff is not None:
        section = "gate" if args.command in ("verify-gate", "ghz") else "solver"
        overrides.append((section, "cutoff", args.cutoff))
    cmd = args.command
    if cmd in ("diagnose",):
        overrides.append(("diagnose", "threshold", args.threshold))
    if cmd == "verify-gate":
        overrides.append(("gate", "threshold", args.threshold))
    if cmd == "sweep":
        overrides.append(("sweep", args.var, args.grid))
        overrides.append(("sweep", "kappa_inv_us", args.kappa_inv_us))
    if cmd == "ghz":
        overrides += [("ghz", "n_cats", args.n_cats), ("ghz", "m_spectators", args.m_spectators)]
    if cmd == "converge":
        overrides += [("converge", "cutoffs", args.cutoffs), ("converge", "resolutions", args.resolutions)]
    for section, key, value in overrides:
        if value is not None:
            cfg = cfg.set(section, key, value)
    if args.output_dir is not None:
        cfg.values["output_dir"] = str(args.output_dir)
    return cfg


def cmd_diagnose(cfg: RunConfig, out=None) -> int:
    params = cfg.device_params()
    threshold = cfg.get("diagnose", "threshold")
    report = diagnose_conditions(params, threshold)
    lam, t_gate = lambda_and_gate_time(params)
    print(f"cavities: {params.n}", file=out)
    for j, r in enumerate(report.detuning_ratios):
        print(f"  cavity {j + 1}: Delta/2pi = {params.detuning[j] / (2 * np.pi * 1e6):.3f} MHz, "
              f"g/2pi = {params.g[j] / (2 * np.pi * 1e6):.4f} MHz, |Delta|/g = {r:.4g}", file=out)
    for pair, q in report.pair_quotients.items():
        print(f"  pair {pair}: induced-coupling quotient = {q:.4g}", file=out)
    print(f"lambda/2pi = {lam / (2 * np.pi * 1e6):.6f} MHz, relative spread = {report.lambda_spread:.3e}", file=out)
    print(f"t_gate = {t_gate / US:.4f} us", file=out)
    if all(k > 0 for k in params.kappa):
        q = [params.omega_c[j] / params.kappa[j] for j in range(params.n)]
        print("Q = " + ", ".join(f"{x:.4g}" for x in q), file=out)
    else:
        print("Q = inf (cavity decay disabled)", file=out)
    for flag in report.flags:
        print(f"WARNING: {flag}", file=out)
    print("all conditions satisfied" if report.ok else f"{len(report.flags)} condition(s) violated", file=out)
    return EXIT_OK if report.ok else EXIT_PHYSICS


def _effective_evolver(params, spec: HilbertSpec, t: float):
    gen = hamiltonian(params, spec, "effective", "interaction")
    cfg = EvolutionConfig(t, integrator="exact")

    def evolve(psi: StateVector) -> StateVector:
        return evolve_schrodinger(gen, psi, cfg).states[-1]
    return evolve


def cmd_verify_gate(cfg: RunConfig, out=None) -> int:
    params = cfg.device_params()
    cutoff = cfg.get("gate", "cutoff")
    threshold = cfg.get("gate", "threshold")
    spec = HilbertSpec.uniform(params.n, cutoff)
    reference = HilbertSpec.uniform(params.n, cutoff + cfg.get("gate", "reference_extra"))
    _, t_gate = lambda_and_gate_time(params)
    infid = word_infidelities(_effective_evolver(params, spec, t_gate), params.alpha, spec, reference)
    n_pass = 0
    for word, x in infid.items():
        ok = x <= threshold
        n_pass += ok
        print(f"  {word}: 1 - F = {x:.3e} {'pass' if ok else 'FAIL'}", file=out)
    print(f"{n_pass}/{len(infid)} words within {threshold:g} (cutoff {cutoff})", file=out)
    if n_pass != len(infid):
        print(f"FAIL: worst infidelity {max(infid.values()):.3e} exceeds {threshold:g}", file=out)
        return EXIT_PHYSICS
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, variable: str, out=None) -> int:
    params = cfg.device_params()
    grid = cfg.get("sweep", variable)
    kappas = cfg.get("sweep", "kappa_inv_us")
    if not grid or not kappas:
        raise UsageError("sweep grid and kappa list must be nonempty")
    try:
        spec = SweepSpec(variable, tuple(sorted(grid)), tuple(k * US for k in kappas),
                         cfg.solver_config(), params)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out_dir = cfg.output_dir
    result = run_sweep(spec, out_dir)
    csv_path, man_path = result.write(out_dir)
    print(f"wrote {csv_path} and {man_path}", file=out)
    lo, hi = min(grid), max(grid)
    minima = result.interval_minima(lo, hi)
    comp = {}
    for r in result.rows:
        comp[r.kappa_inv_us] = min(comp.get(r.kappa_inv_us, 1.0), r.compensated_fidelity)
    bounds = REFERENCE_MINIMA[variable]
    failed = False
    for k, fmin in minima.items():
        line = f"kappa_inv = {k:g} us: min F over [{lo:g}, {hi:g}] = {fmin:.4f}"
        line += f" (phase-compensated {comp[k]:.4f})"
        if k in bounds:
            ok = fmin >= bounds[k] - REFERENCE_TOLERANCE
            failed |= not ok
            line += f" vs reference {bounds[k]:.4f} - {REFERENCE_TOLERANCE:g}: {'PASS' if ok else 'FAIL'}"
        print(line, file=out)
    if variable == "delta":
        for k, asym in result.asymmetry().items():
            for v, d in asym.items():
                print(f"  asymmetry kappa_inv = {k:g} us: F({v:g}) - F({-v:g}) = {d:+.4f}", file=out)
    else:
        for v in grid:
            if v != 0:
                errs = rotation_errors(params, v)
                print(f"  c = {v:g}: residual rotation per cavity = "
                      + ", ".join(f"{e:+.4f}" for e in errs) + " rad", file=out)
    issues = result.monotonicity()
    for issue in issues:
        print(f"ordering violation: {issue}", file=out)
    return EXIT_PHYSICS if failed or issues else EXIT_OK


def cmd_ghz(cfg: RunConfig, out=None) -> int:
    params = cfg.device_params()
    n = cfg.get("ghz", "n_cats")
    m = cfg.get("ghz", "m_spectators")
    if n != params.n:
        raise UsageError(f"n_cats = {n} but the device has {params.n} cavities")
    spec = HilbertSpec.uniform(n, cfg.get("gate", "cutoff"))
    _, t_gate = lambda_and_gate_time(params)
    evolve = _effective_evolver(params, spec, t_gate)
    psi0 = initial_plus_state(n, params.alpha, spec, m)
    # spectators never evolve, so each spectator branch is propagated on its own
    rows = psi0.amplitudes.reshape(2**m, spec.dim)
    final = np.zeros_like(rows)
    for i, row in enumerate(rows):
        weight = np.linalg.norm(row)
        if weight > 0:
            final[i] = weight * evolve(StateVector(row / weight, spec.dims)).amplitudes
    final = StateVector(final.ravel(), psi0.dims)
    target = ghz_target(GhzSpec(n, m, params.alpha), spec)
    f0 = fidelity(target, psi0)
    f1 = fidelity(target, final)
    threshold = cfg.get("gate", "threshold")
    print(f"n_cats = {n}, spectators = {m}, cutoff = {spec.cutoff[0]}", file=out)
    print(f"overlap with GHZ target before the gate: {f0:.6f}", file=out)
    print(f"fidelity after the gate: {f1:.10f}", file=out)
    if 1 - f1 > threshold:
        print(f"FAIL: infidelity {1 - f1:.3e} exceeds {threshold:g}", file=out)
        return EXIT_PHYSICS
    return EXIT_OK


def cmd_converge(cfg: RunConfig, out=None) -> int:
    params = cfg.device_params()
    cutoffs = cfg.get("converge", "cutoffs")
    resolutions = cfg.get("converge", "resolutions")
    if not cutoffs or not resolutions:
        raise UsageError("cutoff and resolution lists must be nonempty")
    threshold = cfg.get("converge", "threshold")
    solver = cfg.solver_config()
    kappa_inv = 1.0 / params.kappa[0] if params.kappa[0] > 0 else None
    table = run_convergence(params, cutoffs, resolutions, solver, kappa_inv, threshold)
    print("cutoff  resolution  fidelity    stderr", file=out)
    for r in table.rows:
        print(f"{r.cutoff:6d}  {r.resolution:10g}  {r.fidelity:.6f}  {r.stderr:.2e}", file=out)
    status = EXIT_OK
    for by in ("cutoff", "resolution"):
        for lo, hi, d in table.flagged(by):
            print(f"flag: {by} {lo:g} -> {hi:g} changes F by {d:.2e} (>= {threshold:g})", file=out)
        at = table.converged_at(by)
        steps = table.deltas(by)
        if steps:
            print(f"{by}: converged from {at:g}" if at is not None else f"{by}: not converged", file=out)
            if steps and steps[-1][2] >= threshold:
                status = EXIT_PHYSICS
    return status


COMMANDS = {
    "diagnose": lambda cfg, args: cmd_diagnose(cfg),
    "verify-gate": lambda cfg, args: cmd_verify_gate(cfg),
    "sweep": lambda cfg, args: cmd_sweep(cfg, args.var),
    "ghz": lambda cfg, args: cmd_ghz(cfg),
    "converge": lambda cfg, args: cmd_converge(cfg),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            sys.stdout.write(cfg.dump())
            return EXIT_OK
        cfg.device_params()
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstabilityError, StepSizeError, DimensionGuardError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except KeyboardInterrupt:
        print("interrupted; partial results were flushed to the output directory", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
