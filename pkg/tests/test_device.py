import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from hybridcnot.device import (
    GHZ,
    MHZ,
    US,
    collapse_operators,
    condition_warnings,
    diagnose_conditions,
    excitation_blocks_conserved,
    free_energies,
    hamiltonian,
    lambda_and_gate_time,
    quality_factors,
    solve_matched_couplings,
    table1_params,
)
from hybridcnot.fock import HilbertSpec, embed, number_operator, qutrit_transition


@pytest.fixture(scope="module")
def params():
    return table1_params()


@pytest.fixture(scope="module")
def small_spec():
    return HilbertSpec.uniform(3, 2)


def test_table1_detunings_and_derived_couplings(params):
    assert params.detuning / MHZ == pytest.approx([60, 90, 120])
    assert params.omega_fg / GHZ == pytest.approx(7.3)
    assert params.g_tilde[0] / MHZ == pytest.approx(3.182, abs=5e-4)
    assert params.g_prime[0] / MHZ == pytest.approx(0.045)
    assert params.g_cross[0][1] == pytest.approx(0.01 * max(params.g))
    assert params.alpha == 1.25


def test_matched_couplings_table_values(params):
    g = solve_matched_couplings(4.5 * MHZ, params.detuning)
    assert round(g[1] / MHZ, 2) == 5.51
    assert round(g[2] / MHZ, 2) == 6.36


def test_matched_couplings_equal_detunings():
    g = solve_matched_couplings(4.5 * MHZ, [60 * MHZ] * 3)
    assert g == pytest.approx((4.5 * MHZ,) * 3, rel=1e-15)


def test_matched_couplings_with_mismatch(params):
    c = 0.05
    g = solve_matched_couplings(4.5 * MHZ, params.detuning, c)
    det = params.detuning
    assert g[2] == pytest.approx(4.5 * MHZ * np.sqrt(det[2] / ((1 - c) * det[0])), rel=1e-14)
    assert g[2] / MHZ == pytest.approx(6.529, abs=5e-4)
    lams = np.asarray(g) ** 2 / det
    assert lams[1] == pytest.approx(lams[0] / (1 + c), rel=1e-13)
    assert lams[2] == pytest.approx(lams[0] / (1 - c), rel=1e-13)


@pytest.mark.parametrize("c, dets", [(1.0, [1, 2, 3]), (0.1, [1, 2]), (0.0, [1, -2, 3])])
def test_matched_couplings_errors(c, dets):
    with pytest.raises(ValueError):
        solve_matched_couplings(1.0, dets, c)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(10, 500), min_size=1, max_size=5), st.floats(0.5, 20))
def test_matched_couplings_residual(dets_mhz, g1_mhz):
    det = np.asarray(dets_mhz) * MHZ
    g = np.asarray(solve_matched_couplings(g1_mhz * MHZ, det))
    lams = g**2 / det
    assert np.max(np.abs(lams - lams[0])) / lams[0] < 1e-12


def test_lambda_and_gate_time(params):
    lam, t = lambda_and_gate_time(params, assert_matched=True)
    assert lam / MHZ == pytest.approx(0.3375, rel=1e-12)
    assert t / US == pytest.approx(0.7407, abs=1e-4)
    doubled = params.with_couplings([2 * x for x in params.g])
    assert lambda_and_gate_time(doubled)[1] == pytest.approx(t / 4, rel=1e-12)


def test_gate_time_rejects_mismatch_when_asked(params):
    g = solve_matched_couplings(params.g[0], params.detuning, 0.05)
    with pytest.raises(ValueError):
        lambda_and_gate_time(params.with_couplings(g), assert_matched=True)


def test_quality_factors(params):
    q = quality_factors(params, 45 * US)
    assert np.allclose(q, [9.16e5, 9.07e5, 8.99e5], rtol=5e-3)
    assert quality_factors(params, 90 * US) == pytest.approx(tuple(2 * x for x in q))
    assert round(quality_factors(params, 100 * US)[0] / 1e6, 2) == 2.04
    with pytest.raises(ValueError):
        quality_factors(params, 0)


def test_diagnose_table1(params):
    rep = diagnose_conditions(params)
    assert rep.ok
    assert rep.detuning_ratios[0] == pytest.approx(60 / 4.5)
    assert rep.pair_metrics[(1, 2)] / MHZ**2 == pytest.approx(1080, rel=1e-12)
    assert params.g[0] * params.g[1] / MHZ**2 == pytest.approx(24.8, abs=0.05)
    assert round(rep.pair_quotients[(1, 2)], 1) == pytest.approx(43.5)
    assert rep.pair_quotients[(1, 2)] == pytest.approx(1080 / 24.8, rel=2e-3)
    assert rep.lambda_spread < 1e-12


def test_diagnose_flags_equal_detunings(params):
    flat = params.replace(omega_c=(params.omega_c[0],) * 3).with_couplings([params.g[0]] * 3)
    rep = diagnose_conditions(flat)
    assert not rep.ok
    assert all(m == 0 for m in rep.pair_metrics.values())
    with pytest.warns(UserWarning):
        condition_warnings(flat)


def test_collapse_channel_count(params, small_spec):
    channels = collapse_operators(params, small_spec)
    assert len(channels) == 8
    assert collapse_operators(params.decoherence_free(), small_spec) == []


def test_effective_tier_structure(params, small_spec):
    gen = hamiltonian(params, small_spec, "effective")
    h = gen.static_matrix
    occ = small_spec.occupations()
    g_rows = occ[:, 0] == 0
    assert abs(h[g_rows]).sum() == 0
    lam = params.lambdas[0]
    e_rows = np.flatnonzero(occ[:, 0] == 1)
    assert np.allclose(h.diagonal()[e_rows], -lam * occ[e_rows, 1:].sum(axis=1))
    ops = [embed(qutrit_transition("e", "e"), 0, small_spec).matrix]
    ops += [embed(number_operator(2), j, small_spec).matrix for j in (1, 2, 3)]
    for op in ops:
        assert abs(h @ op - op @ h).sum() < 1e-9


def test_f_branch_difference_only(params, small_spec):
    with_f = hamiltonian(params, small_spec, "effective_with_f").static_matrix
    plain = hamiltonian(params, small_spec, "effective").static_matrix
    diff = (with_f - plain).tocoo()
    occ = small_spec.occupations()
    assert diff.nnz > 0
    assert np.all(occ[diff.row, 0] == 2) and np.all(occ[diff.col, 0] == 2)


def test_full_tier_term_count_and_hermiticity(params, small_spec):
    gen = hamiltonian(params, small_spec, "full")
    # e-f, g-f, g-e per cavity plus three crosstalk pairs, each with its conjugate
    assert 2 * len(gen.terms) == 2 * (3 + 3 + 3 + 3)
    rng = np.random.default_rng(7)
    for t in rng.uniform(0, 1e-6, 100):
        assert gen(t).hermiticity_residual() < 1e-12 * max(1.0, gen.norm_bound())


def test_drop_gprime_removes_three_terms(params, small_spec):
    gen = hamiltonian(params, small_spec, "full", drop_gprime=True)
    assert len(gen.terms) == 9


def test_lab_and_interaction_frames_agree(params):
    spec = HilbertSpec.uniform(3, 1)
    lab = hamiltonian(params, spec, "lab").static_matrix.toarray()
    inter = hamiltonian(params, spec, "full", "interaction")
    e0 = free_energies(params, spec)
    rng = np.random.default_rng(1)
    for t in rng.uniform(0, 1e-6, 5):
        u = np.exp(1j * e0 * t)
        rotated = u[:, None] * (lab - np.diag(e0)) * u.conj()[None, :]
        ref = inter.matrix_at(t).toarray()
        assert np.max(np.abs(rotated - ref)) < 1e-10 * np.max(np.abs(lab))


def test_rotating_frame_static_without_gprime(params, small_spec):
    gen = hamiltonian(params, small_spec, "full", "rotating", drop_gprime=True)
    assert gen.is_static
    assert excitation_blocks_conserved(gen, small_spec)
    with pytest.raises(ValueError):
        hamiltonian(params, small_spec, "effective", "rotating")


def test_device_params_validation(params):
    with pytest.raises(ValueError):
        params.replace(omega_fg=params.omega_fg * 1.1)
    with pytest.raises(ValueError):
        params.replace(kappa=(-1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        params.replace(g=(1.0, 2.0))


def test_hamiltonian_rejects_unknown_tier(params, small_spec):
    with pytest.raises(ValueError):
        hamiltonian(params, small_spec, "nonsense")
    assert sp.issparse(hamiltonian(params, small_spec, "ideal").matrix_at(0.0))
