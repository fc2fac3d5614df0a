import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse
from scipy.special import factorial

from hybridcnot.fock import (
    DensityMatrix,
    HilbertSpec,
    SparseOperator,
    StateVector,
    annihilation,
    cat_logical,
    cat_normalizer,
    coherent_state,
    embed,
    fidelity,
    identity,
    number_operator,
    product_state,
    qutrit_state,
    qutrit_transition,
)

ALPHA = 1.25


def fock(n, cutoff):
    v = np.zeros(cutoff + 1)
    v[n] = 1
    return StateVector(v, (cutoff + 1,))


def test_vacuum_coherent_state():
    state, deficit = coherent_state(0, 10, with_deficit=True)
    assert state.amplitudes[0] == 1
    assert np.count_nonzero(state.amplitudes) == 1
    assert deficit == 0


def test_coherent_mean_photon_number():
    psi = coherent_state(ALPHA, 15)
    n = psi.expect(number_operator(15)).real
    assert n == pytest.approx(ALPHA**2, abs=1e-6)


def test_coherent_overlap_with_mirror():
    a = coherent_state(ALPHA, 15)
    b = coherent_state(-ALPHA, 15)
    assert abs(a.overlap(b)) == pytest.approx(math.exp(-2 * ALPHA**2), abs=1e-6)


def test_coherent_amplitudes_follow_poisson_form():
    psi, deficit = coherent_state(0.7 + 0.2j, 30, with_deficit=True)
    n = np.arange(31)
    ref = (0.7 + 0.2j) ** n / np.sqrt(factorial(n))
    ref /= np.linalg.norm(ref)
    assert np.allclose(psi.amplitudes, ref, atol=1e-14)
    assert 0 <= deficit < 1e-15


def test_truncation_deficit_grows_when_cutoff_shrinks():
    _, small = coherent_state(ALPHA, 4, with_deficit=True)
    _, large = coherent_state(ALPHA, 15, with_deficit=True)
    assert small > large >= 0


@pytest.mark.parametrize("amp, cutoff", [(np.nan, 5), (np.inf, 5), (1.0, 0)])
def test_coherent_state_rejects_bad_input(amp, cutoff):
    with pytest.raises(ValueError):
        coherent_state(amp, cutoff)


def test_even_cat_has_no_odd_components():
    c0 = cat_logical(0, ALPHA, 15).amplitudes
    assert np.all(c0[1::2] == 0)


@pytest.mark.parametrize("bit", [0, 1])
@pytest.mark.parametrize("alpha", [0.5, 1.25, 2.0])
def test_both_codewords_are_even(bit, alpha):
    amps = cat_logical(bit, alpha, 20).amplitudes
    assert np.all(amps[1::2] == 0)


def test_cat_overlap_closed_form():
    overlap = abs(cat_logical(0, ALPHA, 15).overlap(cat_logical(1, ALPHA, 15)))
    expected = math.cos(ALPHA**2) / math.cosh(ALPHA**2)
    assert overlap == pytest.approx(abs(expected), abs=1e-8)
    assert overlap == pytest.approx(3.33e-3, abs=5e-6)


def test_cat_normalizer_value():
    assert cat_normalizer(ALPHA) == pytest.approx(0.69207, abs=1e-5)
    # oracle: norm of |a> + |-a> computed numerically in a large space
    c = coherent_state(ALPHA, 60).amplitudes + coherent_state(-ALPHA, 60).amplitudes
    assert cat_normalizer(ALPHA) == pytest.approx(1 / np.linalg.norm(c), abs=1e-12)


@pytest.mark.parametrize("bit, alpha", [(2, 1.0), (0, 0.0), (1, -1.0)])
def test_cat_logical_rejects_bad_input(bit, alpha):
    with pytest.raises(ValueError):
        cat_logical(bit, alpha, 10)


def test_cat_overlap_converged_in_cutoff():
    def ov(k):
        return cat_logical(0, ALPHA, k).overlap(cat_logical(1, ALPHA, k))

    assert abs(ov(15) - ov(20)) < 1e-8


def test_annihilation_ladder():
    a = annihilation(6)
    assert np.allclose((a @ fock(0, 6)).amplitudes, 0)
    assert np.allclose((a @ fock(1, 6)).amplitudes, fock(0, 6).amplitudes)
    n_op = a.dag() @ a
    for n in range(7):
        assert np.allclose((n_op @ fock(n, 6)).amplitudes, n * fock(n, 6).amplitudes)


def test_annihilation_rejects_zero_cutoff():
    with pytest.raises(ValueError):
        annihilation(0)


def test_qutrit_transitions():
    g, e = qutrit_state({"g": 1}), qutrit_state({"e": 1})
    lower = qutrit_transition("e", "g")
    assert np.allclose((lower @ e).amplitudes, g.amplitudes)
    assert np.allclose((lower @ g).amplitudes, 0)
    p = qutrit_transition("e", "e")
    assert np.allclose((p @ p).dense(), p.dense())
    with pytest.raises(ValueError):
        qutrit_transition("x", "g")


def test_embed_identity_and_commutation():
    spec = HilbertSpec.uniform(3, 3)
    assert (embed(identity((4,)), 2, spec) - identity(spec.dims)).nnz == 0
    a1 = embed(annihilation(3), 1, spec)
    a2d = embed(annihilation(3).dag(), 2, spec)
    assert (a1 @ a2d - a2d @ a1).nnz == 0


def test_embed_rejects_mismatched_dimension():
    spec = HilbertSpec.uniform(2, 3)
    with pytest.raises(ValueError):
        embed(annihilation(5), 1, spec)
    with pytest.raises(ValueError):
        embed(annihilation(3), 7, spec)


def test_even_cat_photon_number_in_product_space():
    spec = HilbertSpec.uniform(3, 15)
    psi = product_state(qutrit_state({"g": 1}), [cat_logical(0, ALPHA, 15)] * 3)
    n1 = psi.expect(embed(number_operator(15), 1, spec)).real
    assert n1 == pytest.approx(ALPHA**2 * math.tanh(ALPHA**2), abs=1e-5)
    assert n1 == pytest.approx(1.4310, abs=1e-4)


def test_fidelity_limits():
    psi = cat_logical(0, ALPHA, 8)
    assert fidelity(psi, psi.density()) == pytest.approx(1.0)
    d = psi.dim
    mixed = DensityMatrix(np.eye(d) / d, psi.dims)
    assert fidelity(psi, mixed) == pytest.approx(1 / math.sqrt(d))
    f = fidelity(cat_logical(0, ALPHA, 15), cat_logical(1, ALPHA, 15))
    assert f == pytest.approx(3.33e-3, abs=5e-6)


def test_fidelity_rejects_mismatch_and_unnormalized():
    a = cat_logical(0, ALPHA, 8)
    with pytest.raises(ValueError):
        fidelity(a, cat_logical(0, ALPHA, 9))
    with pytest.raises(ValueError):
        fidelity(StateVector(2 * a.amplitudes, a.dims), a)


def test_flatten_unflatten_bijection():
    spec = HilbertSpec(3, (4, 2, 3))
    seen = set()
    for idx in range(spec.dim):
        level, photons = spec.unflatten(idx)
        assert spec.flatten(level, photons) == idx
        seen.add((level, photons))
    assert len(seen) == spec.dim


def test_flatten_puts_qutrit_slowest():
    spec = HilbertSpec.uniform(2, 2)
    assert spec.flatten("e", (0, 0)) == 9
    assert spec.flatten("g", (0, 1)) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2), st.integers(1, 3), st.data())
def test_embed_preserves_spectrum(slot, cutoff, data):
    spec = HilbertSpec.uniform(2, cutoff)
    d = spec.dims[slot]
    re = data.draw(st.lists(st.floats(-2, 2), min_size=d * d, max_size=d * d))
    im = data.draw(st.lists(st.floats(-2, 2), min_size=d * d, max_size=d * d))
    m = np.array(re).reshape(d, d) + 1j * np.array(im).reshape(d, d)
    m = m + m.conj().T
    op = SparseOperator(sparse.csr_matrix(m), (d,))
    big = embed(op, slot, spec).dense()
    mult = spec.dim // d
    expected = np.sort(np.repeat(np.linalg.eigvalsh(m), mult))
    assert np.allclose(np.sort(np.linalg.eigvalsh(big)), expected, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2.5, 2.5), st.floats(-2.5, 2.5))
def test_coherent_states_normalized(re, im):
    psi = coherent_state(complex(re, im), 30)
    assert psi.norm() == pytest.approx(1.0, abs=1e-12)


def test_partial_trace_of_product():
    q = qutrit_state({"g": 1, "e": 1}).normalized()
    cav = coherent_state(0.5, 4)
    rho = product_state(q, [cav]).density()
    red = rho.partial_trace([0])
    assert np.allclose(red.entries, np.outer(q.amplitudes, q.amplitudes.conj()))
