"""Analytic reference for the qutrit-controlled multi-target cat NOT gate.

The control qubit lives on the two lowest qutrit levels; each target is a
cavity holding one of the two even cat codewords.  Uncoupled spectator SC
qubits (two-level factors placed before the qutrit) never evolve and only
enter the GHZ bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import prod
from typing import Iterator, Sequence, Union

import numpy as np

from .fock import (
    DensityMatrix,
    HilbertSpec,
    StateVector,
    cat_logical,
    fidelity,
    product_state,
    qutrit_state,
)


@dataclass(frozen=True)
class LogicalWord:
    control: str
    targets: tuple[int, ...]

    def __post_init__(self):
        if self.control not in ("g", "e"):
            raise ValueError("control must be 'g' or 'e'")
        targets = tuple(int(b) for b in self.targets)
        if any(b not in (0, 1) for b in targets):
            raise ValueError("target bits must be 0 or 1")
        object.__setattr__(self, "targets", targets)

    def __str__(self) -> str:
        return f"{self.control};{''.join(map(str, self.targets))}"


@dataclass(frozen=True)
class GhzSpec:
    n_cats: int
    m_spectators: int = 0
    alpha: float = 1.25

    def __post_init__(self):
        if self.n_cats < 1:
            raise ValueError("n_cats must be >= 1")
        if self.m_spectators < 0:
            raise ValueError("m_spectators must be >= 0")


def truth_table(word: LogicalWord) -> LogicalWord:
    if word.control == "g":
        return word
    return LogicalWord("e", tuple(1 - b for b in word.targets))


def all_words(n: int) -> Iterator[LogicalWord]:
    for control in ("g", "e"):
        for bits in product((0, 1), repeat=n):
            yield LogicalWord(control, bits)


def encode_word(word: LogicalWord, alpha: float, spec: HilbertSpec) -> StateVector:
    """|control> |cat_{l1}> ... |cat_{ln}> in the composite space."""
    if len(word.targets) != spec.n_cavities:
        raise ValueError("word length must equal the number of cavities")
    cats = [cat_logical(b, alpha, k) for b, k in zip(word.targets, spec.cutoff)]
    return product_state(qutrit_state({word.control: 1.0}), cats)


def _split_dims(dims: Sequence[int], n_spectators: int) -> tuple[int, tuple[int, ...]]:
    if any(d != 2 for d in dims[:n_spectators]) or dims[n_spectators] != 3:
        raise ValueError("expected spectator qubits followed by the qutrit")
    return n_spectators, tuple(dims[n_spectators + 1 :])


def apply_ideal_unitary(psi: StateVector, lam: Union[float, Sequence[float]], t: float, *,
                        n_spectators: int = 0, tol: float = 1e-10) -> StateVector:
    """Apply prod_j exp(i lam_j n_j |e><e| t) exactly in the truncated space.

    ``lam`` is a single dispersive shift or one per cavity.  The |f> level is
    outside this model, so states with |f> population above ``tol`` are rejected.
    """
    slot, cav_dims = _split_dims(psi.dims, n_spectators)
    lams = np.broadcast_to(np.asarray(lam, dtype=float), (len(cav_dims),))
    amps = psi.amplitudes.reshape(prod(psi.dims[:slot]), 3, prod(cav_dims))
    pf = float(np.sum(np.abs(amps[:, 2, :]) ** 2))
    if pf > tol:
        raise ValueError(f"|f> population {pf:.3e} exceeds tolerance")
    photons = np.indices(cav_dims).reshape(len(cav_dims), -1).T
    phase = np.exp(1j * t * (photons @ lams))
    out = amps.copy()
    out[:, 1, :] *= phase
    return StateVector(out.ravel(), psi.dims)


def _spectator_branch(level: str, m: int) -> np.ndarray:
    v = np.array([1.0, 0.0]) if level == "g" else np.array([0.0, 1.0])
    out = np.ones(1)
    for _ in range(m):
        out = np.kron(out, v)
    return out


def initial_plus_state(n: int, alpha: float, spec: HilbertSpec, m_spectators: int = 0) -> StateVector:
    """Control in (|g>+|e>)/sqrt2 and every cavity in cat_0.

    With spectators the SC qubits start in their GHZ state instead, so the
    spectators are correlated with the qutrit branch.
    """
    if n != spec.n_cavities:
        raise ValueError("n must equal the number of cavities")
    cats = [cat_logical(0, alpha, k) for k in spec.cutoff]
    branches = []
    for level in ("g", "e"):
        s = product_state(qutrit_state({level: 1.0}), cats).amplitudes
        branches.append(np.kron(_spectator_branch(level, m_spectators), s))
    dims = (2,) * m_spectators + spec.dims
    return StateVector((branches[0] + branches[1]) / np.sqrt(2), dims).normalized()


def ghz_target(ghz: GhzSpec, spec: HilbertSpec) -> StateVector:
    """(|g..g>|0..0> + |e..e>|1..1>)/norm with spectators in front of the qutrit."""
    if ghz.n_cats != spec.n_cavities:
        raise ValueError("n_cats must equal the number of cavities")
    branches = []
    for level, bit in (("g", 0), ("e", 1)):
        word = LogicalWord(level, (bit,) * ghz.n_cats)
        s = encode_word(word, ghz.alpha, spec).amplitudes
        branches.append(np.kron(_spectator_branch(level, ghz.m_spectators), s))
    dims = (2,) * ghz.m_spectators + spec.dims
    return StateVector(branches[0] + branches[1], dims).normalized()


def word_infidelities(evolve, alpha: float, spec: HilbertSpec, reference: HilbertSpec = None) -> dict:
    """1 - F for every logical word after ``evolve(StateVector) -> StateVector``.

    Outputs are scored against the truth-table word encoded with ``reference``
    cutoffs (default: the working ones), so truncation error shows up when a
    larger reference is given.
    """
    reference = reference or spec
    out = {}
    for word in all_words(spec.n_cavities):
        final = evolve(encode_word(word, alpha, spec))
        ideal = encode_word(truth_table(word), alpha, reference)
        out[word] = 1.0 - fidelity(ideal, pad_cutoff(final, spec, reference))
    return out


def pad_cutoff(state: StateVector, spec: HilbertSpec, larger: HilbertSpec) -> StateVector:
    """Embed a state into a space with equal or larger cavity cutoffs."""
    if state.dims == larger.dims:
        return state
    if larger.n_cavities != spec.n_cavities or any(b < a for a, b in zip(spec.cutoff, larger.cutoff)):
        raise ValueError("target space must have the same cavities and cutoffs at least as large")
    out = np.zeros(larger.dims, dtype=complex)
    out[tuple(slice(0, d) for d in spec.dims)] = state.amplitudes.reshape(spec.dims)
    return StateVector(out.ravel(), larger.dims)


def best_branch_phase(target: StateVector, state: Union[StateVector, DensityMatrix],
                      n_spectators: int = 0) -> tuple[float, float]:
    """Fidelity after the best local phase exp(i phi |e><e|) on the qutrit.

    Returns ``(fidelity, phi)``.  This is a diagnostic only; reported
    fidelities elsewhere are never phase-corrected.
    """
    slot, cav_dims = _split_dims(target.dims, n_spectators)
    mask = np.zeros((prod(target.dims[:slot]), 3, prod(cav_dims)), dtype=bool)
    mask[:, 1, :] = True
    mask = mask.ravel()
    t_e = np.where(mask, target.amplitudes, 0)
    t_r = target.amplitudes - t_e
    if isinstance(state, StateVector):
        rho_tr = state.amplitudes * np.vdot(state.amplitudes, t_r)
        rho_te = state.amplitudes * np.vdot(state.amplitudes, t_e)
    else:
        rho_tr = state.entries @ t_r
        rho_te = state.entries @ t_e
    a = np.vdot(t_r, rho_tr).real
    c = np.vdot(t_e, rho_te).real
    b = np.vdot(t_r, rho_te)
    f2 = a + c + 2 * abs(b)
    return float(np.sqrt(min(max(f2, 0.0), 1.0))), float(np.angle(b))
