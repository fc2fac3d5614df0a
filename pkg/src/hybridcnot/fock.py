"""Truncated Fock-space linear algebra for one qutrit and ``n`` cavities.

Basis ordering is fixed: the qutrit is the slowest index (levels g, e, f),
followed by cavities 1..n with the last cavity fastest.  Every carrier keeps
the tuple of subsystem dimensions (``dims``) so that states built for
different truncations cannot be mixed silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

LEVELS = ("g", "e", "f")
QUTRIT_DIM = 3

ALGEBRA_TOL = 1e-10
NORM_TOL = 1e-8


def _level_index(level: Union[str, int]) -> int:
    if isinstance(level, str) and level in LEVELS:
        return LEVELS.index(level)
    if isinstance(level, (int, np.integer)) and not isinstance(level, bool) and 0 <= level < 3:
        return int(level)
    raise ValueError(f"invalid qutrit level {level!r}; expected one of {LEVELS}")


@dataclass(frozen=True)
class HilbertSpec:
    """Layout of the composite space: qutrit x cavity_1 x ... x cavity_n.

    ``cutoff[j]`` is the largest retained photon number of cavity ``j + 1``.
    """

    n_cavities: int
    cutoff: tuple[int, ...]
    qutrit_dim: int = field(default=QUTRIT_DIM, init=False)

    def __post_init__(self):
        if self.n_cavities < 1:
            raise ValueError("n_cavities must be positive")
        cutoff = self.cutoff
        if isinstance(cutoff, (int, np.integer)):
            cutoff = (int(cutoff),) * self.n_cavities
        cutoff = tuple(int(c) for c in cutoff)
        if len(cutoff) != self.n_cavities:
            raise ValueError("one cutoff per cavity is required")
        if min(cutoff) < 1:
            raise ValueError("every cavity cutoff must be >= 1")
        object.__setattr__(self, "cutoff", cutoff)

    @classmethod
    def uniform(cls, n_cavities: int, cutoff: int) -> "HilbertSpec":
        return cls(n_cavities, (cutoff,) * n_cavities)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.qutrit_dim,) + tuple(c + 1 for c in self.cutoff)

    @property
    def dim(self) -> int:
        return prod(self.dims)

    def flatten(self, level: Union[str, int], photons: Sequence[int]) -> int:
        """Index of the basis state |level, n_1, ..., n_n>."""
        if len(photons) != self.n_cavities:
            raise ValueError("need one photon number per cavity")
        idx = (_level_index(level),) + tuple(int(n) for n in photons)
        return int(np.ravel_multi_index(idx, self.dims))

    def unflatten(self, index: int) -> tuple[int, tuple[int, ...]]:
        """Inverse of :meth:`flatten`; returns (level index, photon numbers)."""
        parts = np.unravel_index(int(index), self.dims)
        return int(parts[0]), tuple(int(p) for p in parts[1:])

    def occupations(self) -> np.ndarray:
        """Integer table of shape (dim, 1 + n): qutrit level then photon numbers."""
        grids = np.indices(self.dims).reshape(len(self.dims), -1)
        return grids.T.copy()

    def excitations(self) -> np.ndarray:
        """Total excitation number (photons + qutrit level) of every basis state."""
        return self.occupations().sum(axis=1)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=complex)
    array.setflags(write=False)
    return array


def _check_dims(a, b) -> None:
    if tuple(a.dims) != tuple(b.dims):
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        amps = _frozen(np.asarray(self.amplitudes).ravel())
        dims = tuple(int(d) for d in self.dims)
        if amps.size != prod(dims):
            raise ValueError(f"amplitude length {amps.size} does not match dims {dims}")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        nrm = self.norm()
        if nrm == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.amplitudes / nrm, self.dims)

    def overlap(self, other: "StateVector") -> complex:
        """<self|other>."""
        _check_dims(self, other)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def tensor(self, other: "StateVector") -> "StateVector":
        return StateVector(np.kron(self.amplitudes, other.amplitudes), self.dims + other.dims)

    def expect(self, op: "SparseOperator") -> complex:
        _check_dims(self, op)
        return complex(np.vdot(self.amplitudes, op.matrix @ self.amplitudes))

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()), self.dims)


@dataclass(frozen=True)
class DensityMatrix:
    entries: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        rho = _frozen(self.entries)
        dims = tuple(int(d) for d in self.dims)
        d = prod(dims)
        if rho.shape != (d, d):
            raise ValueError(f"density matrix shape {rho.shape} does not match dims {dims}")
        object.__setattr__(self, "entries", rho)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))[0])

    def expect(self, op: "SparseOperator") -> complex:
        _check_dims(self, op)
        return complex(np.sum((op.matrix @ self.entries).diagonal()))

    def validate(self, tol: float = NORM_TOL) -> None:
        """Raise ``ValueError`` unless trace, Hermiticity and positivity hold to ``tol``."""
        if abs(self.trace() - 1.0) > tol:
            raise ValueError(f"trace {self.trace():.3e} differs from 1")
        if self.hermiticity_residual() > tol:
            raise ValueError("density matrix is not Hermitian")
        if self.min_eigenvalue() < -tol:
            raise ValueError("density matrix has a negative eigenvalue")

    def partial_trace(self, keep: Sequence[int]) -> "DensityMatrix":
        """Reduced state on the subsystems listed in ``keep`` (in order)."""
        keep = sorted(keep)
        n = len(self.dims)
        rho = self.entries.reshape(self.dims + self.dims)
        drop = [i for i in range(n) if i not in keep]
        # contract dropped bra/ket indices pairwise, highest first so axes stay valid
        for i in sorted(drop, reverse=True):
            m = rho.ndim // 2
            rho = np.trace(rho, axis1=i, axis2=i + m)
        kd = tuple(self.dims[i] for i in keep)
        return DensityMatrix(rho.reshape(prod(kd), prod(kd)), kd)


@dataclass(frozen=True)
class SparseOperator:
    matrix: sp.csr_matrix
    dims: tuple[int, ...]

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        m.eliminate_zeros()
        m.sort_indices()
        dims = tuple(int(d) for d in self.dims)
        d = prod(dims)
        if m.shape != (d, d):
            raise ValueError(f"operator shape {m.shape} does not match dims {dims}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def dag(self) -> "SparseOperator":
        return SparseOperator(self.matrix.conj().T.tocsr(), self.dims)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def hermiticity_residual(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0

    def __matmul__(self, other):
        if isinstance(other, StateVector):
            _check_dims(self, other)
            return StateVector(self.matrix @ other.amplitudes, self.dims)
        if isinstance(other, SparseOperator):
            _check_dims(self, other)
            return SparseOperator(self.matrix @ other.matrix, self.dims)
        return NotImplemented

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        _check_dims(self, other)
        return SparseOperator(self.matrix + other.matrix, self.dims)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        _check_dims(self, other)
        return SparseOperator(self.matrix - other.matrix, self.dims)

    def __mul__(self, scalar) -> "SparseOperator":
        return SparseOperator(self.matrix * complex(scalar), self.dims)

    __rmul__ = __mul__

    def __neg__(self) -> "SparseOperator":
        return self * -1.0


def identity(dims: Sequence[int]) -> SparseOperator:
    dims = tuple(dims)
    return SparseOperator(sp.identity(prod(dims), dtype=complex, format="csr"), dims)


def coherent_amplitudes(amp: complex, cutoff: int) -> np.ndarray:
    """Untruncated-normalized coherent-state amplitudes for n = 0..cutoff."""
    if not np.isfinite(amp):
        raise ValueError("coherent amplitude must be finite")
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    amp = complex(amp)
    c = np.empty(cutoff + 1, dtype=complex)
    c[0] = np.exp(-0.5 * abs(amp) ** 2)
    for n in range(1, cutoff + 1):
        c[n] = c[n - 1] * amp / np.sqrt(n)
    return c


def coherent_state(amp: complex, cutoff: int, *, with_deficit: bool = False):
    """Coherent state |amp> truncated at ``cutoff`` photons and renormalized.

    With ``with_deficit=True`` also returns ``1 - ||c||`` of the truncated,
    not yet renormalized amplitude vector.
    """
    c = coherent_amplitudes(amp, cutoff)
    nrm = np.linalg.norm(c)
    state = StateVector(c / nrm, (cutoff + 1,))
    if with_deficit:
        return state, float(1.0 - nrm)
    return state


def cat_normalizer(alpha: float) -> float:
    """N_alpha = 1/sqrt(2(1 + exp(-2 alpha^2))) of the untruncated even cat."""
    return 1.0 / np.sqrt(2.0 * (1.0 + np.exp(-2.0 * alpha**2)))


def cat_logical(bit: int, alpha: float, cutoff: int) -> StateVector:
    """Logical cat codeword: bit 0 -> |a>+|-a>, bit 1 -> |ia>+|-ia>."""
    if bit not in (0, 1):
        raise ValueError("bit must be 0 or 1")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    beta = alpha if bit == 0 else 1j * alpha
    # odd Fock components cancel exactly: the recursion for -beta only flips signs
    c = coherent_amplitudes(beta, cutoff) + coherent_amplitudes(-beta, cutoff)
    return StateVector(c / np.linalg.norm(c), (cutoff + 1,))


def annihilation(cutoff: int) -> SparseOperator:
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    n = np.arange(1, cutoff + 1)
    a = sp.csr_matrix((np.sqrt(n).astype(complex), (n - 1, n)), shape=(cutoff + 1, cutoff + 1))
    return SparseOperator(a, (cutoff + 1,))


def number_operator(cutoff: int) -> SparseOperator:
    return SparseOperator(sp.diags(np.arange(cutoff + 1, dtype=complex), format="csr"), (cutoff + 1,))


def qutrit_transition(from_level: Union[str, int], to_level: Union[str, int]) -> SparseOperator:
    """|to><from| on the qutrit."""
    i, j = _level_index(from_level), _level_index(to_level)
    return SparseOperator(sp.csr_matrix(([1.0 + 0j], ([j], [i])), shape=(3, 3)), (3,))


def embed(local_op: SparseOperator, slot: int, spec: HilbertSpec) -> SparseOperator:
    """Lift an operator on subsystem ``slot`` (0 = qutrit, j = cavity j) to the full space."""
    dims = spec.dims
    if not 0 <= slot < len(dims):
        raise ValueError(f"slot {slot} out of range for {len(dims)} subsystems")
    if local_op.dim != dims[slot]:
        raise ValueError(f"operator dimension {local_op.dim} does not match slot dimension {dims[slot]}")
    before = prod(dims[:slot])
    after = prod(dims[slot + 1 :])
    m = sp.kron(sp.identity(before, format="csr"), local_op.matrix, format="csr")
    m = sp.kron(m, sp.identity(after, format="csr"), format="csr")
    return SparseOperator(m, dims)


def product_state(level_state: StateVector, cavity_states: Sequence[StateVector]) -> StateVector:
    """Qutrit state tensored with one state per cavity, in basis order."""
    out = level_state
    for s in cavity_states:
        out = out.tensor(s)
    return out


def qutrit_state(weights: dict) -> StateVector:
    """Qutrit ket from a mapping such as ``{"g": 1, "e": 1}`` (not normalized)."""
    amps = np.zeros(3, dtype=complex)
    for level, w in weights.items():
        amps[_level_index(level)] = w
    return StateVector(amps, (3,))


def fidelity(target: StateVector, state: Union[StateVector, DensityMatrix], tol: float = NORM_TOL) -> float:
    """sqrt(<target|rho|target>), or |<target|psi>| for a pure ``state``."""
    _check_dims(target, state)
    if abs(target.norm() - 1.0) > tol:
        raise ValueError("target state is not normalized")
    if isinstance(state, StateVector):
        value = abs(np.vdot(target.amplitudes, state.amplitudes))
    else:
        v = target.amplitudes
        value = np.sqrt(max(np.real(np.vdot(v, state.entries @ v)), 0.0))
    return float(min(max(value, 0.0), 1.0))
