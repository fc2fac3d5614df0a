"""Time evolution: Schrodinger and Lindblad RK4 integrators and quantum trajectories.

Two propagation back ends are available for pure states:

``rk4``
    classical fixed-step fourth-order Runge-Kutta; works for any generator.
``exact``
    eigendecomposition of a static generator, split into the connected
    blocks of its sparsity graph.  Used for the production sweeps, where the
    full model becomes static in a frame rotating with the excitation number.
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from numba import njit
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components

from .device import Channel, HamiltonianGenerator
from .fock import DensityMatrix, SparseOperator, StateVector

METHODS = ("rk4_master", "rk4_schrodinger", "trajectories")
INTEGRATORS = ("rk4", "exact")


class StepSizeError(ValueError):
    """The requested step does not resolve the generator's fastest frequency."""


class InstabilityError(FloatingPointError):
    """The integration produced non-finite values."""


class DimensionGuardError(ValueError):
    """A dense density matrix would exceed the configured size limit."""


@dataclass(frozen=True)
class EvolutionConfig:
    """Integration settings.

    Either ``step`` (seconds) is given, or it follows from ``resolution``
    steps per period of the generator's fastest frequency.  In both cases
    ``step * max_frequency <= 2 pi / resolution`` must hold.
    """

    t_final: float
    method: str = "rk4_schrodinger"
    step: Optional[float] = None
    resolution: float = 20.0
    record_times: tuple[float, ...] = ()
    integrator: str = "rk4"

    def __post_init__(self):
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        times = tuple(sorted(float(t) for t in self.record_times)) or (float(self.t_final),)
        if times[0] < 0 or times[-1] > self.t_final * (1 + 1e-12):
            raise ValueError("record times must lie in [0, t_final]")
        object.__setattr__(self, "record_times", times)

    def step_for(self, gen: HamiltonianGenerator, extra_rate: float = 0.0,
                 fmax: Optional[float] = None) -> float:
        """Largest admissible step for ``gen``.

        ``extra_rate`` adds e.g. decay rates; ``fmax`` overrides the
        generator's fastest frequency when part of it is integrated exactly.
        """
        fmax = (gen.max_frequency if fmax is None else fmax) + extra_rate
        limit = 2 * np.pi / (self.resolution * fmax) if fmax > 0 else self.t_final
        if self.step is None:
            return min(limit, self.t_final)
        if self.step > limit * (1 + 1e-12):
            raise StepSizeError(
                f"step {self.step:.3e} s exceeds 2pi/(r*f_max) = {limit:.3e} s "
                f"(r = {self.resolution:g}, f_max = {fmax:.3e} rad/s)"
            )
        return self.step

    def grid(self, step: float) -> list[np.ndarray]:
        """Uniform sub-grids from the previous record time to each record time."""
        out, t0 = [], 0.0
        for t1 in self.record_times:
            n = max(int(math.ceil((t1 - t0) / step - 1e-9)), 0)
            out.append(np.linspace(t0, t1, n + 1))
            t0 = t1
        return out


@dataclass(frozen=True)
class TrajectoryConfig:
    n_traj: int = 2000
    seed: int = 0
    jump_tol: float = 1e-15
    density_guard: int = 1536

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.jump_tol > 0:
            raise ValueError("jump_tol must be positive")

    def rng(self, index: int) -> np.random.Generator:
        """Independent Philox stream for trajectory ``index``."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(index),))
        return np.random.Generator(np.random.Philox(ss))


@dataclass
class EvolutionResult:
    times: tuple[float, ...]
    states: list
    norm_drift: float = 0.0
    trace_drift: float = 0.0
    min_eigenvalues: list = field(default_factory=list)
    positivity_ok: bool = True
    steps: int = 0


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise InstabilityError("non-finite amplitudes; the step is too large for this generator")


def _rk4(f: Callable, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


class BlockPropagator:
    """exp(-i K t) for a static (possibly non-Hermitian) matrix ``K``.

    ``K`` is split into the connected components of its sparsity graph and
    each block is diagonalized once; afterwards any time step costs one
    block-dense matrix-vector product per block.
    """

    def __init__(self, matrix: sp.spmatrix, hermitian: bool = False, cond_limit: float = 1e8):
        k = sp.csr_matrix(matrix, dtype=complex)
        self.dim = k.shape[0]
        n_blocks, labels = connected_components(abs(k) > 0, directed=False)
        order = np.argsort(labels, kind="stable")
        bounds = np.searchsorted(labels[order], np.arange(n_blocks + 1))
        self.blocks = []
        sizes = np.diff(bounds)
        # 1x1 blocks are plain phases and are handled together
        single = order[bounds[:-1][sizes == 1]]
        if single.size:
            self.blocks.append((single, k.diagonal()[single], None, None))
        for b in np.flatnonzero(sizes > 1):
            idx = order[bounds[b] : bounds[b + 1]]
            m = k[idx][:, idx].toarray()
            if hermitian:
                w, v = la.eigh(m)
                vinv = v.conj().T
            else:
                w, v = la.eig(m)
                vinv = la.inv(v)
                if np.linalg.cond(v) > cond_limit:
                    raise InstabilityError("ill-conditioned eigenbasis; use the rk4 integrator")
            self.blocks.append((idx, w, v, vinv))

    def coefficients(self, psi: np.ndarray) -> list[np.ndarray]:
        return [psi[idx] if vinv is None else vinv @ psi[idx] for idx, _, _, vinv in self.blocks]

    def from_coefficients(self, coeffs: Sequence[np.ndarray], dt: float) -> np.ndarray:
        out = np.empty(self.dim, dtype=complex)
        for (idx, w, v, _), c in zip(self.blocks, coeffs):
            phased = np.exp(-1j * w * dt) * c
            out[idx] = phased if v is None else v @ phased
        return out

    def advance(self, psi: np.ndarray, dt: float) -> np.ndarray:
        return self.from_coefficients(self.coefficients(psi), dt)


def _generator_matrix(gen: HamiltonianGenerator) -> sp.csr_matrix:
    if not gen.is_static:
        raise ValueError("the exact integrator needs a static generator")
    return gen.static_matrix


def evolve_schrodinger(gen: HamiltonianGenerator, psi0: StateVector, cfg: EvolutionConfig,
                       tol: float = 1e-8) -> EvolutionResult:
    """Integrate i dpsi/dt = H(t) psi and return the state at each record time.

    Renormalization is never applied; ``norm_drift`` reports the largest
    deviation of the norm from one.
    """
    if psi0.dims != gen.dims:
        raise ValueError("state and generator dimensions differ")
    if abs(psi0.norm() - 1.0) > tol:
        raise ValueError("initial state is not normalized")
    psi = np.array(psi0.amplitudes)
    states, steps = [], 0
    if cfg.integrator == "exact":
        prop = BlockPropagator(_generator_matrix(gen), hermitian=True)
        coeffs = prop.coefficients(psi)
        for t in cfg.record_times:
            states.append(prop.from_coefficients(coeffs, t))
    else:
        h = cfg.step_for(gen)
        if gen.is_static:
            hmat = gen.static_matrix

            def rhs(t, y):
                return -1j * (hmat @ y)
        else:
            def rhs(t, y):
                return -1j * (gen.matrix_at(t) @ y)

        for sub in cfg.grid(h):
            for ta, tb in zip(sub[:-1], sub[1:]):
                psi = _rk4(rhs, ta, psi, tb - ta)
                steps += 1
            _check_finite(psi)
            states.append(psi.copy())
    drift = max(abs(np.linalg.norm(s) - 1.0) for s in states)
    return EvolutionResult(cfg.record_times, [StateVector(s, gen.dims) for s in states],
                           norm_drift=float(drift), steps=steps)


def _positivity(rho: np.ndarray, tol: float, eig_limit: int) -> tuple[Optional[float], bool]:
    herm = 0.5 * (rho + rho.conj().T)
    if rho.shape[0] <= eig_limit:
        lmin = float(np.linalg.eigvalsh(herm)[0])
        return lmin, lmin >= -tol
    try:
        np.linalg.cholesky(herm + tol * np.eye(rho.shape[0]))
        return None, True
    except np.linalg.LinAlgError:
        return None, False


def _monomial_map(op: sp.spmatrix) -> Optional[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(rows, source columns, weights) if ``op`` has at most one entry per row and column."""
    coo = sp.coo_matrix(op)
    coo.sum_duplicates()
    keep = coo.data != 0
    rows, cols, data = coo.row[keep], coo.col[keep], coo.data[keep]
    if np.unique(rows).size != rows.size or np.unique(cols).size != cols.size:
        return None
    order = np.argsort(rows)
    return rows[order], cols[order], data[order]


@njit(cache=True)
def _monomial_dissipator(out, rho, factor, src, scale):  # pragma: no cover - compiled
    """out_ij = factor_ij rho_ij + sum_g scale_gi conj(scale_gj) rho[src_gi, src_gj]."""
    n = rho.shape[0]
    n_ops = src.shape[0]
    for i in range(n):
        for j in range(n):
            acc = factor[i, j] * rho[i, j]
            for g in range(n_ops):
                si = scale[g, i]
                if si != 0:
                    sj = scale[g, j]
                    if sj != 0:
                        acc += si * np.conj(sj) * rho[src[g, i], src[g, j]]
            out[i, j] = acc


def _dissipator(channels: Sequence[Channel], dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """rho -> sum_k rate_k (L rho L^+ - {L^+ L, rho}/2) for Hermitian rho.

    Operators with at most one entry per row and column (ladder operators,
    level transitions, projectors) are applied in one compiled pass as index
    gathers; diagonal ones fold into an elementwise factor together with the
    anticommutator.  Anything else falls back to sparse products.
    """
    ops = [(ch.rate, ch.operator.matrix) for ch in channels if ch.rate > 0]
    damp = sp.csr_matrix((dim, dim), dtype=complex)
    for rate, op in ops:
        damp = damp + rate * (op.conj().T @ op)
    diag = damp.diagonal().real
    damp_diagonal = abs(damp - sp.diags(diag)).sum() == 0
    # the anticommutator is elementwise when every L^+ L is diagonal
    factor = -0.5 * (diag[:, None] + diag[None, :]) if damp_diagonal else np.zeros((dim, dim))
    factor = factor.astype(complex)
    half_damp = None if damp_diagonal else 0.5 * damp

    srcs, scales, generic = [], [], []
    for rate, op in ops:
        mono = _monomial_map(op)
        if mono is None:
            generic.append((rate, op))
            continue
        rows, cols, w = mono
        if np.array_equal(rows, cols):
            factor[np.ix_(rows, rows)] += rate * np.outer(w, w.conj())
            continue
        src = np.arange(dim)
        src[rows] = cols
        scale = np.zeros(dim, dtype=complex)
        scale[rows] = np.sqrt(rate) * w
        srcs.append(src)
        scales.append(scale)
    src = np.array(srcs, dtype=np.int64).reshape(len(srcs), dim)
    scale = np.array(scales, dtype=complex).reshape(len(scales), dim)

    def apply(rho, out=None):
        if out is None:
            out = np.empty_like(rho)
        _monomial_dissipator(out, rho, factor, src, scale)
        if half_damp is not None:
            x = half_damp @ rho
            out -= x + x.conj().T
        for rate, op in generic:
            y = op @ rho
            out += rate * (op @ y.conj().T)
        return out

    apply.total_rate = float(np.max(diag)) if ops else 0.0
    return apply


class _BlockConjugator:
    """X -> U X U^+ with U = exp(-i H dt) for a static Hermitian H, in block order."""

    def __init__(self, matrix: sp.spmatrix):
        self.prop = BlockPropagator(matrix, hermitian=True)
        self.perm = np.concatenate([idx for idx, *_ in self.prop.blocks])
        sizes = [idx.size for idx, *_ in self.prop.blocks]
        edges = np.concatenate([[0], np.cumsum(sizes)])
        self.slices = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]
        self._cache = {}

    def unitaries(self, dt: float) -> list[np.ndarray]:
        """Dense block unitaries; the block of 1x1 components is a vector of phases."""
        key = round(dt * 1e18)
        if key not in self._cache:
            self._cache[key] = [np.exp(-1j * w * dt) if v is None else (v * np.exp(-1j * w * dt)) @ v.conj().T
                                for _, w, v, _ in self.prop.blocks]
        return self._cache[key]

    def __call__(self, x: np.ndarray, dt: float, out: Optional[np.ndarray] = None) -> np.ndarray:
        if out is None:
            out = np.empty_like(x)
        us = self.unitaries(dt)
        for sl, u in zip(self.slices, us):
            if u.ndim == 1:
                np.multiply(u[:, None], x[sl], out=out[sl])
            else:
                np.matmul(u, x[sl], out=out[sl])
        for sl, u in zip(self.slices, us):
            if u.ndim == 1:
                out[:, sl] *= u.conj()[None, :]
            else:
                out[:, sl] = out[:, sl] @ u.conj().T
        return out


def _offdiagonal_norm(matrix: sp.spmatrix) -> float:
    off = abs(matrix - sp.diags(matrix.diagonal()))
    return float(np.max(np.asarray(off.sum(axis=1)))) if off.nnz else 0.0


def evolve_master(gen: HamiltonianGenerator, channels: Sequence[Channel], rho0: DensityMatrix,
                  cfg: EvolutionConfig, *, dim_guard: int = 4096, positivity_tol: float = 1e-6,
                  eig_limit: int = 512) -> EvolutionResult:
    """Integrate the Lindblad equation with dense rho.

    d rho/dt = -i[H, rho] + sum_k rate_k (L rho L^+ - {L^+ L, rho}/2)

    With ``integrator="rk4"`` the whole right-hand side is stepped by RK4.
    With ``integrator="exact"`` the generator must be static: the unitary
    part is applied exactly through its block eigendecomposition and RK4
    only integrates the dissipator in that picture (integrating-factor RK4).
    The step then only has to resolve the off-diagonal couplings and decay
    rates, because every collapse operator used here is an eigenoperator of
    the diagonal part of H.
    """
    if rho0.dims != gen.dims:
        raise ValueError("state and generator dimensions differ")
    if rho0.dim > dim_guard:
        raise DimensionGuardError(f"dimension {rho0.dim} exceeds the dense guard {dim_guard}")
    rho = np.array(rho0.entries)

    if cfg.integrator == "exact":
        hmat = _generator_matrix(gen)
        conj = _BlockConjugator(hmat)
        perm = conj.perm
        inv = np.argsort(perm)
        diss = _dissipator(
            [Channel(ch.rate, SparseOperator(ch.operator.matrix[perm][:, perm], gen.dims), ch.label)
             for ch in channels], rho0.dim)
        rho = rho[perm][:, perm]
        h = cfg.step_for(gen, extra_rate=diss.total_rate, fmax=_offdiagonal_norm(hmat))

        a, b, k2, k3, k4, tmp, mid = (np.empty_like(rho) for _ in range(7))

        def step(t, rho, dt):
            half = 0.5 * dt
            conj(rho, half, out=a)
            conj(diss(rho, out=tmp), half, out=b)
            np.multiply(b, half, out=tmp)
            diss(np.add(a, tmp, out=tmp), out=k2)
            np.multiply(k2, half, out=tmp)
            diss(np.add(a, tmp, out=tmp), out=k3)
            np.multiply(k3, dt, out=tmp)
            np.add(a, tmp, out=tmp)
            diss(conj(tmp, half, out=mid), out=k4)
            # y_new = E(h/2)[a + h/6 b + h/3 (k2 + k3)] + h/6 k4
            np.add(k2, k3, out=k2)
            np.multiply(k2, dt / 3, out=k2)
            np.multiply(b, dt / 6, out=b)
            np.add(a, b, out=tmp)
            np.add(tmp, k2, out=tmp)
            new = conj(tmp, half)
            np.multiply(k4, dt / 6, out=k4)
            return np.add(new, k4, out=new)

        def unpermute(rho):
            return rho[inv][:, inv]
    else:
        diss = _dissipator(channels, rho0.dim)

        def rhs(t, rho):
            hmat = gen.static_matrix if gen.is_static else gen.matrix_at(t)
            x = -1j * (hmat @ rho)
            return x + x.conj().T + diss(rho)

        def step(t, rho, dt):
            return _rk4(rhs, t, rho, dt)

        def unpermute(rho):
            return rho

        h = cfg.step_for(gen, extra_rate=diss.total_rate)

    states, lmins, ok, drift, steps = [], [], True, 0.0, 0
    for sub in cfg.grid(h):
        for ta, tb in zip(sub[:-1], sub[1:]):
            rho = step(ta, rho, tb - ta)
            rho = 0.5 * (rho + rho.conj().T)
            steps += 1
        _check_finite(rho)
        drift = max(drift, abs(np.trace(rho).real - 1.0))
        lmin, good = _positivity(rho, positivity_tol, eig_limit)
        lmins.append(lmin)
        ok = ok and good
        states.append(DensityMatrix(unpermute(rho), gen.dims))
    return EvolutionResult(cfg.record_times, states, trace_drift=float(drift),
                           min_eigenvalues=lmins, positivity_ok=ok, steps=steps)


@dataclass
class TrajectoryResult:
    """Monte-Carlo averages at each record time.

    ``fidelity`` is sqrt of the mean squared overlap with the target; its
    standard error follows from the delta method.
    """

    times: tuple[float, ...]
    n_traj: int
    fidelity: Optional[np.ndarray] = None
    fidelity_se: Optional[np.ndarray] = None
    overlap_sq: Optional[np.ndarray] = None
    overlap_sq_se: Optional[np.ndarray] = None
    expectations: Optional[np.ndarray] = None
    expectations_se: Optional[np.ndarray] = None
    densities: Optional[list] = None
    probe_overlaps: Optional[np.ndarray] = None
    jumps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


class _RK4NoJump:
    """Non-Hermitian evolution under H_eff = H - i/2 sum L^+L by RK4 steps."""

    def __init__(self, gen: HamiltonianGenerator, damp: sp.csr_matrix, h: float):
        self.gen, self.h = gen, h
        self.half_damp = 0.5 * damp

    def rhs(self, t, y):
        hmat = self.gen.static_matrix if self.gen.is_static else self.gen.matrix_at(t)
        return -1j * (hmat @ y) - self.half_damp @ y

    def segments(self, sub: np.ndarray):
        return zip(sub[:-1], sub[1:])

    def norm2_curve(self, psi, t0):
        return lambda s: float(np.linalg.norm(self.advance(psi, t0, s - t0)) ** 2)

    def advance(self, psi, t0, dt):
        if dt <= 0:
            return psi.copy()
        # dt never exceeds one grid step here, so a single RK4 step is accurate
        return _rk4(self.rhs, t0, psi, dt)


_PROPAGATOR_CACHE: "OrderedDict[str, BlockPropagator]" = OrderedDict()
PROPAGATOR_CACHE_SIZE = 2


def _cached_propagator(matrix: sp.csr_matrix) -> BlockPropagator:
    """Block propagators keyed by matrix content; sweeps reuse them across initial states."""
    m = sp.csr_matrix(matrix)
    m.sort_indices()
    h = hashlib.sha1()
    for part in (np.asarray(m.shape), m.indptr, m.indices, m.data):
        h.update(np.ascontiguousarray(part).tobytes())
    key = h.hexdigest()
    if key in _PROPAGATOR_CACHE:
        _PROPAGATOR_CACHE.move_to_end(key)
        return _PROPAGATOR_CACHE[key]
    prop = BlockPropagator(m)
    _PROPAGATOR_CACHE[key] = prop
    while len(_PROPAGATOR_CACHE) > PROPAGATOR_CACHE_SIZE:
        _PROPAGATOR_CACHE.popitem(last=False)
    return prop


class _ExactNoJump:
    def __init__(self, gen: HamiltonianGenerator, damp: sp.csr_matrix):
        self.prop = _cached_propagator(_generator_matrix(gen) - 0.5j * damp)

    def segments(self, sub: np.ndarray):
        return [(sub[0], sub[-1])]

    def norm2_curve(self, psi, t0):
        coeffs = self.prop.coefficients(psi)
        return lambda s: float(np.linalg.norm(self.prop.from_coefficients(coeffs, s - t0)) ** 2)

    def advance(self, psi, t0, dt):
        return self.prop.advance(psi, dt)


def _jump(psi: np.ndarray, ops, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    candidates = [op @ psi for _, op in ops]
    weights = np.array([rate * np.vdot(c, c).real for (rate, _), c in zip(ops, candidates)])
    total = weights.sum()
    if not total > 0:
        raise InstabilityError("no jump channel has nonzero weight at the jump time")
    k = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
    k = min(k, len(ops) - 1)
    out = candidates[k]
    return out / np.linalg.norm(out), k


def evolve_trajectories(gen: HamiltonianGenerator, channels: Sequence[Channel], psi0: StateVector,
                        cfg: EvolutionConfig, traj_cfg: TrajectoryConfig, *,
                        target: Union[StateVector, Callable[[float], StateVector], None] = None,
                        probes: Sequence[StateVector] = (),
                        observables: Sequence[SparseOperator] = (),
                        keep_density: Optional[bool] = None) -> TrajectoryResult:
    """Monte-Carlo wave-function unraveling of the Lindblad equation.

    Each trajectory draws a threshold ``r``; the unnormalized state evolves
    under H_eff until its squared norm falls to ``r`` (jump time located by
    bracketed root finding to ``jump_tol``), then a channel is picked with
    probability proportional to ``rate * ||L psi||^2``.

    ``target`` may be a fixed state or a function of the record time; the
    result then carries fidelity estimates.  ``probes`` are extra vectors
    whose overlaps <probe|psi> are stored per trajectory and record time, so
    any quadratic estimator can be formed afterwards.  Averaged density matrices are
    kept when ``keep_density`` is true (default: when the dimension is at most
    ``traj_cfg.density_guard``).
    """
    if psi0.dims != gen.dims:
        raise ValueError("state and generator dimensions differ")
    dim = psi0.dim
    ops = [(ch.rate, ch.operator.matrix) for ch in channels if ch.rate > 0]
    damp = sp.csr_matrix((dim, dim), dtype=complex)
    for rate, op in ops:
        damp = damp + rate * (op.conj().T @ op)
    if keep_density is None:
        keep_density = dim <= traj_cfg.density_guard
    times = cfg.record_times
    n_rec = len(times)

    if cfg.integrator == "exact":
        engine = _ExactNoJump(gen, damp)
        grid = [np.array([a, b]) for a, b in zip((0.0,) + times[:-1], times)]
    else:
        total_rate = float(np.max(np.abs(damp.diagonal()))) if ops else 0.0
        h = cfg.step_for(gen, extra_rate=total_rate)
        engine = _RK4NoJump(gen, damp, h)
        grid = cfg.grid(h)

    targets = None
    if target is not None:
        targets = [(target(t) if callable(target) else target).amplitudes for t in times]
    obs = [o.matrix for o in observables]
    probe_mat = np.array([pr.amplitudes for pr in probes]) if probes else None

    def record(states):
        f = np.array([abs(np.vdot(tv, s)) ** 2 for tv, s in zip(targets, states)]) if targets else None
        e = np.array([[np.vdot(s, o @ s).real for o in obs] for s in states]) if obs else None
        q = np.array([probe_mat.conj() @ s for s in states]) if probe_mat is not None else None
        return f, e, q

    def run(index: int, shared=None):
        rng = traj_cfg.rng(index)
        r = rng.random()
        if shared is not None and r < shared[1]:
            return shared[0], 0
        psi = np.array(psi0.amplitudes)
        out, jumps = [], 0
        for sub in grid:
            for ta, tb in engine.segments(sub):
                t = ta
                while True:
                    new = engine.advance(psi, t, tb - t)
                    _check_finite(new)
                    if np.vdot(new, new).real > r:
                        psi = new
                        break
                    curve = engine.norm2_curve(psi, t)
                    tj = brentq(lambda s: curve(s) - r, t, tb, xtol=traj_cfg.jump_tol, rtol=4 * np.finfo(float).eps)
                    psi, _ = _jump(engine.advance(psi, t, tj - t), ops, rng)
                    jumps += 1
                    r = rng.random()
                    t = tj
            out.append(psi / np.linalg.norm(psi))
        return out, jumps

    # the jump-free path is shared by every trajectory whose threshold is never reached
    shared = None
    if ops:
        nojump = []
        psi = np.array(psi0.amplitudes)
        for sub in grid:
            for ta, tb in engine.segments(sub):
                psi = engine.advance(psi, ta, tb - ta)
            nojump.append(psi.copy())
        _check_finite(psi)
        shared = ([s / np.linalg.norm(s) for s in nojump], float(np.vdot(psi, psi).real))

    fsum = np.zeros((traj_cfg.n_traj, n_rec)) if targets else None
    esum = np.zeros((traj_cfg.n_traj, n_rec, len(obs))) if obs else None
    dens = [np.zeros((dim, dim), dtype=complex) for _ in times] if keep_density else None
    qsum = np.zeros((traj_cfg.n_traj, n_rec, len(probes)), dtype=complex) if probes else None
    jumps = np.zeros(traj_cfg.n_traj, dtype=int)
    # without channels every trajectory is the same deterministic evolution
    unitary = run(0) if not ops else None
    for i in range(traj_cfg.n_traj):
        states, jumps[i] = unitary if unitary is not None else run(i, shared)
        f, e, q = record(states)
        if fsum is not None:
            fsum[i] = f
        if esum is not None:
            esum[i] = e
        if qsum is not None:
            qsum[i] = q
        if dens is not None:
            for k, s in enumerate(states):
                dens[k] += np.outer(s, s.conj())

    n = traj_cfg.n_traj
    res = TrajectoryResult(times, n, jumps=jumps)
    if fsum is not None:
        mean = fsum.mean(axis=0)
        se = fsum.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(n_rec)
        fid = np.sqrt(np.clip(mean, 0.0, 1.0))
        res.overlap_sq, res.overlap_sq_se = mean, se
        res.fidelity = fid
        res.fidelity_se = np.where(fid > 0, se / (2 * np.where(fid > 0, fid, 1.0)), se)
    if esum is not None:
        res.expectations = esum.mean(axis=0)
        res.expectations_se = esum.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(res.expectations)
    if qsum is not None:
        res.probe_overlaps = qsum
    if dens is not None:
        res.densities = [DensityMatrix(d / n, gen.dims) for d in dens]
    return res


def frame_transform(state: Union[StateVector, DensityMatrix], energies: np.ndarray, t: float,
                    direction: int = 1) -> Union[StateVector, DensityMatrix]:
    """Apply exp(direction * i * diag(energies) * t) to a state."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    phase = np.exp(direction * 1j * np.asarray(energies) * t)
    if isinstance(state, StateVector):
        return StateVector(phase * state.amplitudes, state.dims)
    return DensityMatrix(phase[:, None] * state.entries * phase.conj()[None, :], state.dims)
