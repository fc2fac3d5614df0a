"""Device parameters, Hamiltonians and dissipation channels of the qutrit-cavity system.

All frequencies, couplings and rates are angular (rad/s) or inverse seconds.
Conversion from GHz/MHz/us happens only in :mod:`hybridcnot.config`.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .fock import (
    HilbertSpec,
    SparseOperator,
    annihilation,
    embed,
    number_operator,
    qutrit_transition,
)

TWO_PI = 2.0 * np.pi
MHZ = TWO_PI * 1e6
GHZ = TWO_PI * 1e9
US = 1e-6

TIERS = ("ideal", "effective", "effective_with_f", "full", "lab")
FRAMES = ("interaction", "lab", "rotating")


@dataclass(frozen=True)
class DeviceParams:
    """Physical constants of one qutrit coupled to ``n`` cavities.

    Detunings are never stored; they are recomputed from the base frequencies.
    ``g_cross`` is a symmetric ``n x n`` table with a zero diagonal.
    """

    alpha: float
    omega_eg: float
    omega_fe: float
    omega_fg: float
    omega_c: tuple[float, ...]
    g: tuple[float, ...]
    g_prime: tuple[float, ...]
    g_tilde: tuple[float, ...]
    g_cross: tuple[tuple[float, ...], ...]
    kappa: tuple[float, ...]
    gamma_eg: float = 0.0
    gamma_fe: float = 0.0
    gamma_fg: float = 0.0
    gamma_phi_e: float = 0.0
    gamma_phi_f: float = 0.0
    delta_mix: float = 0.0
    c_mismatch: float = 0.0

    def __post_init__(self):
        for name in ("omega_c", "g", "g_prime", "g_tilde", "kappa"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        object.__setattr__(self, "g_cross", tuple(tuple(float(x) for x in row) for row in self.g_cross))
        n = len(self.omega_c)
        if n < 1:
            raise ValueError("at least one cavity is required")
        for name in ("g", "g_prime", "g_tilde", "kappa"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} needs {n} entries")
        gc = np.asarray(self.g_cross)
        if gc.shape != (n, n) or not np.allclose(gc, gc.T) or np.any(np.diag(gc) != 0):
            raise ValueError("g_cross must be a symmetric n x n table with zero diagonal")
        if not np.isclose(self.omega_fg, self.omega_eg + self.omega_fe, rtol=1e-9, atol=0.0):
            raise ValueError("omega_fg must equal omega_eg + omega_fe")
        rates = (self.gamma_eg, self.gamma_fe, self.gamma_fg, self.gamma_phi_e, self.gamma_phi_f) + self.kappa
        if min(rates) < 0:
            raise ValueError("decay and dephasing rates must be non-negative")
        if np.any(self.detuning == 0):
            raise ValueError("every e-f detuning must be nonzero")

    @property
    def n(self) -> int:
        return len(self.omega_c)

    @property
    def detuning(self) -> np.ndarray:
        """omega_fe - omega_cj (the working dispersive detunings)."""
        return self.omega_fe - np.asarray(self.omega_c)

    @property
    def detuning_gf(self) -> np.ndarray:
        return self.omega_fg - np.asarray(self.omega_c)

    @property
    def detuning_ge(self) -> np.ndarray:
        return self.omega_eg - np.asarray(self.omega_c)

    def cavity_detuning(self, k: int, l: int) -> float:
        """omega_ck - omega_cl for zero-based cavity indices."""
        return self.omega_c[k] - self.omega_c[l]

    @property
    def lambdas(self) -> np.ndarray:
        return np.asarray(self.g) ** 2 / self.detuning

    def replace(self, **changes) -> "DeviceParams":
        return dataclasses.replace(self, **changes)

    def with_kappa_inv(self, kappa_inv: float) -> "DeviceParams":
        """Same device with every cavity decaying at 1/kappa_inv."""
        return self.replace(kappa=(1.0 / kappa_inv,) * self.n)

    def with_couplings(self, g: Sequence[float], *, tilde_ratio: float = 1 / np.sqrt(2),
                       prime_ratio: float = 0.01, cross_ratio: float = 0.01) -> "DeviceParams":
        """Replace the e-f couplings and re-derive the unwanted ones from them."""
        return self.replace(**derived_couplings(g, tilde_ratio, prime_ratio, cross_ratio))

    def decoherence_free(self) -> "DeviceParams":
        return self.replace(kappa=(0.0,) * self.n, gamma_eg=0.0, gamma_fe=0.0, gamma_fg=0.0,
                            gamma_phi_e=0.0, gamma_phi_f=0.0)


def derived_couplings(g: Sequence[float], tilde_ratio: float = 1 / np.sqrt(2),
                      prime_ratio: float = 0.01, cross_ratio: float = 0.01) -> dict:
    """Transmon rules: g_tilde = g/sqrt2, g' = 0.01 g, uniform crosstalk 0.01 max(g)."""
    g = tuple(float(x) for x in g)
    n = len(g)
    gcr = cross_ratio * max(g)
    cross = tuple(tuple(0.0 if k == l else gcr for l in range(n)) for k in range(n))
    return dict(
        g=g,
        g_tilde=tuple(tilde_ratio * x for x in g),
        g_prime=tuple(prime_ratio * x for x in g),
        g_cross=cross,
    )


def solve_matched_couplings(g1: float, detunings: Sequence[float], c: float = 0.0) -> tuple[float, ...]:
    """Couplings with g1^2/D1 = (1+c) g2^2/D2 = (1-c) g3^2/D3.

    For ``c == 0`` this is the equal-shift condition for any number of cavities.
    """
    det = np.asarray(detunings, dtype=float)
    if abs(c) >= 1:
        raise ValueError("|c| must be < 1")
    if c != 0 and det.size != 3:
        raise ValueError("a nonzero mismatch c is defined for three cavities only")
    if g1 <= 0:
        raise ValueError("g1 must be positive")
    if np.any(np.sign(det) != np.sign(det[0])) or np.any(det == 0):
        raise ValueError("all detunings must be nonzero and share the sign of the first")
    lam = g1**2 / det[0]
    weights = np.ones(det.size)
    if det.size == 3:
        weights[1:] = (1 + c, 1 - c)
    g = np.sqrt(lam * det / weights)
    g[0] = g1
    return tuple(float(x) for x in g)


def table1_params(kappa_inv: float = 45 * US) -> DeviceParams:
    """The three-cavity transmon device used for the GHZ fidelity study."""
    omega_eg = 4.0 * GHZ
    omega_fe = 3.3 * GHZ
    omega_c = (3.24 * GHZ, 3.21 * GHZ, 3.18 * GHZ)
    det = omega_fe - np.asarray(omega_c)
    g = solve_matched_couplings(4.5 * MHZ, det)
    return DeviceParams(
        alpha=1.25,
        omega_eg=omega_eg,
        omega_fe=omega_fe,
        omega_fg=omega_eg + omega_fe,
        omega_c=omega_c,
        kappa=(1.0 / kappa_inv,) * 3,
        gamma_eg=1 / (60 * US),
        gamma_fe=1 / (30 * US),
        gamma_fg=1 / (150 * US),
        gamma_phi_e=1 / (20 * US),
        gamma_phi_f=1 / (20 * US),
        **derived_couplings(g),
    )


def lambda_and_gate_time(params: DeviceParams, *, assert_matched: bool = False,
                         tol: float = 1e-9) -> tuple[float, float]:
    """Dispersive shift of cavity 1 and the gate time pi / (2 lambda)."""
    lams = params.lambdas
    lam = float(lams[0])
    if assert_matched:
        spread = float(np.max(np.abs(lams - lam)) / abs(lam))
        if spread > tol:
            raise ValueError(f"dispersive shifts are not matched (relative spread {spread:.2e})")
    return lam, float(np.pi / (2 * lam))


def quality_factors(params: DeviceParams, kappa_inv: float) -> tuple[float, ...]:
    if kappa_inv <= 0:
        raise ValueError("kappa_inv must be positive")
    return tuple(float(w * kappa_inv) for w in params.omega_c)


@dataclass
class ConditionReport:
    detuning_ratios: list[float]
    pair_metrics: dict[tuple[int, int], float]
    pair_quotients: dict[tuple[int, int], float]
    lambda_spread: float
    threshold: float
    flags: list[str]

    @property
    def ok(self) -> bool:
        return not self.flags


def diagnose_conditions(params: DeviceParams, threshold: float = 10.0) -> ConditionReport:
    """Check the large-detuning and no-induced-cavity-coupling conditions.

    The pair metric is |D_j - D_k| / (|1/D_j| + |1/D_k|); its ratio to g_j g_k
    should be large.  Problems are reported, never raised.
    """
    det = params.detuning
    g = np.asarray(params.g)
    ratios = [float(abs(d) / x) if x else float("inf") for d, x in zip(det, g)]
    flags = []
    for j, r in enumerate(ratios):
        if r < threshold:
            flags.append(f"cavity {j + 1}: |Delta|/g = {r:.3g} below {threshold:g}")
    metrics, quotients = {}, {}
    for j, k in combinations(range(params.n), 2):
        m = abs(det[j] - det[k]) / (abs(1 / det[j]) + abs(1 / det[k]))
        q = m / (g[j] * g[k]) if g[j] * g[k] else float("inf")
        metrics[(j + 1, k + 1)] = float(m)
        quotients[(j + 1, k + 1)] = float(q)
        if q < threshold:
            flags.append(f"pair ({j + 1},{k + 1}): induced-coupling quotient {q:.3g} below {threshold:g}")
    lams = params.lambdas
    spread = float(np.max(np.abs(lams - lams[0])) / abs(lams[0]))
    return ConditionReport(ratios, metrics, quotients, spread, threshold, flags)


class Channel(NamedTuple):
    """A Lindblad channel ``rate * D[operator]``."""

    rate: float
    operator: SparseOperator
    label: str = ""


def collapse_operators(params: DeviceParams, spec: HilbertSpec) -> list[Channel]:
    """Cavity loss, three qutrit relaxation paths and two dephasing channels.

    Channels with zero rate are omitted.  The same operators serve every frame:
    under a diagonal frame change each one only picks up a global phase.
    """
    _check_spec(params, spec)
    out = []
    for j in range(params.n):
        out.append(Channel(params.kappa[j], embed(annihilation(spec.cutoff[j]), j + 1, spec), f"kappa_{j + 1}"))
    q = [
        (params.gamma_eg, "e", "g", "gamma_eg"),
        (params.gamma_fe, "f", "e", "gamma_fe"),
        (params.gamma_fg, "f", "g", "gamma_fg"),
        (params.gamma_phi_e, "e", "e", "gamma_phi_e"),
        (params.gamma_phi_f, "f", "f", "gamma_phi_f"),
    ]
    for rate, src, dst, label in q:
        out.append(Channel(rate, embed(qutrit_transition(src, dst), 0, spec), label))
    return [ch for ch in out if ch.rate > 0]


def _check_spec(params: DeviceParams, spec: HilbertSpec) -> None:
    if spec.n_cavities != params.n:
        raise ValueError(f"spec has {spec.n_cavities} cavities, parameters have {params.n}")


class HamiltonianGenerator:
    """H(t) = static + sum_k [exp(i w_k t) A_k + h.c.], as sparse matrices.

    Calling the generator returns a :class:`SparseOperator`; :meth:`matrix_at`
    returns the raw CSR matrix and is what the integrators use.
    """

    def __init__(self, dims, static: sp.spmatrix, terms: Sequence[tuple[float, sp.spmatrix]],
                 tier: str, frame: str, frame_energies: Optional[np.ndarray] = None):
        self.dims = tuple(dims)
        self.tier = tier
        self.frame = frame
        self.frame_energies = frame_energies
        dim = int(np.prod(self.dims))
        static = sp.csr_matrix(static, shape=(dim, dim), dtype=complex)
        terms = [(float(w), sp.csr_matrix(a, dtype=complex)) for w, a in terms if sp.csr_matrix(a).nnz]
        self.static_matrix = static
        self.terms = tuple(terms)
        self.frequencies = np.array([w for w, _ in terms])
        self._build_pattern(dim)

    def _build_pattern(self, dim: int) -> None:
        pieces = [self.static_matrix]
        for _, a in self.terms:
            pieces.extend([a, a.conj().T.tocsr()])
        pattern = sum((abs(p) for p in pieces), sp.csr_matrix((dim, dim)))
        pattern = sp.csr_matrix(pattern)
        pattern.sort_indices()
        self._indices = pattern.indices.copy()
        self._indptr = pattern.indptr.copy()
        rows = np.repeat(np.arange(dim), np.diff(self._indptr))
        keys = rows.astype(np.int64) * dim + self._indices
        cols, rws, vals = [], [], []
        for k, p in enumerate(pieces):
            coo = p.tocoo()
            pos = np.searchsorted(keys, coo.row.astype(np.int64) * dim + coo.col)
            rws.append(pos)
            cols.append(np.full(pos.size, k))
            vals.append(coo.data)
        self._scatter = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rws), np.concatenate(cols))),
            shape=(keys.size, len(pieces)),
        )
        self._dim = dim

    @property
    def is_static(self) -> bool:
        return not self.terms

    def coefficients(self, t: float) -> np.ndarray:
        ph = np.exp(1j * self.frequencies * t)
        c = np.empty(1 + 2 * ph.size, dtype=complex)
        c[0] = 1.0
        c[1::2] = ph
        c[2::2] = ph.conj()
        return c

    def matrix_at(self, t: float) -> sp.csr_matrix:
        data = self._scatter @ self.coefficients(t)
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self._dim, self._dim))

    def __call__(self, t: float) -> SparseOperator:
        return SparseOperator(self.matrix_at(t), self.dims)

    def norm_bound(self) -> float:
        """Upper bound on ||H(t)|| valid for every t (max absolute row sum)."""
        total = abs(self.static_matrix)
        for _, a in self.terms:
            total = total + abs(a) + abs(a).T
        return float(np.max(np.asarray(total.sum(axis=1)))) if total.nnz else 0.0

    @property
    def max_frequency(self) -> float:
        """Fastest angular frequency the integrator must resolve."""
        w = float(np.max(np.abs(self.frequencies))) if self.terms else 0.0
        return max(w, self.norm_bound())


def _ops(spec: HilbertSpec):
    a = [embed(annihilation(spec.cutoff[j]), j + 1, spec).matrix for j in range(spec.n_cavities)]
    num = [embed(number_operator(spec.cutoff[j]), j + 1, spec).matrix for j in range(spec.n_cavities)]

    def s(src, dst):
        return embed(qutrit_transition(src, dst), 0, spec).matrix

    return a, num, s


def free_energies(params: DeviceParams, spec: HilbertSpec) -> np.ndarray:
    """Diagonal of H0 = sum_j w_cj n_j + w_eg |e><e| + w_fg |f><f|."""
    occ = spec.occupations()
    level_e = np.array([0.0, params.omega_eg, params.omega_fg])
    return level_e[occ[:, 0]] + occ[:, 1:] @ np.asarray(params.omega_c)


def frame_energies(params: DeviceParams, spec: HilbertSpec, frame: str,
                   omega_ref: Optional[float] = None) -> np.ndarray:
    """Diagonal generator G of a frame: psi_frame(t) = exp(i G t) psi_lab(t)."""
    if frame == "lab":
        return np.zeros(spec.dim)
    if frame == "interaction":
        return free_energies(params, spec)
    if frame == "rotating":
        return reference_frequency(params, omega_ref) * spec.excitations()
    raise ValueError(f"unknown frame {frame!r}")


def reference_frequency(params: DeviceParams, omega_ref: Optional[float] = None) -> float:
    return float(np.mean(params.omega_c)) if omega_ref is None else float(omega_ref)


def hamiltonian(params: DeviceParams, spec: HilbertSpec, tier: str = "full", frame: str = "interaction",
                *, drop_gprime: bool = False, omega_ref: Optional[float] = None) -> HamiltonianGenerator:
    """Build the Hamiltonian of a model tier in a given frame.

    Tiers: ``ideal`` (e-f coupling only), ``effective`` (dispersive shifts of |e>),
    ``effective_with_f`` (adds the |f> Stark shift), ``full`` (all unwanted
    couplings and crosstalk).  ``lab`` is the static lab-frame version of
    ``full``.  ``frame="rotating"`` is the full model viewed at
    ``omega_ref`` times the excitation number; it is static whenever the
    g-f couplings are dropped.
    """
    _check_spec(params, spec)
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}")
    if tier == "lab":
        tier, frame = "full", "lab"
    if frame not in FRAMES:
        raise ValueError(f"unknown frame {frame!r}")
    if tier != "full" and frame != "interaction":
        raise ValueError(f"tier {tier!r} is only defined in the interaction frame")

    a, num, s = _ops(spec)
    dim = spec.dim
    zero = sp.csr_matrix((dim, dim), dtype=complex)
    lams = params.lambdas
    energies = frame_energies(params, spec, frame, omega_ref)

    if tier == "effective":
        static = sum((-lams[j] * num[j] @ s("e", "e") for j in range(params.n)), zero)
        return HamiltonianGenerator(spec.dims, static, [], "effective", frame, energies)
    if tier == "effective_with_f":
        eye = sp.identity(dim, format="csr")
        static = sum((-lams[j] * (num[j] @ s("e", "e") - (num[j] + eye) @ s("f", "f"))
                      for j in range(params.n)), zero)
        return HamiltonianGenerator(spec.dims, static, [], "effective_with_f", frame, energies)

    # each coupling: (strength, bare operator lowering the lab energy, its detuning)
    couplings = []
    for j in range(params.n):
        couplings.append((params.g[j], a[j] @ s("e", "f"), params.detuning[j]))
        if tier == "full":
            if not drop_gprime:
                couplings.append((params.g_prime[j], a[j] @ s("g", "f"), params.detuning_gf[j]))
            couplings.append((params.g_tilde[j], a[j] @ s("g", "e"), params.detuning_ge[j]))
    if tier == "full":
        for k, l in combinations(range(params.n), 2):
            if params.g_cross[k][l]:
                couplings.append((params.g_cross[k][l], a[k].conj().T @ a[l], params.cavity_detuning(k, l)))

    if frame == "interaction":
        terms = [(det, g * op) for g, op, det in couplings]
        return HamiltonianGenerator(spec.dims, zero, terms, tier, frame, energies)

    # static frames: H_lab - G, with couplings that do not commute with G rotating
    h_lab_diag = free_energies(params, spec)
    static = sp.diags(h_lab_diag - energies).tocsr().astype(complex)
    terms = []
    for g, op, _ in couplings:
        coo = op.tocoo()
        if coo.nnz == 0:
            continue
        # |r><c| rotates at G_r - G_c in this frame; uniform for every coupling
        w = energies[coo.row] - energies[coo.col]
        if np.ptp(w) > 1e-6 * max(1.0, np.max(np.abs(w))):
            raise ValueError("coupling does not rotate uniformly in this frame")
        if abs(w[0]) < 1e-6:
            static = static + g * (op + op.conj().T)
        else:
            terms.append((float(w[0]), g * op))
    return HamiltonianGenerator(spec.dims, static, terms, tier, frame, energies)


def excitation_blocks_conserved(gen: HamiltonianGenerator, spec: HilbertSpec) -> bool:
    """True if the generator never connects different excitation numbers."""
    n = spec.excitations()
    mats = [gen.static_matrix] + [a for _, a in gen.terms]
    for m in mats:
        coo = m.tocoo()
        if np.any(n[coo.row] != n[coo.col]):
            return False
    return True


def condition_warnings(params: DeviceParams, threshold: float = 10.0) -> None:
    """Emit a ``UserWarning`` for every violated validity condition."""
    for flag in diagnose_conditions(params, threshold).flags:
        warnings.warn(flag, stacklevel=2)
