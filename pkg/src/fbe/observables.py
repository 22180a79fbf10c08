"""Observable sets for engines coupled to finite baths.

Four representations cover everything handled downstream:

* ``DenseSet``       -- dense Hermitian matrices on one Hilbert space.
* ``DiagonalSet``    -- commuting observables given by aligned eigenvalue
                        columns, one column per basis state.
* ``ProductDiagonalSet`` -- independent site groups, each group holding
                        ``count`` i.i.d. copies of a small diagonal factor.
                        Covers i.i.d. baths (one group) and level-resolved
                        gases (one group per level).
* ``IIDDenseSet``    -- ``count`` i.i.d. copies of a dense, possibly
                        non-commuting site factor.

All thermal machinery dispatches on these kinds.  Joint spectra of
commuting sets are reduced to a canonical merged type-class form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import (
    DegenerateObservables,
    DimensionCap,
    DimensionMismatch,
    NonCommuting,
    NonHermitian,
    ScaleTooLarge,
)

DENSE_DIM_CAP = 4096        # largest Hilbert dimension for dense matrix work
HERMITICITY_TOL = 1e-12     # relative max-norm tolerance on X - X^dagger
COMMUTATOR_TOL = 1e-10      # absolute max-norm gate for the commuting path
GRAM_RATIO_FLOOR = 1e-10    # min/max Gram eigenvalue before {1, X_j} counts as degenerate
MULT_LOG_TOL = 1e-12        # summed multiplicities must reproduce log dim this tightly
CLASS_CAP = 25_000_000      # refuse to materialize more joint classes than this


@dataclass(frozen=True, order=True)
class Quantity:
    """Label of one conserved-quantity slot.

    family 'A' marks the work-carrying quantity, family 'B' an additional
    conserved charge; ``bath`` is the 1-based bath index.
    """

    family: str
    bath: int

    def __post_init__(self):
        if self.family not in ("A", "B"):
            raise DimensionMismatch(f"quantity family must be 'A' or 'B', got {self.family!r}")
        if not isinstance(self.bath, int) or self.bath < 1:
            raise DimensionMismatch(f"bath index must be a positive integer, got {self.bath!r}")

    @property
    def label(self) -> str:
        return f"{self.family}{self.bath}"


# canonical slot order for the two-bath engine: A1, A2, B1, B2
ENGINE_SLOTS = (Quantity("A", 1), Quantity("A", 2), Quantity("B", 1), Quantity("B", 2))


def check_slot_order(labels) -> tuple:
    """Slots must be distinct and follow the canonical A-then-B, bath-ascending order."""
    labels = tuple(labels)
    if len(labels) == 0:
        raise DimensionMismatch("an observable set needs at least one slot")
    if len(set(labels)) != len(labels):
        raise DimensionMismatch(f"duplicate quantity slots: {[q.label for q in labels]}")
    if list(labels) != sorted(labels):
        raise DimensionMismatch(
            f"slots must be ordered A before B, bath ascending; got {[q.label for q in labels]}"
        )
    return labels


def _require_hermitian(mat: np.ndarray, what: str) -> None:
    scale = max(1.0, float(np.max(np.abs(mat))) if mat.size else 1.0)
    dev = float(np.max(np.abs(mat - mat.conj().T)))
    if dev > HERMITICITY_TOL * scale:
        raise NonHermitian(f"{what}: max |X - X^H| = {dev:.3e} exceeds {HERMITICITY_TOL:.0e} * {scale:.3e}")


@dataclass(frozen=True)
class JointSpectrum:
    """Canonical merged joint spectrum of a commuting observable set.

    ``values`` has shape (K, M): column m is the value tuple of class m.
    ``log_mult`` holds natural-log multiplicities; ``mult`` additionally
    holds exact integer counts when they fit in int64.  Classes are ordered
    lexicographically by value tuple (slot 1 most significant).
    """

    values: np.ndarray
    log_mult: np.ndarray
    labels: tuple
    log_dim: float
    mult: np.ndarray | None = None

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]

    def check(self) -> None:
        total = float(logsumexp(self.log_mult))
        if abs(total - self.log_dim) > MULT_LOG_TOL * max(1.0, abs(self.log_dim)):
            raise DimensionMismatch(
                f"class multiplicities sum to log {total:.15g}, expected log dim {self.log_dim:.15g}"
            )


@dataclass(frozen=True)
class DenseSet:
    """K dense Hermitian observables on a d-dimensional space."""

    matrices: tuple
    labels: tuple
    scale: float = 1.0
    kind: str = field(default="dense", init=False)

    @property
    def num_slots(self) -> int:
        return len(self.matrices)

    @property
    def dim(self) -> int:
        return self.matrices[0].shape[0]


@dataclass(frozen=True)
class DiagonalSet:
    """Commuting observables as aligned eigenvalue rows, shape (K, d).

    Each column is one basis state; multiplicity is encoded by repetition.
    """

    values: np.ndarray
    labels: tuple
    scale: float = 1.0
    kind: str = field(default="diagonal", init=False)

    @property
    def num_slots(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SiteGroup:
    """``count`` i.i.d. copies of a diagonal site factor with values (K, d_site)."""

    values: np.ndarray
    count: int


@dataclass(frozen=True)
class ProductDiagonalSet:
    """Independent site groups; the joint space is the tensor product of all sites."""

    groups: tuple
    labels: tuple
    scale: float = 1.0
    kind: str = field(default="product", init=False)

    @property
    def num_slots(self) -> int:
        return self.groups[0].values.shape[0]

    @property
    def log_dim(self) -> float:
        return float(sum(g.count * math.log(g.values.shape[1]) for g in self.groups))


@dataclass(frozen=True)
class IIDDenseSet:
    """``count`` i.i.d. copies of a dense site factor with matrices (K, d0, d0)."""

    site_matrices: tuple
    count: int
    labels: tuple
    scale: float = 1.0
    kind: str = field(default="iid_dense", init=False)

    @property
    def num_slots(self) -> int:
        return len(self.site_matrices)

    @property
    def site_dim(self) -> int:
        return self.site_matrices[0].shape[0]

    @property
    def log_dim(self) -> float:
        return self.count * math.log(self.site_dim)


def uniform_moments(obs):
    """First and second moments of the observables under the maximally mixed state.

    Returns (mean (K,), second (K, K)) with second[i, j] = <X_i X_j>/dim.
    Used for the degeneracy gate; exact for every representation.
    """
    if obs.kind == "dense":
        d = obs.dim
        mean = np.array([float(np.trace(m).real) / d for m in obs.matrices])
        K = obs.num_slots
        second = np.empty((K, K))
        for i in range(K):
            for j in range(i, K):
                second[i, j] = second[j, i] = float(np.trace(obs.matrices[i] @ obs.matrices[j]).real) / d
        return mean, second
    if obs.kind == "diagonal":
        v = obs.values
        mean = v.mean(axis=1)
        second = (v @ v.T) / v.shape[1]
        return mean, second
    if obs.kind == "product":
        K = obs.num_slots
        mean = np.zeros(K)
        cov = np.zeros((K, K))
        for g in obs.groups:
            m_g = g.values.mean(axis=1)
            c_g = (g.values @ g.values.T) / g.values.shape[1] - np.outer(m_g, m_g)
            mean += g.count * m_g
            cov += g.count * c_g
        return mean, cov + np.outer(mean, mean)
    if obs.kind == "iid_dense":
        d0 = obs.site_dim
        K = obs.num_slots
        m1 = np.array([float(np.trace(x).real) / d0 for x in obs.site_matrices])
        s1 = np.empty((K, K))
        for i in range(K):
            for j in range(i, K):
                s1[i, j] = s1[j, i] = float(np.trace(obs.site_matrices[i] @ obs.site_matrices[j]).real) / d0
        c1 = s1 - np.outer(m1, m1)
        mean = obs.count * m1
        return mean, obs.count * c1 + np.outer(mean, mean)
    raise DimensionMismatch(f"unknown observable kind {obs.kind!r}")


def value_ranges(obs) -> np.ndarray:
    """Per-slot [min, max] of each observable's spectrum, shape (K, 2)."""
    if obs.kind == "dense":
        out = []
        for m in obs.matrices:
            ev = np.linalg.eigvalsh(m)
            out.append((float(ev[0]), float(ev[-1])))
        return np.array(out)
    if obs.kind == "diagonal":
        return np.stack([obs.values.min(axis=1), obs.values.max(axis=1)], axis=1)
    if obs.kind == "product":
        K = obs.num_slots
        out = np.zeros((K, 2))
        for g in obs.groups:
            out[:, 0] += g.count * g.values.min(axis=1)
            out[:, 1] += g.count * g.values.max(axis=1)
        return out
    if obs.kind == "iid_dense":
        out = []
        for m in obs.site_matrices:
            ev = np.linalg.eigvalsh(m)
            out.append((obs.count * float(ev[0]), obs.count * float(ev[-1])))
        return np.array(out)
    raise DimensionMismatch(f"unknown observable kind {obs.kind!r}")


def validate(obs) -> None:
    """Structural validation: shapes, Hermiticity, dimension caps, degeneracy gate.

    Raises the matching typed error; returns None on success.
    """
    check_slot_order(obs.labels)
    if not (obs.scale > 0) or not np.isfinite(obs.scale):
        raise DimensionMismatch(f"scale must be positive and finite, got {obs.scale}")

    if obs.kind == "dense":
        if len(obs.matrices) != len(obs.labels):
            raise DimensionMismatch(f"{len(obs.matrices)} matrices for {len(obs.labels)} slots")
        d = obs.matrices[0].shape[0]
        if d > DENSE_DIM_CAP:
            raise DimensionCap(f"dense dimension {d} exceeds cap {DENSE_DIM_CAP}")
        for q, m in zip(obs.labels, obs.matrices):
            if m.ndim != 2 or m.shape != (d, d):
                raise DimensionMismatch(f"slot {q.label}: expected shape ({d}, {d}), got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise DimensionMismatch(f"slot {q.label}: non-finite entries")
            _require_hermitian(m, f"slot {q.label}")
    elif obs.kind == "diagonal":
        if obs.values.ndim != 2 or obs.values.shape[0] != len(obs.labels):
            raise DimensionMismatch(
                f"diagonal values must have shape (K={len(obs.labels)}, d), got {obs.values.shape}"
            )
        if not np.all(np.isfinite(obs.values)):
            raise DimensionMismatch("diagonal values contain non-finite entries")
    elif obs.kind == "product":
        K = len(obs.labels)
        if not obs.groups:
            raise DimensionMismatch("product set needs at least one site group")
        for i, g in enumerate(obs.groups):
            if g.values.ndim != 2 or g.values.shape[0] != K:
                raise DimensionMismatch(f"group {i}: values shape {g.values.shape} does not match K={K}")
            if g.values.shape[1] < 1 or g.count < 1:
                raise DimensionMismatch(f"group {i}: needs at least one level and one site")
            if not np.all(np.isfinite(g.values)):
                raise DimensionMismatch(f"group {i}: non-finite entries")
    elif obs.kind == "iid_dense":
        K = len(obs.labels)
        if len(obs.site_matrices) != K:
            raise DimensionMismatch(f"{len(obs.site_matrices)} site matrices for {K} slots")
        if obs.count < 1:
            raise DimensionMismatch(f"site count must be positive, got {obs.count}")
        d0 = obs.site_matrices[0].shape[0]
        for q, m in zip(obs.labels, obs.site_matrices):
            if m.shape != (d0, d0):
                raise DimensionMismatch(f"slot {q.label}: expected shape ({d0}, {d0}), got {m.shape}")
            _require_hermitian(m, f"site factor {q.label}")
    else:
        raise DimensionMismatch(f"unknown observable kind {obs.kind!r}")

    mean, second = uniform_moments(obs)
    K = len(obs.labels)
    gram = np.empty((K + 1, K + 1))
    gram[0, 0] = 1.0
    gram[0, 1:] = gram[1:, 0] = mean
    gram[1:, 1:] = second
    # scale-balance the Gram so mixed units do not fake (non-)degeneracy
    norms = np.sqrt(np.maximum(np.diag(gram), 1e-300))
    gram = gram / np.outer(norms, norms)
    ev = np.linalg.eigvalsh(gram)
    if ev[0] < GRAM_RATIO_FLOOR * ev[-1]:
        raise DegenerateObservables(
            f"Gram eigenvalue ratio {ev[0] / ev[-1]:.3e} below {GRAM_RATIO_FLOOR:.0e}; "
            "the set {1, X_j} is linearly dependent"
        )


def dense_eig(matrix: np.ndarray):
    """Eigendecomposition of a Hermitian matrix with reconstruction guarantees.

    Returns (eigenvalues ascending, eigenvector columns).  Reconstruction is
    checked to 1e-10 relative and unitarity to 1e-12; identical input bits
    give identical output (LAPACK is deterministic for a fixed build).
    """
    _require_hermitian(matrix, "dense_eig input")
    if matrix.shape[0] > DENSE_DIM_CAP:
        raise DimensionCap(f"dimension {matrix.shape[0]} exceeds cap {DENSE_DIM_CAP}")
    w, v = np.linalg.eigh(matrix)
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    recon = float(np.max(np.abs((v * w) @ v.conj().T - matrix)))
    if recon > 1e-10 * scale:
        raise NonHermitian(f"eigendecomposition reconstruction error {recon:.3e} exceeds 1e-10 * {scale:.3e}")
    unit = float(np.max(np.abs(v.conj().T @ v - np.eye(matrix.shape[0]))))
    if unit > 1e-12 * matrix.shape[0]:
        raise NonHermitian(f"eigenvector unitarity defect {unit:.3e}")
    return w, v


def _log_multinomial(count: int, ks: np.ndarray) -> np.ndarray:
    """log of count! / prod(k_l!) for rows of ks."""
    return gammaln(count + 1.0) - gammaln(ks + 1.0).sum(axis=1)


def _group_classes(g: SiteGroup):
    """Type classes of one site group: (values (K, M), log_mult (M,))."""
    K, d = g.values.shape
    n = g.count
    if d == 1:
        return g.values * n, np.zeros(1)
    if d == 2:
        k = np.arange(n + 1, dtype=np.float64)
        vals = g.values[:, 0:1] * (n - k)[None, :] + g.values[:, 1:2] * k[None, :]
        lm = gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)
        return vals, lm
    # general small-d case: enumerate compositions of n into d parts
    num = math.comb(n + d - 1, d - 1)
    if num > CLASS_CAP:
        raise ScaleTooLarge(f"group with {d} levels and {n} sites has {num} classes (cap {CLASS_CAP})")
    parts = []

    def _fill(prefix, remaining, slots):
        if slots == 1:
            parts.append(prefix + [remaining])
            return
        for first in range(remaining + 1):
            _fill(prefix + [first], remaining - first, slots - 1)

    _fill([], n, d)
    ks = np.array(parts, dtype=np.float64)
    vals = g.values @ ks.T
    return vals, _log_multinomial(n, ks)


def _merge_classes(values: np.ndarray, log_mult: np.ndarray):
    """Merge identical value columns; canonical lexicographic order, slot 1 primary."""
    order = np.lexsort(values[::-1])
    values = values[:, order]
    log_mult = log_mult[order]
    if values.shape[1] == 0:
        return values, log_mult
    newcls = np.any(values[:, 1:] != values[:, :-1], axis=0)
    starts = np.concatenate([[0], np.nonzero(newcls)[0] + 1])
    ends = np.concatenate([starts[1:], [values.shape[1]]])
    merged_vals = values[:, starts]
    merged_lm = np.array([logsumexp(log_mult[a:b]) for a, b in zip(starts, ends)])
    return merged_vals, merged_lm


def joint_spectrum(obs, class_cap: int = CLASS_CAP) -> JointSpectrum:
    """Canonical merged joint spectrum of a commuting observable set.

    Dense sets pass a commutator gate (absolute tolerance COMMUTATOR_TOL) and
    are simultaneously diagonalized; non-commuting input raises NonCommuting.
    """
    if obs.kind == "diagonal":
        vals, lm = _merge_classes(obs.values.astype(np.float64, copy=True), np.zeros(obs.dim))
        js = JointSpectrum(vals, lm, tuple(obs.labels), math.log(obs.dim), _exact_mult(lm))
        js.check()
        return js

    if obs.kind == "product":
        log_dim = obs.log_dim
        num = 1
        for g in obs.groups:
            if g.values.shape[1] == 2:
                num *= g.count + 1
            elif g.values.shape[1] == 1:
                pass
            else:
                num *= math.comb(g.count + g.values.shape[1] - 1, g.values.shape[1] - 1)
            if num > class_cap:
                raise ScaleTooLarge(f"joint classes exceed cap {class_cap}")
        vals, lm = _group_classes(obs.groups[0])
        for g in obs.groups[1:]:
            v2, lm2 = _group_classes(g)
            vals = (vals[:, :, None] + v2[:, None, :]).reshape(obs.num_slots, -1)
            lm = (lm[:, None] + lm2[None, :]).ravel()
        vals, lm = _merge_classes(vals, lm)
        js = JointSpectrum(vals, lm, tuple(obs.labels), log_dim, _exact_mult(lm))
        js.check()
        return js

    if obs.kind == "dense":
        d = obs.dim
        scale = max(max(1.0, float(np.max(np.abs(m)))) for m in obs.matrices)
        for i in range(obs.num_slots):
            for j in range(i + 1, obs.num_slots):
                comm = obs.matrices[i] @ obs.matrices[j] - obs.matrices[j] @ obs.matrices[i]
                dev = float(np.max(np.abs(comm)))
                if dev > COMMUTATOR_TOL:
                    raise NonCommuting(
                        f"slots {obs.labels[i].label} and {obs.labels[j].label}: "
                        f"max |[X_i, X_j]| = {dev:.3e} exceeds {COMMUTATOR_TOL:.0e}"
                    )
        # generic fixed-weight combination splits all jointly resolvable degeneracies
        weights = np.array([1.0 / math.sqrt(p) for p in (2, 3, 5, 7, 11, 13, 17, 19)[: obs.num_slots]])
        combo = sum(w * m for w, m in zip(weights, obs.matrices))
        _, v = dense_eig(combo)
        vals = np.empty((obs.num_slots, d))
        for i, m in enumerate(obs.matrices):
            t = v.conj().T @ m @ v
            off = float(np.max(np.abs(t - np.diag(np.diag(t)))))
            if off > 1e-8 * max(1.0, scale):
                raise NonCommuting(
                    f"slot {obs.labels[i].label}: residual off-diagonal {off:.3e} after joint rotation"
                )
            vals[i] = np.diag(t).real
        vals, lm = _merge_classes(vals, np.zeros(d))
        js = JointSpectrum(vals, lm, tuple(obs.labels), math.log(d), _exact_mult(lm))
        js.check()
        return js

    if obs.kind == "iid_dense":
        for i in range(obs.num_slots):
            for j in range(i + 1, obs.num_slots):
                comm = obs.site_matrices[i] @ obs.site_matrices[j] - obs.site_matrices[j] @ obs.site_matrices[i]
                if float(np.max(np.abs(comm))) > COMMUTATOR_TOL:
                    raise NonCommuting(
                        f"site factors {obs.labels[i].label} and {obs.labels[j].label} do not commute; "
                        "no joint eigenbasis exists"
                    )
        site = DenseSet(tuple(obs.site_matrices), tuple(obs.labels))
        site_js = joint_spectrum(site)
        prod = ProductDiagonalSet(
            (SiteGroup(site_js.values.copy(), obs.count),), tuple(obs.labels), obs.scale
        )
        return joint_spectrum(prod, class_cap)

    raise DimensionMismatch(f"unknown observable kind {obs.kind!r}")


def _exact_mult(log_mult: np.ndarray):
    """Integer multiplicities when every count round-trips through float64 exactly."""
    with np.errstate(over="ignore"):
        m = np.exp(log_mult)
    if np.all(np.isfinite(m)) and np.all(m < 2**53):
        r = np.round(m)
        if np.max(np.abs(m - r)) < 1e-6:
            return r.astype(np.int64)
    return None


def dense_joint(obs: IIDDenseSet) -> DenseSet:
    """Materialize an i.i.d. dense site set as full Kronecker-product matrices."""
    d = obs.site_dim ** obs.count
    if d > DENSE_DIM_CAP:
        raise DimensionCap(f"joint dimension {d} exceeds cap {DENSE_DIM_CAP}")
    mats = []
    eye = np.eye(obs.site_dim)
    for m in obs.site_matrices:
        total = np.zeros((d, d), dtype=complex)
        for s in range(obs.count):
            factors = [m if t == s else eye for t in range(obs.count)]
            term = factors[0]
            for f in factors[1:]:
                term = np.kron(term, f)
            total += term
        mats.append(total)
    return DenseSet(tuple(mats), tuple(obs.labels), obs.scale)
