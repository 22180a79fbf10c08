"""Generalized thermal states over multiple conserved quantities.

A state is parametrized by one inverse temperature theta^j per quantity
slot: tau ~ exp(-sum_j theta^j X_j).  This module computes log partition
functions (free entropy), dual coordinates (first moments), Kubo-Mori
Fisher matrices, entropies, and the inverse map from moment targets back
to temperatures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    BasisMismatch,
    DimensionMismatch,
    NoConvergence,
    OutOfRange,
    RankDeficient,
)
from .observables import (
    CLASS_CAP,
    JointSpectrum,
    dense_eig,
    dense_joint,
    joint_spectrum,
    value_ranges,
)

PROB_FLOOR = 1e-300         # dense-path weights below this are reported, never clamped
LOG_TIE_TOL = 1e-12         # |ln p - ln q| below this uses the equal-weight kernel branch
NEWTON_MAX_ITER = 100
NEWTON_MAX_HALVINGS = 40
NEWTON_STEP_CAP = 8.0       # trust-region cap: |step| <= cap * (1 + |theta|)


@dataclass(frozen=True)
class InverseTemperature:
    """Named wrapper for a temperature vector aligned with an observable set's slots."""

    values: tuple
    labels: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def _slot(self, label: str) -> float:
        if self.labels is None:
            raise DimensionMismatch("no slot labels attached to this temperature vector")
        for q, v in zip(self.labels, self.values):
            if q.label == label:
                return v
        raise DimensionMismatch(f"no slot {label} in {[q.label for q in self.labels]}")

    @property
    def beta1(self) -> float:
        return self._slot("A1")

    @property
    def beta2(self) -> float:
        return self._slot("A2")

    @property
    def gamma1(self) -> float:
        return self._slot("B1")

    @property
    def gamma2(self) -> float:
        return self._slot("B2")

    def asarray(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


def as_theta(obs, theta) -> np.ndarray:
    if isinstance(theta, InverseTemperature):
        theta = theta.values
    arr = np.asarray(theta, dtype=np.float64)
    if arr.shape != (obs.num_slots,):
        raise DimensionMismatch(f"theta has shape {arr.shape}, expected ({obs.num_slots},)")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch("theta contains non-finite entries")
    return arr


class ThermalState:
    """Materialized or lazy generalized thermal state.

    materialized is one of 'dense', 'classes', 'lazy'.  Dense states carry a
    descending probability vector with the aligned eigenbasis; class states
    carry the canonical joint spectrum with per-state log probabilities.
    """

    def __init__(self, obs, theta, phi, materialized, *, p=None, basis=None,
                 state_values=None, js=None, log_p=None, floor_count=0):
        self.obs = obs
        self.theta = theta
        self.phi = float(phi)
        self.materialized = materialized
        self.p = p
        self.basis = basis
        self.state_values = state_values
        self.js = js
        self.log_p = log_p
        self.floor_count = int(floor_count)

    @property
    def scale(self) -> float:
        return self.obs.scale

    @property
    def full_rank(self) -> bool:
        return self.floor_count == 0

    def class_mass(self) -> np.ndarray:
        """Probability carried by each joint class (multiplicity included)."""
        if self.materialized != "classes":
            raise BasisMismatch("class masses are only defined for class-materialized states")
        return np.exp(self.js.log_mult + self.log_p)

    def eta(self) -> np.ndarray:
        if self.materialized == "dense":
            return self.state_values @ self.p
        if self.materialized == "classes":
            return self.js.values @ self.class_mass()
        return dual_coordinates(self.obs, self.theta)


def _dense_matrices(obs):
    if obs.kind == "dense":
        return obs.matrices
    if obs.kind == "iid_dense":
        return dense_joint(obs).matrices
    return None


def build_thermal_state(obs, theta, materialize: str = "auto",
                        class_cap: int = CLASS_CAP) -> ThermalState:
    """Build tau ~ exp(-sum_j theta^j X_j) in the representation-appropriate form.

    materialize: 'auto' picks dense for dense kinds, joint classes for
    commuting kinds when the class count fits, lazy otherwise; 'never'
    forces the lazy form for commuting kinds.
    """
    theta = as_theta(obs, theta)

    if obs.kind in ("dense", "iid_dense") and (
        obs.kind == "dense" or obs.site_dim ** obs.count <= 4096
    ):
        mats = _dense_matrices(obs)
        ham = -sum(t * m for t, m in zip(theta, mats))
        eps, vec = dense_eig(ham)
        order = np.argsort(-eps, kind="stable")
        eps = eps[order]
        vec = vec[:, order]
        phi = float(logsumexp(eps))
        p = np.exp(eps - phi)
        sv = np.empty((len(mats), len(p)))
        for i, m in enumerate(mats):
            sv[i] = np.einsum("ij,jk,ki->i", vec.conj().T, m, vec).real
        floor = int(np.sum(p < PROB_FLOOR))
        return ThermalState(obs, theta, phi, "dense", p=p, basis=vec,
                            state_values=sv, floor_count=floor)

    if obs.kind == "iid_dense":
        # too large to materialize; moments come from the single-site factor
        phi = free_entropy(obs, theta)
        return ThermalState(obs, theta, phi, "lazy")

    if obs.kind in ("diagonal", "product"):
        phi = free_entropy(obs, theta)
        if materialize == "never":
            return ThermalState(obs, theta, phi, "lazy")
        try:
            js = joint_spectrum(obs, class_cap)
        except Exception:
            if materialize == "auto":
                return ThermalState(obs, theta, phi, "lazy")
            raise
        energy = theta @ js.values
        log_p = -energy - phi
        total = logsumexp(js.log_mult + log_p)
        if abs(total) > 1e-12:
            raise DimensionMismatch(f"class masses sum to exp({total:.3e}), expected 1")
        return ThermalState(obs, theta, phi, "classes", js=js, log_p=log_p)

    raise DimensionMismatch(f"unknown observable kind {obs.kind!r}")


def free_entropy(obs, theta) -> float:
    """phi(theta) = log tr exp(-sum_j theta^j X_j)."""
    theta = as_theta(obs, theta)
    if obs.kind == "dense":
        ham = -sum(t * m for t, m in zip(theta, obs.matrices))
        eps = np.linalg.eigvalsh(ham)
        return float(logsumexp(eps))
    if obs.kind == "diagonal":
        return float(logsumexp(-(theta @ obs.values)))
    if obs.kind == "product":
        total = 0.0
        for g in obs.groups:
            total += g.count * float(logsumexp(-(theta @ g.values)))
        return total
    if obs.kind == "iid_dense":
        ham = -sum(t * m for t, m in zip(theta, obs.site_matrices))
        eps = np.linalg.eigvalsh(ham)
        return obs.count * float(logsumexp(eps))
    raise DimensionMismatch(f"unknown observable kind {obs.kind!r}")


def _site_distribution(values: np.ndarray, theta: np.ndarray):
    logw = -(theta @ values)
    logz = logsumexp(logw)
    return np.exp(logw - logz)


def dual_coordinates(obs, theta) -> np.ndarray:
    """eta_j(theta) = tr X_j tau_theta = -d phi / d theta^j."""
    theta = as_theta(obs, theta)
    if obs.kind in ("dense", "iid_dense"):
        mats = obs.matrices if obs.kind == "dense" else obs.site_matrices
        ham = -sum(t * m for t, m in zip(theta, mats))
        eps, vec = dense_eig(ham)
        p = np.exp(eps - logsumexp(eps))
        eta = np.array([
            float(p @ np.einsum("ij,ij->j", vec.conj(), m @ vec).real) for m in mats
        ])
        return eta * (obs.count if obs.kind == "iid_dense" else 1)
    if obs.kind == "diagonal":
        q = _site_distribution(obs.values, theta)
        return obs.values @ q
    if obs.kind == "product":
        eta = np.zeros(obs.num_slots)
        for g in obs.groups:
            q = _site_distribution(g.values, theta)
            eta += g.count * (g.values @ q)
        return eta
    raise DimensionMismatch(f"unknown observable kind {obs.kind!r}")


def _kubo_mori_kernel(p: np.ndarray) -> np.ndarray:
    """c(p_k, p_l) = (p_k - p_l) / (ln p_k - ln p_l) with the tied branch c(p, p) = p."""
    logp = np.log(np.maximum(p, PROB_FLOOR))
    dp = p[:, None] - p[None, :]
    dl = logp[:, None] - logp[None, :]
    tied = np.abs(dl) < LOG_TIE_TOL
    safe = np.where(tied, 1.0, dl)
    return np.where(tied, 0.5 * (p[:, None] + p[None, :]), dp / safe)


def _dense_fisher(mats, theta: np.ndarray) -> np.ndarray:
    ham = -sum(t * m for t, m in zip(theta, mats))
    eps, vec = dense_eig(ham)
    p = np.exp(eps - logsumexp(eps))
    if np.any(p < PROB_FLOOR):
        raise RankDeficient(
            f"{int(np.sum(p < PROB_FLOOR))} weights below {PROB_FLOOR:.0e}; "
            "the Kubo-Mori metric is not reliable here"
        )
    c = _kubo_mori_kernel(p)
    K = len(mats)
    tilde = [vec.conj().T @ m @ vec for m in mats]
    eta = np.array([float(np.sum(p * np.diag(t).real)) for t in tilde])
    J = np.empty((K, K))
    for i in range(K):
        for j in range(i, K):
            J[i, j] = J[j, i] = float(np.sum((tilde[i] * tilde[j].conj()).real * c)) - eta[i] * eta[j]
    return J


def fisher_matrix(obs, theta) -> np.ndarray:
    """Kubo-Mori Fisher matrix J_ij = d^2 phi / d theta^i d theta^j.

    Commuting representations reduce to the covariance of the value tuples.
    """
    theta = as_theta(obs, theta)
    if obs.kind == "dense":
        return _dense_fisher(obs.matrices, theta)
    if obs.kind == "iid_dense":
        return obs.count * _dense_fisher(obs.site_matrices, theta)
    if obs.kind == "diagonal":
        q = _site_distribution(obs.values, theta)
        mean = obs.values @ q
        return (obs.values * q) @ obs.values.T - np.outer(mean, mean)
    if obs.kind == "product":
        K = obs.num_slots
        J = np.zeros((K, K))
        for g in obs.groups:
            q = _site_distribution(g.values, theta)
            mean = g.values @ q
            J += g.count * ((g.values * q) @ g.values.T - np.outer(mean, mean))
        return J
    raise DimensionMismatch(f"unknown observable kind {obs.kind!r}")


def thermal_entropy(obs, theta) -> float:
    """S(tau_theta) via the Legendre identity S = theta . eta + phi."""
    theta = as_theta(obs, theta)
    return float(theta @ dual_coordinates(obs, theta) + free_entropy(obs, theta))


def von_neumann_entropy(state: ThermalState) -> float:
    """-tr rho ln rho, computed from the materialized spectrum when available."""
    if state.materialized == "dense":
        p = state.p
        pos = p > 0.0
        return float(-np.sum(p[pos] * np.log(p[pos])))
    if state.materialized == "classes":
        mass = state.class_mass()
        return float(-np.sum(mass * state.log_p))
    return thermal_entropy(state.obs, state.theta)


def relative_entropy(rho: ThermalState, sigma: ThermalState) -> float:
    """D(rho || sigma) = tr rho (ln rho - ln sigma).

    Dense pairs may live in different eigenbases; class pairs must share the
    identical canonical joint spectrum (BasisMismatch otherwise).
    """
    if rho.materialized == "dense" and sigma.materialized == "dense":
        if rho.p.shape != sigma.p.shape:
            raise DimensionMismatch("states live on different Hilbert dimensions")
        overlap = np.abs(rho.basis.conj().T @ sigma.basis) ** 2
        r, s = rho.p, sigma.p
        pos = r > 0.0
        if np.any((overlap[pos] > 1e-300) & (sigma.p[None, :] < PROB_FLOOR)):
            return math.inf
        ent = float(np.sum(r[pos] * np.log(r[pos])))
        cross = float(r @ (overlap @ np.log(np.maximum(s, PROB_FLOOR))))
        return ent - cross
    if rho.materialized == "classes" and sigma.materialized == "classes":
        if rho.js.values.shape != sigma.js.values.shape or not np.array_equal(
            rho.js.values, sigma.js.values
        ):
            raise BasisMismatch("class states do not share a joint spectrum")
        mass = rho.class_mass()
        return float(np.sum(mass * (rho.log_p - sigma.log_p)))
    raise BasisMismatch(
        f"relative entropy between {rho.materialized!r} and {sigma.materialized!r} "
        "representations is not defined"
    )


@dataclass
class EffectiveTemperature:
    """Result of inverting moment targets back to a temperature vector."""

    theta: np.ndarray
    eta: np.ndarray
    residual: float
    iterations: int
    converged: bool


def effective_temperature(obs, target, initial=None, tol: float = 1e-9,
                          max_iter: int = NEWTON_MAX_ITER, weights=None) -> EffectiveTemperature:
    """Solve eta(theta) = target by damped Newton iteration.

    Raises OutOfRange when a target moment lies outside the closed achievable
    range of its observable, NoConvergence when the iteration budget runs out.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (obs.num_slots,):
        raise DimensionMismatch(f"target has shape {target.shape}, expected ({obs.num_slots},)")
    ranges = value_ranges(obs)
    for j, (lo, hi) in enumerate(ranges):
        if not (lo < target[j] < hi):
            raise OutOfRange(
                f"slot {obs.labels[j].label}: target {target[j]:.6g} outside achievable "
                f"open interval ({lo:.6g}, {hi:.6g})"
            )
    w = np.ones_like(target) if weights is None else np.asarray(weights, dtype=np.float64)

    def norm(v):
        return float(np.linalg.norm(w * v))

    theta = np.zeros_like(target) if initial is None else as_theta(obs, initial).copy()
    goal = tol * (1.0 + norm(target))

    # convex dual potential: phi(theta) + theta.target has gradient
    # target - eta and grows at infinity for interior targets, so descent
    # on it cannot drift onto the saturation plateau the way pure
    # residual-norm descent can
    def potential(th):
        return free_entropy(obs, th) + float(th @ target)

    r = dual_coordinates(obs, theta) - target
    best = norm(r)
    f_cur = potential(theta)
    for it in range(1, max_iter + 1):
        if best <= goal:
            return EffectiveTemperature(theta, target + r, best, it - 1, True)
        J = fisher_matrix(obs, theta)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            raise NoConvergence(f"Fisher matrix singular at iteration {it}")
        # an ill-conditioned Fisher matrix can propose an enormous step;
        # keep each increment within a trust region
        step_norm = float(np.linalg.norm(step))
        cap = NEWTON_STEP_CAP * (1.0 + float(np.linalg.norm(theta)))
        if step_norm > cap:
            step *= cap / step_norm
        scale = 1.0
        f_slack = 1e-9 * (1.0 + abs(f_cur))
        for _ in range(NEWTON_MAX_HALVINGS):
            cand = theta + scale * step
            rc = dual_coordinates(obs, cand) - target
            f_cand = potential(cand)
            # near convergence the quadratic decrease of the potential
            # drops below float resolution, so residual descent is also
            # accepted, but only while the potential does not grow
            if f_cand < f_cur or (norm(rc) < best and f_cand <= f_cur + f_slack):
                theta, r, best = cand, rc, norm(rc)
                f_cur = f_cand
                break
            scale *= 0.5
        else:
            raise NoConvergence(
                f"no residual decrease after {NEWTON_MAX_HALVINGS} halvings at iteration {it} "
                f"(residual {best:.3e})"
            )
    if best <= goal:
        return EffectiveTemperature(theta, target + r, best, max_iter, True)
    raise NoConvergence(f"residual {best:.3e} above goal {goal:.3e} after {max_iter} iterations")
