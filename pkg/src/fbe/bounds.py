"""First- and second-order work bounds for engines on finite baths.

The first-order bound is the generalized Carnot limit; at finite bath scale
it tightens by a quadratic form in the drawn heats whose coefficients come
from the inverse of the asymptotic Fisher density g.  The engine here is
written for any slot layout (A1 mandatory, any subset of A2/B1/B2-style
heat slots) and reduces algebraically to the closed two-bath formulas.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, SingularG, ZeroColdTemperature
from .observables import Quantity, check_slot_order, value_ranges
from .thermal import as_theta, fisher_matrix

G_INVERSE_TOL = 1e-8        # required accuracy of g @ g_inv against the identity
FD_STEP = 1e-5              # central-difference step for numeric density Hessians


@dataclass(frozen=True)
class AsymptoticDensities:
    """Asymptotic Fisher density g = lim J_lambda / lambda at a fixed theta0.

    source is 'analytic' or 'numeric'; lambda_ref records the reference scale
    of a numeric estimate (None for analytic ones).
    """

    g: np.ndarray
    g_inv: np.ndarray
    theta0: np.ndarray
    labels: tuple
    source: str
    lambda_ref: float | None = None

    def check(self) -> None:
        resid = float(np.max(np.abs(self.g @ self.g_inv - np.eye(self.g.shape[0]))))
        if resid > G_INVERSE_TOL:
            raise SingularG(f"g @ g_inv deviates from identity by {resid:.3e}")


def _invert_density(g: np.ndarray, labels) -> AsymptoticDensities:
    g = np.asarray(g, dtype=np.float64)
    K = len(labels)
    if g.shape != (K, K):
        raise DimensionMismatch(f"density has shape {g.shape}, expected ({K}, {K})")
    if float(np.max(np.abs(g - g.T))) > 1e-10 * max(1.0, float(np.max(np.abs(g)))):
        raise SingularG("density matrix is not symmetric")
    ev = np.linalg.eigvalsh(g)
    if ev[0] <= 1e-14 * max(1.0, ev[-1]):
        raise SingularG(f"density eigenvalues {ev}; not positive definite")
    return np.linalg.inv(g)


def make_densities(g, theta0, labels, source: str, lambda_ref=None) -> AsymptoticDensities:
    """Package a density matrix with its inverse, with PD and inversion checks."""
    labels = check_slot_order(labels)
    g = np.asarray(g, dtype=np.float64)
    g_inv = _invert_density(g, labels)
    dens = AsymptoticDensities(g, g_inv, np.asarray(theta0, dtype=np.float64),
                               labels, source, lambda_ref)
    dens.check()
    return dens


def estimate_densities(obs, theta0, richardson: bool = False, obs_double=None) -> AsymptoticDensities:
    """Numeric density estimate g = J(theta0; lambda_ref) / lambda_ref.

    With richardson=True, obs_double must be the same model at twice the
    scale; the estimate becomes 2 J(2 lambda)/(2 lambda) - J(lambda)/lambda,
    cancelling any O(1/lambda) correction.
    """
    theta0 = as_theta(obs, theta0)
    g = fisher_matrix(obs, theta0) / obs.scale
    if richardson:
        if obs_double is None or abs(obs_double.scale - 2 * obs.scale) > 1e-9 * obs.scale:
            raise DimensionMismatch("richardson=True needs the same system at exactly twice the scale")
        g = 2.0 * fisher_matrix(obs_double, theta0) / obs_double.scale - g
    return make_densities(g, theta0, obs.labels, "numeric", lambda_ref=obs.scale)


def hessian_densities(phi_density, theta0, labels, step: float = FD_STEP) -> AsymptoticDensities:
    """Analytic-route densities from a free-entropy density function.

    phi_density(theta) -> phi/lambda; g is its Hessian by symmetric central
    differences with step FD_STEP.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    K = len(theta0)
    g = np.empty((K, K))
    for i in range(K):
        for j in range(i, K):
            ei = np.zeros(K)
            ej = np.zeros(K)
            ei[i] = step
            ej[j] = step
            if i == j:
                val = (phi_density(theta0 + ei) - 2.0 * phi_density(theta0)
                       + phi_density(theta0 - ei)) / step**2
            else:
                val = (phi_density(theta0 + ei + ej) - phi_density(theta0 + ei - ej)
                       - phi_density(theta0 - ei + ej) + phi_density(theta0 - ei - ej)) / (4.0 * step**2)
            g[i, j] = g[j, i] = val
    return make_densities(g, theta0, labels, "analytic")


@dataclass(frozen=True)
class HeatVector:
    """Heats drawn from the baths, positive = absorbed into the engine.

    dQ_A2 is the work-quantity heat from bath 2; dQ_B1/dQ_B2 are the
    additional-charge heats.  beta0 and gamma0 are the unit scales used for
    the dimensionless norm: norm^2 = beta0^2 dQ_A2^2 + gamma0^2 (dQ_B1^2 +
    dQ_B2^2).
    """

    dQ_A2: float = 0.0
    dQ_B1: float = 0.0
    dQ_B2: float = 0.0
    beta0: float = 1.0
    gamma0: float = 1.0

    @property
    def norm(self) -> float:
        return float(np.sqrt((self.beta0 * self.dQ_A2) ** 2
                             + self.gamma0 ** 2 * (self.dQ_B1 ** 2 + self.dQ_B2 ** 2)))

    def slot_heats(self, labels) -> np.ndarray:
        """Heats aligned with the heat slots (all slots after A1) of ``labels``."""
        labels = tuple(labels)
        if labels[0] != Quantity("A", 1):
            raise DimensionMismatch("slot A1 must come first")
        by_label = {"A2": self.dQ_A2, "B1": self.dQ_B1, "B2": self.dQ_B2}
        out = []
        for q in labels[1:]:
            if q.label not in by_label:
                raise DimensionMismatch(f"no heat field for slot {q.label}")
            out.append(by_label.pop(q.label))
        for label, leftover in by_label.items():
            if leftover != 0.0:
                raise DimensionMismatch(f"nonzero heat {leftover} for absent slot {label}")
        return np.array(out, dtype=np.float64)


def default_norm_scales(theta0, labels, obs=None) -> tuple[float, float]:
    """Default (beta0, gamma0): |beta_1|, and the largest |gamma_i| over B slots.

    When every gamma_i is zero, gamma0 falls back to beta0 divided by the
    per-scale spectral width of the B observables (so B heats are measured in
    the same dimensionless units), or to beta0 when there are no B slots.
    """
    labels = tuple(labels)
    theta0 = np.asarray(theta0, dtype=np.float64)
    beta0 = abs(theta0[0])
    gammas = [abs(t) for q, t in zip(labels, theta0) if q.family == "B"]
    if not gammas:
        return beta0, beta0
    gamma0 = max(gammas)
    if gamma0 == 0.0:
        width = 1.0
        if obs is not None:
            ranges = value_ranges(obs)
            widths = [(hi - lo) / obs.scale for q, (lo, hi) in zip(labels, ranges) if q.family == "B"]
            width = max([w for w in widths if w > 0], default=1.0)
        gamma0 = beta0 * width
    return beta0, gamma0


@dataclass(frozen=True)
class SecondOrderCoefficients:
    """Quadratic-form coefficients of the finite-size bound correction.

    M is the full matrix over heat slots (labels[1:]): the correction is
    (1/lambda) * q^T M q for the heat vector q.  For the canonical engine
    layout the named fields give the familiar combinations
        correction = (C_AA dQ_A2^2 + sum_i C_AB[i] dQ_A2 dQ_Bi
                      + sum_ij C_BB[i,j] dQ_Bi dQ_Bj) / lambda.
    """

    M: np.ndarray
    labels: tuple
    theta0: np.ndarray
    C_AA: float = 0.0
    C_AB: np.ndarray = field(default_factory=lambda: np.zeros(2))
    C_BB: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))


def _cold_beta(theta0, labels) -> float:
    labels = tuple(labels)
    if labels[0] != Quantity("A", 1):
        raise DimensionMismatch("slot A1 (the cold work quantity) must come first")
    beta1 = float(theta0[0])
    if beta1 == 0.0:
        raise ZeroColdTemperature("beta_1 = 0: the Carnot factor is undefined")
    if beta1 < 0.0:
        raise ZeroColdTemperature(
            f"beta_1 = {beta1:.6g} < 0: bounds require a positive cold inverse temperature"
        )
    return beta1


def second_order_coefficients(dens: AsymptoticDensities) -> SecondOrderCoefficients:
    """Coefficients of the quadratic heat correction from the density inverse.

    M_rs = (1/(2 beta_1)) [g^rs + theta^r theta^s g^11 / beta_1^2
                           - (theta^s g^1r + theta^r g^1s) / beta_1],
    equivalently M = W^T g_inv W / (2 beta_1) with w_r = e_r - (theta^r/beta_1) e_1,
    which makes positive semidefiniteness manifest.
    """
    labels = tuple(dens.labels)
    theta0 = dens.theta0
    beta1 = _cold_beta(theta0, labels)
    K = len(labels)
    heat = list(range(1, K))
    W = np.zeros((K, len(heat)))
    for col, r in enumerate(heat):
        W[r, col] = 1.0
        W[0, col] = -theta0[r] / beta1
    M = W.T @ dens.g_inv @ W / (2.0 * beta1)
    M = 0.5 * (M + M.T)

    c_aa = 0.0
    c_ab = np.zeros(2)
    c_bb = np.zeros((2, 2))
    pos = {q.label: i for i, q in enumerate(labels[1:])}
    if "A2" in pos:
        c_aa = float(M[pos["A2"], pos["A2"]])
    for i, bi in enumerate(("B1", "B2")):
        if bi in pos:
            if "A2" in pos:
                c_ab[i] = 2.0 * float(M[pos["A2"], pos[bi]])
            c_bb[i, i] = float(M[pos[bi], pos[bi]])
            for j, bj in enumerate(("B1", "B2")):
                if j != i and bj in pos:
                    c_bb[i, j] = float(M[pos[bi], pos[bj]])
    return SecondOrderCoefficients(M, labels, theta0, c_aa, c_ab, c_bb)


def generalized_carnot_bound(heats, theta0, labels) -> float:
    """First-order bound: sum over A heat slots minus (1/beta_1) theta-weighted heats.

    For the canonical layout this is (1 - beta_2/beta_1) dQ_A2
    - sum_i (gamma_i / beta_1) dQ_Bi.
    """
    labels = tuple(labels)
    theta0 = np.asarray(theta0, dtype=np.float64)
    beta1 = _cold_beta(theta0, labels)
    q = np.asarray(heats, dtype=np.float64)
    if q.shape != (len(labels) - 1,):
        raise DimensionMismatch(f"expected {len(labels) - 1} heat entries, got {q.shape}")
    total = 0.0
    for val, slot, th in zip(q, labels[1:], theta0[1:]):
        if slot.family == "A":
            total += val
        total -= th * val / beta1
    return float(total)


def fine_grained_bound(heats, theta0, labels, lam: float,
                       coeffs: SecondOrderCoefficients) -> float:
    """Second-order bound: Carnot minus the quadratic heat correction at scale lam."""
    if not (lam > 0):
        raise DimensionMismatch(f"scale must be positive, got {lam}")
    q = np.asarray(heats, dtype=np.float64)
    base = generalized_carnot_bound(q, theta0, labels)
    return float(base - q @ coeffs.M @ q / lam)
