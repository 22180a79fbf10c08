"""Concrete bath models and their analytic references.

Four families: i.i.d. two-level baths, periodic Ising chains (transfer
matrix), a single spin-half bath with a non-commuting second charge, and a
spinless Fermi gas in a box (grand canonical).  Each model knows how to
instantiate its observable set at a given scale and, where closed forms
exist, its asymptotic densities and reference coefficient values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import AsymptoticDensities, make_densities, second_order_coefficients
from .errors import DimensionMismatch, NoClosedForm, ScaleTooLarge
from .observables import (
    DiagonalSet,
    IIDDenseSet,
    ProductDiagonalSet,
    Quantity,
    SiteGroup,
)
from .thermal import fisher_matrix

ISING_ENUM_CAP = 12         # largest per-bath chain length enumerated explicitly
FERMI_CUTOFF_LOGTAIL = 28.0  # keep levels with beta (E - mu) <= this; occupation < 7e-13


@dataclass(frozen=True)
class IIDTwoLevelModel:
    """Two baths of independent two-level sites; bath 1 cold, bath 2 hot."""

    sites: int
    omega_c: float = 0.6
    omega_h: float = 1.0
    kind: str = "iid_two_level"

    @property
    def labels(self):
        return (Quantity("A", 1), Quantity("A", 2))


@dataclass(frozen=True)
class IsingChainModel:
    """Two periodic Ising chains (spins +-1, coupling J_b), one per bath."""

    spins: int
    J_c: float = 1.0
    J_h: float = 1.0
    kind: str = "ising_chain"

    @property
    def labels(self):
        return (Quantity("A", 1), Quantity("A", 2))


@dataclass(frozen=True)
class SpinHalfBathModel:
    """One bath of i.i.d. spin-half sites with H = omega sigma_z and a tilted
    second charge B = cos(mix) sigma_z + sin(mix) sigma_x (non-commuting for
    mix not a multiple of pi)."""

    sites: int
    omega: float = 1.0
    mix: float = 0.5
    kind: str = "spin_half_bath"

    @property
    def labels(self):
        return (Quantity("A", 1), Quantity("B", 1))


@dataclass(frozen=True)
class FermiGasWellModel:
    """Two spinless Fermi gases in hard boxes of length scale * l_b.

    Single-particle levels E_b(i) = E0_b i^2 / scale^2 with
    E0_b = hbar^2 pi^2 / (2 m l_b^2); slots are (H_c, H_h, N_c, N_h).
    """

    scale: float
    mass: float = 0.5
    l_c: float = 1.0
    l_h: float = 1.0
    hbar: float = 1.0
    kind: str = "fermi_gas_well"

    @property
    def labels(self):
        return (Quantity("A", 1), Quantity("A", 2), Quantity("B", 1), Quantity("B", 2))

    def level_energy_unit(self, l_b: float) -> float:
        return self.hbar ** 2 * math.pi ** 2 / (2.0 * self.mass * l_b ** 2)


MODEL_KINDS = ("iid_two_level", "ising_chain", "spin_half_bath", "fermi_gas_well")


def _ising_bath_values(n: int, J: float) -> np.ndarray:
    """Energies of all 2^n periodic-chain configurations."""
    if n > ISING_ENUM_CAP:
        raise ScaleTooLarge(f"chain of {n} spins exceeds enumeration cap {ISING_ENUM_CAP}")
    states = np.arange(2 ** n, dtype=np.int64)
    spins = np.where((states[:, None] >> np.arange(n)[None, :]) & 1 == 1, 1.0, -1.0)
    bonds = spins * np.roll(spins, -1, axis=1)
    return -J * bonds.sum(axis=1)


def instantiate(model, theta0=None):
    """Build the observable set of a model at its stated scale.

    fermi_gas_well needs theta0 to place the single-particle level cutoff
    (occupations below ~1e-12 are dropped).
    """
    if model.kind == "iid_two_level":
        n = model.sites
        cold = SiteGroup(np.array([[0.0, model.omega_c], [0.0, 0.0]]), n)
        hot = SiteGroup(np.array([[0.0, 0.0], [0.0, model.omega_h]]), n)
        return ProductDiagonalSet((cold, hot), model.labels, float(n))

    if model.kind == "ising_chain":
        n = model.spins
        e_c = _ising_bath_values(n, model.J_c)
        e_h = _ising_bath_values(n, model.J_h)
        vals = np.empty((2, e_c.size * e_h.size))
        vals[0] = np.repeat(e_c, e_h.size)
        vals[1] = np.tile(e_h, e_c.size)
        return DiagonalSet(vals, model.labels, float(n))

    if model.kind == "spin_half_bath":
        sz = np.diag([1.0, -1.0]).astype(complex)
        sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        ham = model.omega * sz
        charge = math.cos(model.mix) * sz + math.sin(model.mix) * sx
        return IIDDenseSet((ham, charge), model.sites, model.labels, float(model.sites))

    if model.kind == "fermi_gas_well":
        if theta0 is None:
            raise DimensionMismatch("fermi_gas_well needs theta0 to place the level cutoff")
        theta0 = np.asarray(theta0, dtype=np.float64)
        beta_c, beta_h, gam_c, gam_h = theta0
        groups = []
        lam = model.scale
        for bath, (beta, gam, l_b) in enumerate(
            [(beta_c, gam_c, model.l_c), (beta_h, gam_h, model.l_h)]
        ):
            if beta <= 0:
                raise DimensionMismatch("fermi bath needs beta > 0 for a level cutoff")
            mu = -gam / beta
            e0 = model.level_energy_unit(l_b)
            e_cut = mu + FERMI_CUTOFF_LOGTAIL / beta
            if e_cut <= 0:
                raise DimensionMismatch("level cutoff fell below the band bottom; check theta0")
            count = int(math.floor(math.sqrt(e_cut / e0) * lam))
            if count < 1:
                raise DimensionMismatch(f"bath {bath + 1}: no levels below cutoff at this scale")
            idx = np.arange(1, count + 1, dtype=np.float64)
            energies = e0 * idx ** 2 / lam ** 2
            for e in energies:
                vals = np.zeros((4, 2))
                vals[bath, 1] = e       # slot A1 or A2: bath Hamiltonian
                vals[2 + bath, 1] = 1.0  # slot B1 or B2: bath particle number
                groups.append(SiteGroup(vals, 1))
        return ProductDiagonalSet(tuple(groups), model.labels, lam)

    raise DimensionMismatch(f"unknown model kind {model.kind!r}")


def free_entropy_density(model, theta):
    """phi(theta)/scale in the large-scale limit, where a closed form exists."""
    theta = np.asarray(theta, dtype=np.float64)
    if model.kind == "iid_two_level":
        b_c, b_h = theta
        return (np.logaddexp(0.0, -b_c * model.omega_c)
                + np.logaddexp(0.0, -b_h * model.omega_h))
    if model.kind == "ising_chain":
        b_c, b_h = theta
        return (math.log(2.0 * math.cosh(b_c * model.J_c))
                + math.log(2.0 * math.cosh(b_h * model.J_h)))
    if model.kind == "spin_half_bath":
        beta, gam = theta
        r = _spin_half_r(beta, gam, model.omega, model.mix)
        return math.log(2.0 * math.cosh(r))
    if model.kind == "fermi_gas_well":
        # integral of log(1 + e^{-beta e - gamma}) against the level density
        from scipy.integrate import quad

        total = 0.0
        for bath, l_b in enumerate([model.l_c, model.l_h]):
            beta, gam = theta[bath], theta[2 + bath]
            pf = l_b * math.sqrt(2.0 * model.mass) / (2.0 * math.pi * model.hbar)
            mu = -gam / beta if beta > 0 else 0.0
            top = max(mu, 0.0) + 2.0 * FERMI_CUTOFF_LOGTAIL / abs(beta)

            def integrand(e, beta=beta, gam=gam, pf=pf):
                return pf / math.sqrt(e) * np.logaddexp(0.0, -beta * e - gam)

            val, _ = quad(integrand, 0.0, top, limit=200)
            total += val
        return total
    raise NoClosedForm(f"no free-entropy density for model kind {model.kind!r}")


def _spin_half_r(beta, gam, omega, mix):
    s = (beta * omega) ** 2 + gam ** 2 + 2.0 * gam * beta * omega * math.cos(mix)
    return math.sqrt(max(s, 0.0))


def ising_finite_fisher_per_spin(n: int, J: float, beta: float) -> float:
    """Exact d^2/d beta^2 of log Z_n per spin from the two transfer eigenvalues.

    Valid for beta > 0; stable in the t = tanh(beta J) parametrization.
    """
    if beta <= 0:
        raise NoClosedForm("transfer-matrix derivatives implemented for beta > 0 only")
    c = math.cosh(beta * J)
    s = math.sinh(beta * J)
    t = s / c
    tn = t ** n
    # phi_n = n log(2c) + log(1 + t^n)
    # phi_n'' = n J^2 sech^2 + d^2/dbeta^2 log(1 + t^n)
    tp = J / c ** 2                      # dt/dbeta
    tpp = -2.0 * J ** 2 * t / c ** 2     # d2t/dbeta2
    u = n * t ** (n - 1) * tp            # d(t^n)/dbeta
    up = n * (n - 1) * t ** (n - 2) * tp ** 2 + n * t ** (n - 1) * tpp
    base = n * J ** 2 / c ** 2
    corr = up / (1.0 + tn) - (u / (1.0 + tn)) ** 2
    return (base + corr) / n


def analytic_densities(model, theta0) -> AsymptoticDensities:
    """Closed-form asymptotic Fisher densities g at theta0."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    if model.kind == "iid_two_level":
        b_c, b_h = theta0
        g = np.diag([
            model.omega_c ** 2 * _two_level_var(b_c * model.omega_c),
            model.omega_h ** 2 * _two_level_var(b_h * model.omega_h),
        ])
        return make_densities(g, theta0, model.labels, "analytic")
    if model.kind == "ising_chain":
        b_c, b_h = theta0
        g = np.diag([
            model.J_c ** 2 / math.cosh(b_c * model.J_c) ** 2,
            model.J_h ** 2 / math.cosh(b_h * model.J_h) ** 2,
        ])
        return make_densities(g, theta0, model.labels, "analytic")
    if model.kind == "spin_half_bath":
        # the per-site Kubo-Mori matrix is the exact density (J_n = n J_1)
        single = SpinHalfBathModel(1, model.omega, model.mix)
        g = fisher_matrix(instantiate(single), theta0)
        return make_densities(g, theta0, model.labels, "analytic")
    if model.kind == "fermi_gas_well":
        g = np.zeros((4, 4))
        for bath, l_b in enumerate([model.l_c, model.l_h]):
            beta, gam = theta0[bath], theta0[2 + bath]
            ref = sommerfeld_reference(model, bath + 1, beta, gam)
            g[bath, bath] = ref["sigma2_H"]
            g[2 + bath, 2 + bath] = ref["sigma2_N"]
            g[bath, 2 + bath] = g[2 + bath, bath] = ref["V_HN"]
        return make_densities(g, theta0, model.labels, "analytic")
    raise NoClosedForm(f"no analytic densities for model kind {model.kind!r}")


def _two_level_var(x: float) -> float:
    """f(1-f) for occupation f = e^-x / (1 + e^-x)."""
    f = 1.0 / (1.0 + math.exp(x))
    return f * (1.0 - f)


def sommerfeld_reference(model: FermiGasWellModel, bath: int, beta: float, gam: float) -> dict:
    """Sommerfeld closed forms for the per-scale (co)variances of one bath.

    Returns sigma2_H, sigma2_N, V_HN, the chemical potential, and a validity
    flag (beta * mu >= 20).
    """
    mu = -gam / beta
    if mu <= 0:
        raise NoClosedForm("Sommerfeld forms need a positive chemical potential")
    l_b = model.l_c if bath == 1 else model.l_h
    pf = l_b * math.sqrt(2.0 * model.mass) / (2.0 * math.pi * model.hbar)
    b2m2 = beta ** 2 * mu ** 2
    pi2 = math.pi ** 2
    return {
        "sigma2_H": pf * (8.0 * b2m2 + pi2) / (8.0 * beta ** 3 * math.sqrt(mu)),
        "sigma2_N": pf * (8.0 * b2m2 + pi2) / (8.0 * beta ** 3 * mu ** 2.5),
        "V_HN": pf * (24.0 * b2m2 - pi2) / (24.0 * beta ** 3 * mu ** 1.5),
        "mu": mu,
        "valid": beta * mu >= 20.0,
    }


def spin_half_coefficient(beta: float, gam: float, omega: float, mix: float) -> float:
    """Closed-form quadratic coefficient for the single spin-half bath charge."""
    r = _spin_half_r(beta, gam, omega, mix)
    if r == 0.0 or math.sin(mix) == 0.0:
        raise NoClosedForm("coefficient diverges at exact resonance or zero mixing")
    return r ** 3 / (2.0 * beta ** 3 * omega ** 2 * math.sin(mix) ** 2 * math.tanh(r))


def ising_coefficient(beta_c: float, beta_h: float, J_c: float, J_h: float) -> float:
    """Closed-form C_AA for two Ising baths (cold slot first)."""
    return (beta_h ** 2 * math.cosh(beta_c * J_c) ** 2 / (2.0 * beta_c ** 3 * J_c ** 2)
            + math.cosh(beta_h * J_h) ** 2 / (2.0 * beta_c * J_h ** 2))


def iid_two_level_coefficient(beta_c: float, beta_h: float, omega_c: float, omega_h: float) -> float:
    """Closed-form C_AA for two i.i.d. two-level baths."""
    var_c = omega_c ** 2 * _two_level_var(beta_c * omega_c)
    var_h = omega_h ** 2 * _two_level_var(beta_h * omega_h)
    return beta_h ** 2 / (2.0 * var_c * beta_c ** 3) + 1.0 / (2.0 * var_h * beta_c)


def ising_optimal_coupling_residual(x: float) -> float:
    """Stationarity residual 2x sinh(2x) - cosh(2x) - 1 at x = beta J.

    Its positive root marks the coupling that minimizes the Ising coefficient
    contribution of one bath.
    """
    return 2.0 * x * math.sinh(2.0 * x) - math.cosh(2.0 * x) - 1.0


def analytic_reference(model, theta0) -> dict:
    """Closed-form reference values for a model at theta0.

    Keys depend on the model kind; every entry is independently computable
    from the stated formulas (no shared code with the coefficient engine
    beyond the density inverse).
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    if model.kind == "iid_two_level":
        b_c, b_h = theta0
        return {"C_AA": iid_two_level_coefficient(b_c, b_h, model.omega_c, model.omega_h)}
    if model.kind == "ising_chain":
        b_c, b_h = theta0
        return {
            "C_AA": ising_coefficient(b_c, b_h, model.J_c, model.J_h),
            "sigma2_c": model.J_c ** 2 / math.cosh(b_c * model.J_c) ** 2,
            "sigma2_h": model.J_h ** 2 / math.cosh(b_h * model.J_h) ** 2,
            "optimal_coupling_residual_c": ising_optimal_coupling_residual(b_c * model.J_c),
            "optimal_coupling_residual_h": ising_optimal_coupling_residual(b_h * model.J_h),
        }
    if model.kind == "spin_half_bath":
        beta, gam = theta0
        return {
            "C_BB": spin_half_coefficient(beta, gam, model.omega, model.mix),
            "resonance_limit": 1.0 / (2.0 * beta),
        }
    if model.kind == "fermi_gas_well":
        out = {}
        for bath in (1, 2):
            beta, gam = theta0[bath - 1], theta0[1 + bath]
            ref = sommerfeld_reference(model, bath, beta, gam)
            for key, val in ref.items():
                out[f"{key}_{'c' if bath == 1 else 'h'}"] = val
        dens = analytic_densities(model, theta0)
        coeffs = second_order_coefficients(dens)
        out["C_AA"] = coeffs.C_AA
        out["C_AB"] = coeffs.C_AB
        out["C_BB"] = coeffs.C_BB
        return out
    raise NoClosedForm(f"no analytic reference for model kind {model.kind!r}")
