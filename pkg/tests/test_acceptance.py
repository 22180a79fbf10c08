"""Desk-scale acceptance checks: worked examples, invariants, and the
scaling ladder.

One test per check; the shared ladder (a single eleven-point sweep of the
two-level engine with the solver at 1e-13) feeds the three scaling tests
and the exactness sweep.
"""

import itertools
import math
import time

import numpy as np
import pytest

from fbe import bounds, models, observables as ob, protocol, thermal

import oracles

A1 = ob.Quantity("A", 1)
A2 = ob.Quantity("A", 2)
B1 = ob.Quantity("B", 1)

THETA_CH = np.array([1.0, 0.5])


def two_level_var(beta, omega):
    p = 1.0 / (1.0 + math.exp(beta * omega))
    return omega * omega * p * (1.0 - p)


def chain_closed_form(b_c, b_h, J_c, J_h):
    return (b_h ** 2 * math.cosh(b_c * J_c) ** 2 / (2 * b_c ** 3 * J_c ** 2)
            + math.cosh(b_h * J_h) ** 2 / (2 * b_c * J_h ** 2))


# ---------------------------------------------------------------------------
# shared scaling ladder: lambda = 2^10 .. 2^20, Q = 0.35 lambda^0.7


LADDER_OMEGA = 0.8090169943749475


@pytest.fixture(scope="module")
def scale_ladder():
    theta0 = np.array([1.0, 0.5])
    runs = []
    start = time.time()
    for e in range(10, 21):
        lam = 2 ** e
        obs = models.instantiate(
            models.IIDTwoLevelModel(sites=lam, omega_c=LADDER_OMEGA))
        dq = 0.35 * lam ** 0.7
        rep = protocol.achievability_report(
            obs, theta0, bounds.HeatVector(dQ_A2=dq), solver_tol=1e-13)
        runs.append((e, dq, rep))
    elapsed = time.time() - start

    obs_top = models.instantiate(
        models.IIDTwoLevelModel(sites=2 ** 20, omega_c=LADDER_OMEGA))
    co = bounds.second_order_coefficients(
        bounds.estimate_densities(obs_top, theta0))
    q = np.zeros(len(obs_top.labels) - 1)
    q[0] = 0.35 * (2 ** 20) ** 0.7
    qn = bounds.HeatVector(dQ_A2=q[0]).norm
    quad = float(q @ co.M @ q) / qn ** 2
    return {"runs": runs, "elapsed": elapsed, "quad": quad}


def heat_metric(dq, rep):
    lam = rep.lam
    return abs(rep.achieved_heats[1] - dq) / (rep.q_norm ** 2 / lam)


def deficit_metric(rep):
    return (rep.gcb_target - rep.work) * rep.lam / rep.q_norm ** 2


# ---------------------------------------------------------------------------
# coefficient worked examples


class TestChainCoefficient:
    def test_transfer_matrix_matches_closed_form(self):
        b_c, b_h, J_c, J_h = 1.0, 0.5, 1.0, 1.0
        closed = chain_closed_form(b_c, b_h, J_c, J_h)
        dens = models.analytic_densities(
            models.IsingChainModel(spins=12, J_c=J_c, J_h=J_h),
            np.array([b_c, b_h]))
        co = bounds.second_order_coefficients(dens)
        assert abs(co.C_AA - closed) / closed <= 1e-10
        assert closed == pytest.approx(0.9334073893965378, rel=1e-12)

    def test_twelve_spin_numeric_within_three_percent(self):
        # finite-chain densities against the thermodynamic closed form
        obs = models.instantiate(models.IsingChainModel(spins=12))
        dens = bounds.estimate_densities(obs, THETA_CH)
        co = bounds.second_order_coefficients(dens)
        closed = chain_closed_form(1.0, 0.5, 1.0, 1.0)
        assert abs(co.C_AA - closed) / closed <= 0.03


class TestTwoLevelReduction:
    def test_blockwise_densities_reproduce_reduction_formula(self):
        b_c, b_h, w_c, w_h = 1.0, 0.5, 0.6, 1.0
        s2_L = two_level_var(b_c, w_c)
        s2_H = two_level_var(b_h, w_h)
        closed = b_h ** 2 / (2 * s2_L * b_c ** 3) + 1.0 / (2 * s2_H * b_c)
        g = np.diag([s2_L, s2_H])
        dens = bounds.make_densities(g, np.array([b_c, b_h]), (A1, A2),
                                     "analytic")
        co = bounds.second_order_coefficients(dens)
        assert abs(co.C_AA - closed) / closed <= 1e-10
        assert closed == pytest.approx(3.6453101445412885, rel=1e-12)


class TestTiltedBathCoefficient:
    def test_resonant_limit_is_one_half(self):
        # omega = 1 with theta0 = (1, -1) puts the bath on resonance; the
        # charge coefficient closes on 1/2 as the tilt angle vanishes
        dens = models.analytic_densities(
            models.SpinHalfBathModel(sites=2, omega=1.0, mix=1e-2),
            np.array([1.0, -1.0]))
        co = bounds.second_order_coefficients(dens)
        assert abs(co.C_BB[0, 0] - 0.5) <= 1e-3

    def test_off_resonance_coefficient_diverges(self):
        dens = models.analytic_densities(
            models.SpinHalfBathModel(sites=2, omega=math.sqrt(2.0), mix=1e-2),
            np.array([1.0, -1.0]))
        co = bounds.second_order_coefficients(dens)
        assert co.C_BB[0, 0] > 1e3


class TestFermiLevelSums:
    def test_exact_sums_match_degenerate_gas_expansion(self):
        model = models.FermiGasWellModel(scale=200.0)
        theta0 = np.array([5.0, 5.0, -50.0, -50.0])
        obs = models.instantiate(model, theta0)
        dens = bounds.estimate_densities(obs, theta0)
        ref = models.sommerfeld_reference(model, 1, 5.0, -50.0)
        assert ref["valid"]
        # slots (A1, A2, B1, B2): bath-1 energy is 0, bath-1 number is 2
        assert dens.g[0, 0] == pytest.approx(ref["sigma2_H"], rel=0.01)
        assert dens.g[2, 2] == pytest.approx(ref["sigma2_N"], rel=0.01)
        assert dens.g[0, 2] == pytest.approx(ref["V_HN"], rel=0.01)


# ---------------------------------------------------------------------------
# structural identities


class TestRelativeEntropySplit:
    def test_projection_splits_divergence(self):
        rng = np.random.default_rng(1234)
        for k in range(200):
            d = int(rng.integers(4, 17))
            if k % 2:
                mats = [oracles_herm(rng, d), oracles_herm(rng, d)]
            else:
                mats = [np.diag(rng.normal(size=d)), np.diag(rng.normal(size=d))]
            obs = ob.DenseSet(mats, (A1, B1))
            A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            rho = A @ A.conj().T + 0.05 * np.eye(d)
            rho /= np.trace(rho).real
            theta_ref = rng.normal(scale=0.5, size=2)
            split = protocol.pythagorean_check(obs, rho, theta_ref)
            assert split.defect <= 1e-9 * (1.0 + split.D_total)


def oracles_herm(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (A + A.conj().T) / 2


class TestFisherIsHessian:
    CASES = (
        (models.IIDTwoLevelModel(sites=20), np.array([1.0, 0.5])),
        (models.IsingChainModel(spins=8), np.array([1.0, 0.5])),
        (models.SpinHalfBathModel(sites=6, mix=0.4), np.array([1.0, -0.8])),
        (models.FermiGasWellModel(scale=30.0),
         np.array([5.0, 5.0, -50.0, -50.0])),
    )

    @pytest.mark.parametrize("model,center",
                             CASES, ids=[m.kind for m, _ in CASES])
    def test_grid_agreement(self, model, center):
        obs = models.instantiate(model, center)
        grids = [np.linspace(c - 0.2, c + 0.2, 5) for c in center]
        phi = lambda th: thermal.free_entropy(obs, np.asarray(th))
        worst = 0.0
        for point in itertools.product(*grids):
            theta = np.array(point)
            J = thermal.fisher_matrix(obs, theta)
            H = oracles.fd_hessian(phi, theta, h=1e-4, richardson=False)
            worst = max(worst, np.max(np.abs(H - J)) / np.max(np.abs(J)))
        assert worst <= 1e-4


# ---------------------------------------------------------------------------
# protocol exactness and scaling


class TestProtocolExactness:
    def test_entropy_and_balance_dense_engine(self):
        obs = models.instantiate(models.SpinHalfBathModel(sites=6, mix=0.4))
        theta0 = np.array([1.0, -0.8])
        hv = bounds.HeatVector(dQ_B1=0.05)
        rep = protocol.achievability_report(obs, theta0, hv, engine="dense")
        fin = protocol.solve_final_temperature(obs, theta0, hv)
        _, rho = protocol.build_optimal_protocol(
            obs, theta0, fin.theta, engine="dense", return_state=True)
        w = np.linalg.eigvalsh(rho)
        w = w[w > 0]
        s_opt = float(-(w * np.log(w)).sum())
        s0 = thermal.thermal_entropy(obs, theta0)
        assert abs(s_opt - s0) / abs(s0) <= 1e-12
        assert abs(rep.second_law_gap) <= 1e-9 * abs(rep.D_to_initial)

    def test_entropy_and_balance_class_engine(self):
        obs = models.instantiate(models.IIDTwoLevelModel(sites=12))
        theta0 = np.array([1.0, 0.5])
        hv = bounds.HeatVector(dQ_A2=0.4)
        rep = protocol.achievability_report(obs, theta0, hv, engine="exact")
        fin = protocol.solve_final_temperature(obs, theta0, hv)
        res = protocol.build_optimal_protocol(obs, theta0, fin.theta,
                                              engine="exact")
        s0 = thermal.thermal_entropy(obs, theta0)
        assert abs(res.entropy_matched - s0) / abs(s0) <= 1e-12
        assert abs(rep.second_law_gap) <= 1e-9 * abs(rep.D_to_initial)

    def test_balance_holds_along_ladder(self, scale_ladder):
        for _, _, rep in scale_ladder["runs"]:
            assert abs(rep.entropy_final - rep.entropy_initial) \
                <= 1e-12 * abs(rep.entropy_initial)
            assert abs(rep.second_law_gap) <= 1e-9 * abs(rep.D_to_initial)


class TestHeatMatching:
    def test_mismatch_shrinks_with_scale(self, scale_ladder):
        runs = scale_ladder["runs"]
        first = heat_metric(runs[0][1], runs[0][2])
        last = heat_metric(runs[-1][1], runs[-1][2])
        assert last <= first / 2.0
        assert scale_ladder["elapsed"] < 300.0


class TestRelativeEntropyScaling:
    def test_loglog_slope_near_minus_half(self, scale_ladder):
        runs = scale_ladder["runs"]
        x = np.array([e for e, _, _ in runs], dtype=np.float64)
        y = np.log2(np.array([rep.D_to_ideal for _, _, rep in runs]))
        A = np.stack([x, np.ones_like(x)], axis=1)
        coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
        assert -0.5 - 0.15 <= coef[0] <= -0.5 + 0.15


class TestDeficitPlateau:
    def test_plateau_matches_coefficient_form(self, scale_ladder):
        runs = scale_ladder["runs"]
        top = deficit_metric(runs[-1][2])
        quad = scale_ladder["quad"]
        assert abs(top - quad) / quad <= 0.10


# ---------------------------------------------------------------------------
# bound ordering and path equivalence


class TestBoundOrdering:
    CASES = (
        (models.IIDTwoLevelModel(sites=16), np.array([1.0, 0.5]), 200.0),
        (models.IsingChainModel(spins=8), np.array([1.0, 0.5]), 200.0),
        (models.SpinHalfBathModel(sites=8), np.array([1.0, -1.0]), 200.0),
        (models.FermiGasWellModel(scale=60.0),
         np.array([5.0, 5.0, -50.0, -50.0]), 60.0),
    )

    @pytest.mark.parametrize("model,theta0,lam",
                             CASES, ids=[m.kind for m, _, _ in CASES])
    def test_fine_grained_never_exceeds_carnot(self, model, theta0, lam):
        rng = np.random.default_rng(sum(model.kind.encode()))
        dens = models.analytic_densities(model, theta0)
        co = bounds.second_order_coefficients(dens)
        labels = model.labels
        k = len(labels) - 1
        for _ in range(1000):
            q = rng.normal(scale=5.0, size=k)
            gcb = bounds.generalized_carnot_bound(q, theta0, labels)
            fgcb = bounds.fine_grained_bound(q, theta0, labels, lam, co)
            assert fgcb <= gcb + 1e-12


VECTOR_FIELDS = ("theta_lam", "eta_initial", "eta_ideal", "eta_achieved",
                 "target_heats", "achieved_heats", "xi")
SCALAR_FIELDS = ("work", "gcb_target", "fgcb_target", "gcb_achieved",
                 "fgcb_achieved", "D_to_ideal", "D_to_initial",
                 "second_law_lhs", "q_norm", "entropy_initial",
                 "entropy_final", "mass_matched")


def bit_sums(n, omega):
    """Total energy of each of the 2^n configurations of n two-level sites."""
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    return bits.sum(axis=1) * omega


def ring_energies(n, J):
    """Energy of every configuration of a periodic n-spin +-1 chain."""
    spins = 1 - 2 * ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1)
    return -J * (spins * np.roll(spins, -1, axis=1)).sum(axis=1)


class TestPathEquivalence:
    def check_pair(self, product_obs, dense_obs, theta0, hv):
        co = bounds.second_order_coefficients(
            bounds.estimate_densities(product_obs, theta0))
        rep_c = protocol.achievability_report(product_obs, theta0, hv,
                                              engine="exact", coeffs=co)
        rep_d = protocol.achievability_report(dense_obs, theta0, hv,
                                              engine="dense", coeffs=co)
        for name in SCALAR_FIELDS:
            a, b = getattr(rep_c, name), getattr(rep_d, name)
            assert abs(a - b) <= 1e-12 * (1.0 + abs(a)), name
        for name in VECTOR_FIELDS:
            a, b = getattr(rep_c, name), getattr(rep_d, name)
            assert np.max(np.abs(a - b)) <= 1e-12 * (1.0 + np.max(np.abs(a))), name

    def test_two_level_pairs(self):
        for sites, w_c, w_h, dq in ((4, 0.6, 1.0, 0.25), (5, 0.6, 1.0, 0.3)):
            model = models.IIDTwoLevelModel(sites=sites, omega_c=w_c,
                                            omega_h=w_h)
            theta0 = np.array([1.0, 0.5])
            pobs = models.instantiate(model)
            dim = 2 ** sites
            Ic = np.eye(dim)
            cold = np.kron(np.diag(bit_sums(sites, w_c)), Ic)
            hot = np.kron(Ic, np.diag(bit_sums(sites, w_h)))
            dobs = ob.DenseSet([cold, hot], (A1, A2), scale=pobs.scale)
            self.check_pair(pobs, dobs, theta0, bounds.HeatVector(dQ_A2=dq))

    def test_chain_pair(self):
        model = models.IsingChainModel(spins=3)
        theta0 = np.array([1.0, 0.5])
        pobs = models.instantiate(model)
        vals = ring_energies(3, 1.0)
        I8 = np.eye(8)
        dobs = ob.DenseSet([np.kron(np.diag(vals), I8),
                            np.kron(I8, np.diag(vals))], (A1, A2),
                           scale=pobs.scale)
        self.check_pair(pobs, dobs, theta0, bounds.HeatVector(dQ_A2=0.05))
