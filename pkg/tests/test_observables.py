import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbe import observables as ob
from fbe.errors import DimensionMismatch, NonHermitian, ScaleTooLarge

import oracles


A1 = ob.Quantity("A", 1)
A2 = ob.Quantity("A", 2)
B1 = ob.Quantity("B", 1)
B2 = ob.Quantity("B", 2)


def rand_herm(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (A + A.conj().T) / 2


class TestQuantity:
    def test_label(self):
        assert A2.label == "A2"
        assert B1.label == "B1"

    def test_bad_family(self):
        with pytest.raises(DimensionMismatch):
            ob.Quantity("C", 1)

    def test_bad_bath(self):
        with pytest.raises(DimensionMismatch):
            ob.Quantity("A", 0)
        with pytest.raises(DimensionMismatch):
            ob.Quantity("A", "1")

    def test_ordering(self):
        # canonical order sorts A before B, bath ascending
        assert sorted([B2, A2, B1, A1]) == [A1, A2, B1, B2]


class TestSlotOrder:
    def test_duplicate_rejected(self):
        with pytest.raises(DimensionMismatch):
            ob.check_slot_order((A1, A1))

    def test_misordered_rejected(self):
        with pytest.raises(DimensionMismatch):
            ob.check_slot_order((A2, A1))
        with pytest.raises(DimensionMismatch):
            ob.check_slot_order((B1, A1))

    def test_empty_rejected(self):
        with pytest.raises(DimensionMismatch):
            ob.check_slot_order(())

    def test_canonical_accepted(self):
        assert ob.check_slot_order((A1, A2, B1, B2)) == (A1, A2, B1, B2)


class TestDenseSet:
    def test_non_hermitian_rejected(self):
        bad = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(NonHermitian):
            ob.validate(ob.DenseSet([bad], (A1,)))

    def test_shape_mismatch_rejected(self):
        m2 = np.eye(2)
        m3 = np.eye(3)
        with pytest.raises(DimensionMismatch):
            ob.validate(ob.DenseSet([m2, m3], (A1, B1)))

    def test_dims(self):
        rng = np.random.default_rng(0)
        s = ob.DenseSet([rand_herm(rng, 5), rand_herm(rng, 5)], (A1, B1))
        assert s.num_slots == 2
        assert s.dim == 5


class TestJointSpectrumProduct:
    def setup_method(self):
        # two site types: a 3-level ladder and a 2-level charge carrier
        self.g1 = ob.SiteGroup(np.array([[0.0, 0.5, 1.1], [0.0, 1.0, 2.0]]), 4)
        self.g2 = ob.SiteGroup(np.array([[0.0, 0.7], [1.0, -1.0]]), 3)
        self.obs = ob.ProductDiagonalSet([self.g1, self.g2], (A1, B1))

    def test_multiplicities_vs_enumeration(self):
        js = ob.joint_spectrum(self.obs)
        site_levels = [self.g1.values.T, self.g2.values.T]
        table = oracles.enumerate_product_levels(site_levels, [4, 3])
        assert js.mult is not None
        got = {
            tuple(np.round(js.values[:, m], 12)): int(js.mult[m])
            for m in range(js.num_classes)
        }
        assert got == table

    def test_log_dim(self):
        js = ob.joint_spectrum(self.obs)
        assert js.log_dim == pytest.approx(4 * math.log(3) + 3 * math.log(2), rel=1e-15)

    def test_mass_conservation(self):
        js = ob.joint_spectrum(self.obs)
        js.check()

    def test_lexicographic_order(self):
        js = ob.joint_spectrum(self.obs)
        cols = [tuple(js.values[:, m]) for m in range(js.num_classes)]
        assert cols == sorted(cols)

    def test_class_cap(self):
        big = ob.ProductDiagonalSet(
            [ob.SiteGroup(np.array([[0.0, 1.0, 2.718281828]]), 40)], (A1,))
        with pytest.raises(ScaleTooLarge):
            ob.joint_spectrum(big, class_cap=100)


class TestUniformMoments:
    def test_product_matches_enumeration(self):
        g = ob.SiteGroup(np.array([[0.0, 0.4, 1.3], [1.0, 0.0, -2.0]]), 5)
        obs = ob.ProductDiagonalSet([g], (A1, B2))
        mean, second = ob.uniform_moments(obs)
        # per-site uniform mean, times the site count
        per_site = g.values.mean(axis=1)
        assert np.allclose(mean, 5 * per_site, rtol=1e-14)
        # second moment of the sum over 5 iid sites
        c1 = (g.values @ g.values.T) / 3 - np.outer(per_site, per_site)
        want = 5 * c1 + np.outer(mean, mean)
        assert np.allclose(second, want, rtol=1e-13)

    def test_dense_matches_trace(self):
        rng = np.random.default_rng(3)
        mats = [rand_herm(rng, 7), rand_herm(rng, 7)]
        obs = ob.DenseSet(mats, (A1, B1))
        mean, second = ob.uniform_moments(obs)
        want = np.array([np.trace(m).real / 7 for m in mats])
        assert np.allclose(mean, want, rtol=1e-13, atol=1e-15)
        assert second[0, 1] == pytest.approx(
            np.trace(mats[0] @ mats[1]).real / 7, rel=1e-13)


class TestDenseEig:
    def test_matches_numpy(self):
        rng = np.random.default_rng(11)
        M = rand_herm(rng, 9)
        w, V = ob.dense_eig(M)
        assert np.allclose(np.sort(w), np.linalg.eigvalsh(M), atol=1e-12)
        assert np.max(np.abs((V * w) @ V.conj().T - M)) < 1e-12


class TestIIDDense:
    def test_dense_joint_expansion(self):
        rng = np.random.default_rng(5)
        site = [rand_herm(rng, 2), rand_herm(rng, 2)]
        obs = ob.IIDDenseSet(site, 3, (A1, B1))
        assert obs.site_dim == 2
        assert obs.log_dim == pytest.approx(3 * math.log(2))
        dense = ob.dense_joint(obs)
        assert dense.dim == 8
        # kron expansion of slot 0 must reproduce the explicit sum
        I = np.eye(2)
        want = (np.kron(np.kron(site[0], I), I)
                + np.kron(np.kron(I, site[0]), I)
                + np.kron(np.kron(I, I), site[0]))
        assert np.max(np.abs(dense.matrices[0] - want)) < 1e-13

    def test_commuting_site_pair_has_joint_spectrum(self):
        # diagonal site matrices commute, so the compressed route applies
        site = [np.diag([0.0, 1.0]), np.diag([0.5, -0.5])]
        obs = ob.IIDDenseSet(site, 4, (A1, B1))
        js = ob.joint_spectrum(obs)
        js.check()
        table = oracles.enumerate_product_levels(
            [np.array([[0.0, 0.5], [1.0, -0.5]])], [4])
        got = {
            tuple(np.round(js.values[:, m], 12)): int(js.mult[m])
            for m in range(js.num_classes)
        }
        assert got == table


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(1, 6), st.integers(0, 10_000))
def test_joint_spectrum_mass_always_conserved(levels, count, seed):
    """Sum of class multiplicities equals total dimension for any site table."""
    rng = np.random.default_rng(seed)
    vals = np.round(rng.normal(size=(2, levels)), 3)
    obs = ob.ProductDiagonalSet([ob.SiteGroup(vals, count)], (A1, A2))
    js = ob.joint_spectrum(obs)
    js.check()
    if js.mult is not None:
        assert int(js.mult.sum()) == levels**count
