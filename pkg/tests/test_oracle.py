import numpy as np
import pytest

from wsinfer.chain import LatentPosterior, infer
from wsinfer.core import Bag, Exact, SoftPair, make_setting
from wsinfer.errors import CapExceeded, InfeasibleWeakLabel, ShapeMismatch
from wsinfer.oracle import all_configurations, brute_posterior, combine, compare, enumerate_sigma

MI = make_setting("MultiIns")
LP = make_setting("LProp")


class TestEnumerate:
    def test_multiins_positive(self):
        assert len(list(enumerate_sigma(MI, Exact(1), 3))) == 7

    def test_lprop_one(self):
        ys = [y for y, _ in enumerate_sigma(LP, Exact(1), 3)]
        assert len(ys) == 3 and all(y.sum() == 1 for y in ys)

    def test_multiins_negative(self):
        ys = list(enumerate_sigma(MI, Exact(0), 4))
        assert len(ys) == 1
        np.testing.assert_array_equal(ys[0][0], 0)

    def test_soft_yields_all(self):
        s = make_setting("SimConf")
        items = list(enumerate_sigma(s, SoftPair(0.3), 2))
        assert len(items) == 4
        np.testing.assert_allclose(sorted(g for _, g in items), [0.3, 0.3, 0.7, 0.7])

    def test_cap(self):
        with pytest.raises(CapExceeded):
            list(enumerate_sigma(MI, Exact(1), 17))

    def test_configurations(self):
        Y = all_configurations(3)
        assert Y.shape == (8, 3)
        assert len({tuple(r) for r in Y}) == 8


class TestBrutePosterior:
    def test_multiins(self):
        b = Bag("a", np.full((3, 1), 0.5), (Exact(1),))
        out = brute_posterior(MI, b)
        np.testing.assert_allclose(out.table[:, 0], 4 / 7, atol=1e-15)
        np.testing.assert_allclose(out.loglik, [np.log(0.875)], atol=1e-15)

    def test_lprop(self):
        b = Bag("a", [[0.2], [0.5], [0.9]], (Exact(1),))
        np.testing.assert_allclose(brute_posterior(LP, b).table[:, 0], np.array([0.01, 0.04, 0.36]) / 0.41, atol=1e-14)

    def test_pairsim(self):
        s = make_setting("PairSim")
        b = Bag("a", [[0.6], [0.7]], (Exact(1),))
        np.testing.assert_allclose(brute_posterior(s, b).table[0, 0], 0.42 / 0.54, atol=1e-15)

    def test_infeasible(self):
        with pytest.raises(InfeasibleWeakLabel):
            brute_posterior(MI, Bag("a", [[0.0], [0.0]], (Exact(1),)))

    def test_cap(self):
        with pytest.raises(CapExceeded):
            brute_posterior(MI, Bag("a", np.full((17, 1), 0.5), (Exact(1),)))

    def test_hard_likelihoods_sum_to_one(self):
        rng = np.random.default_rng(0)
        for K in range(1, 7):
            p = rng.uniform(size=(K, 1))
            tot = 0.0
            for w in range(K + 1):
                try:
                    tot += np.exp(brute_posterior(LP, Bag("a", p, (Exact(w),))).loglik[0])
                except InfeasibleWeakLabel:
                    pass
            np.testing.assert_allclose(tot, 1.0, atol=1e-12)

    def test_entries_in_unit_interval(self):
        rng = np.random.default_rng(1)
        out = brute_posterior(LP, Bag("a", rng.uniform(size=(8, 2)), (Exact(3), Exact(5))))
        assert np.all((out.table >= 0) & (out.table <= 1))

    def test_long_bag_log_space(self):
        b = Bag("a", np.full((16, 1), 1e-3), (Exact(16),))
        out = brute_posterior(LP, b)
        np.testing.assert_allclose(out.table, 1.0)
        np.testing.assert_allclose(out.loglik, [16 * np.log(1e-3)], rtol=1e-12)


class TestCompare:
    def test_identical(self):
        b = Bag("a", [[0.3], [0.8]], (Exact(1),))
        r = compare(infer(MI, b), infer(MI, b))
        assert r.max_abs == 0.0 and r.loglik_diff == 0.0

    def test_perturbed(self):
        b = Bag("a", [[0.3], [0.8]], (Exact(1),))
        ref = infer(MI, b)
        bumped = LatentPosterior(ref.table + 1e-3, ref.loglik)
        np.testing.assert_allclose(compare(bumped, ref).max_abs, 1e-3, rtol=1e-9)

    def test_shape(self):
        a = LatentPosterior(np.zeros((2, 1)), np.zeros(1))
        b = LatentPosterior(np.zeros((3, 1)), np.zeros(1))
        with pytest.raises(ShapeMismatch):
            compare(a, b)

    def test_combine(self):
        a = LatentPosterior(np.zeros((2, 1)), np.zeros(1))
        b = LatentPosterior(np.full((2, 1), 0.1), np.zeros(1))
        r = combine([compare(a, a), compare(a, b)])
        np.testing.assert_allclose([r.max_abs, r.mean_abs], [0.1, 0.05])
        assert combine([]).max_abs == 0.0
