import numpy as np
import pytest
from scipy.special import expit

from wsinfer.core import Bag, Exact, make_setting
from wsinfer.errors import DimensionMismatch, EmptyTestSet, IoFailure, SettingMismatch
from wsinfer.losses import entropy_terms
from wsinfer.oracle import all_configurations
from wsinfer.synth import GenSpec, gen_dataset, instances
from wsinfer.trainer import (
    ToyModel,
    TrainConfig,
    _Stack,
    dataset_gradient,
    e_step,
    evaluate,
    init_model,
    load_model,
    posterior_covariance,
    predict,
    risk_gradient,
    risk_objective,
    save_model,
    train_em,
    train_supervised,
)

MI = make_setting("MultiIns")


def small_data(name="MultiIns", n_bags=30, seed=0, **kw):
    s = make_setting(name)
    return s, gen_dataset(s, GenSpec(n_bags=n_bags, seed=seed, instances_mean=5, **kw))


class TestPredict:
    def test_zero_weights(self):
        m = ToyModel(np.zeros((2, 3)))
        np.testing.assert_array_equal(predict(m, np.ones((4, 2))), 0.5)

    def test_margin(self):
        m = ToyModel(np.array([[1.0, 0.0, 0.0]]))
        f = predict(m, np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0], [20.0, 0.0]]))[:, 0]
        assert np.all(np.diff(f) > 0) and f[-1] > 1 - 1e-8

    def test_hand_value(self):
        m = ToyModel(np.array([[0.5, -1.0, 0.25]]))
        np.testing.assert_allclose(predict(m, [[2.0, 1.0]]), [[expit(0.5 * 2 - 1.0 + 0.25)]], atol=1e-15)

    def test_softmax(self):
        m = ToyModel(np.array([[1.0, 0.0], [0.0, 0.0]]), exclusive=True)
        f = predict(m, [[np.log(3.0)]])
        np.testing.assert_allclose(f, [[0.75, 0.25]], atol=1e-15)

    def test_dimension(self):
        with pytest.raises(DimensionMismatch):
            predict(ToyModel(np.zeros((1, 3))), np.zeros((2, 3)))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"learning_rate": 0.0}, {"epochs": 0}, {"lam": -1.0}, {"mode": "fast"}])
    def test_invalid(self, kw):
        with pytest.raises(SettingMismatch):
            TrainConfig(**kw)


class TestGradients:
    def test_frozen_posterior_fd(self):
        s, data = small_data(n_classes=2)
        stack = _Stack(data.bags)
        cfg = TrainConfig()
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(20):
            m = ToyModel(rng.normal(size=(2, 3)))
            _, P = e_step(s, stack, m, "lowrank")
            g = risk_gradient(stack, P, m, cfg, False)
            num = np.zeros_like(m.weights)
            h = 1e-6
            for idx in np.ndindex(m.weights.shape):
                d = np.zeros_like(m.weights)
                d[idx] = h
                up = risk_objective(stack, P, ToyModel(m.weights + d), cfg, False)
                dn = risk_objective(stack, P, ToyModel(m.weights - d), cfg, False)
                num[idx] = (up - dn) / (2 * h)
            worst = max(worst, np.max(np.abs(g - num)) / max(np.max(np.abs(num)), 1e-12))
        assert worst <= 1e-5

    @pytest.mark.parametrize("name", ["MultiIns", "LProp", "PartialL"])
    def test_smoothing_through_posterior_fd(self, name):
        kw = {"n_classes": 3, "feature_dim": 3} if name == "PartialL" else {}
        s, data = small_data(name, n_bags=15, seed=1, **kw)
        stack = _Stack(data.bags)
        C = 3 if name == "PartialL" else 1
        rng = np.random.default_rng(1)
        m = ToyModel(0.5 * rng.normal(size=(C, data.bags[0].features.shape[1] + 1)), s.exclusive)
        cfg = TrainConfig(lam=1.0)
        _, grad, P0 = dataset_gradient(s, stack, m, cfg)

        def objective(W):
            mm = ToyModel(W, s.exclusive)
            _, P = e_step(s, stack, mm, "lowrank")
            smo = float(stack.weight @ entropy_terms(P, s.exclusive))
            return risk_objective(stack, P0, mm, cfg, s.exclusive) + smo

        num = np.zeros_like(m.weights)
        h = 1e-6
        for idx in np.ndindex(m.weights.shape):
            d = np.zeros_like(m.weights)
            d[idx] = h
            num[idx] = (objective(m.weights + d) - objective(m.weights - d)) / (2 * h)
        np.testing.assert_allclose(grad, num, rtol=1e-5, atol=1e-8)

    def test_covariance_matches_enumeration(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(size=5)
        b = Bag("c", p[:, None], (Exact(1),))
        from wsinfer.chain import infer

        post = infer(MI, b).table[:, 0]
        cov = posterior_covariance(MI, b, post, 0, True)
        Y = all_configurations(5)
        w = np.prod(np.where(Y == 1, p, 1 - p), axis=1) * (Y.sum(axis=1) > 0)
        w /= w.sum()
        mean = w @ Y
        ref = (Y * w[:, None]).T @ Y - np.outer(mean, mean)
        np.testing.assert_allclose(cov, ref, atol=1e-12)


class TestDegenerateSupervision:
    @pytest.mark.parametrize("exclusive", [False, True])
    def test_trajectory(self, exclusive):
        rng = np.random.default_rng(3)
        n = 60
        X = rng.normal(size=(n, 2))
        if exclusive:
            s = make_setting("SemiSup")
            Y = (X[:, 0] > 0).astype(int)
            bags = [Bag(f"b{i}", None, (Exact(int(Y[i])),), X[i : i + 1]) for i in range(n)]
            cfg = TrainConfig(epochs=15, base_loss="CE", seed=4)
        else:
            s = MI
            Y = (X[:, :1] + 0.3 * rng.normal(size=(n, 1)) > 0).astype(int)
            bags = [Bag(f"b{i}", None, (Exact(int(Y[i, 0])),), X[i : i + 1]) for i in range(n)]
            cfg = TrainConfig(epochs=15, seed=4)
        em = train_em(bags, s, cfg, n_classes=2 if exclusive else 1)
        sup = train_supervised(X, Y, cfg, exclusive=exclusive)
        assert len(em.history) == len(sup.history) == 15
        for a, b in zip(em.history, sup.history):
            np.testing.assert_allclose(a, b, atol=1e-9)


class TestTraining:
    def test_risk_decreases(self):
        s, data = small_data(n_bags=80, seed=2)
        tr = train_em(data.bags, s, TrainConfig(epochs=30, learning_rate=1.0)).trace
        assert tr[-1].ure < tr[0].ure

    def test_smoothing_weight_effect_on_entropy(self):
        # minimizing the negative entropy raises it under stable steps; a very large
        # weight overshoots at this step size and collapses the posteriors instead
        s, data = small_data(n_bags=100, seed=0)
        ent = {}
        for lam in (0.0, 1.0, 100.0):
            ent[lam] = train_em(data.bags, s, TrainConfig(epochs=5, lam=lam)).trace[-1].entropy
        assert ent[1.0] > ent[0.0]
        assert ent[100.0] < ent[0.0]

    def test_partial_label_learns(self):
        s = make_setting("PartialL")
        train = gen_dataset(s, GenSpec(n_bags=300, seed=1, n_classes=3, feature_dim=3))
        test = gen_dataset(s, GenSpec(n_bags=300, seed=2, n_classes=3, feature_dim=3))
        res = train_em(train.bags, s, TrainConfig(epochs=60, learning_rate=1.0, base_loss="CE"))
        assert evaluate(res.model, *instances(test)).accuracy > 0.7

    def test_m_steps(self):
        s, data = small_data(n_bags=20)
        res = train_em(data.bags, s, TrainConfig(epochs=3, m_steps=2))
        assert len(res.history) == 6 and len(res.trace) == 3

    def test_needs_features(self):
        with pytest.raises(DimensionMismatch):
            train_em([Bag("a", [[0.5]], (Exact(1),))], MI, TrainConfig())

    def test_empty(self):
        with pytest.raises(EmptyTestSet):
            train_em([], MI, TrainConfig())

    def test_dense_equals_lowrank(self):
        s, data = small_data(n_bags=20)
        a = train_em(data.bags, s, TrainConfig(epochs=4, mode="dense", lam=0.5)).model.weights
        b = train_em(data.bags, s, TrainConfig(epochs=4, mode="lowrank", lam=0.5)).model.weights
        np.testing.assert_allclose(a, b, atol=1e-10)


class TestEvaluate:
    def test_perfect(self):
        m = ToyModel(np.array([[10.0, 0.0]]))
        X = np.array([[1.0], [-1.0], [2.0]])
        assert evaluate(m, X, np.array([[1], [0], [1]])).accuracy == 1.0

    def test_constant_balanced(self):
        m = ToyModel(np.array([[0.0, 1.0]]))
        X = np.zeros((10, 1))
        Y = np.array([[0], [1]] * 5)
        r = evaluate(m, X, Y)
        assert r.accuracy == 0.5
        assert r.per_class[0]["tpr"] == 1.0 and r.per_class[0]["tnr"] == 0.0

    def test_exclusive(self):
        m = ToyModel(np.array([[1.0, 0.0], [-1.0, 0.0]]), exclusive=True)
        r = evaluate(m, np.array([[1.0], [-1.0]]), np.array([0, 0]))
        assert r.accuracy == 0.5

    def test_empty(self):
        with pytest.raises(EmptyTestSet):
            evaluate(ToyModel(np.zeros((1, 2))), np.zeros((0, 1)), np.zeros((0, 1)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = init_model(2, 3, TrainConfig(seed=5, init_scale=1.0), exclusive=True, setting="PartialL")
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        np.testing.assert_array_equal(back.weights, m.weights)
        assert back.exclusive and back.setting == "PartialL" and back.seed == 5

    def test_io_failure(self, tmp_path):
        with pytest.raises(IoFailure):
            load_model(tmp_path / "missing.json")
        with pytest.raises(IoFailure):
            save_model(ToyModel(np.zeros((1, 2))), tmp_path / "no" / "dir.json")
