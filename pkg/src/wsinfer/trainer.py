"""A linear backbone trained by alternating posterior inference and gradient steps.

E-step: run the engine on the current predictions to get latent posteriors.
M-step: gradient steps on the total loss.  The risk term treats the
posteriors as constants; the smoothing term differentiates through them.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, softmax

from .chain import _check_mode, batched_forward_backward, batched_infer, chain_problem, run_problem
from .errors import DimensionMismatch, EmptyTestSet, IoFailure, SettingMismatch
from .losses import EPS, entropy_grad, entropy_terms, instance_grad, instance_losses


@dataclass
class ToyModel:
    """Per-class linear scores ``x @ weights[:, :d].T + weights[:, d]``."""

    weights: np.ndarray
    exclusive: bool = False
    setting: str = ""
    seed: int = 0

    @property
    def d(self):
        return self.weights.shape[1] - 1

    @property
    def C(self):
        return self.weights.shape[0]


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.5
    lam: float = 0.0
    seed: int = 0
    mode: str = "lowrank"
    base_loss: str = "BCE"
    m_steps: int = 1
    init_scale: float = 0.01

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise SettingMismatch("learning_rate must be positive")
        if self.epochs < 1 or self.m_steps < 1:
            raise SettingMismatch("epochs and m_steps must be at least 1")
        if self.lam < 0:
            raise SettingMismatch("lambda must be nonnegative")
        _check_mode(self.mode)


@dataclass
class EpochStats:
    ure: float
    smoothing: float
    total: float
    entropy: float


@dataclass
class TrainResult:
    model: ToyModel
    trace: list = field(default_factory=list)
    history: list = field(default_factory=list)


def init_model(C, d, config, exclusive=False, setting=""):
    rng = np.random.default_rng(config.seed)
    W = config.init_scale * rng.normal(size=(C, d + 1))
    return ToyModel(W, exclusive, setting, config.seed)


def _design(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([X, np.ones((X.shape[0], 1))])


def scores(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.d:
        raise DimensionMismatch(f"features have dimension {X.shape[1]}, model expects {model.d}")
    return _design(X) @ model.weights.T


def predict(model, X):
    """Per-class probabilities: sigmoid (multi-label) or softmax (exclusive)."""
    s = scores(model, X)
    return softmax(s, axis=1) if model.exclusive else expit(s)


def _logit_grad(g_f, f, exclusive):
    """Chain dL/df through the output link to dL/dscore."""
    if exclusive:
        return f * (g_f - (g_f * f).sum(axis=1, keepdims=True))
    return g_f * f * (1.0 - f)


def posterior_covariance(setting, bag, post, cls, lowrank):
    """Cov(y_k, y_j | w) for one class chain, by clamping y_j = 1 and rerunning."""
    K = bag.K
    cov = -np.outer(post, post)
    prob = chain_problem(setting, bag, cls)
    for j in range(K):
        if post[j] <= 0.0:
            continue
        q = prob.q.copy()
        q[j] = 1.0
        clamped = type(prob)(q, prob.next_z, prob.init_z, prob.terminal, prob.emission)
        _, cond, _ = run_problem(clamped, lowrank, bag.id)
        cov[:, j] += post[j] * cond
    return cov


class _Stack:
    """All training instances stacked, with per-bag offsets and loss weights."""

    def __init__(self, bags):
        self.bags = bags
        self.sizes = np.array([b.K for b in bags])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.X = np.concatenate([b.features for b in bags])
        self.design = _design(self.X)
        # each bag's loss is a mean over its instances; bags are averaged
        self.weight = np.repeat(1.0 / (self.sizes * len(bags)), self.sizes)

    def split(self, M):
        return [M[self.offsets[i] : self.offsets[i + 1]] for i in range(len(self.bags))]


def e_step(setting, stack, model, mode):
    """Posteriors of every bag under the current predictions; returns (f, P)."""
    # keep saturated predictions off exact 0 / 1 so hard evidence stays feasible
    f = np.clip(predict(model, stack.X), EPS, 1.0 - EPS)
    bags = [b.with_probs(fb) for b, fb in zip(stack.bags, stack.split(f))]
    posts = batched_infer(setting, bags, mode=mode)
    return f, np.concatenate([p.table for p in posts])


def _smoothing_score_grad(setting, stack, f, P, s, mode):
    """d(smoothing)/dscore through the posterior, weighted per instance by ``s``.

    Multi-label chains use dP_k / dscore_j = Cov(y_k, y_j | w), obtained by
    clamping y_j = 1; the exclusive posterior is a softmax of score + log g.
    """
    if setting.exclusive:
        return P * (s - (s * P).sum(axis=1, keepdims=True))
    out = np.zeros_like(P)
    problems, owners = [], []
    for i, bag in enumerate(stack.bags):
        o = stack.offsets[i]
        fb = bag.with_probs(f[o : o + bag.K])
        for c in range(P.shape[1]):
            base = chain_problem(setting, fb, c)
            for j in range(bag.K):
                if P[o + j, c] > 0.0:
                    q = base.q.copy()
                    q[j] = 1.0
                    problems.append(type(base)(q, base.next_z, base.init_z, base.terminal, base.emission))
                    owners.append((i, c, j))
    if not problems:
        return out
    cond, _, status, _ = batched_forward_backward(problems, mode == "lowrank")
    for n, (i, c, j) in enumerate(owners):
        o, K = stack.offsets[i], stack.sizes[i]
        Pj = P[o + j, c]
        # sum_k s_k Cov(y_k, y_j) = P_j (s . cond_j - s . P)
        sb, Pb = s[o : o + K, c], P[o : o + K, c]
        out[o + j, c] = Pj * (sb @ cond[n, :K] - sb @ Pb)
    return out


def dataset_gradient(setting, stack, model, config):
    """Epoch statistics and the total-loss gradient, with one batched E-step."""
    f, P = e_step(setting, stack, model, config.mode)
    w = stack.weight
    fc = np.clip(f, EPS, 1.0 - EPS)
    exclusive = setting.exclusive
    ure = float(w @ instance_losses(P, fc, config.base_loss, exclusive))
    smo = float(w @ entropy_terms(P, exclusive))
    g_score = _logit_grad(instance_grad(P, f, config.base_loss, exclusive), f, exclusive)
    if config.lam > 0.0:
        s = entropy_grad(P, exclusive)
        g_score = g_score + config.lam * _smoothing_score_grad(setting, stack, f, P, s, config.mode)
    grad = (w[:, None] * g_score).T @ stack.design
    stats = EpochStats(ure, smo, ure + config.lam * smo, -smo)
    return stats, grad, P


def risk_objective(stack, P, model, config, exclusive):
    """The risk term with posteriors ``P`` frozen, as a function of the model."""
    f = np.clip(predict(model, stack.X), EPS, 1.0 - EPS)
    return float(stack.weight @ instance_losses(P, f, config.base_loss, exclusive))


def risk_gradient(stack, P, model, config, exclusive):
    """Analytic gradient of :func:`risk_objective` with respect to the weights."""
    f = predict(model, stack.X)
    g = _logit_grad(instance_grad(P, f, config.base_loss, exclusive), f, exclusive)
    return (stack.weight[:, None] * g).T @ stack.design


def train_em(bags, setting, config, model=None, n_classes=None):
    """Alternate E-steps (engine posteriors) and M-steps; returns a :class:`TrainResult`.

    The class count comes from ``model``, ``n_classes``, the bags' probability
    width, or (multi-label) the number of evidence records.
    """
    bags = list(bags)
    if not bags:
        raise EmptyTestSet("no training bags")
    if any(b.features is None for b in bags):
        raise DimensionMismatch("training bags need features")
    C = n_classes
    if C is None and model is not None:
        C = model.C
    if C is None and bags[0].probs is not None:
        C = bags[0].C
    if C is None and not setting.exclusive:
        C = len(bags[0].evidence)
    if C is None:
        raise DimensionMismatch("single-label bags without probabilities need n_classes")
    if model is None:
        model = init_model(C, bags[0].features.shape[1], config, setting.exclusive, setting.kind.value)
    stack = _Stack(bags)
    result = TrainResult(model)
    for _ in range(config.epochs):
        stats, grad, P = dataset_gradient(setting, stack, model, config)
        result.trace.append(stats)
        model.weights = model.weights - config.learning_rate * grad
        result.history.append(model.weights.copy())
        for _ in range(config.m_steps - 1):
            g = risk_gradient(stack, P, model, config, setting.exclusive)
            model.weights = model.weights - config.learning_rate * g
            result.history.append(model.weights.copy())
    return result


def train_supervised(X, Y, config, exclusive=False, model=None):
    """Full-batch gradient descent on the plain instance-level BCE (or CE) loss."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y)
    if X.shape[0] == 0:
        raise EmptyTestSet("no training instances")
    if exclusive:
        C = int(Y.max()) + 1 if model is None else model.C
        target = np.eye(C)[Y.ravel()]
    else:
        target = np.atleast_2d(Y.reshape(X.shape[0], -1)).astype(float)
        C = target.shape[1]
    if model is None:
        model = init_model(C, X.shape[1], config, exclusive)
    Xd = _design(X)
    result = TrainResult(model)
    for _ in range(config.epochs):
        f = predict(model, X)
        # BCE with sigmoid and CE with softmax both give dL/dscore = f - y
        grad = (f - target).T @ Xd / X.shape[0]
        model.weights = model.weights - config.learning_rate * grad
        result.history.append(model.weights.copy())
    return result


@dataclass
class EvalReport:
    accuracy: float
    per_class: dict


def evaluate(model, X, Y):
    """Instance accuracy and per-class rates on labeled instances."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.size == 0 or X.shape[0] == 0:
        raise EmptyTestSet("no test instances")
    f = predict(model, X)
    if model.exclusive:
        y = np.asarray(Y).ravel()
        pred = f.argmax(axis=1)
        rates = {}
        for c in range(model.C):
            m = y == c
            rates[c] = {"recall": float((pred[m] == c).mean()) if m.any() else float("nan")}
        return EvalReport(float((pred == y).mean()), rates)
    y = np.asarray(Y).reshape(X.shape[0], -1)
    pred = (f > 0.5).astype(int)
    rates = {}
    for c in range(model.C):
        pos, neg = y[:, c] == 1, y[:, c] == 0
        rates[c] = {
            "accuracy": float((pred[:, c] == y[:, c]).mean()),
            "tpr": float(pred[pos, c].mean()) if pos.any() else float("nan"),
            "tnr": float(1.0 - pred[neg, c].mean()) if neg.any() else float("nan"),
        }
    return EvalReport(float((pred == y).mean()), rates)


def save_model(model, path):
    data = {
        "weights": model.weights.tolist(),
        "d": model.d,
        "classes": model.C,
        "exclusive": model.exclusive,
        "setting": model.setting,
        "seed": model.seed,
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2)
            fh.write("\n")
    except OSError as err:
        raise IoFailure(f"cannot write {path}: {err}") from err


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise IoFailure(f"cannot read {path}: {err}") from err
    W = np.asarray(data["weights"], dtype=float)
    if W.shape != (data["classes"], data["d"] + 1):
        raise DimensionMismatch("checkpoint weights do not match its dimensions")
    return ToyModel(W, bool(data["exclusive"]), data.get("setting", ""), int(data.get("seed", 0)))


def config_dict(config):
    return asdict(config)
