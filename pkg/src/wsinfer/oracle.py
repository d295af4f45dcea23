"""Brute-force reference posteriors by enumerating label configurations.

Nothing here uses the chain construction: weights come from the prior
product over instances and the aggregator applied to each configuration.
Sums run in log space.
"""
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .chain import LatentPosterior
from .core import CandidateSet, Exact, NoisyClass, validate_bag
from .errors import CapExceeded, DimensionMismatch, InfeasibleWeakLabel, ShapeMismatch

DEFAULT_CAP = 16


@dataclass(frozen=True)
class DiffReport:
    max_abs: float
    mean_abs: float
    loglik_diff: float

    def within(self, tol):
        return self.max_abs <= tol and self.loglik_diff <= tol


def _check_cap(K, cap):
    if K > cap:
        raise CapExceeded(f"enumeration over 2^{K} configurations exceeds cap 2^{cap}")


def all_configurations(K):
    """Every bit vector of length K as rows of a (2^K, K) array."""
    return np.array(list(itertools.product((0, 1), repeat=K)), dtype=np.int64).reshape(-1, K)


def enumerate_sigma(setting, w, K, cap=DEFAULT_CAP):
    """Yield (labels, weight) for the configurations consistent with evidence ``w``.

    Hard evidence yields only configurations whose aggregate equals ``w``
    (weight 1); soft evidence yields every configuration with its weight.
    Single-label settings enumerate one-hot class vectors of length ``K``
    (the number of classes).
    """
    if setting.exclusive:
        if isinstance(w, NoisyClass):
            raise ShapeMismatch("noisy evidence weights need a class transition; use brute_posterior")
        allowed = set(setting.candidates(w, K))
        for c in range(K):
            if c in allowed:
                y = np.zeros(K, dtype=np.int64)
                y[c] = 1
                yield y, 1.0
        return
    _check_cap(K, cap)
    weights = setting.evidence_weights(w, K)
    hard = isinstance(w, Exact)
    for y in all_configurations(K):
        g = float(weights[setting.aggregate(y)])
        if hard and g == 0.0:
            continue
        yield y, g


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def class_enumeration(setting, p, evidence, cap=DEFAULT_CAP):
    """Log prior and log evidence weight of every configuration of one class chain."""
    K = p.size
    _check_cap(K, cap)
    Y = all_configurations(K)
    logprior = np.where(Y == 1, _log(p)[None, :], _log(1.0 - p)[None, :]).sum(axis=1)
    values = setting.aggregate(Y)
    return Y, logprior, values


def _posterior_from_logs(Y, logjoint):
    logZ = logsumexp(logjoint)
    if not np.isfinite(logZ):
        return None, -np.inf
    pos = np.array([logsumexp(logjoint[Y[:, k] == 1]) if np.any(Y[:, k] == 1) else -np.inf for k in range(Y.shape[1])])
    return np.exp(pos - logZ), float(logZ)


def brute_posterior(setting, bag, T_class=None, cap=DEFAULT_CAP):
    """Reference posterior and per-class log P(w | x) by direct enumeration.

    With ``T_class`` (multi-label settings) each class is additionally
    weighted by the loop messages computed from the enumerated evidence of
    the other classes.
    """
    validate_bag(setting, bag)
    if setting.exclusive:
        p = bag.probs[0] / bag.probs[0].sum()
        ev = bag.evidence[0]
        C = p.size
        if isinstance(ev, NoisyClass):
            T = np.asarray(T_class if T_class is not None else setting.params.get("T_class"), dtype=float)
            if T.shape != (C, C):
                raise DimensionMismatch(f"class transition is {T.shape}, need {(C, C)}")
            logw = _log(T[:, ev.label])
        else:
            g = np.zeros(C)
            g[setting.candidates(ev, C)] = 1.0
            logw = _log(g)
        logjoint = _log(p) + logw
        post, logZ = _posterior_from_logs(np.eye(C, dtype=np.int64), logjoint)
        if post is None:
            raise InfeasibleWeakLabel("weak label has probability zero", bag_id=bag.id)
        return LatentPosterior(post[None, :], np.array([logZ]), True, bag.id)

    K, C = bag.K, bag.C
    n = setting.n_values(K)
    enum = [class_enumeration(setting, bag.probs[:, c], bag.evidence[c], cap) for c in range(C)]
    cavity = np.ones((C, n))
    if T_class is not None:
        T = np.asarray(T_class, dtype=float)
        if T.shape != (n, n):
            raise DimensionMismatch(f"class transition is {T.shape}, weak values need {(n, n)}")
        evid = np.zeros((C, n))
        for c, (_, logprior, values) in enumerate(enum):
            for w in range(n):
                sel = values == w
                evid[c, w] = np.exp(logsumexp(logprior[sel])) if np.any(sel) else 0.0
        sent = evid @ T.T
        for i in range(C):
            for k in range(C):
                if k != i:
                    cavity[i] *= sent[k]
    table = np.empty((K, C))
    ll = np.empty(C)
    for c, (Y, logprior, values) in enumerate(enum):
        g = setting.evidence_weights(bag.evidence[c], K)
        post, _ = _posterior_from_logs(Y, logprior + _log(g[values] * cavity[c][values]))
        _, own = _posterior_from_logs(Y, logprior + _log(g[values]))
        if post is None or not np.isfinite(own):
            raise InfeasibleWeakLabel("weak label has probability zero", bag_id=bag.id)
        table[:, c] = post
        ll[c] = own
    return LatentPosterior(table, ll, False, bag.id)


def compare(engine_out, oracle_out):
    """Max and mean absolute posterior difference plus max log-likelihood difference."""
    a = np.asarray(engine_out.table, dtype=float)
    b = np.asarray(oracle_out.table, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"posterior shapes differ: {a.shape} vs {b.shape}")
    la = np.asarray(engine_out.loglik, dtype=float)
    lb = np.asarray(oracle_out.loglik, dtype=float)
    if la.shape != lb.shape:
        raise ShapeMismatch(f"likelihood shapes differ: {la.shape} vs {lb.shape}")
    d = np.abs(a - b)
    return DiffReport(float(d.max()), float(d.mean()), float(np.max(np.abs(la - lb))))


def combine(reports):
    """Merge reports from many bags (max of maxima, mean of means)."""
    reports = list(reports)
    if not reports:
        return DiffReport(0.0, 0.0, 0.0)
    return DiffReport(
        max(r.max_abs for r in reports),
        float(np.mean([r.mean_abs for r in reports])),
        max(r.loglik_diff for r in reports),
    )
