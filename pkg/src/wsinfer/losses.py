"""Posterior-weighted risk, entropy smoothing and the EM identity.

Multi-label posteriors are K x C tables of independent binary marginals, so
the label values of each class are {positive, negative}.  Exclusive
posteriors are one distribution over C classes per instance.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeMismatch, SettingMismatch

EPS = 1e-12


class BaseLoss(str, Enum):
    BCE = "BCE"
    CE = "CE"
    MAE = "MAE"


@dataclass(frozen=True)
class LossBreakdown:
    ure: float
    smoothing: float
    total: float
    lam: float


def _unpack(posterior, exclusive=None):
    table = getattr(posterior, "table", posterior)
    if exclusive is None:
        exclusive = bool(getattr(posterior, "exclusive", False))
    return np.atleast_2d(np.asarray(table, dtype=float)), exclusive


def _pair(posterior, predictions, exclusive):
    P, exclusive = _unpack(posterior, exclusive)
    f = np.atleast_2d(np.asarray(predictions, dtype=float))
    if P.shape != f.shape:
        raise ShapeMismatch(f"posterior {P.shape} and predictions {f.shape} differ")
    return P, np.clip(f, EPS, 1.0 - EPS), exclusive


def _base(base_loss):
    try:
        return BaseLoss(getattr(base_loss, "value", base_loss))
    except ValueError:
        raise SettingMismatch(f"unknown base loss {base_loss!r}") from None


def instance_losses(P, f, base_loss, exclusive):
    """Per-instance sum over label values of P(e_j) * l(f, e_j), shape (K,)."""
    base = _base(base_loss)
    if not exclusive:
        if base is BaseLoss.MAE:
            per = P * (1.0 - f) + (1.0 - P) * f
        else:
            per = -(P * np.log(f) + (1.0 - P) * np.log(1.0 - f))
        return per.sum(axis=1)
    if base is BaseLoss.CE:
        return -(P * np.log(f)).sum(axis=1)
    if base is BaseLoss.BCE:
        neg = np.log(1.0 - f)
        # l(f, e_j) = -log f_j - sum_{c != j} log(1 - f_c)
        per_j = -np.log(f) - (neg.sum(axis=1, keepdims=True) - neg)
        return (P * per_j).sum(axis=1)
    per_j = (1.0 - f) + (f.sum(axis=1, keepdims=True) - f)
    return (P * per_j).sum(axis=1)


def ure_loss(posterior, predictions, base_loss=BaseLoss.BCE, exclusive=None):
    """(1/K) sum_k sum_j P(Y^k = e_j | x, w) l(f(x^k), e_j); posteriors are constants."""
    P, f, exclusive = _pair(posterior, predictions, exclusive)
    return float(instance_losses(P, f, base_loss, exclusive).mean())


def instance_grad(P, f, base_loss=BaseLoss.BCE, exclusive=False):
    """d/df of each instance's weighted loss (no 1/K factor); f is clamped."""
    f = np.clip(f, EPS, 1.0 - EPS)
    base = _base(base_loss)
    if base is BaseLoss.MAE:
        return 1.0 - 2.0 * P
    if exclusive and base is BaseLoss.CE:
        return -P / f
    # binary BCE/CE per class, and exclusive BCE when rows of P sum to 1
    return -P / f + (1.0 - P) / (1.0 - f)


def ure_grad(posterior, predictions, base_loss=BaseLoss.BCE, exclusive=None):
    """Gradient of :func:`ure_loss` with respect to the predictions (posteriors frozen)."""
    P, f, exclusive = _pair(posterior, predictions, exclusive)
    return instance_grad(P, f, base_loss, exclusive) / P.shape[0]


def _xlogx(x):
    return np.where(x > 0.0, x * np.log(np.where(x > 0.0, x, 1.0)), 0.0)


def smoothing_loss(posterior, exclusive=None):
    """(1/(C K)) sum_k sum_j P log P over label values: a negative entropy, at most 0."""
    P, exclusive = _unpack(posterior, exclusive)
    return float(entropy_terms(P, exclusive).mean())


def entropy_terms(P, exclusive):
    """Per-instance sum of P log P over label values, divided by C; shape (K,)."""
    C = P.shape[1]
    if exclusive:
        return _xlogx(P).sum(axis=1) / C
    return (_xlogx(P) + _xlogx(1.0 - P)).sum(axis=1) / C


def entropy_grad(P, exclusive):
    """d/dP of :func:`entropy_terms` (no 1/K factor); P is clamped."""
    C = P.shape[1]
    Pc = np.clip(P, EPS, 1.0 - EPS)
    if exclusive:
        return (np.log(Pc) + 1.0) / C
    return (np.log(Pc) - np.log(1.0 - Pc)) / C


def smoothing_grad(posterior, exclusive=None):
    """Gradient of :func:`smoothing_loss` with respect to the posterior table."""
    P, exclusive = _unpack(posterior, exclusive)
    return entropy_grad(P, exclusive) / P.shape[0]


def total_loss(posterior, predictions, base_loss=BaseLoss.BCE, lam=0.0, exclusive=None):
    if lam < 0:
        raise SettingMismatch("lambda must be nonnegative")
    ure = ure_loss(posterior, predictions, base_loss, exclusive)
    smo = smoothing_loss(posterior, exclusive)
    return LossBreakdown(ure, smo, ure + lam * smo, float(lam))


def kl_divergence(posterior, predictions):
    """(1/K) sum_k sum_c KL(Bernoulli(P) || Bernoulli(f)) for binary marginals.

    For one class this equals the BCE total loss at lambda = 1.
    """
    P, f, _ = _pair(posterior, predictions, False)
    kl = _xlogx(P) + _xlogx(1.0 - P) - P * np.log(f) - (1.0 - P) * np.log(1.0 - f)
    return float(kl.sum(axis=1).mean())


def q_function(posterior, predictions, exclusive=None):
    """EM Q-function sum_k sum_j P(e_j | x, w) log f_j(x^k)."""
    P, f, exclusive = _pair(posterior, predictions, exclusive)
    if exclusive:
        return float(np.einsum("kc,kc->", P, np.log(f)))
    values = np.stack([P, 1.0 - P])
    logs = np.log(np.stack([f, 1.0 - f]))
    return float(np.einsum("vkc,vkc->", values, logs))


def em_q_identity_check(posterior, predictions, exclusive=None):
    """|URE_CE + Q / K|: zero when the frozen-posterior risk is the scaled negative Q."""
    P, _ = _unpack(posterior, exclusive)
    ure = ure_loss(posterior, predictions, BaseLoss.CE, exclusive)
    return abs(ure + q_function(posterior, predictions, exclusive) / P.shape[0])
