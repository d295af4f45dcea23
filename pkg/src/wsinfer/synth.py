"""Synthetic weakly labeled data with known instance labels.

Multi-label settings draw independent labels per class and features
``x = sum_c (y_c - 1/2) * sep * e_c + N(0, I)``; the emitted probabilities
are the exact Bayes posteriors ``sigmoid(sep * x_c + logit(pi_c))``.
Single-label settings place class c at ``(sep / sqrt 2) e_c`` so any two
centers are ``sep`` apart, and emit the matching softmax posterior.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, softmax
from scipy.stats import binom

from .core import (
    Bag,
    CandidateSet,
    CountDistribution,
    Exact,
    Kind,
    NoisyClass,
    SoftPair,
    Unlabeled,
)
from .errors import SettingMismatch


@dataclass
class GenSpec:
    """Generator configuration.

    ``class_prior`` is one probability per class (multi-label) or a class
    distribution (single-label); a scalar is broadcast.  ``unl_priors`` are
    the two set priors for UnlUnl.
    """

    n_bags: int = 100
    instances_mean: float = 8.0
    instances_std: float = 1.0
    n_classes: int = 1
    feature_dim: int = 2
    class_separation: float = 3.0
    seed: int = 0
    class_prior: Optional[object] = None
    partial_ratio: float = 0.3
    labeled_fraction: float = 0.3
    noise_rate: float = 0.2
    score_noise: float = 0.05
    unl_priors: tuple = (0.3, 0.7)
    pu_labeled_fraction: float = 0.2
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_bags < 1:
            raise SettingMismatch("n_bags must be at least 1")
        if self.instances_mean < 1:
            raise SettingMismatch("instances_mean must be at least 1")
        if self.n_classes < 1 or self.feature_dim < 1:
            raise SettingMismatch("n_classes and feature_dim must be positive")


@dataclass
class Dataset:
    """Bags plus the hidden instance labels (K x C bits, or class indices)."""

    bags: list
    truth: list
    setting: object
    spec: GenSpec
    T_class: Optional[np.ndarray] = None


def symmetric_noise(C, rate):
    """Keep a label with probability 1 - rate, else move it uniformly to another class."""
    if C < 2:
        return np.ones((1, 1))
    T = np.full((C, C), rate / (C - 1))
    np.fill_diagonal(T, 1.0 - rate)
    return T


def corrupt_labels(labels, T_class, seed):
    """Resample every label from its row of ``T_class``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    labels = np.asarray(labels, dtype=np.int64)
    T = np.asarray(T_class, dtype=float)
    cdf = np.cumsum(T[labels], axis=-1)
    u = rng.uniform(size=labels.shape + (1,))
    out = (u > cdf).sum(axis=-1)
    return np.minimum(out, T.shape[1] - 1)


def _soft_score(kind, value, rng, sigma):
    """Draw a score whose likelihood under each weak value follows the soft terminal factor."""
    if kind is Kind.SimConf:
        # densities 2w (similar) and 2(1 - w), matching g = w and 1 - w
        u = np.sqrt(rng.uniform())
        score = u if value == 1 else 1.0 - u
        return float(np.clip(score + rng.normal(0.0, sigma), 0.0, 1.0))
    # ConfDiff value = y2 - y1 + 1; densities 2|w| on one side, 1 - |w| in the middle
    if value == 1:
        score = rng.triangular(-1.0, 0.0, 1.0)
    else:
        score = np.sqrt(rng.uniform()) * (1.0 if value == 2 else -1.0)
    return float(np.clip(score + rng.normal(0.0, sigma), -1.0, 1.0))


def aggregate(setting, instance_labels, rng=None, spec=None, T_class=None):
    """Weak evidence produced by the setting's aggregator.

    Multi-label settings take a K x C (or length-K) bit array and return one
    record per class; single-label settings take the true class index.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    spec = spec or GenSpec()
    kind = setting.kind
    if setting.exclusive:
        y = np.asarray(instance_labels).ravel()
        if y.size != 1:
            raise SettingMismatch(f"{kind.value} expects a single class index")
        label = int(y[0])
        C = spec.n_classes
        if not 0 <= label < C:
            raise SettingMismatch(f"class {label} outside 0..{C - 1}")
        if kind is Kind.PartialL:
            others = [c for c in range(C) if c != label and rng.uniform() < spec.partial_ratio]
            return (CandidateSet({label, *others}),)
        if kind is Kind.CompL:
            if C < 2:
                raise SettingMismatch("complementary labels need at least two classes")
            choices = [c for c in range(C) if c != label]
            return (Exact(int(choices[rng.integers(len(choices))])),)
        if kind is Kind.SemiSup:
            return (Exact(label) if rng.uniform() < spec.labeled_fraction else Unlabeled(),)
        T = T_class if T_class is not None else symmetric_noise(C, spec.noise_rate)
        return (NoisyClass(int(corrupt_labels([label], T, rng)[0])),)
    y = np.asarray(instance_labels, dtype=np.int64)
    if y.ndim == 1:
        y = y[:, None]
    if set(np.unique(y)) - {0, 1}:
        raise SettingMismatch("instance labels must be bits")
    K = y.shape[0]
    if setting.is_pair and K != 2:
        raise SettingMismatch(f"{kind.value} labels must come in pairs")
    values = setting.aggregate(y.T)
    if kind in (Kind.SimConf, Kind.ConfDiff):
        return tuple(SoftPair(_soft_score(kind, int(v), rng, spec.score_noise)) for v in values)
    return tuple(Exact(int(v)) for v in values)


def _bag_sizes(spec, rng, n):
    K = np.rint(rng.normal(spec.instances_mean, spec.instances_std, size=n)).astype(int)
    return np.maximum(K, 1)


def _prior(spec, C, exclusive):
    if spec.class_prior is None:
        return np.full(C, 1.0 / C) if exclusive else np.full(C, 0.2)
    p = np.broadcast_to(np.asarray(spec.class_prior, dtype=float), (C,)).copy()
    if exclusive:
        return p / p.sum()
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise SettingMismatch("class priors must lie strictly inside (0, 1)")
    return p


def _multilabel_instances(y, sep, d, prior, rng):
    K, C = y.shape
    x = rng.normal(size=(K, d))
    x[:, :C] += (y - 0.5) * sep
    probs = expit(sep * x[:, :C] + np.log(prior / (1.0 - prior)))
    return x, probs


def gen_dataset(setting, spec):
    """Deterministic dataset for ``setting`` under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    kind = setting.kind
    C, d, sep = spec.n_classes, spec.feature_dim, spec.class_separation
    if d < C:
        raise SettingMismatch("feature_dim must be at least n_classes")
    bags, truth = [], []
    if setting.exclusive:
        if kind in (Kind.CompL, Kind.Noisy) and C < 2:
            raise SettingMismatch(f"{kind.value} needs at least two classes")
        prior = _prior(spec, C, True)
        T = None
        if kind is Kind.Noisy:
            T = np.asarray(setting.params.get("T_class", symmetric_noise(C, spec.noise_rate)), dtype=float)
        scale = sep / np.sqrt(2.0)
        for i in range(spec.n_bags):
            label = int(rng.choice(C, p=prior))
            x = rng.normal(size=(1, d))
            x[0, label] += scale
            probs = softmax(scale * x[:, :C] + np.log(prior), axis=1)
            ev = aggregate(setting, [label], rng, spec, T)
            bags.append(Bag(f"bag{i}", probs, ev, x))
            truth.append(np.array([label]))
        return Dataset(bags, truth, setting, spec, T)

    if kind in (Kind.PosUnl, Kind.UnlUnl) and C != 1:
        raise SettingMismatch(f"the {kind.value} generator is single-class")
    prior = _prior(spec, C, False)
    sizes = np.full(spec.n_bags, 2) if setting.is_pair else _bag_sizes(spec, rng, spec.n_bags)
    for i, K in enumerate(sizes):
        if kind is Kind.PosUnl:
            pi = setting.params.get("prior", 0.5)
            if rng.uniform() < spec.pu_labeled_fraction:
                y = np.ones((1, 1), dtype=np.int64)
                x, probs = _multilabel_instances(y, sep, d, np.array([pi]), rng)
                bags.append(Bag(f"bag{i}", probs, (Exact(1),), x))
            else:
                y = (rng.uniform(size=(K, 1)) < pi).astype(np.int64)
                x, probs = _multilabel_instances(y, sep, d, np.array([pi]), rng)
                bags.append(Bag(f"bag{i}", probs, (Unlabeled(),), x))
            truth.append(y)
            continue
        if kind is Kind.UnlUnl:
            pa, pb = spec.unl_priors
            pi = pa if rng.uniform() < 0.5 else pb
            y = (rng.uniform(size=(K, 1)) < pi).astype(np.int64)
            x, probs = _multilabel_instances(y, sep, d, np.array([(pa + pb) / 2.0]), rng)
            dist = binom.pmf(np.arange(K + 1), K, pi)
            bags.append(Bag(f"bag{i}", probs, (CountDistribution(dist / dist.sum()),), x))
            truth.append(y)
            continue
        y = (rng.uniform(size=(K, C)) < prior).astype(np.int64)
        x, probs = _multilabel_instances(y, sep, d, prior, rng)
        bags.append(Bag(f"bag{i}", probs, aggregate(setting, y, rng, spec), x))
        truth.append(y)
    return Dataset(bags, truth, setting, spec)


def instances(dataset):
    """Stack features and true labels over all bags for supervised use."""
    X = np.concatenate([b.features for b in dataset.bags])
    return X, np.concatenate(dataset.truth).astype(np.int64)
