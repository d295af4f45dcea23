"""Domain types: weak evidence, bags, setting descriptors and state spaces.

A chain state is ``o = (y, z)`` where ``y`` is the current instance label and
``z`` a running statistic whose meaning depends on the setting.  States are
ordered y-major, so index ``y * W + z``.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.stats import binom

from .errors import (
    BadProbability,
    BagSizeMismatch,
    EvidenceKindMismatch,
    UnsupportedSetting,
)


class Kind(str, Enum):
    MultiIns = "MultiIns"
    LProp = "LProp"
    PairComp = "PairComp"
    PairSim = "PairSim"
    SimConf = "SimConf"
    ConfDiff = "ConfDiff"
    PosUnl = "PosUnl"
    UnlUnl = "UnlUnl"
    PartialL = "PartialL"
    Noisy = "Noisy"
    CompL = "CompL"
    SemiSup = "SemiSup"


UNSUPPORTED = ("CrowdL", "SimUnl")
PAIR_KINDS = (Kind.PairComp, Kind.PairSim, Kind.SimConf, Kind.ConfDiff)
COUNT_KINDS = (Kind.LProp, Kind.PosUnl, Kind.UnlUnl)
CATEGORY_KINDS = (Kind.PartialL, Kind.CompL, Kind.SemiSup)


# ---------------------------------------------------------------- evidence


@dataclass(frozen=True)
class Exact:
    """A hard weak label: a bit, a count, or a class index."""

    value: int


@dataclass(frozen=True)
class SoftPair:
    """A similarity score (SimConf, in [0, 1]) or confidence difference (ConfDiff, in [-1, 1])."""

    score: float


@dataclass(frozen=True)
class CountDistribution:
    """A distribution over the number of positives 0..K."""

    dist: tuple

    def __post_init__(self):
        object.__setattr__(self, "dist", tuple(float(v) for v in self.dist))

    @property
    def array(self):
        return np.asarray(self.dist, dtype=float)


@dataclass(frozen=True)
class CandidateSet:
    """Classes that may hold the true label."""

    classes: frozenset

    def __post_init__(self):
        object.__setattr__(self, "classes", frozenset(int(c) for c in self.classes))


@dataclass(frozen=True)
class NoisyClass:
    label: int


@dataclass(frozen=True)
class Unlabeled:
    pass


HARD_EVIDENCE = (Exact, CandidateSet, NoisyClass)


# -------------------------------------------------------------------- bags


@dataclass(frozen=True, eq=False)
class Bag:
    """One weakly labeled sample.

    ``probs`` is K x C.  For single-label settings K is 1 and the row holds
    the class distribution.  ``evidence`` has one entry per class for
    multi-label settings and a single entry otherwise.
    """

    id: str
    probs: Optional[np.ndarray]
    evidence: tuple
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.probs is None and self.features is None:
            raise BadProbability("bag needs probs or features", bag_id=self.id)
        if self.probs is not None:
            object.__setattr__(self, "probs", np.atleast_2d(np.asarray(self.probs, dtype=float)))
        if self.features is not None:
            object.__setattr__(self, "features", np.atleast_2d(np.asarray(self.features, dtype=float)))
        if not isinstance(self.evidence, tuple):
            object.__setattr__(self, "evidence", tuple(self.evidence))

    @property
    def K(self):
        src = self.probs if self.probs is not None else self.features
        return src.shape[0]

    @property
    def C(self):
        return self.probs.shape[1]

    def with_probs(self, probs):
        return Bag(self.id, probs, self.evidence, self.features)


# ---------------------------------------------------------------- settings

_MEANINGS = {
    Kind.MultiIns: "whether a positive instance has appeared among the first k instances",
    Kind.LProp: "number of positive samples for the first k instances",
    Kind.PosUnl: "number of positive samples for the first k instances",
    Kind.UnlUnl: "number of positive samples for the first k instances",
    Kind.PairComp: "first instance label, then whether y1 >= y2",
    Kind.PairSim: "first instance label, then similar to the first instance or not",
    Kind.SimConf: "first instance label, then similar to the first instance or not",
    Kind.ConfDiff: "label of the first instance, carried to the second",
    Kind.PartialL: "whether the label has been assigned to one of the first c categories",
    Kind.CompL: "whether the label has been assigned to one of the first c categories",
    Kind.SemiSup: "whether the label has been assigned to one of the first c categories",
    Kind.Noisy: "true class of the single instance",
}

# next_z[z, y'] for settings with two z values
_BINARY_STEP = {
    Kind.MultiIns: [[0, 1], [1, 1]],
    Kind.PairComp: [[1, 0], [1, 1]],
    Kind.PairSim: [[1, 0], [0, 1]],
    Kind.SimConf: [[1, 0], [0, 1]],
    Kind.ConfDiff: [[0, 0], [1, 1]],
}


@dataclass(frozen=True, eq=False)
class Setting:
    """Semantics of one weak-supervision kind.

    ``family`` is ``"multilabel"`` (one binary chain per class),
    ``"category"`` (one chain over categories, exclusive label) or ``"noisy"``.
    """

    kind: Kind
    params: dict = field(default_factory=dict)

    @property
    def family(self):
        if self.kind in CATEGORY_KINDS:
            return "category"
        if self.kind is Kind.Noisy:
            return "noisy"
        return "multilabel"

    @property
    def exclusive(self):
        return self.family != "multilabel"

    @property
    def state_meaning(self):
        return _MEANINGS[self.kind]

    @property
    def is_pair(self):
        return self.kind in PAIR_KINDS

    def w_cardinality(self, K):
        """|W|, the number of z values per step."""
        return K + 1 if self.kind in COUNT_KINDS else 2

    def n_values(self, K):
        """Number of distinct weak-label values of one class chain."""
        if self.kind in COUNT_KINDS:
            return K + 1
        if self.kind is Kind.ConfDiff:
            return 3
        return 2

    def init_z(self):
        """z of the first node for y = 0 and y = 1 (z starts from y^1 in every setting)."""
        return np.array([0, 1], dtype=np.int64)

    def next_z(self, K):
        """State-update table ``next_z[z, y'] = delta(z, y')``.

        For count settings the update is z + y' clamped at K; the clamp only
        touches the unreachable column z = K, y' = 1.
        """
        if self.kind in COUNT_KINDS:
            W = K + 1
            z = np.arange(W)
            return np.stack([z, np.minimum(z + 1, W - 1)], axis=1).astype(np.int64)
        if self.family in ("category", "noisy"):
            # the category chain: "label already assigned" is an OR
            return np.array(_BINARY_STEP[Kind.MultiIns], dtype=np.int64)
        return np.array(_BINARY_STEP[self.kind], dtype=np.int64)

    def state_value(self, K):
        """Weak-label value carried by each terminal state, indexed like the state space."""
        W = self.w_cardinality(K)
        y = np.repeat([0, 1], W)
        z = np.tile(np.arange(W), 2)
        if self.kind is Kind.ConfDiff:
            return y - z + 1
        return z

    def aggregate(self, labels):
        """The aggregator applied along the last axis of ``labels`` (multi-label families)."""
        y = np.asarray(labels, dtype=np.int64)
        if self.kind is Kind.MultiIns:
            return y.max(axis=-1)
        if self.kind in COUNT_KINDS:
            return y.sum(axis=-1)
        y1, y2 = y[..., 0], y[..., 1]
        if self.kind is Kind.PairComp:
            return (y1 >= y2).astype(np.int64)
        if self.kind in (Kind.PairSim, Kind.SimConf):
            return (y1 == y2).astype(np.int64)
        if self.kind is Kind.ConfDiff:
            return y2 - y1 + 1
        raise UnsupportedSetting(f"{self.kind.value} has no per-class aggregator")

    def evidence_weights(self, evidence, K):
        """Likelihood of the evidence for each weak-label value of one class chain."""
        n = self.n_values(K)
        if isinstance(evidence, Exact):
            out = np.zeros(n)
            out[evidence.value] = 1.0
            return out
        if isinstance(evidence, CountDistribution):
            return evidence.array.copy()
        if isinstance(evidence, Unlabeled) and self.kind is Kind.PosUnl:
            return binom.pmf(np.arange(K + 1), K, self.params.get("prior", 0.5))
        if isinstance(evidence, SoftPair) and self.kind is Kind.SimConf:
            return np.array([1.0 - evidence.score, evidence.score])
        if isinstance(evidence, SoftPair) and self.kind is Kind.ConfDiff:
            w = evidence.score
            return np.array([max(-w, 0.0), (1.0 - abs(w)) / 2.0, max(w, 0.0)])
        raise EvidenceKindMismatch(f"{type(evidence).__name__} is not valid for {self.kind.value}")

    def terminal_factor(self, evidence, K):
        """g(o): evidence likelihood for every terminal state (multi-label families)."""
        return self.evidence_weights(evidence, K)[self.state_value(K)]

    def candidates(self, evidence, C):
        """Allowed classes for the category family."""
        if self.kind is Kind.PartialL:
            return sorted(evidence.classes)
        if self.kind is Kind.CompL:
            drop = evidence.value if isinstance(evidence, Exact) else None
            if drop is None:
                return [c for c in range(C) if c not in evidence.classes]
            return [c for c in range(C) if c != drop]
        if isinstance(evidence, Exact):
            return [evidence.value]
        return list(range(C))


def make_setting(kind, params=None):
    """Build the descriptor for ``kind`` (an enum member or its name)."""
    name = kind.value if isinstance(kind, Kind) else str(kind)
    if name in UNSUPPORTED:
        raise UnsupportedSetting(f"{name} is not constructed by this library")
    try:
        k = Kind(name)
    except ValueError:
        raise UnsupportedSetting(f"unknown setting {name!r}") from None
    params = dict(params or {})
    if k is Kind.PosUnl:
        prior = float(params.get("prior", 0.5))
        if not 0.0 <= prior <= 1.0:
            raise BadProbability(f"prior {prior} outside [0, 1]")
        params["prior"] = prior
    return Setting(k, params)


@dataclass(frozen=True)
class StateSpace:
    states: tuple
    w_card: int

    @property
    def size(self):
        return len(self.states)

    def index(self, y, z):
        return y * self.w_card + z


def build_state_space(setting, K):
    W = setting.w_cardinality(K)
    return StateSpace(tuple((y, z) for y in (0, 1) for z in range(W)), W)


# -------------------------------------------------------------- validation

_ALLOWED = {
    Kind.MultiIns: (Exact,),
    Kind.LProp: (Exact, CountDistribution),
    Kind.PosUnl: (Exact, CountDistribution, Unlabeled),
    Kind.UnlUnl: (Exact, CountDistribution),
    Kind.PairComp: (Exact,),
    Kind.PairSim: (Exact,),
    Kind.SimConf: (SoftPair,),
    Kind.ConfDiff: (SoftPair,),
    Kind.PartialL: (CandidateSet,),
    Kind.CompL: (Exact, CandidateSet),
    Kind.SemiSup: (Exact, Unlabeled),
    Kind.Noisy: (NoisyClass,),
}


def _check_evidence(setting, ev, K, C):
    kind = setting.kind
    if not isinstance(ev, _ALLOWED[kind]):
        raise EvidenceKindMismatch(f"{type(ev).__name__} is not valid for {kind.value}")
    if isinstance(ev, Exact):
        hi = (K if kind in COUNT_KINDS else 1) if setting.family == "multilabel" else C - 1
        if not 0 <= ev.value <= hi:
            raise EvidenceKindMismatch(f"value {ev.value} outside 0..{hi} for {kind.value}")
    elif isinstance(ev, CountDistribution):
        d = ev.array
        if d.shape != (K + 1,) or np.any(d < 0) or abs(d.sum() - 1.0) > 1e-12:
            raise EvidenceKindMismatch("count distribution must be nonnegative, length K+1, sum 1")
    elif isinstance(ev, SoftPair):
        lo = 0.0 if kind is Kind.SimConf else -1.0
        if not lo <= ev.score <= 1.0:
            raise EvidenceKindMismatch(f"score {ev.score} outside [{lo}, 1]")
    elif isinstance(ev, CandidateSet):
        if not ev.classes or min(ev.classes) < 0 or max(ev.classes) >= C:
            raise EvidenceKindMismatch("candidate set must be a nonempty set of class indices")
        if kind is Kind.CompL and len(ev.classes) >= C:
            raise EvidenceKindMismatch("complementary set excludes every class")
    elif isinstance(ev, NoisyClass):
        if not 0 <= ev.label < C:
            raise EvidenceKindMismatch(f"label {ev.label} outside 0..{C - 1}")


def validate_bag(setting, bag):
    """Check the bag invariants; returns True or raises a tagged error."""
    try:
        if bag.probs is None:
            raise BadProbability("bag has no probabilities")
        p = bag.probs
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise BadProbability(f"probs must be K x C, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
            raise BadProbability("probability outside [0, 1]")
        K, C = p.shape
        if setting.is_pair and K != 2:
            raise BagSizeMismatch(f"{setting.kind.value} needs K = 2, got {K}")
        if setting.exclusive:
            if K != 1:
                raise BagSizeMismatch(f"{setting.kind.value} bags hold one instance, got {K}")
            if not p.sum() > 0.0:
                raise BadProbability("class probabilities sum to zero")
            if len(bag.evidence) != 1:
                raise EvidenceKindMismatch("single-label settings take one evidence record")
        elif len(bag.evidence) != C:
            raise EvidenceKindMismatch(f"expected {C} evidence records, got {len(bag.evidence)}")
        for ev in bag.evidence:
            _check_evidence(setting, ev, K, C)
    except (BadProbability, BagSizeMismatch, EvidenceKindMismatch) as err:
        raise err.with_bag(bag.id)
    return True
