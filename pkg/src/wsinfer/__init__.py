"""Exact posterior inference for weakly supervised bags over a label chain."""
from .chain import BeliefTable, LatentPosterior, LowRankFactors, MessageVector, batched_infer, infer
from .core import Bag, Kind, Setting, build_state_space, make_setting, validate_bag
from .core import CandidateSet, CountDistribution, Exact, NoisyClass, SoftPair, Unlabeled
from .errors import WSError
from .loop import multilabel_posterior
from .oracle import brute_posterior

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "BeliefTable",
    "CandidateSet",
    "CountDistribution",
    "Exact",
    "Kind",
    "LatentPosterior",
    "LowRankFactors",
    "MessageVector",
    "NoisyClass",
    "Setting",
    "SoftPair",
    "Unlabeled",
    "WSError",
    "batched_infer",
    "brute_posterior",
    "build_state_space",
    "infer",
    "make_setting",
    "multilabel_posterior",
    "validate_bag",
]
