"""JSON-lines bag and posterior records.

The ``weak`` field of a bag record depends on the setting:

* multi-label settings: a list with one entry per class, each an integer
  (exact weak label), a real (soft pair score), a list of reals (count
  distribution) or null (unlabeled);
* PartialL: a list of candidate class indices;
* CompL and Noisy: one class index;
* SemiSup: a class index or null.
"""
import json
import math

import numpy as np

from .core import CandidateSet, CountDistribution, Exact, Kind, NoisyClass, SoftPair, Unlabeled
from .errors import EvidenceKindMismatch, IoFailure, SettingMismatch, WSError


class MalformedRecord(WSError):
    """A line that is not a valid record."""


def _as_int(v, bag_id):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise EvidenceKindMismatch(f"expected an integer weak label, got {v!r}", bag_id=bag_id)
    if isinstance(v, float) and not (math.isfinite(v) and v.is_integer()):
        raise EvidenceKindMismatch(f"expected an integer weak label, got {v!r}", bag_id=bag_id)
    return int(v)


def _multilabel_item(setting, v, bag_id):
    if v is None:
        return Unlabeled()
    if isinstance(v, list):
        try:
            return CountDistribution(np.asarray(v, dtype=float))
        except (TypeError, ValueError) as err:
            raise EvidenceKindMismatch(f"bad count distribution: {err}", bag_id=bag_id) from None
    if setting.kind in (Kind.SimConf, Kind.ConfDiff):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise EvidenceKindMismatch(f"expected a real score, got {v!r}", bag_id=bag_id)
        return SoftPair(float(v))
    return Exact(_as_int(v, bag_id))


def parse_weak(setting, weak, bag_id=None):
    """Evidence tuple for a ``weak`` JSON value."""
    kind = setting.kind
    if not setting.exclusive:
        if not isinstance(weak, list):
            raise EvidenceKindMismatch("multi-label weak labels are a list with one entry per class", bag_id=bag_id)
        return tuple(_multilabel_item(setting, v, bag_id) for v in weak)
    if kind is Kind.PartialL:
        if not isinstance(weak, list):
            raise EvidenceKindMismatch("PartialL weak labels are a list of classes", bag_id=bag_id)
        return (CandidateSet(frozenset(_as_int(v, bag_id) for v in weak)),)
    if kind is Kind.SemiSup and weak is None:
        return (Unlabeled(),)
    label = _as_int(weak, bag_id)
    return (NoisyClass(label),) if kind is Kind.Noisy else (Exact(label),)


def weak_to_json(setting, evidence):
    """Inverse of :func:`parse_weak`."""
    def item(e):
        if isinstance(e, Unlabeled):
            return None
        if isinstance(e, CountDistribution):
            return [float(x) for x in e.array]
        if isinstance(e, SoftPair):
            return float(e.score)
        if isinstance(e, CandidateSet):
            return sorted(e.classes)
        if isinstance(e, NoisyClass):
            return int(e.label)
        return int(e.value)

    if setting.exclusive:
        return item(evidence[0])
    return [item(e) for e in evidence]


def _matrix(v, name, bag_id):
    if v is None:
        return None
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise MalformedRecord(f"{name} must be an array of arrays of reals", bag_id=bag_id) from None
    if a.ndim != 2 or a.shape[0] == 0:
        raise MalformedRecord(f"{name} must be a nonempty K x n array", bag_id=bag_id)
    return a


def bag_from_record(setting, obj):
    """Build a :class:`Bag` from one decoded record."""
    from .core import Bag

    if not isinstance(obj, dict):
        raise MalformedRecord("record is not a JSON object")
    bag_id = obj.get("id")
    if not isinstance(bag_id, str):
        raise MalformedRecord("record id must be a string", bag_id=None if bag_id is None else str(bag_id))
    named = obj.get("setting")
    if named is not None and named != setting.kind.value:
        raise SettingMismatch(f"record is for {named}, expected {setting.kind.value}", bag_id=bag_id)
    if "weak" not in obj:
        raise MalformedRecord("record has no weak field", bag_id=bag_id)
    probs = _matrix(obj.get("probs"), "probs", bag_id)
    feats = _matrix(obj.get("features"), "features", bag_id)
    if probs is None and feats is None:
        raise MalformedRecord("record needs probs or features", bag_id=bag_id)
    if probs is not None and feats is not None and probs.shape[0] != feats.shape[0]:
        raise MalformedRecord("probs and features disagree on K", bag_id=bag_id)
    return Bag(bag_id, probs, parse_weak(setting, obj["weak"], bag_id), feats)


def bag_to_record(setting, bag):
    rec = {"id": bag.id, "setting": setting.kind.value}
    if bag.probs is not None:
        rec["probs"] = bag.probs.tolist()
    if bag.features is not None:
        rec["features"] = bag.features.tolist()
    rec["weak"] = weak_to_json(setting, bag.evidence)
    return rec


def posterior_to_record(post):
    return {
        "id": post.bag_id,
        "posterior": np.asarray(post.table).tolist(),
        "log_likelihood": [float(x) for x in np.asarray(post.loglik)],
    }


def read_lines(path):
    """Decoded JSON objects of a JSONL file, skipping blank lines."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise IoFailure(f"cannot read {path}: {err}") from err
    out = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as err:
            raise MalformedRecord(f"{path}:{n}: {err.msg}") from None
    return out


def read_bags(setting, path):
    return [bag_from_record(setting, obj) for obj in read_lines(path)]


def dumps(obj):
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_lines(path, objs):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for o in objs:
                fh.write(dumps(o) + "\n")
    except OSError as err:
        raise IoFailure(f"cannot write {path}: {err}") from err
    return path


def write_bags(setting, bags, path):
    return write_lines(path, (bag_to_record(setting, b) for b in bags))


def read_truth(path):
    """Instance labels keyed by bag id."""
    return {o["id"]: np.asarray(o["labels"], dtype=np.int64) for o in read_lines(path)}


def truth_records(dataset):
    return [{"id": b.id, "labels": np.asarray(t).tolist()} for b, t in zip(dataset.bags, dataset.truth)]
