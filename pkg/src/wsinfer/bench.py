"""Runtime scaling harness.

Timed regions exclude data preparation.  Single-chain modes are timed
inside compiled code (``run_repeated``), so interpreter call overhead does
not dilute the per-step cost being measured.  All configurations of one
sweep are timed in interleaved rounds so slow drifts in machine speed hit
every size alike; the first round is a discarded warm-up and each record is
the median of the remaining rounds.
"""
import csv
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .chain import batched_forward_backward, chain_problem, infer
from .core import Bag
from .errors import CapExceeded, DegenerateFit, IoFailure, SettingMismatch, VerificationFailure, WSError
from .oracle import DEFAULT_CAP, brute_posterior
from .synth import aggregate

BENCH_MODES = ("dense", "lowrank", "lowrank-batched", "oracle")
FIELDS = ("setting", "K", "batch", "classes", "mode", "seconds", "repeats")


@dataclass(frozen=True)
class BenchRecord:
    setting: str
    K: int
    batch: int
    classes: int
    mode: str
    seconds_per_iteration: float
    repeats: int

    def __post_init__(self):
        if not self.seconds_per_iteration > 0:
            raise WSError("timings must be positive")
        if self.repeats < 3:
            raise WSError("a record needs at least 3 repeats")

    @property
    def seconds(self):
        return self.seconds_per_iteration


def random_bags(setting, K, batch, classes, rng):
    """Bags with random probabilities and evidence aggregated from sampled labels."""
    if setting.family != "multilabel":
        raise SettingMismatch("the benchmark sweeps multi-label chain settings")
    if setting.is_pair:
        K = 2
    bags = []
    for b in range(batch):
        p = rng.uniform(0.05, 0.95, size=(K, classes))
        y = (rng.uniform(size=p.shape) < p).astype(np.int64)
        bags.append(Bag(f"b{b}", p, aggregate(setting, y, rng)))
    return bags


def _problems(setting, bags):
    return [chain_problem(setting, bag, c) for bag in bags for c in range(bag.C)]


def _verify(setting, bags, mode, problems):
    """Check a mode's output before it is timed."""
    ref = None
    if bags[0].K <= DEFAULT_CAP:
        ref = [brute_posterior(setting, b).table for b in bags]
    if mode == "oracle":
        if ref is None:
            raise CapExceeded("oracle mode is capped")
        other = [infer(setting, b, mode="dense").table for b in bags]
    elif mode == "lowrank-batched":
        post, _, status, lengths = batched_forward_backward(problems, True)
        if np.any(status != _kernels.OK):
            raise VerificationFailure("batched run reported an infeasible chain")
        cols = iter(post[j, : lengths[j]] for j in range(len(problems)))
        other = [np.stack([next(cols) for _ in range(b.C)], axis=1) for b in bags]
    else:
        other = [infer(setting, b, mode=mode).table for b in bags]
    if ref is None:
        alt = "dense" if mode == "lowrank" else "lowrank"
        ref = [infer(setting, b, mode=alt).table for b in bags]
    worst = max(float(np.max(np.abs(a - b))) for a, b in zip(ref, other))
    if worst > 1e-9:
        raise VerificationFailure(f"{mode} disagrees with the reference by {worst:.3e}")


class _Timer:
    """One configuration: prepared inputs per round and an inner repeat count."""

    def __init__(self, setting, mode, rounds_inputs, min_time):
        self.setting = setting
        self.mode = mode
        self.inputs = rounds_inputs
        self.min_time = min_time
        self.n = 1
        self.samples = []

    def _once(self, bags, problems, n):
        t0 = time.perf_counter()
        if self.mode in ("dense", "lowrank"):
            lowrank = self.mode == "lowrank"
            for p in problems:
                _kernels.run_repeated(p.q, p.next_z, p.init_z, p.terminal, p.emission, lowrank, n)
        elif self.mode == "lowrank-batched":
            for _ in range(n):
                batched_forward_backward(problems, True)
        else:
            for _ in range(n):
                for b in bags:
                    brute_posterior(self.setting, b)
        return time.perf_counter() - t0

    def calibrate(self):
        bags, problems = self.inputs[0]
        self._once(bags, problems, 1)
        while self._once(bags, problems, self.n) < self.min_time and self.n < 1 << 20:
            self.n *= 2

    def sample(self, r):
        bags, problems = self.inputs[r]
        self.samples.append(self._once(bags, problems, self.n) / self.n)


def time_inference(setting, K_list, batch_list=(1,), class_list=(1,), modes=("dense", "lowrank"),
                   repeats=5, seed=0, min_time=2e-3):
    """Median seconds per inference call for every (K, batch, classes, mode).

    Each round uses freshly generated bags.  Outputs are checked against the
    oracle (or the other exact mode beyond the oracle cap) before timing.
    """
    if repeats < 3:
        raise SettingMismatch("at least 3 repeats are required")
    for m in modes:
        if m not in BENCH_MODES:
            raise SettingMismatch(f"unknown mode {m!r}")
    if "oracle" in modes and max(K_list) > DEFAULT_CAP:
        raise CapExceeded(f"oracle mode supports K <= {DEFAULT_CAP}")
    rng = np.random.default_rng(seed)
    timers = []
    for K in K_list:
        for batch in batch_list:
            for classes in class_list:
                rounds = []
                for _ in range(repeats + 1):
                    bags = random_bags(setting, K, batch, classes, rng)
                    rounds.append((bags, _problems(setting, bags)))
                for mode in modes:
                    _verify(setting, rounds[0][0], mode, rounds[0][1])
                    t = _Timer(setting, mode, rounds, min_time)
                    t.calibrate()
                    timers.append(((K, batch, classes, mode), t))
    for r in range(repeats + 1):
        for _, t in timers:
            t.sample(r)
    records = []
    for (K, batch, classes, mode), t in timers:
        kept = t.samples[1:]
        records.append(BenchRecord(setting.kind.value, K if not setting.is_pair else 2, batch, classes, mode,
                                   float(np.median(kept)), len(kept)))
    return records


def fit_scaling_exponent(sizes, times):
    """Least-squares slope of log(time) against log(size)."""
    x = np.asarray(sizes, dtype=float)
    y = np.asarray(times, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise DegenerateFit("need at least 3 (size, time) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DegenerateFit("sizes and times must be positive")
    if np.any(np.diff(x) <= 0):
        raise DegenerateFit("sizes must be strictly increasing")
    lx, ly = np.log(x), np.log(y)
    var = np.sum((lx - lx.mean()) ** 2)
    if var == 0.0:
        raise DegenerateFit("sizes have zero variance")
    return float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / var)


AXES = ("K", "batch", "classes")


def scaling_exponents(records, axis="K"):
    """Fitted exponent along ``axis`` for each group of records sharing the other axes.

    Keys are ``(mode, fixed...)`` with the fixed axes in ``AXES`` order; groups
    with fewer than three sizes are skipped.
    """
    if axis not in AXES:
        raise SettingMismatch(f"axis must be one of {AXES}")
    fixed = [a for a in AXES if a != axis]
    groups = {}
    for r in records:
        groups.setdefault((r.mode, *(getattr(r, a) for a in fixed)), []).append(r)
    out = {}
    for key, rs in sorted(groups.items()):
        rs.sort(key=lambda r: getattr(r, axis))
        if len(rs) >= 3:
            out[key] = fit_scaling_exponent([getattr(r, axis) for r in rs], [r.seconds for r in rs])
    return out


def slope_by_mode(records, axis="K"):
    """Exponent per mode for a sweep that varies only ``axis``."""
    out = {}
    for key, slope in scaling_exponents(records, axis).items():
        if key[0] in out:
            raise DegenerateFit(f"several {key[0]} sweeps; use scaling_exponents")
        out[key[0]] = slope
    return out


def throughput_ratio(records, batch=64):
    """Sequential low-rank time over batched time at ``batch`` (informational)."""
    seq = [r for r in records if r.mode == "lowrank" and r.batch == batch]
    bat = [r for r in records if r.mode == "lowrank-batched" and r.batch == batch]
    if not seq or not bat:
        return None
    return float(np.median([s.seconds for s in seq]) / np.median([b.seconds for b in bat]))


def emit_report(records, path):
    """Write ``records`` as CSV with a fixed header and column order."""
    records = list(records)
    if not records:
        raise WSError("no benchmark records to write")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS)
            for r in records:
                w.writerow([r.setting, r.K, r.batch, r.classes, r.mode, repr(r.seconds), r.repeats])
    except OSError as err:
        raise IoFailure(f"cannot write {path}: {err}") from err
    return path


def read_report(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as err:
        raise IoFailure(f"cannot read {path}: {err}") from err
    return [
        BenchRecord(r["setting"], int(r["K"]), int(r["batch"]), int(r["classes"]), r["mode"],
                    float(r["seconds"]), int(r["repeats"]))
        for r in rows
    ]
