"""Command-line entry point: ``wsinfer infer|oracle-check|gen|train|bench``.

Exit codes: 0 success, 1 usage or malformed input, 2 infeasible data,
3 verification failure.
"""
import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import jsonl
from .bench import BENCH_MODES, emit_report, scaling_exponents, throughput_ratio, time_inference
from .chain import MODES, infer
from .core import Kind, make_setting, validate_bag
from .errors import (
    CapExceeded,
    InfeasibleBag,
    InfeasibleWeakLabel,
    IoFailure,
    NormalizationFailure,
    SettingMismatch,
    UnsupportedSetting,
    VerificationFailure,
    WSError,
)
from .loop import load_class_transition, multilabel_posterior
from .oracle import DEFAULT_CAP, brute_posterior, combine, compare
from .synth import GenSpec, gen_dataset

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3
INFEASIBLE = (InfeasibleBag, InfeasibleWeakLabel, NormalizationFailure)
# run-level problems that abort instead of going to the error sidecar
FATAL = (CapExceeded, SettingMismatch, UnsupportedSetting)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("list entries must be positive integers")
    return vals


def _modes(text):
    vals = [t.strip() for t in text.split(",") if t.strip()]
    bad = [v for v in vals if v not in BENCH_MODES]
    if not vals or bad:
        raise argparse.ArgumentTypeError(f"modes must be drawn from {','.join(BENCH_MODES)}")
    return vals


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("WSINFER_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"WSINFER_SEED is not an integer: {env!r}") from None


def _echo(cmd, args, **extra):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    cfg["command"] = cmd
    print(json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)


def _setting(args, T=None):
    params = {}
    if getattr(args, "prior", None) is not None:
        params["prior"] = args.prior
    if T is not None and args.setting == Kind.Noisy.value:
        params["T_class"] = T
    return make_setting(args.setting, params)


def _class_transition(args):
    path = getattr(args, "class_transition", None)
    return None if path is None else load_class_transition(path)


def _load_bags(setting, path):
    bags = jsonl.read_bags(setting, path)
    for b in bags:
        if b.probs is None:
            raise jsonl.MalformedRecord("inference needs probs", bag_id=b.id)
    return bags


def _posterior_fn(setting, mode, T):
    """Per-bag inference; validation failures are per-bag errors, not fatal ones."""
    if T is None and setting.family != "noisy":
        return lambda bag: infer(setting, bag, mode=mode, validate=True)
    return lambda bag: multilabel_posterior(setting, bag, T, mode=mode, validate=True)


def _map(fn, items, threads):
    """Ordered map over bags; errors are returned in place of results."""
    def safe(item):
        try:
            return fn(item)
        except WSError as err:
            return err.with_bag(item.id) if err.bag_id is None else err

    if threads <= 1:
        return [safe(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(safe, items))


def _error_record(err):
    return {"id": err.bag_id, "error": type(err).__name__, "message": str(err)}


def _split_errors(results):
    errs = [r for r in results if isinstance(r, WSError)]
    fatal = [e for e in errs if isinstance(e, FATAL)]
    if fatal:
        raise fatal[0]
    return errs


# ------------------------------------------------------------------ commands


def cmd_infer(args):
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    T = _class_transition(args)
    setting = _setting(args, T)
    _echo("infer", args)
    bags = _load_bags(setting, args.input)
    results = _map(_posterior_fn(setting, args.mode, T), bags, args.threads)
    errs = _split_errors(results)
    jsonl.write_lines(args.output, (jsonl.posterior_to_record(r) for r in results if not isinstance(r, WSError)))
    sidecar = f"{args.output}.errors.jsonl"
    if errs:
        jsonl.write_lines(sidecar, (_error_record(e) for e in errs))
        for e in errs:
            print(f"bag {e.bag_id}: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if os.path.exists(sidecar):
        os.remove(sidecar)
    return EXIT_OK


def cmd_oracle_check(args):
    if args.tolerance < 0:
        raise UsageError("--tolerance must be nonnegative")
    T = _class_transition(args)
    setting = _setting(args, T)
    _echo("oracle-check", args)
    bags = _load_bags(setting, args.input)
    engine = _posterior_fn(setting, args.mode, T)
    loop_T = None if setting.family == "noisy" else T

    def both(bag):
        return compare(engine(bag), brute_posterior(setting, bag, loop_T, cap=args.max_instances))

    results = _map(both, bags, 1)
    errs = _split_errors(results)
    rep = combine(r for r in results if not isinstance(r, WSError))
    summary = {
        "bags": len(bags),
        "checked": len(bags) - len(errs),
        "infeasible": len(errs),
        "max_abs_diff": rep.max_abs,
        "mean_abs_diff": rep.mean_abs,
        "max_loglik_diff": rep.loglik_diff,
        "tolerance": args.tolerance,
    }
    print(json.dumps(summary))
    if not rep.within(args.tolerance):
        return EXIT_VERIFY
    return EXIT_INFEASIBLE if errs else EXIT_OK


def _gen_spec(args, seed):
    prior = None
    if args.class_prior is not None:
        prior = [float(v) for v in args.class_prior.split(",")]
        prior = prior[0] if len(prior) == 1 else prior
    return GenSpec(
        n_bags=args.n_bags,
        instances_mean=args.instances_mean,
        instances_std=args.instances_std,
        n_classes=args.classes,
        feature_dim=args.feature_dim,
        class_separation=args.separation,
        seed=seed,
        class_prior=prior,
        partial_ratio=args.partial_ratio,
        labeled_fraction=args.labeled_fraction,
        noise_rate=args.noise_rate,
        score_noise=args.score_noise,
    )


def cmd_gen(args):
    seed = _seed(args)
    spec = _gen_spec(args, seed)
    T = _class_transition(args)
    setting = _setting(args, T)
    _echo("gen", args, seed=seed)
    data = gen_dataset(setting, spec)
    jsonl.write_bags(setting, data.bags, args.output)
    jsonl.write_lines(f"{args.output}.truth.jsonl", jsonl.truth_records(data))
    if data.T_class is not None:
        _write_json(f"{args.output}.tclass.json", np.asarray(data.T_class).tolist())
    return EXIT_OK


def _write_json(path, obj):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh)
            fh.write("\n")
    except OSError as err:
        raise IoFailure(f"cannot write {path}: {err}") from err


def _labels(bags, truth_path):
    truth = jsonl.read_truth(truth_path)
    missing = [b.id for b in bags if b.id not in truth]
    if missing:
        raise jsonl.MalformedRecord(f"no labels for bag {missing[0]}", bag_id=missing[0])
    return np.concatenate([b.features for b in bags]), np.concatenate([truth[b.id] for b in bags])


def _write_trace(path, trace):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "ure", "smoothing", "total", "entropy"])
            for i, t in enumerate(trace, 1):
                w.writerow([i, repr(t.ure), repr(t.smoothing), repr(t.total), repr(t.entropy)])
    except OSError as err:
        raise IoFailure(f"cannot write {path}: {err}") from err


def cmd_train(args):
    from .plotting import plot_trace
    from .trainer import TrainConfig, evaluate, save_model, train_em, train_supervised

    seed = _seed(args)
    T = _class_transition(args)
    setting = _setting(args, T)
    config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        lam=args.lam,
        seed=seed,
        mode=args.mode,
        base_loss=args.base_loss,
        m_steps=args.m_steps,
        init_scale=args.init_scale,
    )
    _echo("train", args, config=asdict(config))
    bags = jsonl.read_bags(setting, args.input)
    if not bags or any(b.features is None for b in bags):
        raise jsonl.MalformedRecord("training records need features")
    for b in bags:
        if b.probs is not None:
            validate_bag(setting, b)
    C = args.classes
    if C is None and setting.exclusive:
        C = bags[0].C if bags[0].probs is not None else None
    result = train_em(bags, setting, config, n_classes=C)
    save_model(result.model, args.output)
    report = {"epochs": config.epochs, "final": asdict(result.trace[-1])}
    if args.truth is not None:
        X, Y = _labels(bags, args.truth)
        report["accuracy"] = evaluate(result.model, X, Y).accuracy
        if args.baseline:
            base = train_supervised(X, Y, config, exclusive=setting.exclusive)
            report["baseline_accuracy"] = evaluate(base.model, X, Y).accuracy
    elif args.baseline:
        raise UsageError("--baseline needs --truth")
    if args.trace is not None:
        _write_trace(args.trace, result.trace)
        plot_trace(result.trace, str(Path(args.trace).with_suffix(".png")))
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_bench(args):
    from .plotting import plot_scaling

    seed = _seed(args)
    setting = _setting(args)
    _echo("bench", args, seed=seed)
    records = time_inference(setting, args.K, args.batch, args.classes, args.modes, args.repeats, seed=seed)
    emit_report(records, args.output)
    plot_scaling(records, str(Path(args.output).with_suffix(".png")))
    slopes = {}
    for axis in ("K", "batch", "classes"):
        for key, s in scaling_exponents(records, axis).items():
            slopes[f"{axis}:" + ",".join(str(k) for k in key)] = s
    print(json.dumps({"slopes": slopes, "throughput_ratio": throughput_ratio(records)}, sort_keys=True))
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _common(p, needs_seed=False):
    p.add_argument("--setting", required=True, choices=[k.value for k in Kind])
    p.add_argument("--prior", type=float, default=None, help="PosUnl class prior")
    if needs_seed:
        p.add_argument("--seed", type=int, default=None, help="defaults to $WSINFER_SEED, then 0")


def build_parser():
    parser = _Parser(prog="wsinfer", description="Exact weakly supervised posterior inference.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("infer", help="posterior records for a bag file")
    _common(p, needs_seed=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=MODES, default="lowrank")
    p.add_argument("--class-transition", default=None, help="JSON square matrix")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("oracle-check", help="compare the engine with brute-force enumeration")
    _common(p, needs_seed=True)
    p.add_argument("--input", required=True)
    p.add_argument("--max-instances", type=int, default=DEFAULT_CAP)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--mode", choices=MODES, default="lowrank")
    p.add_argument("--class-transition", default=None)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("gen", help="synthetic bags plus hidden labels")
    _common(p, needs_seed=True)
    p.add_argument("--output", required=True)
    p.add_argument("--n-bags", type=int, default=100)
    p.add_argument("--instances-mean", type=float, default=8.0)
    p.add_argument("--instances-std", type=float, default=1.0)
    p.add_argument("--classes", type=int, default=1)
    p.add_argument("--feature-dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--class-prior", default=None, help="one value or a comma-separated list")
    p.add_argument("--partial-ratio", type=float, default=0.3)
    p.add_argument("--labeled-fraction", type=float, default=0.3)
    p.add_argument("--noise-rate", type=float, default=0.2)
    p.add_argument("--score-noise", type=float, default=0.05)
    p.add_argument("--class-transition", default=None, help="Noisy corruption matrix")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="EM training of the linear model")
    _common(p, needs_seed=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="model checkpoint (JSON)")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--mode", choices=MODES, default="lowrank")
    p.add_argument("--base-loss", choices=["BCE", "CE", "MAE"], default="BCE")
    p.add_argument("--m-steps", type=int, default=1)
    p.add_argument("--init-scale", type=float, default=0.01)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--class-transition", default=None)
    p.add_argument("--truth", default=None, help="labels file written by gen")
    p.add_argument("--baseline", action="store_true", help="also fit a supervised model on the true labels")
    p.add_argument("--trace", default=None, help="per-epoch CSV; a PNG is written beside it")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="runtime sweep; CSV plus a PNG beside it")
    _common(p, needs_seed=True)
    p.add_argument("--output", required=True)
    p.add_argument("--K", type=_int_list, default=[10, 20, 40, 80])
    p.add_argument("--batch", type=_int_list, default=[1])
    p.add_argument("--classes", type=_int_list, default=[1])
    p.add_argument("--modes", type=_modes, default=["dense", "lowrank"])
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"wsinfer: {err}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationFailure as err:
        print(f"wsinfer: {err}", file=sys.stderr)
        return EXIT_VERIFY
    except INFEASIBLE as err:
        print(f"wsinfer: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except WSError as err:
        print(f"wsinfer: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
