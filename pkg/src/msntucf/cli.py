"""Command-line entry point: train, eval, sweep, synthetic.

Flags can also be supplied through a flat key=value config file (--config);
explicit command-line flags override file values.  Exit codes: 0 success,
2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import preprocess, training
from .errors import ConfigError, DataError, TrainingError
from .metrics import rmse as rmse_metric
from .model import (MODEL_KINDS, ModelConfig, load_checkpoint, save_checkpoint)
from .sparse import TensorShape, density, load_wsdream, save_entries, split
from .synthetic import GeneratorSpec, generate
from .training import TrainConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


# -- flag parsing helpers ------------------------------------------------------

def parse_ints3(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-integer in {text!r}") from None


def parse_split_spec(text: str) -> tuple[float, float, float]:
    """Either fractions `0.05,0.15,0.8` or proportions `5:15:80` (normalized)."""
    sep = ":" in text
    parts = text.split(":" if sep else ",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three split components, got {text!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric split component in {text!r}") from None
    if sep:
        total = sum(vals)
        if total <= 0:
            raise argparse.ArgumentTypeError(f"split proportions must sum > 0, got {text!r}")
        vals = [v / total for v in vals]
    return tuple(vals)


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config_file(path) -> list[str]:
    """Flat key=value lines become CLI tokens (underscores map to hyphens)."""
    tokens: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip().replace("_", "-")
            value = value.strip()
            if key == "config":
                raise ConfigError(f"{path}:{line_no}: config files cannot nest")
            if value.lower() in ("true", "false"):
                tokens.append(f"--{key}" if value.lower() == "true" else f"--no-{key}")
            else:
                tokens.extend([f"--{key}", value])
    return tokens


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def write_report(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in pairs:
            fh.write(f"{key}={_fmt(value)}\n")


def read_report(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                out[key] = value
    return out


# -- shared config assembly ----------------------------------------------------

def model_config_from_args(args, seed: int) -> ModelConfig:
    P, Q, R = args.rank
    return ModelConfig(
        P=P, Q=Q, R=R,
        heads=args.heads, loops=args.loops, dropout=args.dropout, seed=seed,
        score_axis=args.score_axis, dropout_position=args.dropout_position,
        share_blocks=args.share_blocks, chunked=args.chunked,
    )


def train_config_from_args(args, seed: int) -> TrainConfig:
    return TrainConfig(
        lr=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
        patience=args.patience, optimizer=args.optimizer, seed=seed,
        loss_mean=args.loss_mean,
    )


def _config_pairs(prefix: str, cfg) -> list:
    return [(f"{prefix}.{f.name}", getattr(cfg, f.name)) for f in dataclasses.fields(cfg)]


def _load_tensor(args) -> tuple:
    if args.data is None:
        raise ConfigError("--data is required")
    if args.shape is None:
        raise ConfigError("--shape I,J,K is required")
    shape = TensorShape(*args.shape)
    tensor = load_wsdream(args.data, shape, index_base=args.index_base)
    return tensor, shape


def _train_once(tensor, shape, ratios, seed, kind, model_config, train_config):
    """Split, fit normalization on train, train, evaluate the test split."""
    ds = split(tensor, ratios, seed)
    if len(ds.train) == 0:
        raise DataError(f"train split is empty (ratios {ratios}, {len(tensor)} entries)")
    if len(ds.test) == 0:
        raise DataError(f"test split is empty (ratios {ratios}, {len(tensor)} entries)")
    norm = preprocess.fit(ds.train)
    started = time.perf_counter()
    params, trace = training.fit(kind, ds, model_config, train_config, norm)
    wall = time.perf_counter() - started
    test_report = training.evaluate(params, kind, model_config, ds.test, norm)
    return ds, norm, params, trace, test_report, wall


def _report_pairs(command, rep, seed, args, kind, model_config, train_config,
                  ds, norm, test_report, wall, trace_name, ckpt_name):
    pairs = [
        ("command", command),
        ("repetition", rep),
        ("seed", seed),
        ("data.path", args.data),
        ("data.shape", tuple(args.shape)),
        ("data.index_base", args.index_base),
        ("split.ratios", ds.ratios),
        ("split.seed", ds.seed),
        ("split.train_entries", len(ds.train)),
        ("split.valid_entries", len(ds.valid)),
        ("split.test_entries", len(ds.test)),
        ("model.kind", kind),
    ]
    pairs += _config_pairs("model", model_config)
    pairs += _config_pairs("train", train_config)
    pairs += [
        ("norm.log_applied", norm.log_applied),
        ("norm.z_min", norm.z_min),
        ("norm.z_max", norm.z_max),
        ("test.mae", test_report.mae),
        ("test.mre", test_report.mre),
        ("test.rmse", test_report.rmse),
        ("test.n_entries", test_report.n_entries),
        ("test.n_mre_excluded", test_report.n_mre_excluded),
        ("trace", trace_name),
        ("checkpoint", ckpt_name),
        ("wall_seconds", wall),
    ]
    return pairs


# -- commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    base_seed = args.seed
    kind = args.model
    # validate configuration before touching any data
    model_config_from_args(args, base_seed)
    train_config_from_args(args, base_seed)
    tensor, shape = _load_tensor(args)
    out_root = Path(args.out)
    summaries = []
    for rep in range(args.reps):
        seed = base_seed + rep
        out_dir = out_root / f"rep{rep}" if args.reps > 1 else out_root
        out_dir.mkdir(parents=True, exist_ok=True)
        model_config = model_config_from_args(args, seed)
        train_config = train_config_from_args(args, seed)
        ds, norm, params, trace, test_report, wall = _train_once(
            tensor, shape, args.split, seed, kind, model_config, train_config)
        trace.to_csv(out_dir / "trace.csv")
        save_checkpoint(out_dir / "checkpoint.npz", kind, params, model_config, norm, shape)
        write_report(out_dir / "report.txt",
                     _report_pairs("train", rep, seed, args, kind, model_config,
                                   train_config, ds, norm, test_report, wall,
                                   "trace.csv", "checkpoint.npz"))
        summaries.append(test_report)
        print(f"[train rep {rep}] {kind} seed={seed} "
              f"test mae={test_report.mae:.6g} mre={test_report.mre:.6g} "
              f"rmse={test_report.rmse:.6g} ({wall:.1f}s)")
    if args.reps > 1:
        with open(out_root / "summary.csv", "w", encoding="utf-8") as fh:
            fh.write("metric,mean,std\n")
            for name in ("mae", "mre", "rmse"):
                vals = np.array([getattr(r, name) for r in summaries])
                fh.write(f"{name},{float(vals.mean())!r},{float(vals.std())!r}\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.dropout is not None and args.dropout > 0:
        raise ConfigError("evaluation is dropout-free by contract; "
                          "remove --dropout or set it to 0")
    kind, params, model_config, norm, ck_shape = load_checkpoint(args.checkpoint)
    if args.shape is not None and tuple(args.shape) != ck_shape.astuple():
        raise DataError(f"--shape {tuple(args.shape)} does not match "
                        f"checkpoint shape {ck_shape.astuple()}")
    if args.data is None:
        raise ConfigError("--data is required")
    tensor = load_wsdream(args.data, ck_shape, index_base=args.index_base)
    ds = split(tensor, args.split, args.seed)
    subset = getattr(ds, args.on)
    if len(subset) == 0:
        raise DataError(f"{args.on} split is empty")
    report = training.evaluate(params, kind, model_config, subset, norm)
    print(f"[eval] {kind} on {args.on}: mae={report.mae!r} mre={report.mre!r} "
          f"rmse={report.rmse!r} n={report.n_entries} "
          f"mre_excluded={report.n_mre_excluded}")
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        pairs = [("command", "eval"), ("checkpoint", args.checkpoint),
                 ("data.path", args.data), ("split.ratios", args.split),
                 ("split.seed", args.seed), ("eval.on", args.on),
                 ("model.kind", kind)]
        pairs += [(f"test.{k}", v) for k, v in report.as_dict().items()]
        write_report(out_dir / "eval_report.txt", pairs)
    return EXIT_OK


def cmd_sweep(args) -> int:
    base_seed = args.seed
    kind = args.model
    if not args.values:
        raise ConfigError("--values must list at least one setting")
    # validate every axis value before any training
    for value in args.values:
        probe = argparse.Namespace(**vars(args))
        setattr(probe, args.axis, value)
        model_config_from_args(probe, base_seed)
    train_config_from_args(args, base_seed)
    tensor, shape = _load_tensor(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    run_lines = ["axis,value,rep,seed,mae,mre,rmse,epochs,wall_seconds"]
    for value in args.values:
        per_rep = []
        for rep in range(args.reps):
            seed = base_seed + rep
            run_args = argparse.Namespace(**vars(args))
            setattr(run_args, args.axis, value)
            model_config = model_config_from_args(run_args, seed)
            train_config = train_config_from_args(run_args, seed)
            _, _, _, trace, test_report, wall = _train_once(
                tensor, shape, args.split, seed, kind, model_config, train_config)
            per_rep.append(test_report)
            run_lines.append(
                f"{args.axis},{value},{rep},{seed},{test_report.mae!r},"
                f"{test_report.mre!r},{test_report.rmse!r},{len(trace)},{wall!r}")
            print(f"[sweep {args.axis}={value} rep {rep}] "
                  f"rmse={test_report.rmse:.6g} ({wall:.1f}s)")
        stats = {}
        for name in ("mae", "mre", "rmse"):
            vals = np.array([getattr(r, name) for r in per_rep])
            stats[name] = (float(vals.mean()), float(vals.std()))
        rows.append((value, len(per_rep), stats))
    with open(out_dir / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("axis,value,reps,mae_mean,mae_std,mre_mean,mre_std,rmse_mean,rmse_std\n")
        for value, n_reps, stats in rows:
            fh.write(f"{args.axis},{value},{n_reps},"
                     f"{stats['mae'][0]!r},{stats['mae'][1]!r},"
                     f"{stats['mre'][0]!r},{stats['mre'][1]!r},"
                     f"{stats['rmse'][0]!r},{stats['rmse'][1]!r}\n")
    with open(out_dir / "runs.csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(run_lines) + "\n")
    return EXIT_OK


def cmd_synthetic(args) -> int:
    gen_rank = args.gen_rank
    rank = args.rank if args.rank is not None else gen_rank
    heads = args.heads if args.heads is not None else rank[0]
    loops = args.loops if args.loops is not None else 2
    dropout = args.dropout if args.dropout is not None else 0.0
    shape = TensorShape(*args.shape)
    spec = GeneratorSpec(shape=shape, ranks=tuple(gen_rank), density=args.density,
                         noise=args.noise, seed=args.seed)
    tensor = generate(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.save_data is not None:
        save_entries(args.save_data, tensor)
    ds = split(tensor, args.split, args.seed)
    if min(len(ds.train), len(ds.valid), len(ds.test)) == 0:
        raise DataError(
            f"synthetic split has an empty part (density {args.density}, "
            f"ratios {args.split}); raise the density or adjust the ratios")
    norm = preprocess.fit(ds.train)
    train_mean = float(ds.train.values.mean())
    baseline_rmse = rmse_metric(ds.test.values, np.full(len(ds.test), train_mean))
    kinds = [k.strip() for k in args.models.split(",") if k.strip()]
    for k in kinds:
        if k not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {k!r}; expected from {MODEL_KINDS}")
    pairs = [
        ("command", "synthetic"),
        ("generator.shape", shape.astuple()),
        ("generator.ranks", tuple(gen_rank)),
        ("generator.density", args.density),
        ("generator.noise", args.noise),
        ("generator.seed", args.seed),
        ("generator.entries", len(tensor)),
        ("split.ratios", ds.ratios),
        ("baseline.train_mean", train_mean),
        ("baseline.test_rmse", baseline_rmse),
    ]
    print(f"[synthetic] {len(tensor)} entries, baseline test rmse={baseline_rmse:.6g}")
    for kind in kinds:
        P, Q, R = rank
        model_config = ModelConfig(
            P=P, Q=Q, R=R, heads=heads, loops=loops, dropout=dropout,
            seed=args.seed, score_axis=args.score_axis,
            dropout_position=args.dropout_position,
            share_blocks=args.share_blocks, chunked=args.chunked)
        train_config = train_config_from_args(args, args.seed)
        started = time.perf_counter()
        params, trace = training.fit(kind, ds, model_config, train_config, norm)
        wall = time.perf_counter() - started
        report = training.evaluate(params, kind, model_config, ds.test, norm)
        trace.to_csv(out_dir / f"{kind}_trace.csv")
        save_checkpoint(out_dir / f"{kind}_checkpoint.npz", kind, params,
                        model_config, norm, shape)
        pairs += [(f"{kind}.test.mae", report.mae), (f"{kind}.test.mre", report.mre),
                  (f"{kind}.test.rmse", report.rmse),
                  (f"{kind}.epochs", len(trace)), (f"{kind}.wall_seconds", wall)]
        print(f"[synthetic {kind}] test mae={report.mae:.6g} mre={report.mre:.6g} "
              f"rmse={report.rmse:.6g} ({len(trace)} epochs, {wall:.1f}s)")
    write_report(out_dir / "report.txt", pairs)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msntucf",
        description="Sparse 3-mode tensor completion with attention-augmented "
                    "neural Tucker factorization")
    sub = parser.add_subparsers(dest="command", required=True)

    data_flags = argparse.ArgumentParser(add_help=False)
    data_flags.add_argument("--data", help="observed-entry text file")
    data_flags.add_argument("--shape", type=parse_ints3, metavar="I,J,K",
                            help="tensor mode sizes")
    data_flags.add_argument("--index-base", type=int, choices=(0, 1), default=0)
    data_flags.add_argument("--split", type=parse_split_spec, default=(0.05, 0.15, 0.80),
                            metavar="a,b,c|p:q:r", help="train/valid/test ratios")
    data_flags.add_argument("--seed", type=int, default=0)
    data_flags.add_argument("--config", help="flat key=value config file; flags override")

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--model", choices=MODEL_KINDS, default="msntucf")
    model_flags.add_argument("--rank", type=parse_ints3, default=(5, 5, 5), metavar="P,Q,R")
    model_flags.add_argument("--heads", type=int, default=25)
    model_flags.add_argument("--loops", type=int, default=4)
    model_flags.add_argument("--dropout", type=float, default=0.1)
    model_flags.add_argument("--score-axis", choices=("row", "col"), default="row")
    model_flags.add_argument("--dropout-position", choices=("post", "pre"), default="post")
    model_flags.add_argument("--share-blocks", action=argparse.BooleanOptionalAction,
                             default=False)
    model_flags.add_argument("--chunked", action=argparse.BooleanOptionalAction,
                             default=False)

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--lr", type=float, default=0.01)
    train_flags.add_argument("--batch-size", type=int, default=64)
    train_flags.add_argument("--epochs", type=int, default=100)
    train_flags.add_argument("--patience", type=int, default=10)
    train_flags.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    train_flags.add_argument("--loss-mean", action=argparse.BooleanOptionalAction,
                             default=False)
    train_flags.add_argument("--out", default="msntucf_out")
    train_flags.add_argument("--reps", type=int, default=1)

    p_train = sub.add_parser("train", parents=[data_flags, model_flags, train_flags],
                             help="train a model and evaluate the test split")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", parents=[data_flags],
                            help="evaluate a checkpoint on a split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--on", choices=("train", "valid", "test"), default="test")
    p_eval.add_argument("--dropout", type=float, default=None,
                        help="rejected if > 0: evaluation is dropout-free")
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", parents=[data_flags, model_flags, train_flags],
                             help="train over a range of head or loop counts")
    p_sweep.add_argument("--axis", choices=("heads", "loops"), required=True)
    p_sweep.add_argument("--values", type=parse_int_list, required=True,
                         metavar="v1,v2,...")
    p_sweep.set_defaults(func=cmd_sweep)

    p_syn = sub.add_parser("synthetic", parents=[data_flags, model_flags, train_flags],
                           help="generate a low-rank tensor and compare models on it")
    p_syn.add_argument("--gen-rank", type=parse_ints3, default=(3, 3, 3), metavar="P,Q,R")
    p_syn.add_argument("--density", type=float, default=0.1)
    p_syn.add_argument("--noise", type=float, default=0.0)
    p_syn.add_argument("--models", default="msntucf,neutucf",
                       help="comma-separated list of model kinds to run")
    p_syn.add_argument("--save-data", default=None,
                       help="also write the generated entries to this file")
    p_syn.set_defaults(func=cmd_synthetic, shape=(20, 20, 10), split=(0.7, 0.1, 0.2),
                       rank=None, heads=None, loops=None, dropout=None)
    return parser


def _inject_config_tokens(argv: list[str]) -> list[str]:
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        return argv  # let argparse report the missing value
    tokens = read_config_file(argv[at + 1])
    # file tokens go right after the subcommand so explicit flags win
    return argv[:1] + tokens + argv[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and not argv[0].startswith("-"):
            argv = _inject_config_tokens(argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
