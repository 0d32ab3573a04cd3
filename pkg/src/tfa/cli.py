"""Command-line front end.

Subcommands: ``synth`` (generate a synthetic task stream), ``train-align``
(train and checkpoint the alignment scorer), ``run`` (full incremental
experiment), ``ablate`` (sweep alpha/beta/cache-size), ``report`` (render a
report file as CSV or markdown).

Exit codes: 0 success, 2 configuration error, 3 I/O or parse error,
4 semantic validation error. Seeds resolve as flag > config file >
``TFA_SEED`` environment variable > 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import metrics
from .alignment import TrainConfig, load_alignment, save_alignment, train_alignment, init_relation
from .embeddings import (
    load_embeddings,
    load_prototypes,
    merge_embedding_sets,
    save_embeddings,
    save_prototypes,
)
from .errors import ConfigError, FormatError, TfaError, ValidationError
from .protocol import ExperimentConfig, run_experiment
from .synth import SynthConfig, generate_synthetic
from .metrics import emit_report

_SWEEP_AXES = ("alpha", "beta", "cache-size")


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _env_seed() -> int | None:
    raw = os.environ.get("TFA_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"TFA_SEED must be an integer, got {raw!r}") from e


def _resolve_seed(flag: int | None, cfg_seed: int | None) -> int:
    if flag is not None:
        return flag
    if cfg_seed is not None:
        return int(cfg_seed)
    env = _env_seed()
    return 0 if env is None else env


def _task_files(tasks_dir) -> list[Path]:
    files = sorted(Path(tasks_dir).glob("task_*.emb"))
    if not files:
        raise FormatError(f"no task_*.emb files under {tasks_dir}")
    return files


def _load_task_dir(tasks_dir):
    data = merge_embedding_sets([load_embeddings(p) for p in _task_files(tasks_dir)])
    protos = load_prototypes(Path(tasks_dir) / "prototypes.emb")
    return data, protos


# ---- subcommands ----


def cmd_synth(args) -> int:
    cfg_dict = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    elif "seed" not in cfg_dict:
        cfg_dict["seed"] = _resolve_seed(None, None)
    cfg = SynthConfig.from_dict(cfg_dict)
    data, protos = generate_synthetic(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"synthetic stream: dim={cfg.dim} seed={cfg.seed}")
    for t in data.task_ids():
        sub = data.subset(data.indices(task=t))
        path = out / f"task_{t:03d}.emb"
        save_embeddings(sub, path)
        n_train = len(sub.indices(split="train"))
        n_test = len(sub.indices(split="test"))
        n_cls = len(sub.label_space(t))
        print(f"  wrote {path.name}: task {t}, {n_cls} classes, "
              f"{n_train} train + {n_test} test records")
    save_prototypes(protos, out / "prototypes.emb")
    print(f"  wrote prototypes.emb: {len(protos)} prototypes")
    return 0


def cmd_train_align(args) -> int:
    cfg_dict = _load_json(args.config) if args.config else {}
    align_dict = dict(cfg_dict.get("align", {}))
    for key, flag in (("epochs", args.epochs), ("batch_size", args.batch_size),
                      ("lr", args.lr)):
        if flag is not None:
            align_dict[key] = flag
    align_dict["seed"] = _resolve_seed(args.seed, align_dict.get("seed"))
    if "hidden" in align_dict:
        align_dict["hidden"] = tuple(align_dict["hidden"])
    try:
        hyper = TrainConfig(**align_dict)
    except TypeError as e:
        raise ConfigError(f"bad alignment config: {e}") from e

    data = load_embeddings(args.base)
    non_base = [int(t) for t in data.task_ids() if int(t) != 0]
    if non_base:
        raise ValidationError(f"base file contains non-base tasks {non_base}")
    train = data.subset(data.indices(task=0, split="train"))
    protos = load_prototypes(args.protos)
    base_ids = set(int(y) for y in train.labels)
    protos0 = [p for p in protos if p.class_id in base_ids]
    params = init_relation(data.dim, hyper.seed, hyper.hidden, hyper.slope)
    trained, history = train_alignment(params, train, protos0, hyper)
    save_alignment(trained, args.out, train_config=hyper,
                   final_loss=history[-1], loss_history=history)
    print(f"trained {trained.n_params()} parameters on {len(train)} samples; "
          f"final epoch loss {history[-1]:.6f}")
    print(f"wrote {args.out}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    cfg_dict = _load_json(args.config) if args.config else {}
    for key, flag in (("alpha", args.alpha), ("beta", args.beta),
                      ("capacity", args.capacity), ("shots", args.shots),
                      ("novel_capacity", args.novel_capacity),
                      ("base_update_policy", args.base_update_policy),
                      ("trials", args.trials)):
        if flag is not None:
            cfg_dict[key] = flag
    cfg_dict["seed"] = _resolve_seed(args.seed, cfg_dict.get("seed"))
    return ExperimentConfig.from_dict(cfg_dict)


def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    data, protos = _load_task_dir(args.tasks)
    alignment, _meta = load_alignment(args.align)
    report = run_experiment(cfg, data, protos, alignment=alignment)
    doc = metrics.report_json(report)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(doc)
    last = report.aggregate[-1]
    hm = "n/a" if report.mean_harmonic is None else f"{report.mean_harmonic:.2f}"
    tag = " [no-cache baseline]" if report.flags.get("no_cache_baseline") else ""
    print(f"{len(report.trials)} trials, {len(report.aggregate)} sessions{tag}")
    print(f"final accuracy {last.accuracy_mean:.2f}, delta {report.delta:.2f}, "
          f"mean harmonic {hm}")
    print(f"wrote {args.out}")
    return 0


def _parse_values(raw: str, axis: str) -> list[float]:
    parts = [p for p in (s.strip() for s in raw.split(",")) if p]
    if not parts:
        raise ConfigError("empty sweep value list")
    try:
        vals = [float(p) for p in parts]
    except ValueError as e:
        raise ConfigError(f"bad sweep value in {raw!r}") from e
    if axis == "cache-size":
        for v in vals:
            if v != int(v) or v < 1:
                raise ConfigError(f"cache-size values must be positive integers, got {v}")
    return vals


def cmd_ablate(args) -> int:
    values = _parse_values(args.values, args.sweep)
    cfg = _experiment_config(args)
    data, protos = _load_task_dir(args.tasks)
    alignment, _meta = load_alignment(args.align)
    reports = []
    for v in values:
        if args.sweep == "alpha":
            cfg_v = ExperimentConfig.from_dict({**cfg.to_dict(), "alpha": v})
        elif args.sweep == "beta":
            cfg_v = ExperimentConfig.from_dict({**cfg.to_dict(), "beta": v})
        else:
            cfg_v = ExperimentConfig.from_dict(
                {**cfg.to_dict(), "capacity": int(v),
                 "novel_capacity": min(int(v), cfg.shots)})
        reports.append(run_experiment(cfg_v, data, protos, alignment=alignment))

    def fmt(x):
        return f"{x:g}" if x == int(x) else f"{x}"

    label = {"alpha": "residual ratio alpha", "beta": "sharpness ratio beta",
             "cache-size": "cache size"}[args.sweep]
    hms = [r.mean_harmonic for r in reports]
    print(f"| {label} | " + " | ".join(fmt(v) for v in values) + " |")
    print("|" + "---|" * (len(values) + 1))
    print("| mean harmonic accuracy | "
          + " | ".join("n/a" if h is None else f"{h:.1f}" for h in hms) + " |")
    if args.out:
        combined = {
            "sweep": args.sweep,
            "values": values,
            "mean_harmonic": hms,
            "delta": [r.delta for r in reports],
            "reports": [r.to_dict() for r in reports],
        }
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(metrics._round_floats(combined), f, sort_keys=True, indent=2)
            f.write("\n")
        print(f"wrote {args.out}")
    return 0


def cmd_report(args) -> int:
    raw = _load_json(getattr(args, "in"))
    try:
        report = metrics.ExperimentReport.from_dict(raw)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"not a report file: {e}") from e
    sys.stdout.write(emit_report(report, args.format))
    return 0


# ---- parser ----


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfa",
        description="Training-free dual-cache adaptor experiments on "
                    "precomputed embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic task stream")
    p.add_argument("--config", help="SynthConfig JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="generator seed (default: 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-align", help="train the alignment scorer on the base task")
    p.add_argument("--base", required=True, help="base-task EMB1 file")
    p.add_argument("--protos", required=True, help="prototype EMB1 file")
    p.add_argument("--config", help="experiment JSON; its 'align' section is used")
    p.add_argument("--out", required=True, help="output ALN1 checkpoint")
    p.add_argument("--epochs", type=int, help="training epochs (default: 10)")
    p.add_argument("--batch-size", type=int, help="minibatch size (default: 25)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default: 0.001)")
    p.add_argument("--seed", type=int, help="init/shuffle seed (default: 0)")
    p.set_defaults(func=cmd_train_align)

    def add_run_flags(p):
        p.add_argument("--tasks", required=True, help="directory of task_*.emb + prototypes.emb")
        p.add_argument("--align", required=True, help="ALN1 checkpoint")
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--alpha", type=float, help="residual ratio alpha (default: 2.0)")
        p.add_argument("--beta", type=float, help="affinity sharpness beta (default: 2.0)")
        p.add_argument("--capacity", type=int, help="base cache capacity per class (default: 5)")
        p.add_argument("--shots", type=int, help="novel shots K per class (default: 5)")
        p.add_argument("--novel-capacity", type=int, dest="novel_capacity",
                       help="novel cache entries per class (default: K)")
        p.add_argument("--base-update-policy", dest="base_update_policy",
                       choices=["off", "session0_only", "always"],
                       help="when the base cache admits test samples (default: session0_only)")
        p.add_argument("--trials", type=int, help="number of seeded trials (default: 10)")
        p.add_argument("--seed", type=int, help="experiment seed (default: 0)")

    p = sub.add_parser("run", help="run the incremental experiment")
    add_run_flags(p)
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="sweep one hyperparameter")
    add_run_flags(p)
    p.add_argument("--sweep", required=True, choices=list(_SWEEP_AXES),
                   help="axis to sweep")
    p.add_argument("--values", required=True,
                   help="comma-separated sweep values, e.g. 0,0.5,1,2,3")
    p.add_argument("--out", help="optional combined report JSON")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render a report file")
    p.add_argument("--in", required=True, help="report JSON produced by run")
    p.add_argument("--format", required=True, choices=["csv", "md"])
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except TfaError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
