"""Command-line entry point.

Settings are resolved in three layers: built-in defaults, then the JSON file
given with ``--config``, then explicit command-line flags. Every command that
writes an output directory also writes ``manifest.json`` there.

Exit codes: 0 ok, 2 usage error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

from .audit import AuditThresholds, UsageError, format_table, leak_audit, report_render, write_summary
from .core import DataError, InvalidRange, dataset_stats
from .expansion import MaskPolicy, dump_expanded, expand
from .ingestion import (
    CsvSchema,
    SplitPlan,
    dataset_hash,
    load_prepared,
    parse_csv,
    save_prepared,
    split_students,
    window_questions,
)
from .models import ConfigError, ModelConfig, load_checkpoint, parse_flags
from .synthetic import PlantedModel, duplicate_kcs, generate_planted
from .train_eval import Divergence, TrainConfig, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


# --------------------------------------------------------------------------
# manifest


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, timeout=10, cwd=Path(__file__).parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: list[str]
    config: dict
    dataset_hash: str | None
    seed: int | None
    git_describe: str = field(default_factory=git_describe)
    started: str = field(default_factory=_now)
    finished: str | None = None

    def write(self, out_dir) -> Path:
        self.finished = _now()
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=1))
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        return cls(**json.loads(path.read_text()))


# --------------------------------------------------------------------------
# config layering


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})")
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be an object")
    return data


def _pick(cls, data: dict) -> dict:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in data.items() if k in names}


def _overrides(args, mapping: dict) -> dict:
    """Flags the user actually gave (argparse defaults are None)."""
    return {key: getattr(args, dest) for dest, key in mapping.items() if getattr(args, dest, None) is not None}


TRAIN_FLAGS = {"lr": "lr", "batch_size": "batch_size", "epochs": "max_epochs", "patience": "patience",
               "seed": "seed", "max_questions": "max_questions", "grad_clip": "grad_clip",
               "val_all_in_one": "val_all_in_one"}
MODEL_FLAGS = {"d_model": "d_model", "n_heads": "n_heads", "n_layers": "n_layers", "dropout": "dropout"}
SPLIT_FLAGS = {"test_fraction": "test_fraction", "n_folds": "n_folds", "split_seed": "seed"}


def resolve_train_settings(args) -> tuple[TrainConfig, dict, SplitPlan]:
    cfg = _load_config(args.config)
    train_d = {**_pick(TrainConfig, cfg.get("train", cfg)), **_overrides(args, TRAIN_FLAGS)}
    model_d = {**cfg.get("model", {}), **_overrides(args, MODEL_FLAGS)}
    split_d = {**cfg.get("split", {}), **_overrides(args, SPLIT_FLAGS)}
    tcfg = TrainConfig.from_dict(train_d)
    split_d.setdefault("seed", tcfg.seed)
    return tcfg, model_d, SplitPlan(**_pick(SplitPlan, split_d))


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with optional 'train', 'model' and 'split' sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--max-questions", type=int)
    p.add_argument("--val-all-in-one", action="store_const", const=True)
    p.add_argument("--d-model", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--n-layers", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--n-folds", type=int)
    p.add_argument("--split-seed", type=int)


# --------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    schema = CsvSchema.from_json(args.schema) if args.schema else CsvSchema()
    if args.kc_delimiter is not None:
        schema.kc_delimiter = args.kc_delimiter
    log_ = parse_csv(args.csv, schema)
    save_prepared(log_, args.out)
    RunManifest(args.argv, {"csv": str(args.csv), "schema": asdict(schema)}, dataset_hash(args.out), None
                ).write(args.out)
    print(json.dumps(dataset_stats(log_).as_row()))
    return EXIT_OK


def cmd_stats(args) -> int:
    row = dataset_stats(load_prepared(args.data)).as_row()
    if args.json:
        print(json.dumps(row))
    else:
        w = csv.writer(sys.stdout)
        w.writerow(row.keys())
        w.writerow(row.values())
    return EXIT_OK


def cmd_synth_dup(args) -> int:
    out = duplicate_kcs(load_prepared(args.data))
    save_prepared(out, args.out)
    RunManifest(args.argv, {"source": str(args.data), "source_hash": dataset_hash(args.data)},
                dataset_hash(args.out), None).write(args.out)
    print(json.dumps(dataset_stats(out).as_row()))
    return EXIT_OK


PLANTED_FLAGS = {"guess": "guess", "slip": "slip", "decay": "decay", "gain_mean": "gain_mean",
                 "ability_std": "ability_std", "locality": "locality", "seed": "seed"}


def cmd_synth_planted(args) -> int:
    cfg = _load_config(args.config)
    gen = {"n_students": 500, "n_questions": 400, "n_kcs": 30, "kcs_per_question": [2, 3],
           **{k: cfg[k] for k in ("n_students", "n_questions", "n_kcs", "kcs_per_question") if k in cfg}}
    gen.update(_overrides(args, {"students": "n_students", "questions": "n_questions", "kcs": "n_kcs"}))
    if args.kcs_per_question:
        gen["kcs_per_question"] = [int(x) for x in args.kcs_per_question.split(",")]
    model_d = {**_pick(PlantedModel, cfg.get("model", cfg)), **_overrides(args, PLANTED_FLAGS)}
    if "questions_per_student" in model_d:
        model_d["questions_per_student"] = tuple(model_d["questions_per_student"])
    model = PlantedModel(**model_d)
    lo, hi = gen["kcs_per_question"][0], gen["kcs_per_question"][-1]
    out = generate_planted(gen["n_students"], gen["n_questions"], gen["n_kcs"], (lo, hi), model)
    save_prepared(out, args.out)
    RunManifest(args.argv, {"generator": gen, "model": asdict(model)}, dataset_hash(args.out),
                model.seed).write(args.out)
    print(json.dumps(dataset_stats(out).as_row()))
    return EXIT_OK


POLICIES = {"none": MaskPolicy.NONE, "mask": MaskPolicy.MASK_LABEL, "ml": MaskPolicy.MASK_LABEL,
            "ad": MaskPolicy.AUTOREGRESSIVE}


def cmd_expand(args) -> int:
    log_ = load_prepared(args.data)
    if args.max_questions:
        log_ = window_questions(log_, args.max_questions)
    dump_expanded(expand(log_, POLICIES[args.policy]), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    tcfg, model_d, plan = resolve_train_settings(args)
    log_ = load_prepared(args.data)
    flags = parse_flags(args.flags)
    config = ModelConfig(args.model, log_.n_kcs, log_.n_questions, **{**model_d, **flags})
    folds, test = split_students(log_, plan)
    only = [int(x) for x in args.folds.split(",")] if args.folds else None
    if only is not None and any(not 0 <= k < len(folds) for k in only):
        raise UsageError(f"--folds {args.folds} outside 0..{len(folds) - 1}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # the split travels with the run so eval can find the held-out students
    (out / "split.json").write_text(json.dumps({"plan": asdict(plan), "test": list(test),
                                                "folds": [asdict(f) for f in folds]}))
    manifest = RunManifest(args.argv, {"model": config.to_dict(), "train": tcfg.to_dict(), "split": asdict(plan),
                                      "data": str(Path(args.data).resolve()), "folds": only},
                           dataset_hash(args.data), tcfg.seed)
    t0 = time.perf_counter()
    results = train(config, log_, folds, tcfg, out_dir=out, only_folds=only)
    summary = [{"fold": r.fold, "best_epoch": r.best_epoch, "best_val_auc": r.best_val,
                "checkpoint": str(r.checkpoint)} for r in results]
    (out / "train_summary.json").write_text(json.dumps({"model": config.name, "folds": summary,
                                                        "seconds": time.perf_counter() - t0}, indent=1))
    manifest.write(out)
    for s in summary:
        print(f"{config.name} fold {s['fold']}: best val AUC {s['best_val_auc']:.4f} (epoch {s['best_epoch']})")
    return EXIT_OK


def _eval_students(ckpt: Path, meta: dict, split: str, log_):
    if split == "all":
        return log_
    split_file = ckpt.parent / "split.json"
    if not split_file.exists():
        raise UsageError(f"no split.json next to {ckpt}; use --split all")
    info = json.loads(split_file.read_text())
    if split == "test":
        return log_.subset(info["test"])
    return log_.subset(info["folds"][int(meta.get("fold", 0))]["val"])


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    model, meta = load_checkpoint(ckpt)
    data = args.data
    if data is None:
        run_manifest = ckpt.parent / "manifest.json"
        if not run_manifest.exists():
            raise UsageError("--data is required when the checkpoint has no run manifest")
        data = RunManifest.read(run_manifest).config["data"]
    log_ = _eval_students(ckpt, meta, args.split, load_prepared(data))
    max_q = meta.get("train", {}).get("max_questions", 150)
    log_ = window_questions(log_, max_q)
    report = evaluate(model, log_, args.protocol, fold=meta.get("fold"), dataset=args.dataset_name or Path(data).name)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    summary = report.summary()
    out.with_suffix(".json").write_text(json.dumps(summary, indent=1))
    RunManifest(args.argv, {"checkpoint": str(ckpt), "protocol": args.protocol, "split": args.split,
                           "data": str(data)}, dataset_hash(data), None).write(out.parent)
    print(f"{report.model} {report.protocol} AUC {report.auc:.4f} on {len(report)} rows")
    return EXIT_OK


def cmd_leak_audit(args) -> int:
    tcfg, model_d, plan = resolve_train_settings(args)
    log_ = load_prepared(args.data)
    th = AuditThresholds(args.inflation, args.drop, args.flat)
    rep = leak_audit(log_, args.model, tcfg, plan, fold=args.fold, thresholds=th, **model_d)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "audit.json").write_text(json.dumps(rep.to_dict(), indent=1))
    RunManifest(args.argv, {"model": args.model, "train": tcfg.to_dict(), "split": asdict(plan),
                           "model_overrides": model_d, "thresholds": asdict(th), "fold": args.fold},
                dataset_hash(args.data), tcfg.seed).write(out)
    print(rep.format_grid())
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for p in args.inputs:
        data = json.loads(Path(p).read_text())
        rows.extend(data if isinstance(data, list) else [data])
    table = report_render(rows)
    write_summary(table, args.out)
    RunManifest(args.argv, {"inputs": [str(p) for p in args.inputs]}, None, None).write(args.out)
    print(format_table(table))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="leakfree-kt", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="parse a raw interaction CSV into a prepared dataset directory")
    s.add_argument("--input", "--csv", dest="csv", required=True)
    s.add_argument("--schema", help="JSON column mapping (see CsvSchema)")
    s.add_argument("--kc-delimiter")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("stats", help="print dataset statistics")
    s.add_argument("--data", required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)

    synth = sub.add_parser("synth", help="synthetic datasets").add_subparsers(dest="kind", required=True)
    s = synth.add_parser("dup", help="duplicate every KC into two perfectly correlated copies")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_dup)
    s = synth.add_parser("planted", help="sample from the planted mastery process")
    s.add_argument("--config")
    s.add_argument("--students", type=int)
    s.add_argument("--questions", type=int)
    s.add_argument("--kcs", type=int)
    s.add_argument("--kcs-per-question", help="lo,hi")
    for name in ("guess", "slip", "decay", "gain-mean", "ability-std", "locality"):
        s.add_argument(f"--{name}", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_planted)

    s = sub.add_parser("expand", help="write the KC-expanded sequence as CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--policy", choices=sorted(POLICIES), default="none")
    s.add_argument("--max-questions", type=int)
    s.add_argument("--dump", "--out", dest="out", required=True)
    s.set_defaults(func=cmd_expand)

    s = sub.add_parser("train", help="cross-validated training")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True, help="dkt, dkt+, sakt or akt")
    s.add_argument("--flags", default="", help="e.g. ml,recency=learnable")
    s.add_argument("--folds", help="comma separated fold indices (default: all)")
    s.add_argument("--out", required=True)
    _add_train_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint with one protocol")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--protocol", required=True, choices=["one-by-one", "all-in-one", "one_by_one", "all_in_one"])
    s.add_argument("--data", help="prepared dataset (default: the one recorded by train)")
    s.add_argument("--split", choices=["test", "val", "all"], default="test")
    s.add_argument("--dataset-name")
    s.add_argument("--out", required=True, help="report CSV; a JSON summary is written beside it")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("leak-audit", help="2x2 original/duplicated x flag-free/-ML audit")
    s.add_argument("--data", required=True)
    s.add_argument("--model", default="dkt")
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--inflation", type=float, default=AuditThresholds.inflation)
    s.add_argument("--drop", type=float, default=AuditThresholds.drop)
    s.add_argument("--flat", type=float, default=AuditThresholds.flat)
    s.add_argument("--out", required=True)
    _add_train_flags(s)
    s.set_defaults(func=cmd_leak_audit)

    s = sub.add_parser("report", help="mean ± std tables from eval JSON summaries")
    s.add_argument("inputs", nargs="*")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, InvalidRange) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Divergence as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
