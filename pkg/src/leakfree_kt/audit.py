"""End-to-end leakage audit and fold-summary tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import InteractionLog
from .ingestion import SplitPlan, split_students, window_questions
from .models import ModelConfig
from .synthetic import duplicate_kcs
from .train_eval import EvalReport, TrainConfig, evaluate_all_in_one, train_fold


class UsageError(ValueError):
    pass


@dataclass
class AuditThresholds:
    # flag-free one_by_one val AUC minus all_in_one test AUC
    inflation: float = 0.02
    # flag-free all_in_one drop from original to duplicated data
    drop: float = 0.02
    # largest |change| of the -ML twin that still counts as flat
    flat: float = 0.015


@dataclass
class AuditReport:
    family: str
    grid: dict            # {(model_name, dataset): all_in_one test AUC}
    val_auc: dict         # {(model_name, dataset): best one_by_one val AUC}
    curves: dict          # {(model_name, dataset): per-epoch curve}
    thresholds: AuditThresholds
    free_name: str = ""
    ml_name: str = ""
    checks: dict = field(default_factory=dict)

    @property
    def leak(self) -> bool:
        return bool(self.checks.get("inflation") and self.checks.get("drop") and self.checks.get("flat"))

    def to_dict(self) -> dict:
        def keyed(d):
            return {f"{m}|{ds}": v for (m, ds), v in d.items()}
        return {"family": self.family, "leak": self.leak, "checks": self.checks,
                "thresholds": asdict(self.thresholds), "all_in_one_test_auc": keyed(self.grid),
                "one_by_one_val_auc": keyed(self.val_auc), "curves": keyed(self.curves)}

    def format_grid(self) -> str:
        lines = [f"{'':12s}{'original':>10s}{'duplicated':>12s}"]
        for name in (self.free_name, self.ml_name):
            lines.append(f"{name:12s}{self.grid[name, 'original']:10.4f}{self.grid[name, 'duplicated']:12.4f}")
        lines.append("LEAK" if self.leak else "no leak flagged")
        return "\n".join(lines)


def leak_audit(log_: InteractionLog, family: str = "dkt", tcfg: TrainConfig = TrainConfig(),
               plan: SplitPlan = SplitPlan(), fold: int = 0,
               thresholds: AuditThresholds = AuditThresholds(), **model_kw) -> AuditReport:
    """Train the flag-free model and its -ML twin on ``log_`` and on
    ``duplicate_kcs(log_)``; compare all-in-one test AUCs.

    The duplicated log keeps students and responses, so both datasets share
    one split.
    """
    folds, test = split_students(log_, plan)
    f = folds[fold]
    grid, val, curves = {}, {}, {}
    names = {}
    for ds_name, data in (("original", log_), ("duplicated", duplicate_kcs(log_))):
        def part(ids):
            return window_questions(data.subset(ids), tcfg.max_questions, tcfg.truncate_last)

        tr, va, te = part(f.train), part(f.val) if f.val else None, part(test)
        for ml in (False, True):
            cfg = ModelConfig(family, data.n_kcs, data.n_questions, ml=ml, **model_kw)
            names[ml] = cfg.name
            res = train_fold(cfg, tr, va, tcfg, fold=fold)
            key = (cfg.name, ds_name)
            grid[key] = evaluate_all_in_one(res.model, te, batch_size=tcfg.eval_batch_size).auc
            val[key] = res.best_val
            curves[key] = res.curve
    free, ml = names[False], names[True]
    gap = val[free, "original"] - grid[free, "original"]
    drop = grid[free, "original"] - grid[free, "duplicated"]
    shift = abs(grid[ml, "original"] - grid[ml, "duplicated"])
    checks = {"inflation": bool(gap > thresholds.inflation), "inflation_value": gap,
              "drop": bool(drop > thresholds.drop), "drop_value": drop,
              "flat": bool(shift <= thresholds.flat), "flat_value": shift}
    return AuditReport(family, grid, val, curves, thresholds, free, ml, checks)


# --------------------------------------------------------------------------
# summary tables


def _as_row(r) -> dict:
    if isinstance(r, EvalReport):
        return r.summary()
    return dict(r)


def report_render(reports) -> list[dict]:
    """Mean and population std (ddof=0) of AUC per (model, dataset, protocol)."""
    rows = [_as_row(r) for r in reports]
    if not rows:
        raise UsageError("report_render needs at least one report")
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.get("model", ""), r.get("dataset", ""), r["protocol"]), []).append(float(r["auc"]))
    out = []
    for (model, dataset, protocol), aucs in sorted(groups.items()):
        a = np.asarray(aucs)
        out.append({"model": model, "dataset": dataset, "protocol": protocol, "n": len(a),
                    "auc_mean": float(a.mean()), "auc_std": float(a.std())})
    return out


def write_summary(rows: list[dict], out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "summary.csv", out / "summary.json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "dataset", "protocol", "n", "auc_mean", "auc_std"])
        w.writeheader()
        w.writerows(rows)
    json_path.write_text(json.dumps(rows, indent=1))
    return csv_path, json_path


def format_table(rows: list[dict]) -> str:
    """Plain-text table with ``mean ± std`` cells."""
    lines = []
    for r in rows:
        cell = "nan" if math.isnan(r["auc_mean"]) else f"{r['auc_mean']:.4f} ± {r['auc_std']:.4f}"
        lines.append(f"{r['model']:16s} {r['dataset']:14s} {r['protocol']:11s} {cell}  (n={r['n']})")
    return "\n".join(lines)


__all__ = ["AuditReport", "AuditThresholds", "UsageError", "format_table", "leak_audit", "report_render",
           "write_summary"]
