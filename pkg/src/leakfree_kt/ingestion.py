"""Raw CSV parsing, prepared-dataset I/O, student splits and question windowing."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    DataError,
    EmptyKcList,
    InteractionLog,
    KcMap,
    MissingColumn,
    NonBinaryResponse,
    StudentSequence,
    TooFewStudents,
    canonical_kcs,
    dataset_stats,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class CsvSchema:
    """Column mapping for a raw interaction CSV.

    Column entries are header names when ``has_header`` is true, otherwise
    zero-based column indices. ``order`` may be None to use file row order.
    """

    student: str | int = "student"
    question: str | int = "question"
    kcs: str | int = "kcs"
    correct: str | int = "correct"
    order: str | int | None = None
    kc_delimiter: str = "_"
    has_header: bool = True
    merge_duplicate_orders: bool = False

    @classmethod
    def from_json(cls, path) -> "CsvSchema":
        data = json.loads(Path(path).read_text())
        cols = data.pop("columns", {})
        data.update(cols)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown schema fields: {sorted(unknown)}")
        return cls(**data)


def _column_index(header: list[str] | None, col, name: str) -> int:
    if header is None:
        try:
            return int(col)
        except (TypeError, ValueError):
            raise MissingColumn(f"row 1: schema field '{name}' must be a column index without a header")
    if isinstance(col, int):
        return col
    if col not in header:
        raise MissingColumn(f"row 1: column '{col}' ({name}) not found in header {header}")
    return header.index(col)


def parse_csv(path, schema: CsvSchema | None = None) -> InteractionLog:
    """Read raw interactions into a dense-id :class:`InteractionLog`.

    Ids are assigned in first-appearance order. Per-student rows are sorted
    stably by the order key. If a question shows up with different KC
    annotations the union is used.
    """
    schema = schema or CsvSchema()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader) if schema.has_header else None
        fields = {"student": schema.student, "question": schema.question,
                  "kcs": schema.kcs, "correct": schema.correct}
        if schema.order is not None:
            fields["order"] = schema.order
        idx = {k: _column_index(header, v, k) for k, v in fields.items()}

        students: dict[str, int] = {}
        questions: dict[str, int] = {}
        kcs: dict[str, int] = {}
        q_kcs: dict[int, set[int]] = {}
        rows: dict[int, list[tuple]] = {}
        first_row = 2 if header is not None else 1
        for rownum, row in enumerate(reader, start=first_row):
            if not row:
                continue
            if max(idx.values()) >= len(row):
                raise MissingColumn(f"row {rownum}: expected at least {max(idx.values()) + 1} columns")
            raw_correct = row[idx["correct"]].strip()
            try:
                correct = float(raw_correct)
            except ValueError:
                raise NonBinaryResponse(f"row {rownum}: response {raw_correct!r} is not 0/1")
            if correct not in (0.0, 1.0):
                raise NonBinaryResponse(f"row {rownum}: response {raw_correct!r} is not 0/1")
            kc_keys = [k.strip() for k in row[idx["kcs"]].split(schema.kc_delimiter) if k.strip()]
            if not kc_keys:
                raise EmptyKcList(f"row {rownum}: empty KC list")
            s = students.setdefault(row[idx["student"]], len(students))
            q = questions.setdefault(row[idx["question"]], len(questions))
            kc_ids = [kcs.setdefault(k, len(kcs)) for k in kc_keys]
            if len(set(kc_ids)) != len(kc_ids):
                warnings.warn(f"row {rownum}: duplicate KCs {kc_keys} deduplicated")
            prev = q_kcs.get(q)
            if prev is not None and prev != set(kc_ids):
                log.warning("row %d: question %r annotated with differing KCs; using the union",
                            rownum, row[idx["question"]])
            q_kcs.setdefault(q, set()).update(kc_ids)
            if "order" in idx:
                try:
                    order = int(float(row[idx["order"]]))
                except ValueError:
                    raise DataError(f"row {rownum}: order key {row[idx['order']]!r} is not an integer")
            else:
                order = rownum
            rows.setdefault(s, []).append((order, q, int(correct)))

    if not rows:
        raise DataError(f"{path}: no interactions")
    sequences = []
    for s, items in rows.items():
        items.sort(key=lambda t: t[0])
        if schema.merge_duplicate_orders:
            merged = []
            for it in items:
                if merged and merged[-1][0] == it[0] and merged[-1][1] == it[1]:
                    continue
                merged.append(it)
            items = merged
        sequences.append(StudentSequence(s, np.array([i[1] for i in items]),
                                         np.array([i[2] for i in items])))
    kc_map = KcMap(tuple(canonical_kcs(q_kcs[q]) for q in range(len(questions))), len(kcs))
    return InteractionLog(tuple(sequences), kc_map,
                          question_names=tuple(questions), kc_names=tuple(kcs),
                          student_names=tuple(students))


# --------------------------------------------------------------------------
# prepared dataset directory: meta.json, kcmap.csv, interactions.csv


def save_prepared(log_: InteractionLog, out_dir) -> Path:
    """Write a prepared dataset directory. Windows of one student are merged back."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = dataset_stats(log_)
    meta = {
        "format_version": FORMAT_VERSION,
        "n_questions": log_.n_questions,
        "n_kcs": log_.n_kcs,
        "n_students": stats.n_students,
        "stats": stats.as_row(),
        "question_names": list(log_.question_names) if log_.question_names else None,
        "kc_names": list(log_.kc_names) if log_.kc_names else None,
        "student_names": list(log_.student_names) if log_.student_names else None,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    with open(out / "kcmap.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["question_id", "kc_id"])
        for q, kcs in enumerate(log_.kc_map.kcs):
            for c in kcs:
                w.writerow([q, c])
    steps: dict[int, int] = {}
    with open(out / "interactions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["student_id", "step", "question_id", "correct"])
        for seq in log_.sequences:
            start = steps.get(seq.student, 0)
            for i, (q, r) in enumerate(zip(seq.questions.tolist(), seq.responses.tolist())):
                w.writerow([seq.student, start + i, q, r])
            steps[seq.student] = start + len(seq)
    return out


def load_prepared(data_dir) -> InteractionLog:
    d = Path(data_dir)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{d}: not a prepared dataset (meta.json missing)")
    lists: list[list[int]] = [[] for _ in range(meta["n_questions"])]
    with open(d / "kcmap.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            lists[int(row["question_id"])].append(int(row["kc_id"]))
    kc_map = KcMap(tuple(canonical_kcs(l) for l in lists), meta["n_kcs"])
    per_student: dict[int, list[tuple[int, int, int]]] = {}
    with open(d / "interactions.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            per_student.setdefault(int(row["student_id"]), []).append(
                (int(row["step"]), int(row["question_id"]), int(row["correct"])))
    seqs = []
    for s, items in per_student.items():
        items.sort()
        seqs.append(StudentSequence(s, np.array([i[1] for i in items]), np.array([i[2] for i in items])))

    def tup(x):
        return tuple(x) if x is not None else None

    return InteractionLog(tuple(seqs), kc_map, tup(meta.get("question_names")),
                          tup(meta.get("kc_names")), tup(meta.get("student_names")))


def dataset_hash(data_dir) -> str:
    h = hashlib.sha256()
    for name in ("meta.json", "kcmap.csv", "interactions.csv"):
        p = Path(data_dir) / name
        if p.exists():
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# splits and windows


@dataclass(frozen=True)
class SplitPlan:
    test_fraction: float = 0.2
    n_folds: int = 5
    seed: int = 0


@dataclass(frozen=True)
class Fold:
    train: tuple[int, ...]
    val: tuple[int, ...]


def split_students(log_: InteractionLog, plan: SplitPlan = SplitPlan()) -> tuple[list[Fold], tuple[int, ...]]:
    """Split students into a held-out test set and ``n_folds`` CV folds.

    With ``n_folds == 1`` the single fold trains on every non-test student
    and has an empty validation set.
    """
    if plan.n_folds < 1 or not 0.0 <= plan.test_fraction < 1.0:
        raise ValueError(f"invalid split plan {plan}")
    students = np.array(sorted(log_.student_ids))
    need = plan.n_folds + (1 if plan.test_fraction > 0 else 0)
    if len(students) < need:
        raise TooFewStudents(f"{len(students)} students, need at least {need}")
    rng = np.random.default_rng(plan.seed)
    perm = students[rng.permutation(len(students))]
    n_test = int(round(len(perm) * plan.test_fraction))
    test = tuple(sorted(perm[:n_test].tolist()))
    rest = perm[n_test:]
    if plan.n_folds == 1:
        return [Fold(tuple(sorted(rest.tolist())), ())], test
    chunks = np.array_split(rest, plan.n_folds)
    folds = []
    for k in range(plan.n_folds):
        train = np.concatenate([c for j, c in enumerate(chunks) if j != k])
        folds.append(Fold(tuple(sorted(train.tolist())), tuple(sorted(chunks[k].tolist()))))
    return folds, test


def window_questions(log_: InteractionLog, max_questions: int = 150,
                     truncate_last: bool = False) -> InteractionLog:
    """Cut sequences into consecutive windows of at most ``max_questions`` questions.

    With ``truncate_last`` only the final ``max_questions`` questions are kept.
    Windowing works on questions, so it always precedes KC expansion.
    """
    if max_questions < 1:
        raise ValueError("max_questions must be >= 1")
    out = []
    for seq in log_.sequences:
        n = len(seq)
        if n <= max_questions:
            out.append(seq)
        elif truncate_last:
            out.append(StudentSequence(seq.student, seq.questions[-max_questions:],
                                       seq.responses[-max_questions:], seq.window))
        else:
            for w, start in enumerate(range(0, n, max_questions)):
                sl = slice(start, start + max_questions)
                out.append(StudentSequence(seq.student, seq.questions[sl], seq.responses[sl], w))
    return log_.with_sequences(out)
