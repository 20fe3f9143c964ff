"""Domain types: interaction logs, KC maps and dataset statistics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DataError(Exception):
    """Raised for malformed or inconsistent interaction data."""


class MissingColumn(DataError):
    pass


class EmptyKcList(DataError):
    pass


class NonBinaryResponse(DataError):
    pass


class TooFewStudents(DataError):
    pass


class InvalidRange(ValueError):
    pass


def canonical_kcs(kcs: Iterable[int], where: str = "") -> tuple[int, ...]:
    """Sort a KC annotation ascending and drop duplicates (with a warning)."""
    raw = [int(c) for c in kcs]
    out = tuple(sorted(set(raw)))
    if len(out) != len(raw):
        warnings.warn(f"duplicate KC ids dropped{' in ' + where if where else ''}: {raw}")
    return out


@dataclass(frozen=True)
class KcMap:
    """Per-question KC lists, ascending and duplicate-free."""

    kcs: tuple[tuple[int, ...], ...]
    n_kcs: int

    def __post_init__(self):
        for q, lst in enumerate(self.kcs):
            if len(lst) == 0:
                raise EmptyKcList(f"question {q} has no KCs")
            if list(lst) != sorted(set(lst)):
                raise DataError(f"question {q} KC list is not canonical: {lst}")
            if lst[0] < 0 or lst[-1] >= self.n_kcs:
                raise DataError(f"question {q} references KC outside [0, {self.n_kcs})")

    @classmethod
    def from_lists(cls, lists: Sequence[Iterable[int]], n_kcs: int | None = None) -> "KcMap":
        canon = tuple(canonical_kcs(lst, where=f"question {q}") for q, lst in enumerate(lists))
        if n_kcs is None:
            n_kcs = 1 + max(max(lst) for lst in canon) if canon else 0
        return cls(canon, n_kcs)

    def __len__(self) -> int:
        return len(self.kcs)

    def __getitem__(self, q: int) -> tuple[int, ...]:
        return self.kcs[q]

    @property
    def max_kcs_per_question(self) -> int:
        return max(len(k) for k in self.kcs)


@dataclass(frozen=True, eq=False)
class StudentSequence:
    """One student's chronological (question, response) stream.

    Windowing may split a student into several sequences that share
    ``student`` and differ in ``window``.
    """

    student: int
    questions: np.ndarray
    responses: np.ndarray
    window: int = 0

    def __post_init__(self):
        q = np.asarray(self.questions, dtype=np.int64)
        r = np.asarray(self.responses, dtype=np.int64)
        if q.ndim != 1 or q.shape != r.shape:
            raise DataError("questions and responses must be 1-d and equally long")
        if len(q) == 0:
            raise DataError(f"student {self.student} has an empty sequence")
        if not np.isin(r, (0, 1)).all():
            raise NonBinaryResponse(f"student {self.student} has a non-binary response")
        q.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "questions", q)
        object.__setattr__(self, "responses", r)

    def __len__(self) -> int:
        return len(self.questions)

    def __eq__(self, other):
        if not isinstance(other, StudentSequence):
            return NotImplemented
        return (self.student == other.student and self.window == other.window
                and np.array_equal(self.questions, other.questions)
                and np.array_equal(self.responses, other.responses))


@dataclass(frozen=True)
class InteractionLog:
    sequences: tuple[StudentSequence, ...]
    kc_map: KcMap
    question_names: tuple[str, ...] | None = None
    kc_names: tuple[str, ...] | None = None
    student_names: tuple[str, ...] | None = None
    n_students_vocab: int | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        nq = len(self.kc_map)
        for s in self.sequences:
            if s.questions.min() < 0 or s.questions.max() >= nq:
                raise DataError(f"student {s.student} references a question missing from the KC map")

    @property
    def n_questions(self) -> int:
        return len(self.kc_map)

    @property
    def n_kcs(self) -> int:
        return self.kc_map.n_kcs

    @property
    def student_ids(self) -> list[int]:
        seen = dict.fromkeys(s.student for s in self.sequences)
        return list(seen)

    @property
    def n_interactions(self) -> int:
        return sum(len(s) for s in self.sequences)

    def subset(self, students: Iterable[int]) -> "InteractionLog":
        keep = set(int(s) for s in students)
        seqs = tuple(s for s in self.sequences if s.student in keep)
        return InteractionLog(seqs, self.kc_map, self.question_names, self.kc_names,
                              self.student_names)

    def with_sequences(self, sequences: Iterable[StudentSequence]) -> "InteractionLog":
        return InteractionLog(tuple(sequences), self.kc_map, self.question_names,
                              self.kc_names, self.student_names)


@dataclass(frozen=True)
class DatasetStats:
    n_questions: int
    n_kcs: int
    n_students: int
    n_kc_groups: int
    mean_kcs_per_question: float

    def as_row(self) -> dict:
        return {
            "ques.": self.n_questions,
            "KCs": self.n_kcs,
            "studs.": self.n_students,
            "KC-grps.": self.n_kc_groups,
            "KCs/ques.": round(self.mean_kcs_per_question, 3),
        }


def dataset_stats(log: InteractionLog) -> DatasetStats:
    """Table-style statistics computed over the question vocabulary."""
    kcs = log.kc_map.kcs
    total = sum(len(k) for k in kcs)
    return DatasetStats(
        n_questions=len(kcs),
        n_kcs=log.n_kcs,
        n_students=len(set(s.student for s in log.sequences)),
        n_kc_groups=len(set(kcs)),
        mean_kcs_per_question=total / len(kcs),
    )
