"""Question -> KC expansion, input-label policies and recency distances."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .core import InteractionLog, KcMap, StudentSequence

# input-label alphabet
INCORRECT = 0
CORRECT = 1
MASK = 2
# placeholder for labels the autoregressive model fills in during forward
RUNTIME = -1

LABEL_NAMES = {INCORRECT: "0", CORRECT: "1", MASK: "MASK", RUNTIME: "AD"}


class MaskPolicy(enum.Enum):
    NONE = "none"
    MASK_LABEL = "mask"
    AUTOREGRESSIVE = "ad"
    FUSE_ONLY = "fuse"


@dataclass(frozen=True, eq=False)
class ExpandedSequence:
    student: int
    window: int
    question: np.ndarray
    kc: np.ndarray
    input_label: np.ndarray
    target: np.ndarray
    recency: np.ndarray
    question_ordinal: np.ndarray
    is_last_kc: np.ndarray

    def __len__(self) -> int:
        return len(self.kc)

    @property
    def n_questions(self) -> int:
        return int(self.question_ordinal[-1]) + 1

    def block_start(self) -> np.ndarray:
        """Index of the first step of each step's question block."""
        first = np.r_[True, self.question_ordinal[1:] != self.question_ordinal[:-1]]
        starts = np.flatnonzero(first)
        return starts[self.question_ordinal]


@dataclass(frozen=True, eq=False)
class FusedSequence:
    """One step per question; KC lists kept whole."""

    student: int
    window: int
    question: np.ndarray
    kcs: tuple[tuple[int, ...], ...]
    target: np.ndarray

    def __len__(self) -> int:
        return len(self.question)


def _recency_one(seq: StudentSequence, kc_map: KcMap) -> np.ndarray:
    last: dict[int, int] = {}
    out = []
    for i, q in enumerate(seq.questions.tolist()):
        kcs = kc_map[q]
        for c in kcs:
            out.append(i - last[c] if c in last else 0)
        for c in kcs:
            last[c] = i
    return np.asarray(out, dtype=np.int64)


def recency_distances(log: InteractionLog) -> list[np.ndarray]:
    """Per expanded step, questions elapsed since the step's KC last occurred (0 if never)."""
    return [_recency_one(s, log.kc_map) for s in log.sequences]


def expand_sequence(seq: StudentSequence, kc_map: KcMap,
                    policy: MaskPolicy = MaskPolicy.NONE) -> ExpandedSequence:
    if policy is MaskPolicy.FUSE_ONLY:
        raise ValueError("FuseOnly has no expansion; use fuse_groups")
    sizes = np.array([len(kc_map[q]) for q in seq.questions.tolist()])
    ordinal = np.repeat(np.arange(len(seq)), sizes)
    kc = np.fromiter((c for q in seq.questions.tolist() for c in kc_map[q]), dtype=np.int64,
                     count=int(sizes.sum()))
    target = np.repeat(seq.responses, sizes)
    is_last = np.zeros(len(kc), dtype=bool)
    is_last[np.cumsum(sizes) - 1] = True
    if policy is MaskPolicy.NONE:
        labels = target.copy()
    else:
        fill = MASK if policy is MaskPolicy.MASK_LABEL else RUNTIME
        labels = np.where(is_last, target, fill)
    return ExpandedSequence(
        student=seq.student, window=seq.window,
        question=np.repeat(seq.questions, sizes), kc=kc, input_label=labels,
        target=target, recency=_recency_one(seq, kc_map), question_ordinal=ordinal,
        is_last_kc=is_last,
    )


def expand(log: InteractionLog, policy: MaskPolicy = MaskPolicy.NONE) -> list[ExpandedSequence]:
    return [expand_sequence(s, log.kc_map, policy) for s in log.sequences]


def fuse_groups(log: InteractionLog) -> list[FusedSequence]:
    return [FusedSequence(s.student, s.window, s.questions,
                          tuple(log.kc_map[q] for q in s.questions.tolist()), s.responses)
            for s in log.sequences]


def dump_expanded(seqs: list[ExpandedSequence], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["student", "step", "question", "kc", "input_label", "target", "recency"])
        for e in seqs:
            for t in range(len(e)):
                w.writerow([e.student, t, int(e.question[t]), int(e.kc[t]),
                            LABEL_NAMES[int(e.input_label[t])], int(e.target[t]), int(e.recency[t])])
