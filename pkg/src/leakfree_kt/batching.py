"""Padding expanded / fused sequences into model batches."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .expansion import ExpandedSequence, FusedSequence

# pad ordinals are pushed far away so padded steps never share a question block
_PAD_ORDINAL = 1 << 40


@dataclass
class BatchInput:
    """Batch x max_len tensors. Padding positions have ``valid == False``.

    For fused batches each step is a question and ``kc_sets`` / ``kc_set_valid``
    (batch x len x max_kcs) hold its KC list; ``kc`` is then the first KC.
    """

    kc: torch.Tensor
    question: torch.Tensor
    label: torch.Tensor
    recency: torch.Tensor
    target: torch.Tensor
    valid: torch.Tensor
    ordinal: torch.Tensor
    block_start: torch.Tensor
    is_last: torch.Tensor
    kc_sets: torch.Tensor | None = None
    kc_set_valid: torch.Tensor | None = None
    students: tuple[int, ...] = ()
    windows: tuple[int, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.kc.shape)

    @property
    def fused(self) -> bool:
        return self.kc_sets is not None

    def with_labels(self, label: torch.Tensor) -> "BatchInput":
        return replace(self, label=label)

    def to(self, dtype: torch.dtype) -> "BatchInput":
        """Cast the float target to ``dtype`` (used for double-precision checks)."""
        return replace(self, target=self.target.to(dtype))


def _pad(arrays, length, fill, dtype):
    out = np.full((len(arrays), length), fill, dtype=dtype)
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
    return out


def collate(seqs: list[ExpandedSequence], max_len: int | None = None) -> BatchInput:
    lengths = [len(s) for s in seqs]
    T = max(lengths) if max_len is None else max_len
    B = len(seqs)
    ordinal = np.empty((B, T), dtype=np.int64)
    block_start = np.tile(np.arange(T), (B, 1))
    for i, s in enumerate(seqs):
        ordinal[i, :len(s)] = s.question_ordinal
        ordinal[i, len(s):] = _PAD_ORDINAL + np.arange(T - len(s))
        block_start[i, :len(s)] = s.block_start()
    valid = np.zeros((B, T), dtype=bool)
    for i, n in enumerate(lengths):
        valid[i, :n] = True
    t = torch.from_numpy
    return BatchInput(
        kc=t(_pad([s.kc for s in seqs], T, 0, np.int64)),
        question=t(_pad([s.question for s in seqs], T, 0, np.int64)),
        label=t(_pad([s.input_label for s in seqs], T, 0, np.int64)),
        recency=t(_pad([s.recency for s in seqs], T, 0, np.int64)),
        target=t(_pad([s.target for s in seqs], T, 0, np.float32)),
        valid=t(valid),
        ordinal=t(ordinal),
        block_start=t(block_start),
        is_last=t(_pad([s.is_last_kc for s in seqs], T, True, bool)),
        students=tuple(s.student for s in seqs),
        windows=tuple(s.window for s in seqs),
    )


def collate_fused(seqs: list[FusedSequence]) -> BatchInput:
    B = len(seqs)
    T = max(len(s) for s in seqs)
    K = max(len(k) for s in seqs for k in s.kcs)
    kc_sets = np.zeros((B, T, K), dtype=np.int64)
    kc_valid = np.zeros((B, T, K), dtype=bool)
    valid = np.zeros((B, T), dtype=bool)
    for i, s in enumerate(seqs):
        valid[i, :len(s)] = True
        for j, kcs in enumerate(s.kcs):
            kc_sets[i, j, :len(kcs)] = kcs
            kc_valid[i, j, :len(kcs)] = True
    kc_valid[~valid] = True  # pad steps average over KC 0 rather than nothing
    target = _pad([s.target for s in seqs], T, 0, np.float32)
    ordinal = np.tile(np.arange(T), (B, 1))
    t = torch.from_numpy
    return BatchInput(
        kc=t(kc_sets[:, :, 0].copy()),
        question=t(_pad([s.question for s in seqs], T, 0, np.int64)),
        label=t(target.astype(np.int64)),
        recency=torch.zeros((B, T), dtype=torch.long),
        target=t(target),
        valid=t(valid),
        ordinal=t(ordinal),
        block_start=t(ordinal.copy()),
        is_last=torch.ones((B, T), dtype=torch.bool),
        kc_sets=t(kc_sets),
        kc_set_valid=t(kc_valid),
        students=tuple(s.student for s in seqs),
        windows=tuple(s.window for s in seqs),
    )
