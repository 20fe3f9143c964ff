"""Embedding constructions: KC/response tables with MASK, Rasch variations,
fused averages, positional tables and Fourier recency encoding."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .expansion import CORRECT, INCORRECT, MASK


class UnknownLabel(ValueError):
    pass


class PositionOutOfRange(IndexError):
    pass


def init_uniform_(t: torch.Tensor, d: int) -> torch.Tensor:
    bound = 1.0 / math.sqrt(d)
    with torch.no_grad():
        return t.uniform_(-bound, bound)


def _n_labels(with_mask: bool) -> int:
    return 3 if with_mask else 2


def _check_labels(label: torch.Tensor, with_mask: bool) -> None:
    hi = MASK if with_mask else CORRECT
    if label.numel() and (label.min() < INCORRECT or label.max() > hi):
        bad = label[(label < INCORRECT) | (label > hi)].unique().tolist()
        raise UnknownLabel(f"labels {bad} outside the active alphabet (mask={'on' if with_mask else 'off'})")


class SeparateEmbedding(nn.Module):
    """e_(c, r) = e_c + g_r with g_MASK present only when ``with_mask``."""

    def __init__(self, n_kcs: int, d: int, with_mask: bool = False):
        super().__init__()
        self.n_kcs, self.d, self.with_mask = n_kcs, d, with_mask
        self.kc = nn.Parameter(init_uniform_(torch.empty(n_kcs, d), d))
        self.response = nn.Parameter(init_uniform_(torch.empty(_n_labels(with_mask), d), d))

    @property
    def g_mask(self) -> torch.Tensor:
        if not self.with_mask:
            raise UnknownLabel("no MASK response vector without the mask-label variant")
        return self.response[MASK]

    def forward(self, kc: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
        _check_labels(label, self.with_mask)
        return self.kc[kc] + self.response[label]

    def soft(self, kc: torch.Tensor, p_correct: torch.Tensor) -> torch.Tensor:
        p = p_correct.unsqueeze(-1)
        return self.kc[kc] + p * self.response[CORRECT] + (1 - p) * self.response[INCORRECT]


class CombinedEmbedding(nn.Module):
    """One row per (label, KC): 2|C| rows, or 3|C| with the MASK label."""

    def __init__(self, n_kcs: int, d: int, with_mask: bool = False):
        super().__init__()
        self.n_kcs, self.d, self.with_mask = n_kcs, d, with_mask
        self.table = nn.Parameter(init_uniform_(torch.empty(_n_labels(with_mask) * n_kcs, d), d))

    def index(self, kc: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
        return label * self.n_kcs + kc

    def forward(self, kc: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
        _check_labels(label, self.with_mask)
        return self.table[self.index(kc, label)]

    def soft(self, kc: torch.Tensor, p_correct: torch.Tensor) -> torch.Tensor:
        p = p_correct.unsqueeze(-1)
        return p * self.table[CORRECT * self.n_kcs + kc] + (1 - p) * self.table[INCORRECT * self.n_kcs + kc]


class RaschEmbedding(nn.Module):
    """Question-difficulty scaled variations on top of a separate KC/response embedding.

    e_(q,c) = e_c + mu_q * d_c
    e_(r,c,q) = e_(c,r) + mu_q * f_(c,r)
    """

    def __init__(self, n_questions: int, n_kcs: int, d: int, with_mask: bool = False):
        super().__init__()
        self.with_mask = with_mask
        self.n_kcs = n_kcs
        self.base = SeparateEmbedding(n_kcs, d, with_mask)
        # difficulties start at zero so training begins from the plain KC model
        self.difficulty = nn.Parameter(torch.zeros(n_questions))
        self.kc_variation = nn.Parameter(init_uniform_(torch.empty(n_kcs, d), d))
        self.pair_variation = nn.Parameter(init_uniform_(torch.empty(_n_labels(with_mask) * n_kcs, d), d))

    def question_kc(self, question: torch.Tensor, kc: torch.Tensor) -> torch.Tensor:
        mu = self.difficulty[question].unsqueeze(-1)
        return self.base.kc[kc] + mu * self.kc_variation[kc]

    def response(self, question: torch.Tensor, kc: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
        mu = self.difficulty[question].unsqueeze(-1)
        return self.base(kc, label) + mu * self.pair_variation[label * self.n_kcs + kc]

    def forward(self, question, kc, label):
        return self.question_kc(question, kc), self.response(question, kc, label)


def embed_fuse(embed, kc_sets: torch.Tensor, kc_valid: torch.Tensor, *args) -> torch.Tensor:
    """Mean of ``embed(kc, *args)`` over each step's KC set.

    ``kc_sets`` is (..., K) with validity mask ``kc_valid``; extra args are
    broadcast over the KC axis.
    """
    K = kc_sets.shape[-1]
    expanded = [a.unsqueeze(-1).expand(*a.shape, K) for a in args]
    vecs = embed(kc_sets, *expanded)
    w = kc_valid.to(vecs.dtype).unsqueeze(-1)
    return (vecs * w).sum(-2) / w.sum(-2)


class RecencyEncoder(nn.Module):
    """DE(d) = phi([cos(d w + b), sin(d w + b)]) W_p + b_p with phi = GELU(linear).

    ``mode="fixed"`` freezes w, b at geometric frequency bands pi / 2**k.
    """

    def __init__(self, out_dim: int, fourier_dim: int | None = None, hidden: int | None = None,
                 mode: str = "learnable"):
        super().__init__()
        D = fourier_dim or out_dim
        if D % 2:
            raise ValueError("Fourier feature width must be even")
        self.mode = mode
        half = D // 2
        if mode == "learnable":
            self.freq = nn.Parameter(torch.randn(half))
            self.phase = nn.Parameter(torch.randn(half))
        elif mode == "fixed":
            self.register_buffer("freq", fixed_bands(half))
            self.register_buffer("phase", torch.zeros(half))
        else:
            raise ValueError(f"unknown recency mode {mode!r}")
        H = hidden or D
        self.hidden = nn.Linear(D, H)
        self.proj = nn.Linear(H, out_dim)

    def fourier(self, d: torch.Tensor) -> torch.Tensor:
        z = d.to(self.freq.dtype).unsqueeze(-1) * self.freq + self.phase
        return torch.cat([torch.cos(z), torch.sin(z)], dim=-1)

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        return self.proj(F.gelu(self.hidden(self.fourier(d))))


def fixed_bands(half: int) -> torch.Tensor:
    return math.pi / (2.0 ** torch.arange(half, dtype=torch.float32))


class PositionalEmbedding(nn.Module):
    def __init__(self, n: int, d: int):
        super().__init__()
        self.table = nn.Parameter(init_uniform_(torch.empty(n, d), d))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        if t.numel() and (int(t.max()) >= self.table.shape[0] or int(t.min()) < 0):
            raise PositionOutOfRange(f"position {int(t.max())} outside table of {self.table.shape[0]}")
        return self.table[t]
