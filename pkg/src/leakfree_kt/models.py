"""DKT, DKT+, SAKT and AKT with mask-label, autoregressive, fuse,
question-mask and recency variants.

Every model maps a :class:`BatchInput` to per-step probabilities (batch x len).
The prediction at step t only sees inputs at steps < t. With
``withhold_current=True`` the forward additionally hides every label from
the current question (the all-in-one protocol); leak-free variants are
unaffected by that switch.
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .batching import BatchInput
from .encoders import (
    CombinedEmbedding,
    PositionalEmbedding,
    RaschEmbedding,
    RecencyEncoder,
    SeparateEmbedding,
    embed_fuse,
)
from .expansion import RUNTIME, MaskPolicy

FAMILIES = ("dkt", "dkt_plus", "sakt", "akt")
RECENCY_MODES = ("none", "learnable", "fixed")
# finite stand-in for -inf so fully denied rows stay NaN-free
_NEG = -1e30


class ShapeMismatch(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    family: str
    n_kcs: int
    n_questions: int
    ml: bool = False
    ad: bool = False
    fuse: bool = False
    qm: bool = False
    recency: str = "none"
    d_model: int = 32
    n_heads: int = 8
    n_layers: int = 2
    dropout: float = 0.05
    max_len: int = 512
    ad_soft: bool = False
    fourier_dim: int | None = None
    recency_hidden: int | None = None

    def __post_init__(self):
        self.family = self.family.lower().replace("+", "_plus").replace("-", "_")
        self.validate()

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.recency not in RECENCY_MODES:
            raise ConfigError(f"recency must be one of {RECENCY_MODES}")
        dkt_like = self.family in ("dkt", "dkt_plus")
        if self.ad and not dkt_like:
            raise ConfigError("autoregressive decoding needs an RNN (DKT family)")
        if self.qm and self.family != "akt":
            raise ConfigError("question-level masking is only defined for AKT")
        if self.fuse and (self.ml or self.ad):
            raise ConfigError("fuse has no KC expansion, so it excludes ml and ad")
        if self.fuse and self.family == "sakt":
            raise ConfigError("fuse is defined for the DKT and AKT families only")
        if self.fuse and self.recency != "none":
            raise ConfigError("fused embeddings carry no per-KC recency")
        if self.ml and self.ad:
            raise ConfigError("ml and ad are alternative label policies")
        if self.family in ("sakt", "akt") and self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")

    @property
    def policy(self) -> MaskPolicy:
        if self.fuse:
            return MaskPolicy.FUSE_ONLY
        if self.ad:
            return MaskPolicy.AUTOREGRESSIVE
        if self.ml:
            return MaskPolicy.MASK_LABEL
        return MaskPolicy.NONE

    @property
    def leak_free(self) -> bool:
        return self.ml or self.ad or self.qm or self.fuse

    @property
    def name(self) -> str:
        base = {"dkt": "DKT", "dkt_plus": "DKT", "sakt": "SAKT", "akt": "AKT"}[self.family]
        for flag, tag in (("ml", "ML"), ("ad", "AD"), ("fuse", "Fuse"), ("qm", "QM")):
            if getattr(self, flag):
                base += "-" + tag
        if self.family == "dkt_plus":
            base += "+"
        if self.recency == "learnable":
            base += "^d"
        elif self.recency == "fixed":
            base += "^d-fix"
        return base

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def parse_flags(text: str | None) -> dict:
    """``"ml,recency=learnable"`` -> ``{"ml": True, "recency": "learnable"}``."""
    out: dict = {}
    for part in (text or "").split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
        elif part in ("d", "d-fix"):
            out["recency"] = "learnable" if part == "d" else "fixed"
        else:
            out[part] = True
    unknown = set(out) - {"ml", "ad", "fuse", "qm", "recency", "ad_soft"}
    if unknown:
        raise ConfigError(f"unknown flags {sorted(unknown)}")
    return out


# --------------------------------------------------------------------------
# attention


def causal_mask(T: int, strict: bool, device=None) -> torch.Tensor:
    """allow[i, j] = j < i (strict) or j <= i."""
    return torch.tril(torch.ones(T, T, dtype=torch.bool, device=device), diagonal=-1 if strict else 0)


def build_question_mask(block_ids: torch.Tensor, length: int | None = None) -> torch.Tensor:
    """allow[i, j] iff j < i and steps i, j belong to different questions.

    ``block_ids`` is (len,) or (batch, len); the result is (..., len, len).
    """
    if length is not None and block_ids.shape[-1] != length:
        raise ShapeMismatch(f"block ids have length {block_ids.shape[-1]}, expected {length}")
    T = block_ids.shape[-1]
    different = block_ids.unsqueeze(-1) != block_ids.unsqueeze(-2)
    return different & causal_mask(T, strict=True, device=block_ids.device)


def masked_softmax(scores: torch.Tensor, allow: torch.Tensor) -> torch.Tensor:
    """Softmax over allowed entries; denied entries are exactly 0 and a fully
    denied row is all zeros."""
    w = torch.softmax(scores.masked_fill(~allow, _NEG), dim=-1)
    return w * allow


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention; ``monotonic`` multiplies the scores by a
    per-head decay exp(-theta_h * |i - j|) with theta_h = softplus(raw) > 0."""

    def __init__(self, d: int, n_heads: int, dropout: float = 0.0, monotonic: bool = False):
        super().__init__()
        self.h, self.dk = n_heads, d // n_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)
        self.drop = nn.Dropout(dropout)
        self.monotonic = monotonic
        if monotonic:
            self.decay_raw = nn.Parameter(torch.full((n_heads,), -2.0))
        self.keep_weights = False
        self.last_weights: torch.Tensor | None = None

    @property
    def decay(self) -> torch.Tensor:
        return F.softplus(self.decay_raw)

    def forward(self, query, key, value, allow):
        B, T, d = query.shape
        S = key.shape[1]

        def split(x):
            return x.view(B, -1, self.h, self.dk).transpose(1, 2)

        q, k, v = split(self.q_proj(query)), split(self.k_proj(key)), split(self.v_proj(value))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.dk)
        if self.monotonic:
            dist = (torch.arange(T).unsqueeze(1) - torch.arange(S).unsqueeze(0)).abs().to(scores.dtype)
            scores = scores * torch.exp(-self.decay.view(1, -1, 1, 1) * dist)
        if allow.dim() == 3:
            allow = allow.unsqueeze(1)
        w = masked_softmax(scores, allow)
        if self.keep_weights:
            self.last_weights = w.detach()
        ctx = (self.drop(w) @ v).transpose(1, 2).reshape(B, T, d)
        return self.out_proj(ctx)


class AttentionBlock(nn.Module):
    def __init__(self, d: int, n_heads: int, dropout: float, monotonic: bool):
        super().__init__()
        self.attn = MultiHeadAttention(d, n_heads, dropout, monotonic)
        self.ln1 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, 2 * d), nn.ReLU(), nn.Dropout(dropout), nn.Linear(2 * d, d))
        self.ln2 = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, query, key, value, allow, value_extra=None):
        if value_extra is not None:
            value = value + value_extra
        h = self.ln1(query + self.drop(self.attn(query, key, value, allow)))
        return self.ln2(h + self.drop(self.ffn(h)))


# --------------------------------------------------------------------------
# models


class KTModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.recency_enc = (RecencyEncoder(c.d_model, c.fourier_dim, c.recency_hidden, c.recency)
                            if c.recency != "none" else None)

    def _check(self, batch: BatchInput) -> None:
        if batch.kc.dim() != 2:
            raise ShapeMismatch(f"expected batch x len inputs, got {tuple(batch.kc.shape)}")
        for name in ("question", "label", "recency", "target", "valid", "ordinal"):
            if getattr(batch, name).shape != batch.kc.shape:
                raise ShapeMismatch(f"{name} has shape {tuple(getattr(batch, name).shape)}, "
                                    f"expected {tuple(batch.kc.shape)}")
        if batch.fused != self.config.fuse:
            raise ShapeMismatch("fused batch given to an expanded model or vice versa")

    def forward(self, batch: BatchInput, withhold_current: bool = False) -> torch.Tensor:
        raise NotImplementedError


class DKT(KTModel):
    """LSTM knowledge tracer; y_t = sigmoid(W h + b) over all KCs, read at the queried KC."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        c = config
        if c.ml and c.family == "dkt":
            self.embed = SeparateEmbedding(c.n_kcs, c.d_model, with_mask=True)
        else:
            self.embed = CombinedEmbedding(c.n_kcs, c.d_model, with_mask=c.ml)
        self.lstm = nn.LSTM(c.d_model, c.d_model, batch_first=True)
        self.out = nn.Linear(c.d_model, c.n_kcs)
        self.drop = nn.Dropout(c.dropout)

    def _inputs(self, batch: BatchInput) -> torch.Tensor:
        if batch.fused:
            x = embed_fuse(self.embed, batch.kc_sets, batch.kc_set_valid, batch.label)
        else:
            x = self.embed(batch.kc, batch.label)
        if self.recency_enc is not None:
            x = x + self.recency_enc(batch.recency)
        return x

    def _needs_loop(self, batch: BatchInput) -> bool:
        # with no runtime-filled label the autoregressive model is plain DKT
        return self.config.ad and bool((batch.label == RUNTIME).any())

    def hidden(self, batch: BatchInput) -> torch.Tensor:
        """States after consuming steps 0..t (batch x len x d)."""
        if self._needs_loop(batch):
            return self._hidden_autoregressive(batch)[1]
        h, _ = self.lstm(self._inputs(batch))
        return h

    def _read(self, logits: torch.Tensor, batch: BatchInput) -> torch.Tensor:
        if batch.fused:
            per_kc = logits.unsqueeze(2).expand(*batch.kc_sets.shape, -1).gather(
                -1, batch.kc_sets.unsqueeze(-1)).squeeze(-1)
            w = batch.kc_set_valid.to(per_kc.dtype)
            return (per_kc * w).sum(-1) / w.sum(-1)
        return logits.gather(-1, batch.kc.unsqueeze(-1)).squeeze(-1)

    def forward(self, batch: BatchInput, withhold_current: bool = False, return_outputs: bool = False):
        self._check(batch)
        if self._needs_loop(batch):
            probs, h = self._hidden_autoregressive(batch)
        else:
            h = self.hidden(batch)
            h_prev = torch.cat([h.new_zeros(h.shape[0], 1, h.shape[2]), h[:, :-1]], dim=1)
            logits = self.out(self.drop(h_prev))
            if withhold_current and not self.config.leak_free:
                # no withheld-label input exists: read every KC of a question from the state before it
                idx = batch.block_start.unsqueeze(-1).expand(-1, -1, logits.shape[-1])
                logits = logits.gather(1, idx)
            probs = torch.sigmoid(self._read(logits, batch))
        if return_outputs:
            return probs, torch.sigmoid(self.out(self.drop(h)))
        return probs

    def _hidden_autoregressive(self, batch: BatchInput):
        B, T = batch.kc.shape
        d = self.config.d_model
        h_prev = self.out.weight.new_zeros(B, d)
        state = None
        probs, hs = [], []
        rec = self.recency_enc(batch.recency) if self.recency_enc is not None else None
        for t in range(T):
            kc_t = batch.kc[:, t]
            p_t = torch.sigmoid(self.out(self.drop(h_prev)).gather(-1, kc_t.unsqueeze(-1)).squeeze(-1))
            lab = batch.label[:, t]
            runtime = lab == RUNTIME
            if self.config.ad_soft:
                x = torch.where(runtime.unsqueeze(-1), self.embed.soft(kc_t, p_t),
                                self.embed(kc_t, lab.clamp(min=0)))
            else:
                lab = torch.where(runtime, (p_t.detach() >= 0.5).long(), lab)
                x = self.embed(kc_t, lab)
            if rec is not None:
                x = x + rec[:, t]
            o, state = self.lstm(x.unsqueeze(1), state)
            h_prev = o[:, 0]
            probs.append(p_t)
            hs.append(h_prev)
        return torch.stack(probs, 1), torch.stack(hs, 1)


class SAKT(KTModel):
    """Queries from a KC table attend to strictly earlier interaction embeddings."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        c = config
        self.interaction = CombinedEmbedding(c.n_kcs, c.d_model, with_mask=c.ml)
        self.kc_query = nn.Embedding(c.n_kcs, c.d_model)
        nn.init.uniform_(self.kc_query.weight, -1 / math.sqrt(c.d_model), 1 / math.sqrt(c.d_model))
        self.position = PositionalEmbedding(c.max_len, c.d_model) if c.recency == "none" else None
        self.blocks = nn.ModuleList(AttentionBlock(c.d_model, c.n_heads, c.dropout, monotonic=False)
                                    for _ in range(c.n_layers))
        self.out = nn.Linear(c.d_model, 1)

    def forward(self, batch: BatchInput, withhold_current: bool = False) -> torch.Tensor:
        self._check(batch)
        T = batch.kc.shape[1]
        kv = self.interaction(batch.kc, batch.label)
        if self.recency_enc is not None:
            kv = kv + self.recency_enc(batch.recency)
        else:
            kv = kv + self.position(torch.arange(T))
        if withhold_current and not self.config.leak_free:
            allow = build_question_mask(batch.ordinal)
        else:
            allow = causal_mask(T, strict=True)
        h = self.kc_query(batch.kc)
        for blk in self.blocks:
            h = blk(h, kv, kv, allow)
        return torch.sigmoid(self.out(h).squeeze(-1))


class AKT(KTModel):
    """Question encoder, knowledge encoder and a strictly causal knowledge
    retriever, all with monotonic (distance-decayed) attention."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        c = config
        self.rasch = RaschEmbedding(c.n_questions, c.n_kcs, c.d_model, with_mask=c.ml)

        def stack():
            return nn.ModuleList(AttentionBlock(c.d_model, c.n_heads, c.dropout, monotonic=True)
                                 for _ in range(c.n_layers))

        self.question_encoder = stack()
        self.knowledge_encoder = stack()
        self.retriever = stack()
        self.out = nn.Sequential(nn.Linear(2 * c.d_model, c.d_model), nn.ReLU(),
                                 nn.Dropout(c.dropout), nn.Linear(c.d_model, 1))

    def embeddings(self, batch: BatchInput):
        if batch.fused:
            K = batch.kc_sets.shape[-1]
            q = batch.question.unsqueeze(-1).expand(-1, -1, K)
            lab = batch.label.unsqueeze(-1).expand(-1, -1, K)
            w = batch.kc_set_valid.to(self.rasch.kc_variation.dtype).unsqueeze(-1)
            x = (self.rasch.question_kc(q, batch.kc_sets) * w).sum(-2) / w.sum(-2)
            y = (self.rasch.response(q, batch.kc_sets, lab) * w).sum(-2) / w.sum(-2)
            return x, y
        return self.rasch(batch.question, batch.kc, batch.label)

    def retriever_mask(self, batch: BatchInput, withhold_current: bool) -> torch.Tensor:
        T = batch.kc.shape[1]
        if self.config.qm or (withhold_current and not self.config.leak_free):
            return build_question_mask(batch.ordinal)
        return causal_mask(T, strict=True)

    def forward(self, batch: BatchInput, withhold_current: bool = False) -> torch.Tensor:
        self._check(batch)
        T = batch.kc.shape[1]
        x, y = self.embeddings(batch)
        extra = self.recency_enc(batch.recency) if self.recency_enc is not None else None
        incl = causal_mask(T, strict=False)
        for blk in self.question_encoder:
            x = blk(x, x, x, incl, extra)
        for blk in self.knowledge_encoder:
            y = blk(y, y, y, incl, extra)
        allow = self.retriever_mask(batch, withhold_current)
        h = x
        for blk in self.retriever:
            h = blk(h, x, y, allow, extra)
        return torch.sigmoid(self.out(torch.cat([h, x], dim=-1)).squeeze(-1))


def build_model(config: ModelConfig) -> KTModel:
    cls = {"dkt": DKT, "dkt_plus": DKT, "sakt": SAKT, "akt": AKT}[config.family]
    return cls(config)


# --------------------------------------------------------------------------
# checkpoints: zip with config.json, tensors.json and raw little-endian float32 blobs


def save_checkpoint(model: KTModel, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = []
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps({"model": model.config.to_dict(), **(extra or {})}, indent=1))
        for name, t in model.state_dict().items():
            arr = np.ascontiguousarray(t.detach().cpu().numpy().astype("<f4"))
            zf.writestr(f"tensors/{name}.bin", arr.tobytes(order="C"))
            index.append({"name": name, "shape": list(arr.shape), "dtype": "float32-le"})
        zf.writestr("tensors.json", json.dumps(index, indent=1))
    return path


def load_checkpoint(path) -> tuple[KTModel, dict]:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("config.json"))
        index = json.loads(zf.read("tensors.json"))
        config = ModelConfig.from_dict(meta["model"])
        model = build_model(config)
        state = {}
        for item in index:
            buf = zf.read(f"tensors/{item['name']}.bin")
            arr = np.frombuffer(buf, dtype="<f4").reshape(item["shape"])
            state[item["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model, meta
