"""Independent reference implementations used as test oracles.

They are deliberately naive: quadratic scans and explicit loops, sharing no
code with the package beyond its label constants.
"""

from __future__ import annotations

from dataclasses import fields, replace

import numpy as np
import torch

MASK, RUNTIME = 2, -1


def brute_expand(questions, responses, kc_lists, policy="none"):
    """Rows (question, kc, input_label, target, recency, ordinal, is_last) per expanded step."""
    rows = []
    for i, (q, r) in enumerate(zip(questions, responses)):
        kcs = sorted(set(kc_lists[q]))
        for pos, c in enumerate(kcs):
            # scan backwards for the latest earlier question that contains c
            d = 0
            for j in range(i - 1, -1, -1):
                if c in kc_lists[questions[j]]:
                    d = i - j
                    break
            last = pos == len(kcs) - 1
            if policy == "none" or last:
                lab = r
            else:
                lab = MASK if policy == "mask" else RUNTIME
            rows.append((q, c, lab, r, d, i, last))
    return rows


def pair_count_auc(pred, target) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) by enumerating every pair."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target)
    pos, neg = pred[target == 1], pred[target == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def finite_difference_check(loss_fn, params, eps=1e-6, max_entries=40, rng=None, stats=None):
    """Largest relative error between autograd and central differences.

    ``loss_fn`` returns a scalar double tensor; ``params`` are double leaf
    tensors. At most ``max_entries`` coordinates per tensor are probed.
    Coordinates whose one-sided differences disagree sit on a ReLU kink, where
    no derivative exists; they are skipped and counted in ``stats["kinks"]``.
    """
    rng = rng or np.random.default_rng(0)
    loss = loss_fn()
    f0 = loss.item()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst, kinks, probed = 0.0, 0, 0
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        flat = p.data.view(-1)
        idx = rng.choice(flat.numel(), size=min(max_entries, flat.numel()), replace=False)
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            ana = g.view(-1)[i].item()
            scale = max(abs(num), abs(ana), 1e-6)
            probed += 1
            if abs((up - f0) - (f0 - down)) / eps > 1e-3 * scale:
                kinks += 1
                continue
            worst = max(worst, abs(num - ana) / scale)
    if stats is not None:
        stats.update(kinks=kinks, probed=probed)
    return worst


def expansion_matches_oracle(log) -> bool:
    """Production expansion (all policies) and recency agree with :func:`brute_expand`."""
    from leakfree_kt.expansion import MaskPolicy, expand, recency_distances

    lists = [list(k) for k in log.kc_map.kcs]
    policies = {"none": MaskPolicy.NONE, "mask": MaskPolicy.MASK_LABEL, "ad": MaskPolicy.AUTOREGRESSIVE}
    rec = recency_distances(log)
    for name, policy in policies.items():
        for seq, e, d in zip(log.sequences, expand(log, policy), rec):
            rows = brute_expand(seq.questions.tolist(), seq.responses.tolist(), lists, name)
            got = list(zip(e.question.tolist(), e.kc.tolist(), e.input_label.tolist(), e.target.tolist(),
                           e.recency.tolist(), e.question_ordinal.tolist(), e.is_last_kc.tolist()))
            if got != rows or d.tolist() != [r[4] for r in rows]:
                return False
    return True


def fixture_batch(config, n_students=2, n_questions=6, length=12, seed=0):
    """A double-precision-ready batch of expanded (or fused) steps of exactly ``length`` steps."""
    from leakfree_kt import InteractionLog, KcMap, StudentSequence
    from leakfree_kt.train_eval import make_batch, model_items

    rng = np.random.default_rng(seed)
    lists = tuple(tuple(sorted(rng.choice(config.n_kcs, size=int(rng.integers(1, 4)), replace=False).tolist()))
                  for _ in range(config.n_questions))
    seqs = []
    for s in range(n_students):
        qs, total = [], 0
        while total < length:
            q = int(rng.integers(config.n_questions))
            qs.append(q)
            total += 1 if config.fuse else len(lists[q])
        seqs.append(StudentSequence(s, np.array(qs), rng.integers(2, size=len(qs))))
    log = InteractionLog(tuple(seqs), KcMap(lists, config.n_kcs))
    batch = make_batch(config, model_items(config, log))
    cut = {f.name: getattr(batch, f.name)[:, :length] for f in fields(batch)
           if isinstance(getattr(batch, f.name), torch.Tensor)}
    return replace(batch, **cut), log


def model_gradient_error(config, seed=0, eps=1e-6, max_entries=12, stats=None):
    """Worst relative FD error over every parameter tensor of a freshly built model."""
    from leakfree_kt import build_model
    from leakfree_kt.train_eval import TrainConfig, training_loss

    torch.manual_seed(seed)
    model = build_model(config).double().eval()
    batch, _ = fixture_batch(config, seed=seed)
    batch = batch.to(torch.float64)
    params = [p for p in model.parameters() if p.requires_grad]
    tcfg = TrainConfig()
    return finite_difference_check(lambda: training_loss(model, batch, tcfg), params, eps=eps,
                                   max_entries=max_entries, rng=np.random.default_rng(seed), stats=stats)


def recency_gradient_error(seed=0, eps=1e-6):
    """FD check of the learnable recency encoder w.r.t. its parameters and the distance."""
    from leakfree_kt.encoders import RecencyEncoder

    torch.manual_seed(seed)
    enc = RecencyEncoder(8, mode="learnable").double()
    d = torch.tensor([0.0, 1.0, 3.0, 7.0, 20.0], dtype=torch.float64, requires_grad=True)
    w = torch.randn(5, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(seed))
    params = list(enc.parameters()) + [d]
    return finite_difference_check(lambda: (enc(d) * w).sum(), params, eps=eps, max_entries=64,
                                   rng=np.random.default_rng(seed))
