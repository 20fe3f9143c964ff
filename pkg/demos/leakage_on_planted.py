"""Train DKT and DKT-ML on a small planted dataset and on its duplicated-KC
copy, then compare the two evaluation protocols.

Expect the flag-free DKT to look far better one-by-one than all-in-one,
while DKT-ML scores the same under both. Runs in under a minute on one CPU.

    python3 demos/leakage_on_planted.py
"""

import torch

from leakfree_kt import (ModelConfig, PlantedModel, SplitPlan, TrainConfig, duplicate_kcs, evaluate_all_in_one,
                         evaluate_one_by_one, generate_planted, split_students, window_questions)
from leakfree_kt.train_eval import train_fold

torch.set_num_threads(1)
log = generate_planted(200, 200, 20, (2, 3), PlantedModel(seed=0))
folds, test = split_students(log, SplitPlan(0.2, 5, seed=0))
tcfg = TrainConfig(max_epochs=15, batch_size=16, grad_clip=1.0)

print(f"{'model':8s} {'data':11s} {'one_by_one':>10s} {'all_in_one':>10s}")
for name, data in (("original", log), ("duplicated", duplicate_kcs(log))):
    tr, va, te = (window_questions(data.subset(ids)) for ids in (folds[0].train, folds[0].val, test))
    for ml in (False, True):
        cfg = ModelConfig("dkt", data.n_kcs, data.n_questions, ml=ml, d_model=32)
        model = train_fold(cfg, tr, va, tcfg).model
        obo, aio = evaluate_one_by_one(model, te).auc, evaluate_all_in_one(model, te).auc
        print(f"{cfg.name:8s} {name:11s} {obo:10.4f} {aio:10.4f}")
