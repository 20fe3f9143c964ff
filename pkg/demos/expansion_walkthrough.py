"""Show what KC expansion feeds a model, and where the leak comes from.

One student answers three questions. Questions 1 and 2 carry two KCs each,
so the expanded sequence has five steps. Without masking, the step for KC 3 sees the
true response of the same question on the step for KC 1.

    python3 demos/expansion_walkthrough.py
"""

import numpy as np

from leakfree_kt import InteractionLog, KcMap, MaskPolicy, StudentSequence, expand

kc_map = KcMap(((0,), (1, 3), (0, 3)), n_kcs=4)
log = InteractionLog((StudentSequence(0, np.array([0, 1, 2]), np.array([1, 0, 1])),), kc_map)

names = {2: "MASK", -1: "runtime"}
for policy in (MaskPolicy.NONE, MaskPolicy.MASK_LABEL, MaskPolicy.AUTOREGRESSIVE):
    e = expand(log, policy)[0]
    print(f"\n{policy.name}")
    print(" step  question  kc  input_label  target  recency  last")
    for t in range(len(e)):
        lab = int(e.input_label[t])
        shown = f"{lab} ({names.get(lab, 'true')})"
        print(f"{t:5d} {int(e.question[t]):9d} {int(e.kc[t]):3d}  {shown:11s}"
              f"  {int(e.target[t]):6d} {int(e.recency[t]):8d}  {bool(e.is_last_kc[t])}")
