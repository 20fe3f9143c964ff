import csv

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from leakfree_kt import InteractionLog, KcMap, MaskPolicy, StudentSequence, expand, fuse_groups, recency_distances
from leakfree_kt.expansion import MASK, RUNTIME, dump_expanded

from conftest import random_log
from oracles import expansion_matches_oracle


def _fixture():
    # KC lists {2}, {0,1}, {1}
    seq = StudentSequence(0, np.array([0, 1, 2]), np.array([1, 0, 1]))
    return InteractionLog((seq,), KcMap(((2,), (0, 1), (1,)), 3))


def test_hand_expansion():
    e = expand(_fixture(), MaskPolicy.MASK_LABEL)[0]
    assert e.kc.tolist() == [2, 0, 1, 1]
    assert e.input_label.tolist() == [1, MASK, 0, 1]
    assert e.target.tolist() == [1, 0, 0, 1]
    assert e.is_last_kc.tolist() == [True, False, True, True]
    assert e.block_start().tolist() == [0, 1, 1, 3]


def test_three_kc_worked_example():
    seq = StudentSequence(0, np.array([0]), np.array([1]))
    log = InteractionLog((seq,), KcMap(((0, 1, 2),), 3))
    assert expand(log, MaskPolicy.MASK_LABEL)[0].input_label.tolist() == [MASK, MASK, 1]
    assert expand(log, MaskPolicy.AUTOREGRESSIVE)[0].input_label.tolist() == [RUNTIME, RUNTIME, 1]
    assert expand(log, MaskPolicy.NONE)[0].input_label.tolist() == [1, 1, 1]


def test_single_kc_mask_equals_none(rng):
    log = random_log(rng, max_kcs=1)
    for a, b in zip(expand(log, MaskPolicy.NONE), expand(log, MaskPolicy.MASK_LABEL)):
        assert np.array_equal(a.input_label, b.input_label)


def test_recency_hand_cases():
    seq = StudentSequence(0, np.array([0, 1, 1, 1, 0]), np.array([1] * 5))
    log = InteractionLog((seq,), KcMap(((0,), (1,)), 2))
    # KC 0 at ordinals 0 and 4; KC 1 at 1, 2, 3
    assert recency_distances(log)[0].tolist() == [0, 0, 1, 1, 4]


def test_two_kcs_track_independently():
    seq = StudentSequence(0, np.array([0, 1, 2]), np.array([1, 1, 1]))
    log = InteractionLog((seq,), KcMap(((0,), (1,), (0, 1)), 2))
    assert recency_distances(log)[0].tolist() == [0, 0, 2, 1]


def test_fuse_groups():
    f = fuse_groups(_fixture())[0]
    assert f.kcs == ((2,), (0, 1), (1,))
    assert len(f) == 3 and f.target.tolist() == [1, 0, 1]


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_oracle_equivalence(seed):
    rng = np.random.default_rng(seed)
    log = random_log(rng, n_students=int(rng.integers(1, 6)), n_questions=int(rng.integers(1, 30)),
                     n_kcs=int(rng.integers(5, 12)), max_kcs=5, length=(1, 40))
    assert expansion_matches_oracle(log)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_structural_invariants(seed):
    log = random_log(np.random.default_rng(seed), max_kcs=4)
    rec = recency_distances(log)
    for policy in (MaskPolicy.NONE, MaskPolicy.MASK_LABEL, MaskPolicy.AUTOREGRESSIVE):
        for seq, e, d in zip(log.sequences, expand(log, policy), rec):
            assert len(e) == sum(len(log.kc_map[q]) for q in seq.questions.tolist())
            assert np.array_equal(e.recency, d)
            for i in range(len(seq)):
                blk = e.question_ordinal == i
                kcs = e.kc[blk]
                assert np.all(np.diff(kcs) > 0)
                assert e.is_last_kc[blk].tolist() == [False] * (blk.sum() - 1) + [True]
                assert np.all(e.target[blk] == seq.responses[i])
                if policy is MaskPolicy.MASK_LABEL:
                    assert (e.input_label[blk] == MASK).sum() == blk.sum() - 1
                if policy is not MaskPolicy.NONE:
                    # no earlier step inside the block shows the true response
                    assert np.all(e.input_label[blk][:-1] < 0) or np.all(e.input_label[blk][:-1] == MASK)


def test_dump_columns(tmp_path):
    dump_expanded(expand(_fixture(), MaskPolicy.MASK_LABEL), tmp_path / "x.csv")
    rows = list(csv.reader(open(tmp_path / "x.csv")))
    assert rows[0] == ["student", "step", "question", "kc", "input_label", "target", "recency"]
    assert [r[4] for r in rows[1:]] == ["1", "MASK", "0", "1"]
