import json

import numpy as np
import pytest

from leakfree_kt import (CsvSchema, SplitPlan, dataset_stats, expand, load_prepared, parse_csv, save_prepared,
                         split_students, window_questions)
from leakfree_kt.core import EmptyKcList, MissingColumn, NonBinaryResponse, StudentSequence, TooFewStudents
from leakfree_kt.ingestion import dataset_hash

from conftest import random_log

FIXTURE = """student,question,kcs,correct
s1,A,add_sub,1
s1,B,add,0
s2,C,mul,1
s2,A,add_sub,0
s1,C,mul,1
s2,B,add,1
"""


def _write(tmp_path, text, name="raw.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_fixture_hand_counts(tmp_path):
    log = parse_csv(_write(tmp_path, FIXTURE))
    # questions A,B,C; KCs add,sub,mul; lists {add,sub},{add},{mul} are all distinct
    s = dataset_stats(log)
    assert (s.n_questions, s.n_kcs, s.n_students, s.n_kc_groups) == (3, 3, 2, 3)
    assert s.mean_kcs_per_question == pytest.approx(4 / 3)
    assert log.question_names == ("A", "B", "C")
    assert log.kc_names == ("add", "sub", "mul")
    s1 = log.sequences[0]
    assert s1.questions.tolist() == [0, 1, 2] and s1.responses.tolist() == [1, 0, 1]


def test_delimiter_semantics(tmp_path):
    text = "student,question,kcs,correct\nx,A,add_sub,1\nx,A,add_sub,0\n"
    assert parse_csv(_write(tmp_path, text)).n_kcs == 2
    assert parse_csv(_write(tmp_path, text), CsvSchema(kc_delimiter=";")).n_kcs == 1


@pytest.mark.parametrize("row,err", [("x,A,add,2", NonBinaryResponse), ("x,A,,1", EmptyKcList),
                                     ("x,A", MissingColumn)])
def test_errors_carry_row_number(tmp_path, row, err):
    text = "student,question,kcs,correct\nx,A,add,1\n" + row + "\n"
    with pytest.raises(err, match="row 3"):
        parse_csv(_write(tmp_path, text))


def test_missing_header_column(tmp_path):
    with pytest.raises(MissingColumn):
        parse_csv(_write(tmp_path, "student,question,skill,correct\nx,A,a,1\n"))


def test_order_column_sorts_stably(tmp_path):
    text = "u,q,k,c,t\nx,A,a,1,5\nx,B,a,0,1\nx,C,a,1,5\n"
    schema = CsvSchema(student="u", question="q", kcs="k", correct="c", order="t")
    seq = parse_csv(_write(tmp_path, text), schema).sequences[0]
    assert seq.questions.tolist() == [1, 0, 2]


def test_schema_json_with_columns_section(tmp_path):
    p = tmp_path / "schema.json"
    p.write_text(json.dumps({"columns": {"student": "u"}, "kc_delimiter": "~"}))
    s = CsvSchema.from_json(p)
    assert s.student == "u" and s.kc_delimiter == "~" and s.question == "question"


def test_prepared_round_trip(tmp_path, rng):
    log = parse_csv(_write(tmp_path, FIXTURE))
    save_prepared(log, tmp_path / "prep")
    back = load_prepared(tmp_path / "prep")
    assert back.kc_map == log.kc_map
    assert back.sequences == log.sequences
    assert (back.question_names, back.kc_names, back.student_names) == (
        log.question_names, log.kc_names, log.student_names)
    assert dataset_stats(back) == dataset_stats(log)
    # a second save is byte-identical
    save_prepared(back, tmp_path / "prep2")
    assert dataset_hash(tmp_path / "prep") == dataset_hash(tmp_path / "prep2")


def test_round_trip_merges_windows(tmp_path, rng):
    log = random_log(rng, n_students=4, length=(30, 60))
    save_prepared(window_questions(log, 7), tmp_path / "w")
    assert load_prepared(tmp_path / "w").sequences == log.sequences


def test_split_counts_and_partition(rng):
    log = random_log(rng, n_students=10)
    folds, test = split_students(log, SplitPlan(0.2, 5, seed=4))
    assert len(test) == 2
    non_test = set(range(10)) - set(test)
    assert sorted(s for f in folds for s in f.val) == sorted(non_test)
    for f in folds:
        assert len(f.val) in (1, 2)
        assert set(f.train) | set(f.val) == non_test and not set(f.train) & set(f.val)
    assert split_students(log, SplitPlan(0.2, 5, seed=4)) == (folds, test)


def test_degenerate_split(rng):
    log = random_log(rng, n_students=4)
    folds, test = split_students(log, SplitPlan(0.0, 1))
    assert test == () and folds[0].train == (0, 1, 2, 3) and folds[0].val == ()
    with pytest.raises(TooFewStudents):
        split_students(log, SplitPlan(0.2, 5))


def _one(n, kcs_per_q=1):
    from leakfree_kt import InteractionLog, KcMap
    lists = [tuple(range(kcs_per_q))] * 3
    seq = StudentSequence(0, np.arange(n) % 3, np.ones(n, dtype=int))
    return InteractionLog((seq,), KcMap(tuple(lists), kcs_per_q))


def test_window_boundaries():
    assert [len(s) for s in window_questions(_one(150)).sequences] == [150]
    w = window_questions(_one(310))
    assert [len(s) for s in w.sequences] == [150, 150, 10]
    assert [s.window for s in w.sequences] == [0, 1, 2]
    assert [len(s) for s in window_questions(_one(310), truncate_last=True).sequences] == [150]


def test_window_then_expand_keeps_blocks_whole():
    w = window_questions(_one(310, kcs_per_q=2))
    exp = expand(w)
    assert [len(e) for e in exp] == [300, 300, 20]
    for e in exp:
        assert e.is_last_kc[-1]


def test_windowing_preserves_interactions(rng):
    log = random_log(rng, n_students=8, length=(1, 90))
    for m in (1, 5, 33, 150):
        assert window_questions(log, m).n_interactions == log.n_interactions
