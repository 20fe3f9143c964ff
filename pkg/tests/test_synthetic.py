import numpy as np
import pytest

from leakfree_kt import PlantedModel, dataset_stats, duplicate_kcs, expand, generate_planted, recency_distances
from leakfree_kt.core import InvalidRange

from conftest import random_log


def test_duplicate_identities(rng):
    log = random_log(rng, n_students=6, max_kcs=3)
    dup = duplicate_kcs(log)
    a, b = dataset_stats(log), dataset_stats(dup)
    assert b.n_kcs == 2 * a.n_kcs
    assert b.mean_kcs_per_question == 2 * a.mean_kcs_per_question
    assert (b.n_questions, b.n_students, b.n_kc_groups) == (a.n_questions, a.n_students, a.n_kc_groups)
    for s, t in zip(log.sequences, dup.sequences):
        assert s.questions.tobytes() == t.questions.tobytes()
        assert s.responses.tobytes() == t.responses.tobytes()
    n = log.n_kcs
    for q, kcs in enumerate(log.kc_map.kcs):
        assert dup.kc_map[q] == tuple(sorted(kcs + tuple(c + n for c in kcs)))


def test_single_kc_question_gains_twin():
    from leakfree_kt import InteractionLog, KcMap, StudentSequence
    log = InteractionLog((StudentSequence(0, np.array([0]), np.array([1])),), KcMap(((0,),), 1))
    dup = duplicate_kcs(log)
    assert dup.kc_map[0] == (0, 1) and dup.sequences[0].responses.tolist() == [1]


def test_duplicates_share_recency(rng):
    log = random_log(rng, n_students=4, max_kcs=3)
    dup = duplicate_kcs(log)
    n = log.n_kcs
    for e, d_orig, e_dup in zip(expand(log), recency_distances(log), expand(dup)):
        per_kc = {(o, c): d for o, c, d in zip(e.question_ordinal.tolist(), e.kc.tolist(), d_orig.tolist())}
        for o, c, d in zip(e_dup.question_ordinal.tolist(), e_dup.kc.tolist(), e_dup.recency.tolist()):
            assert d == per_kc[o, c % n]


def test_kc_names_suffixed(tmp_path):
    from leakfree_kt import parse_csv
    p = tmp_path / "r.csv"
    p.write_text("student,question,kcs,correct\na,Q,x,1\n")
    assert duplicate_kcs(parse_csv(p)).kc_names == ("x", "x__dup")


def test_planted_deterministic():
    a = generate_planted(5, 20, 6, model=PlantedModel(seed=9, questions_per_student=(5, 9)))
    b = generate_planted(5, 20, 6, model=PlantedModel(seed=9, questions_per_student=(5, 9)))
    assert a.sequences == b.sequences and a.kc_map == b.kc_map
    c = generate_planted(5, 20, 6, model=PlantedModel(seed=10, questions_per_student=(5, 9)))
    assert c.sequences != a.sequences


def test_kcs_per_question_range():
    log = generate_planted(3, 50, 30, (2, 3), PlantedModel(questions_per_student=(5, 5)))
    assert {len(k) for k in log.kc_map.kcs} <= {2, 3}


def test_instant_mastery_answers_repeats_correctly():
    # huge gain, no decay, no noise: any question whose KCs were all seen before is answered correctly
    m = PlantedModel(guess=0.0, slip=0.0, gain_mean=1e3, gain_std=0.0, decay=0.0, ability_std=0.0,
                     questions_per_student=(40, 40), seed=1)
    log = generate_planted(10, 8, 4, (1, 2), m)
    for s in log.sequences:
        seen: set = set()
        for q, r in zip(s.questions.tolist(), s.responses.tolist()):
            kcs = set(log.kc_map[q])
            if kcs <= seen:
                assert r == 1
            seen |= kcs


@pytest.mark.parametrize("kw", [dict(guess=1.2), dict(guess=0.6, slip=0.6), dict(decay=-1.0),
                                dict(questions_per_student=(5, 2))])
def test_invalid_parameters(kw):
    with pytest.raises(InvalidRange):
        generate_planted(2, 5, 4, model=PlantedModel(**kw))


def test_invalid_shapes():
    with pytest.raises(InvalidRange):
        generate_planted(2, 5, 2, (2, 3))
    with pytest.raises(InvalidRange):
        generate_planted(2, 5, 4, (3, 2))


def test_first_exposure_monte_carlo():
    """First-exposure correctness against the closed form guess + (1-g-s) sigmoid(ability)."""
    m = PlantedModel(locality=0.0, questions_per_student=(10, 10), seed=5)
    log, truth = generate_planted(12000, 3000, 400, (1, 2), m, return_truth=True)
    amp = 1 - m.guess - m.slip
    hits, expected = [], []
    for s, a in zip(log.sequences, truth.ability):
        seen: set = set()
        for q, r in zip(s.questions.tolist(), s.responses.tolist()):
            kcs = set(log.kc_map[q])
            if not kcs & seen:
                hits.append(r)
                expected.append(m.guess + amp / (1 + np.exp(-a)))
            seen |= kcs
    assert len(hits) >= 100_000
    assert abs(np.mean(hits) - np.mean(expected)) < 0.02
