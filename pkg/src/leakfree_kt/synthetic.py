"""Duplicated-KC stress datasets and a planted-skill response generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import InteractionLog, InvalidRange, KcMap, StudentSequence
from .seeding import rng_for


def duplicate_kcs(log: InteractionLog) -> InteractionLog:
    """Replace each KC ``c`` by the pair ``(c, c + n_kcs)``.

    Students, questions, responses and order are untouched, so every question
    carries at least two perfectly correlated KCs.
    """
    n = log.n_kcs
    lists = tuple(tuple(sorted(kcs + tuple(c + n for c in kcs))) for kcs in log.kc_map.kcs)
    names = None
    if log.kc_names is not None:
        names = tuple(log.kc_names) + tuple(f"{k}__dup" for k in log.kc_names)
    return InteractionLog(log.sequences, KcMap(lists, 2 * n), log.question_names, names,
                          log.student_names)


@dataclass(frozen=True)
class PlantedModel:
    """Ground-truth mastery process.

    P(correct) = guess + (1 - guess - slip) * sigmoid(logit) where
    logit = ability - difficulty(q) + mean over the question's KCs of
    gain(c) * exposures(c) * exp(-decay * gap(c)), and gap counts questions
    since the KC was last practised.
    """

    guess: float = 0.1
    slip: float = 0.1
    gain_mean: float = 0.25
    gain_std: float = 0.1
    decay: float = 0.15
    ability_std: float = 1.5
    difficulty_std: float = 0.0
    locality: float = 0.5
    questions_per_student: tuple[int, int] = (100, 300)
    seed: int = 0

    def validate(self) -> None:
        for name in ("guess", "slip", "locality"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidRange(f"{name}={v} is not a probability")
        if self.guess + self.slip > 1.0:
            raise InvalidRange("guess + slip must not exceed 1")
        if min(self.gain_std, self.decay, self.ability_std, self.difficulty_std) < 0:
            raise InvalidRange("scale parameters must be non-negative")
        lo, hi = self.questions_per_student
        if not 1 <= lo <= hi:
            raise InvalidRange(f"questions_per_student {self.questions_per_student} is not a valid range")


@dataclass
class PlantedTruth:
    kc_gain: np.ndarray
    question_difficulty: np.ndarray
    ability: np.ndarray
    # per student: P(correct) that generated each response
    p_correct: list[np.ndarray] = field(default_factory=list)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_planted(n_students: int, n_questions: int, n_kcs: int,
                     kcs_per_question_range: tuple[int, int] = (2, 3),
                     model: PlantedModel = PlantedModel(), return_truth: bool = False):
    """Sample an :class:`InteractionLog` from the planted mastery process.

    ``n_questions`` is the size of the question bank; each student answers a
    number of questions drawn from ``model.questions_per_student``.
    """
    lo, hi = kcs_per_question_range
    if not 1 <= lo <= hi:
        raise InvalidRange(f"kcs_per_question_range {kcs_per_question_range} is empty")
    if n_kcs < hi:
        raise InvalidRange(f"n_kcs={n_kcs} is smaller than {hi} KCs per question")
    if n_students < 1 or n_questions < 1:
        raise InvalidRange("need at least one student and one question")
    model.validate()

    rng = rng_for(model.seed, "planted-bank")
    kc_lists = []
    for _ in range(n_questions):
        k = int(rng.integers(lo, hi + 1))
        kc_lists.append(tuple(sorted(rng.choice(n_kcs, size=k, replace=False).tolist())))
    kc_map = KcMap(tuple(kc_lists), n_kcs)
    gain = np.clip(rng.normal(model.gain_mean, model.gain_std, size=n_kcs), 0.0, None)
    difficulty = rng.normal(0.0, model.difficulty_std, size=n_questions)

    by_kc: list[list[int]] = [[] for _ in range(n_kcs)]
    for q, kcs in enumerate(kc_lists):
        for c in kcs:
            by_kc[c].append(q)
    by_kc_arr = [np.asarray(v) for v in by_kc]

    abilities = rng_for(model.seed, "planted-ability").normal(0.0, model.ability_std, size=n_students)
    truth = PlantedTruth(gain, difficulty, abilities)
    seqs = []
    qlo, qhi = model.questions_per_student
    amp = 1.0 - model.guess - model.slip
    for s in range(n_students):
        srng = rng_for(model.seed, "planted-student", s)
        length = int(srng.integers(qlo, qhi + 1))
        exposures = np.zeros(n_kcs)
        last = np.zeros(n_kcs)
        questions = np.empty(length, dtype=np.int64)
        responses = np.empty(length, dtype=np.int64)
        probs = np.empty(length)
        prev = None
        for i in range(length):
            if prev is not None and srng.random() < model.locality:
                c = kc_lists[prev][int(srng.integers(len(kc_lists[prev])))]
                pool = by_kc_arr[c]
                q = int(pool[srng.integers(len(pool))])
            else:
                q = int(srng.integers(n_questions))
            kcs = np.asarray(kc_lists[q])
            gap = i - last[kcs]
            knowledge = gain[kcs] * exposures[kcs] * np.exp(-model.decay * gap)
            logit = abilities[s] - difficulty[q] + knowledge.mean()
            p = model.guess + amp * _sigmoid(logit)
            questions[i] = q
            probs[i] = p
            responses[i] = int(srng.random() < p)
            exposures[kcs] += 1
            last[kcs] = i
            prev = q
        seqs.append(StudentSequence(s, questions, responses))
        truth.p_correct.append(probs)
    out = InteractionLog(tuple(seqs), kc_map)
    return (out, truth) if return_truth else out
