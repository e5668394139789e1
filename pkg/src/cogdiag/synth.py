"""Synthetic response data with known ground truth.

Used by the test suite for recovery checks and by the demo scripts, so
nothing here depends on the trainer.  The generator plants a
compensatory multi-concept model: correctness probability is the
sigmoid of the summed (ability - difficulty) gaps over the exercise's
concepts, which any of the diagnostic variants should be able to chase.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import ResponseLog
from .numerics import stable_sigmoid
from .seeding import substream


@dataclass
class SyntheticCohort:
    logs: list[ResponseLog]
    q_pairs: list[tuple[str, str]]
    abilities: np.ndarray     # (students, concepts) ground truth
    difficulties: np.ndarray  # (exercises, concepts)


def planted_cohort(
    n_students: int = 200,
    n_exercises: int = 400,
    n_concepts: int = 10,
    per_student: int = 80,
    seed: int = 0,
    ability_range: tuple[float, float] = (-2.0, 2.0),
    max_concepts_per_exercise: int = 3,
    concept_skew: float = 3.0,
) -> SyntheticCohort:
    """Generate a cohort from a planted compensatory model.

    Abilities and difficulties are uniform on ``ability_range``.  Each
    exercise covers one to ``max_concepts_per_exercise`` concepts drawn
    with popularity weights spread linearly up to ``concept_skew``, so
    some concepts end up data-rich and others sparse; that spread is
    what the confidence machinery is supposed to pick up on.
    """
    if per_student > n_exercises:
        raise ValueError("per_student cannot exceed n_exercises (sampling is without replacement)")
    rng = substream(seed, "synthetic")
    abilities = rng.uniform(*ability_range, size=(n_students, n_concepts))
    difficulties = rng.uniform(*ability_range, size=(n_exercises, n_concepts))

    weights = np.linspace(1.0, concept_skew, n_concepts)
    weights = weights / weights.sum()
    concepts_of = []
    for _ in range(n_exercises):
        k = int(rng.integers(1, max_concepts_per_exercise + 1))
        concepts_of.append(np.sort(rng.choice(n_concepts, size=k, replace=False, p=weights)))

    student_ids = [f"s{i:04d}" for i in range(n_students)]
    exercise_ids = [f"e{j:04d}" for j in range(n_exercises)]
    concept_ids = [f"c{l:02d}" for l in range(n_concepts)]

    logs = []
    for i in range(n_students):
        for j in rng.choice(n_exercises, size=per_student, replace=False):
            cs = concepts_of[j]
            p = stable_sigmoid(np.sum(abilities[i, cs] - difficulties[j, cs]))
            score = int(rng.random() < p)
            logs.append(ResponseLog(student_ids[i], exercise_ids[j], score))

    q_pairs = [
        (exercise_ids[j], concept_ids[l]) for j in range(n_exercises) for l in concepts_of[j]
    ]
    return SyntheticCohort(
        logs=logs, q_pairs=q_pairs, abilities=abilities, difficulties=difficulties
    )


def write_cohort_csv(cohort: SyntheticCohort, logs_path, qmatrix_path) -> None:
    with open(logs_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "exercise_id", "score"])
        for log in cohort.logs:
            writer.writerow([log.student_id, log.exercise_id, log.score])
    with open(qmatrix_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["exercise_id", "concept_id"])
        writer.writerows(cohort.q_pairs)
