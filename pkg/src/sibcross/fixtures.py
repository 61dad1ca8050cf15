"""Synthetic input files for the single-dataset analysis command.

The real questionnaire data are not bundled. :func:`twin_score_table`
re-expresses a simulated dataset as two conflict scores per family, chosen so
that thresholding the scores recovers the simulated exposures exactly.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .data import Dataset, DgpParams
from .dgp import simulate_dataset
from .rng import RandomSeed, generator

DEFAULT_THRESHOLD = -15.0
SCORE_HEADER = ("family_id", "score1", "score2", "y1", "y2")
SCORE_RANGE = (-30.0, 0.0)


def exposure_scores(x: np.ndarray, threshold: float, rng: np.random.Generator) -> np.ndarray:
    """Integer-valued scores below ``threshold`` for exposed units and at or above it otherwise."""
    lo, hi = SCORE_RANGE
    below = np.floor(rng.uniform(lo, threshold, x.shape))
    below = np.minimum(below, np.ceil(threshold) - 1.0)
    above = np.ceil(rng.uniform(threshold, hi, x.shape))
    return np.where(np.asarray(x) == 1, below, above)


def scores_from_dataset(d: Dataset, seed: RandomSeed, threshold: float = DEFAULT_THRESHOLD) -> str:
    """CSV text ``family_id,score1,score2,y1,y2`` carrying the exposures of ``d``."""
    rng = generator(seed, 5)
    s1 = exposure_scores(d.x1, threshold, rng)
    s2 = exposure_scores(d.x2, threshold, rng)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_HEADER)
    for i in range(len(d)):
        w.writerow([int(d.family_id[i]), repr(float(s1[i])), repr(float(s2[i])), repr(float(d.y1[i])), repr(float(d.y2[i]))])
    return buf.getvalue()


def twin_score_table(p: DgpParams, seed: RandomSeed, threshold: float = DEFAULT_THRESHOLD) -> tuple[str, Dataset]:
    """Simulate from ``p`` and return the score CSV together with the source dataset."""
    d = simulate_dataset(p, seed)
    return scores_from_dataset(d, seed, threshold), d


# Three families: one discordant each way plus one concordant pair. The
# discordant pair differences (exposed minus unexposed) are 3 and 5.
TOY_SCORE_CSV = """family_id,score1,score2,y1,y2
1,-20,-5,13,10
2,-3,-18,7,12
3,-25,-22,9,11
"""

TOY_PAIR_DIFFERENCES = (3.0, 5.0)
