"""Regenerate the bundled analysis fixtures.

    python3 fixtures/make_twin_fixture.py [output_dir]

Writes a Scenario-4 dataset re-expressed as conflict scores (exposed iff
score < -15), the same dataset with explicit exposures, the three-family toy
file and the zero-noise cross-over config.
"""

from __future__ import annotations

import sys
from pathlib import Path

from sibcross.dgp import preset
from sibcross.fixtures import TOY_SCORE_CSV, twin_score_table

SEED = 2024
ZERO_NOISE_CROSSOVER = """# beta = 5 with differential carry-over and no noise
n_families = 50
beta = 5.0
lambda0 = 0.0
lambda1 = 2.0
sd_alpha = 0.0
sd_s = 0.0
sd_eps = 0.0
"""


def main(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    scores, d = twin_score_table(preset("scenario4"), SEED)
    (out / "twin_scores.csv").write_text(scores, encoding="utf-8")
    d.to_csv(out / "twin_dataset.csv", with_latent=False)
    (out / "toy_three_families.csv").write_text(TOY_SCORE_CSV, encoding="utf-8")
    (out / "crossover_zero_noise.toml").write_text(ZERO_NOISE_CROSSOVER, encoding="utf-8")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent)
