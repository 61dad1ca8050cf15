from __future__ import annotations

import numpy as np
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from sibcross.data import Dataset

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def small_datasets(draw, min_families: int = 3, max_families: int = 40, need_discordant: bool = True) -> Dataset:
    """Random pair data with integer-ish outcomes and mixed concordance."""
    n = draw(st.integers(min_families, max_families))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    x1 = rng.integers(0, 2, n)
    x2 = rng.integers(0, 2, n)
    if need_discordant:
        x1[0], x2[0] = 1, 0
        x1[-1], x2[-1] = 1, 1
    a = rng.normal(0, 2, n)
    y1 = 3.0 + a + 2.0 * x1 + rng.normal(0, 1, n)
    y2 = 3.0 + a + 2.0 * x2 + rng.normal(0, 1, n)
    return Dataset(np.arange(1, n + 1), x1, x2, y1, y2, alpha=a, u=np.zeros(n), alpha_tilde=a)


def reml_closed_form(d: Dataset) -> dict[str, float]:
    """REML for pairs via the sum/difference rotation.

    Family sums carry (mu, beta_b) with variance 2 omega2 + sigma2, family
    differences carry beta_w with variance sigma2; the two pieces are
    independent OLS problems, coupled only by omega2 >= 0.
    """
    n = len(d)
    xbar = d.xbar
    s = (d.y1 + d.y2) / 2.0
    design = np.column_stack([np.ones(n), xbar])
    coef, *_ = np.linalg.lstsq(design, s, rcond=None)
    rss_b = 2.0 * float(np.sum((s - design @ coef) ** 2))
    dx = d.x1 - d.x2
    dy = d.y1 - d.y2
    disc = dx != 0
    bw = float(np.sum(dx[disc] * dy[disc]) / np.sum(dx[disc] ** 2))
    rss_w = float(np.sum((dy - bw * dx) ** 2)) / 2.0
    lam1 = rss_b / (n - 2)
    sigma2 = rss_w / (n - 1)
    if lam1 >= sigma2:
        omega2 = (lam1 - sigma2) / 2.0
    else:
        lam1 = sigma2 = (rss_b + rss_w) / (2 * n - 3)
        omega2 = 0.0
    return {"mu": coef[0], "beta_b": coef[1], "beta_w": bw, "sigma2": sigma2, "omega2": omega2,
            "se_beta_w": (2.0 * sigma2 / disc.sum()) ** 0.5}
