"""Confounded sibling-pair generating model, counterfactuals and causal targets.

Per family the model draws a confounder ``U ~ N(0, sigma_u^2)``, a family
level ``alpha = b_alpha * exp(b_lambda * U) + alpha_tilde`` with
``alpha_tilde ~ N(0, tau^2)``, the family exposure level ``xbar`` in
``{0, 1/2, 1}`` with ``P(xbar = 1/2 | alpha) = expit(b_x * alpha)`` and the
remaining mass split evenly between 0 and 1, and outcomes::

    Y_j = mu + alpha + beta_w X_j + beta_d X_j alpha + beta_c X_{3-j} + eps_j
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .data import Dataset, DgpParams, LatentState
from .rng import RandomSeed, generator, row_normals, seed_sequence, substream

DGP_VERSION = "sibcross-dgp/1"

# (U, alpha_tilde, xbar category, X1 coin, eps1, eps2)
_DRAWS_PER_FAMILY = 6

PRESETS: dict[str, DgpParams] = {
    "scenario1": DgpParams(beta_d=-1.0, beta_c=1.5),
    "scenario2": DgpParams(beta_d=0.0, beta_c=1.5),
    "scenario3": DgpParams(beta_d=-1.0, beta_c=0.0),
    "scenario4": DgpParams(beta_d=0.0, beta_c=0.0),
}


def preset(name: str) -> DgpParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def exposure_level_probs(alpha: np.ndarray, b_x: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``P(xbar = 0 | alpha), P(xbar = 1/2 | alpha), P(xbar = 1 | alpha)``."""
    p_half = expit(b_x * np.asarray(alpha, dtype=float))
    p_end = (1.0 - p_half) / 2.0
    return p_end, p_half, p_end


def pair_probability(alpha: np.ndarray, p: DgpParams, x1: int, x2: int) -> np.ndarray:
    """``P(X1 = x1, X2 = x2 | alpha)`` under the exposure mechanism."""
    p0, p_half, p1 = exposure_level_probs(alpha, p.b_x)
    if x1 == x2:
        return p1 if x1 == 1 else p0
    return p_half * (p.pi_x if x1 == 1 else 1.0 - p.pi_x)


def _draw_exposures(p_half: np.ndarray, u_level: np.ndarray, u_coin: np.ndarray, pi_x: float) -> tuple[np.ndarray, np.ndarray]:
    p0 = (1.0 - p_half) / 2.0
    # category order (0, 1/2, 1), one uniform against cumulative thresholds
    level = np.where(u_level < p0, 0, np.where(u_level < p0 + p_half, 1, 2))
    coin = (u_coin < pi_x).astype(np.int64)
    x1 = np.where(level == 1, coin, level // 2)
    x2 = np.where(level == 1, 1 - coin, level // 2)
    return x1.astype(np.int64), x2.astype(np.int64)


def outcome(mu: float, alpha: Any, own: Any, other: Any, p: DgpParams, eps: Any) -> Any:
    return mu + alpha + p.beta_w * own + p.beta_d * own * alpha + p.beta_c * other + eps


def simulate_dataset(p: DgpParams, seed: RandomSeed, *, meta: Mapping[str, Any] | None = None) -> Dataset:
    """Simulate ``p.n_families`` sibling pairs with their latent state."""
    z = row_normals(seed_sequence(seed), p.n_families, _DRAWS_PER_FAMILY, 0)
    u = p.sigma_u * z[:, 0]
    alpha_tilde = p.tau * z[:, 1]
    alpha = p.b_alpha * np.exp(p.b_lambda * u) + alpha_tilde
    x1, x2 = _draw_exposures(expit(p.b_x * alpha), ndtr(z[:, 2]), ndtr(z[:, 3]), p.pi_x)
    y1 = outcome(p.mu, alpha, x1, x2, p, p.sigma * z[:, 4])
    y2 = outcome(p.mu, alpha, x2, x1, p, p.sigma * z[:, 5])
    info = {"generator": DGP_VERSION, "seed": _seed_repr(seed), **(meta or {})}
    return Dataset(np.arange(1, p.n_families + 1), x1, x2, y1, y2, u=u, alpha=alpha, alpha_tilde=alpha_tilde, meta=info)


def _seed_repr(seed: RandomSeed) -> Any:
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    return int(seed)


def counterfactual_outcome(latent: LatentState | float, p: DgpParams, x1: int, x2: int, eps: float = 0.0) -> float:
    """Sibling-one outcome had the exposures been set to ``(x1, x2)``."""
    alpha = latent.alpha if isinstance(latent, LatentState) else float(latent)
    return float(outcome(p.mu, alpha, x1, x2, p, eps))


# -- causal targets --------------------------------------------------------------


@dataclass(frozen=True)
class TargetValue:
    tau1: float
    tau2_at_0: float
    tau2_at_1: float
    tau3: float
    ndi_deviation: float
    sa_holds: bool


def analytic_targets(p: DgpParams) -> TargetValue:
    mean_alpha = p.mean_alpha
    direct = p.beta_w + p.beta_d * mean_alpha
    # Y1(1, x2) - Y1(0, x2) does not involve x2 here, so the total effect on
    # sibling one equals the controlled direct effect whatever law X2 has.
    return TargetValue(
        tau1=direct,
        tau2_at_0=direct,
        tau2_at_1=direct,
        tau3=direct + p.beta_c,
        ndi_deviation=2.0 * p.beta_c,
        sa_holds=p.beta_d == 0.0,
    )


@dataclass(frozen=True)
class MCEstimate:
    value: float
    std_error: float
    n: int

    def __float__(self) -> float:
        return self.value


def _latent_draws(p: DgpParams, n: int, seed: RandomSeed) -> tuple[np.ndarray, np.ndarray]:
    z = generator(seed, 1).standard_normal((n, 4))
    alpha = p.b_alpha * np.exp(p.b_lambda * p.sigma_u * z[:, 0]) + p.tau * z[:, 1]
    return alpha, z


def monte_carlo_target(
    p: DgpParams,
    contrast: tuple[tuple[int, int], tuple[int, int]],
    n: int,
    seed: RandomSeed,
) -> MCEstimate:
    """Mean of ``Y1(a) - Y1(b)`` over ``n`` fresh latent draws, sharing eps."""
    if n < 1:
        raise ValueError("n must be at least 1")
    (a1, a2), (b1, b2) = contrast
    alpha, z = _latent_draws(p, n, seed)
    eps = p.sigma * z[:, 2]
    diff = outcome(p.mu, alpha, a1, a2, p, eps) - outcome(p.mu, alpha, b1, b2, p, eps)
    sd = float(np.std(diff, ddof=1)) if n > 1 else float("nan")
    return MCEstimate(float(np.mean(diff)), sd / math.sqrt(n), n)


def monte_carlo_mean(p: DgpParams, arm: tuple[int, int], n: int, seed: RandomSeed) -> MCEstimate:
    """Monte Carlo ``E[Y1(x1, x2)]``."""
    alpha, z = _latent_draws(p, n, seed)
    y = outcome(p.mu, alpha, arm[0], arm[1], p, p.sigma * z[:, 2])
    return MCEstimate(float(np.mean(y)), float(np.std(y, ddof=1)) / math.sqrt(n), n)


def monte_carlo_tau1(p: DgpParams, n: int, seed: RandomSeed) -> MCEstimate:
    """``E[Y1(1, X2) - Y1(0, X2)]`` with ``X2`` drawn from the exposure mechanism."""
    alpha, z = _latent_draws(p, n, seed)
    _, x2 = _draw_exposures(expit(p.b_x * alpha), ndtr(z[:, 2]), ndtr(z[:, 3]), p.pi_x)
    diff = outcome(p.mu, alpha, 1, x2, p, 0.0) - outcome(p.mu, alpha, 0, x2, p, 0.0)
    return MCEstimate(float(np.mean(diff)), float(np.std(diff, ddof=1)) / math.sqrt(n), n)


# -- selection into the study ----------------------------------------------------


@dataclass(frozen=True)
class SelectionModel:
    """``P(S = 1 | alpha) = expit(intercept + slope * alpha)``."""

    intercept: float = 0.0
    slope: float = 0.0

    def prob(self, alpha: np.ndarray) -> np.ndarray:
        return expit(self.intercept + self.slope * np.asarray(alpha, dtype=float))


@dataclass(frozen=True, eq=False)
class SelectionSample:
    """A simulated population with selection draws and their probabilities.

    ``population`` holds every family (with latent state); ``selected`` marks
    the families that enter the study; ``p_select`` is ``P(S = 1 | alpha)``.
    """

    population: Dataset
    selected: np.ndarray
    p_select: np.ndarray
    params: DgpParams

    @property
    def study(self) -> Dataset:
        return self.population.take(np.flatnonzero(self.selected))


def simulate_selection_sample(p: DgpParams, selection: SelectionModel, seed: RandomSeed) -> SelectionSample:
    population = simulate_dataset(p, seed)
    prob = selection.prob(population.alpha)
    u = ndtr(row_normals(seed_sequence(seed), p.n_families, 1, 1)[:, 0])
    selected = u < prob
    selected.setflags(write=False)
    prob.setflags(write=False)
    return SelectionSample(population, selected, prob, p)


# -- classic matched comparison ------------------------------------------------


@dataclass(frozen=True)
class MatchingFixture:
    """One-sibling generating model for the matched-comparison check.

    ``X ~ Bernoulli(expit(x_intercept + x_slope L))``, ``Y(0) = gamma L + eps``,
    ``Y(1) = Y(0) + effect + effect_by_l * L``. With ``discrete_l`` the
    confounder takes the midpoints of ``n_bins`` equal-probability normal
    quantile bins, so matching within bins is exact matching on ``L``. With a
    continuous ``L ~ N(0, 1)`` the binning leaves some residual confounding.
    """

    n: int = 20000
    x_intercept: float = -1.0
    x_slope: float = 1.0
    gamma: float = 1.0
    effect: float = 2.0
    effect_by_l: float = 0.0
    sigma: float = 1.0
    n_bins: int = 20
    discrete_l: bool = True


@dataclass(frozen=True)
class CheckReport:
    matched_difference: float
    matched_se: float
    att: float
    ate: float
    n_exposed: int
    n_unexposed: int
    passed: bool
    inconclusive: bool = False
    message: str = ""


def classic_matching_att_check(fixture: MatchingFixture, seed: RandomSeed) -> CheckReport:
    """Compare a one-to-one exact-matched difference with the brute-force ATT.

    Every exposed unit is matched (with replacement) to a random unexposed
    unit in the same equal-probability bin of ``L`` (bin edges are standard
    normal quantiles).
    """
    rng = generator(seed, 2)
    n = fixture.n
    edges = ndtri(np.arange(1, fixture.n_bins) / fixture.n_bins)
    if fixture.discrete_l:
        lvar = ndtri((rng.integers(0, fixture.n_bins, n) + 0.5) / fixture.n_bins)
    else:
        lvar = rng.standard_normal(n)
    x = rng.random(n) < expit(fixture.x_intercept + fixture.x_slope * lvar)
    y0 = fixture.gamma * lvar + fixture.sigma * rng.standard_normal(n)
    y1 = y0 + fixture.effect + fixture.effect_by_l * lvar
    att = float(np.mean((y1 - y0)[x])) if x.any() else float("nan")
    ate = float(np.mean(y1 - y0))
    n_exp, n_unexp = int(x.sum()), int((~x).sum())

    bins = np.searchsorted(edges, lvar, side="right")
    exposed_idx = np.flatnonzero(x)
    matched = np.empty(n_exp, dtype=np.int64)
    for b in np.unique(bins[exposed_idx]):
        exp_b = exposed_idx[bins[exposed_idx] == b]
        pool = np.flatnonzero((~x) & (bins == b))
        if pool.size == 0:
            return CheckReport(float("nan"), float("nan"), att, ate, n_exp, n_unexp, False, True,
                               f"no unexposed candidates in bin {int(b)}")
        matched[np.searchsorted(exposed_idx, exp_b)] = pool[rng.integers(0, pool.size, exp_b.size)]

    pair_diff = y1[exposed_idx] - y0[matched]
    diff = float(np.mean(pair_diff))
    se = float(np.std(pair_diff, ddof=1)) / math.sqrt(n_exp)
    passed = abs(diff - att) <= 3.0 * se
    return CheckReport(diff, se, att, ate, n_exp, n_unexp, passed, False,
                       f"|matched - ATT| = {abs(diff - att):.4g}, 3 SE = {3 * se:.4g}")


def latent_state(d: Dataset, i: int) -> LatentState:
    if not d.has_latent:
        raise ValueError("dataset carries no latent state")
    return LatentState(float(d.u[i]), float(d.alpha[i]), float(d.alpha_tilde[i]))


__all__ = [
    "PRESETS",
    "CheckReport",
    "MCEstimate",
    "MatchingFixture",
    "SelectionModel",
    "SelectionSample",
    "TargetValue",
    "analytic_targets",
    "classic_matching_att_check",
    "counterfactual_outcome",
    "exposure_level_probs",
    "latent_state",
    "monte_carlo_mean",
    "monte_carlo_target",
    "monte_carlo_tau1",
    "pair_probability",
    "preset",
    "simulate_dataset",
    "simulate_selection_sample",
    "substream",
]
