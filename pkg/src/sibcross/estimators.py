"""Matched, between-within and logistic estimators.

The between-within model is::

    Y_ij = mu + beta_b * xbar_i + beta_w * (X_ij - xbar_i) + a_i + e_ij

with ``a_i ~ N(0, omega2)`` and ``e_ij ~ N(0, sigma2)``. Variance components
come from REML, profiled over the intraclass correlation
``rho = omega2 / (omega2 + sigma2)``; the fixed effects are then the GLS
solution at the estimated ``rho``. With two siblings per family every
family's correlation matrix is ``[[1, rho], [rho, 1]]``, so the GLS normal
equations only need a handful of sums that are computed once per fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

import numpy as np
from scipy.special import expit

from .data import BwFit, Dataset, FitResult, MissingReason

RHO_MAX = 1.0 - 1e-8
RHO_TOL = 1e-10
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class AlphaConvention(str, Enum):
    """How a family level is rebuilt from a between-within fit.

    ``MAINTEXT``: BLUP + (beta_b - beta_w) * xbar.
    ``APPENDIX``: BLUP + beta_b * xbar. This folds the exposure effect into
    the level and makes the weight models near-separable, so it is kept only
    for comparison.
    """

    APPENDIX = "APPENDIX"
    MAINTEXT = "MAINTEXT"


# -- conditional (matched) estimator ---------------------------------------------


def pair_differences(d: Dataset) -> np.ndarray:
    """Exposed-minus-unexposed outcome difference for each discordant family."""
    disc = d.discordant
    sign = (d.x1[disc] - d.x2[disc]).astype(float)
    return sign * (d.y1[disc] - d.y2[disc])


def conditional_ols(d: Dataset) -> FitResult:
    """OLS of family-mean-centred outcomes on centred exposures, no intercept.

    Only discordant families carry within-family exposure variation. The
    standard error uses the residuals of those families with
    ``n_discordant - 1`` degrees of freedom.
    """
    n_disc = int(np.count_nonzero(d.discordant))
    if n_disc == 0:
        return FitResult.missing_result(MissingReason.INSUFFICIENT_DATA, len(d), note="no within-variation")
    xbar = d.xbar
    ybar = (d.y1 + d.y2) / 2.0
    dx = np.concatenate([d.x1 - xbar, d.x2 - xbar])
    dy = np.concatenate([d.y1 - ybar, d.y2 - ybar])
    sxx = float(np.dot(dx, dx))
    slope = float(np.dot(dx, dy)) / sxx
    se = float("nan")
    if n_disc > 1:
        mask = np.concatenate([d.discordant, d.discordant])
        resid = dy[mask] - slope * dx[mask]
        se = math.sqrt(float(np.dot(resid, resid)) / (n_disc - 1) / sxx)
    return FitResult(slope, se, True, len(d), {"n_discordant": n_disc})


# -- between-within model ----------------------------------------------------------


@dataclass(frozen=True)
class _GlsSums:
    """Sums over families of X'X, X'JX, X'y, X'Jy, y'y, y'Jy with J the swap matrix."""

    xx: np.ndarray
    xjx: np.ndarray
    xy: np.ndarray
    xjy: np.ndarray
    yy: float
    yjy: float
    n_obs: int
    n_families: int
    columns: tuple[str, ...]

    @property
    def rank(self) -> int:
        return len(self.columns)

    def normal_equations(self, rho: float) -> tuple[np.ndarray, np.ndarray, float]:
        """``X'R^-1 X``, ``X'R^-1 y`` and ``y'R^-1 y`` times ``(1 - rho^2)``."""
        return self.xx - rho * self.xjx, self.xy - rho * self.xjy, self.yy - rho * self.yjy


def _gls_sums(d: Dataset, columns: tuple[str, ...]) -> _GlsSums:
    xbar = d.xbar
    parts = {
        "mu": (np.ones(len(d)), np.ones(len(d))),
        "beta_b": (xbar, xbar),
        "beta_w": (d.x1 - xbar, d.x2 - xbar),
    }
    x1 = np.column_stack([parts[c][0] for c in columns])
    x2 = np.column_stack([parts[c][1] for c in columns])
    y1, y2 = d.y1, d.y2
    return _GlsSums(
        xx=x1.T @ x1 + x2.T @ x2,
        xjx=x1.T @ x2 + x2.T @ x1,
        xy=x1.T @ y1 + x2.T @ y2,
        xjy=x1.T @ y2 + x2.T @ y1,
        yy=float(y1 @ y1 + y2 @ y2),
        yjy=float(2.0 * (y1 @ y2)),
        n_obs=2 * len(d),
        n_families=len(d),
        columns=columns,
    )


def reml_objective(sums: _GlsSums, rho: float) -> float:
    """Negative profiled restricted log-likelihood (constants dropped)."""
    a, b, c = sums.normal_equations(rho)
    one_m = 1.0 - rho * rho
    beta = np.linalg.solve(a, b)
    quad = (c - float(b @ beta)) / one_m
    if not quad > 0.0:
        return math.inf
    _, logdet_a = np.linalg.slogdet(a / one_m)
    dof = sums.n_obs - sums.rank
    return 0.5 * (sums.n_families * math.log(one_m) + logdet_a + dof * math.log(quad))


def _golden_section(f, lo: float, hi: float, tol: float, max_iter: int = 200) -> tuple[float, float, list[float]]:
    trace: list[float] = []
    c = hi - _GOLDEN * (hi - lo)
    e = lo + _GOLDEN * (hi - lo)
    fc, fe = f(c), f(e)
    best = min(fc, fe)
    trace.append(best)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if fc <= fe:
            hi, e, fe = e, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, e, fe
            e = lo + _GOLDEN * (hi - lo)
            fe = f(e)
        best = min(best, fc, fe)
        trace.append(best)
    x, fx = (c, fc) if fc <= fe else (e, fe)
    return x, fx, trace


def _newton_polish(f, x: float, fx: float, lo: float, hi: float, trace: list[float], steps: int = 8) -> tuple[float, float]:
    for _ in range(steps):
        h = max(1e-6, 1e-4 * min(x - lo, hi - x)) if lo < x < hi else 1e-6
        if x - h < lo or x + h > hi:
            break
        fp, fm = f(x + h), f(x - h)
        g = (fp - fm) / (2 * h)
        curv = (fp - 2 * fx + fm) / (h * h)
        if not (curv > 0 and math.isfinite(g)):
            break
        cand = min(max(x - g / curv, lo), hi)
        fcand = f(cand)
        if not fcand < fx:
            break
        step = abs(cand - x)
        x, fx = cand, fcand
        trace.append(fx)
        if step < RHO_TOL:
            break
    return x, fx


def blup(omega2: float, sigma2: float, mean_residual: np.ndarray | float, cluster_size: int = 2) -> np.ndarray:
    """Shrunken family mean residual: ``omega2 / (omega2 + sigma2 / m) * r``."""
    denom = omega2 + sigma2 / cluster_size
    factor = 0.0 if omega2 <= 0.0 else omega2 / denom
    return factor * np.asarray(mean_residual, dtype=float)


def fit_bw_model(d: Dataset) -> BwFit:
    """REML fit of the random-intercept between-within model."""
    n = len(d)
    n_disc = int(np.count_nonzero(d.discordant))
    nan = float("nan")

    def failed(reason: MissingReason, note: str) -> BwFit:
        return BwFit(nan, nan, nan, nan, nan, np.full(n, nan), False, n_families=n, n_discordant=n_disc,
                     diagnostics={"missing_reason": reason.value, "note": note})

    if n < 2:
        return failed(MissingReason.INSUFFICIENT_DATA, "fewer than two families")
    if n_disc == 0:
        return failed(MissingReason.INSUFFICIENT_DATA, "no within-variation")

    xbar = d.xbar
    columns: tuple[str, ...] = ("mu", "beta_b", "beta_w")
    if np.ptp(xbar) == 0.0:
        # no between-family exposure variation: beta_b is not identified
        columns = ("mu", "beta_w")
    sums = _gls_sums(d, columns)
    if sums.n_obs - sums.rank <= 0:
        return failed(MissingReason.INSUFFICIENT_DATA, "no residual degrees of freedom")

    a0, b0, c0 = sums.normal_equations(0.0)
    if c0 - float(b0 @ np.linalg.solve(a0, b0)) <= 1e-24 * max(c0, 1.0):
        return _exact_fit(d, sums, n_disc)

    try:
        objective = lambda r: reml_objective(sums, r)  # noqa: E731
        rho, fval, trace = _golden_section(objective, 0.0, RHO_MAX, RHO_TOL)
        f0 = objective(0.0)
        if f0 <= fval:
            rho, fval = 0.0, f0
            trace.append(fval)
        else:
            rho, fval = _newton_polish(objective, rho, fval, 0.0, RHO_MAX, trace)
    except np.linalg.LinAlgError as exc:
        return failed(MissingReason.NONCONVERGENCE, f"singular GLS system: {exc}")
    if not math.isfinite(fval):
        return failed(MissingReason.NONCONVERGENCE, "non-finite restricted likelihood")

    a, b, c = sums.normal_equations(rho)
    one_m = 1.0 - rho * rho
    beta = np.linalg.solve(a, b)
    total_var = (c - float(b @ beta)) / one_m / (sums.n_obs - sums.rank)
    sigma2 = total_var * (1.0 - rho)
    omega2 = total_var * rho
    cov = total_var * one_m * np.linalg.inv(a)
    est = dict(zip(columns, beta))
    se = dict(zip(columns, np.sqrt(np.diag(cov))))

    fixed_mean = est["mu"] + est.get("beta_b", 0.0) * xbar
    mean_resid = (d.y1 + d.y2) / 2.0 - fixed_mean
    blups = blup(omega2, sigma2, mean_resid)
    mean_resid.setflags(write=False)
    blups.setflags(write=False)
    return BwFit(
        mu_hat=float(est["mu"]),
        beta_b_hat=float(est.get("beta_b", nan)),
        beta_w_hat=float(est["beta_w"]),
        omega2_hat=float(omega2),
        sigma2_hat=float(sigma2),
        blups=blups,
        converged=sigma2 > 0.0,
        se_mu=float(se["mu"]),
        se_beta_b=float(se.get("beta_b", nan)),
        se_beta_w=float(se["beta_w"]),
        n_families=n,
        n_discordant=n_disc,
        mean_residual=mean_resid,
        diagnostics={
            "rho_hat": rho,
            "reml_objective": fval,
            "iterations": len(trace),
            "objective_trace": tuple(trace),
            "at_boundary": rho == 0.0,
        },
    )


def _exact_fit(d: Dataset, sums: _GlsSums, n_disc: int) -> BwFit:
    a, b, _ = sums.normal_equations(0.0)
    est = dict(zip(sums.columns, np.linalg.solve(a, b)))
    n = len(d)
    zeros = np.zeros(n)
    zeros.setflags(write=False)
    return BwFit(
        mu_hat=float(est["mu"]),
        beta_b_hat=float(est.get("beta_b", float("nan"))),
        beta_w_hat=float(est["beta_w"]),
        omega2_hat=0.0,
        sigma2_hat=0.0,
        blups=zeros,
        converged=True,
        se_mu=0.0,
        se_beta_b=0.0 if "beta_b" in est else float("nan"),
        se_beta_w=0.0,
        n_families=n,
        n_discordant=n_disc,
        mean_residual=zeros,
        diagnostics={"exact_fit": True, "rho_hat": 0.0, "iterations": 0, "objective_trace": ()},
    )


def estimate_alpha(fit: BwFit, d: Dataset, convention: AlphaConvention | str = AlphaConvention.MAINTEXT) -> np.ndarray:
    """Per-family level rebuilt from BLUPs and the between/within slopes."""
    convention = AlphaConvention(convention)
    if not fit.converged:
        raise ValueError("estimate_alpha needs a converged fit")
    slope = fit.beta_b_hat if convention is AlphaConvention.APPENDIX else fit.beta_b_hat - fit.beta_w_hat
    return np.asarray(fit.blups) + slope * d.xbar


# -- logistic regression -------------------------------------------------------------

MAX_IRLS_ITER = 100
DEVIANCE_TOL = 1e-10
SEPARATION_BOUND = 30.0
GRADIENT_TOL = 1e-6


@dataclass(frozen=True)
class LogisticFit:
    intercept: float
    slopes: tuple[float, ...]
    converged: bool
    iterations: int
    deviance: float
    gradient_norm: float = float("nan")
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    @property
    def slope(self) -> float:
        return self.slopes[0]

    def predict(self, covariate: np.ndarray) -> np.ndarray:
        x = np.asarray(covariate, dtype=float)
        x = x.reshape(-1, 1) if x.ndim == 1 else x
        return expit(self.intercept + x @ np.asarray(self.slopes))


def _deviance(y: np.ndarray, eta: np.ndarray) -> float:
    # -2 log-likelihood; logaddexp keeps it finite at large |eta|
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - y * eta))


def logistic_irls(responses: np.ndarray, covariate: np.ndarray) -> LogisticFit:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    ``covariate`` is one column or an ``(n, k)`` matrix; an intercept is
    always added. Constant columns are dropped and their slopes reported as
    0, so a constant covariate gives the intercept-only fit. Coefficients
    leaving ``[-30, 30]`` are reported as separation.
    """
    y = np.asarray(responses, dtype=float).reshape(-1)
    x = np.asarray(covariate, dtype=float)
    x = x.reshape(-1, 1) if x.ndim == 1 else x
    n, k_cov = x.shape[0], x.shape[1]
    if n < 2 or y.shape[0] != n:
        raise ValueError("need at least two paired observations")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("responses must be 0/1")
    nan = float("nan")
    k = int(y.sum())
    if k == 0 or k == n:
        return LogisticFit(nan, (nan,) * k_cov, False, 0, 0.0, diagnostics={"failure": "single response value"})

    varying = np.ptp(x, axis=0) > 0.0
    design = np.column_stack([np.ones(n), x[:, varying]])
    beta = np.zeros(design.shape[1])
    dev = _deviance(y, design @ beta)
    converged = False
    failure = None
    it = 0
    for it in range(1, MAX_IRLS_ITER + 1):
        eta = design @ beta
        p = expit(eta)
        w = p * (1.0 - p)
        if np.any(w <= 0):
            failure = "fitted probabilities reached 0 or 1"
            break
        z = eta + (y - p) / w
        xtw = design.T * w
        try:
            new_beta = np.linalg.solve(xtw @ design, xtw @ z)
        except np.linalg.LinAlgError:
            failure = "singular weighted design"
            break
        new_dev = _deviance(y, design @ new_beta)
        step = float(np.max(np.abs(new_beta - beta)))
        beta, dev_change, dev = new_beta, abs(dev - new_dev), new_dev
        if np.any(np.abs(beta) > SEPARATION_BOUND):
            failure = "separation"
            break
        # a separated fit keeps moving its slope long after the deviance flattens
        if dev_change < DEVIANCE_TOL and step < 1e-8 * (1.0 + float(np.max(np.abs(beta)))):
            converged = True
            break
    grad = design.T @ (y - expit(design @ beta))
    gnorm = float(np.max(np.abs(grad)))
    if converged and gnorm > GRADIENT_TOL:
        converged, failure = False, "gradient above tolerance"
    if not converged and failure is None:
        failure = "iteration cap"
    slopes = np.zeros(k_cov)
    slopes[varying] = beta[1:]
    diag: dict[str, Any] = {"dropped_constant_columns": int(k_cov - varying.sum())}
    if failure:
        diag["failure"] = failure
    return LogisticFit(float(beta[0]), tuple(float(s) for s in slopes), converged, it, dev, gnorm, diag)


def intercept_only_deviance(responses: np.ndarray) -> float:
    y = np.asarray(responses, dtype=float)
    p = float(y.mean())
    if p in (0.0, 1.0):
        return 0.0
    return float(-2.0 * np.sum(y * math.log(p) + (1 - y) * math.log(1 - p)))
