"""Inverse-probability weights for the family-level contrast.

Weights live on sibling observations but only vary by family: a sibling in
a family where both are exposed gets ``1 / P(both exposed | alpha)`` in arm
1, a sibling in a family where neither is exposed gets
``1 / P(neither exposed | alpha)`` in arm 0, and everybody else gets 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .data import Dataset, DgpParams, FitResult, MissingReason
from .dgp import SelectionSample, exposure_level_probs, pair_probability
from .estimators import logistic_irls

MIN_PROBABILITY = 1e-12


class WeightSource(str, Enum):
    TRUE = "TRUE"
    ESTIMATED_TRUE_ALPHA = "ESTIMATED_TRUE_ALPHA"
    ESTIMATED_EST_ALPHA = "ESTIMATED_EST_ALPHA"
    SELECTION = "SELECTION"


class Normalization(str, Enum):
    HT = "HT"
    HAJEK = "HAJEK"


@dataclass(frozen=True)
class TruncationRule:
    """``NONE``, ``PERCENTILE`` (value is a quantile in (0, 1)) or ``ABSOLUTE`` (value is a cap)."""

    kind: str = "NONE"
    value: float | None = None

    def __post_init__(self) -> None:
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        if kind not in ("NONE", "PERCENTILE", "ABSOLUTE"):
            raise ValueError(f"unknown truncation rule {self.kind!r}")
        if kind == "PERCENTILE" and not (self.value is not None and 0.0 < self.value < 1.0):
            raise ValueError("PERCENTILE needs a quantile in (0, 1)")
        if kind == "ABSOLUTE" and not (self.value is not None and self.value > 0.0):
            raise ValueError("ABSOLUTE needs a positive cap")

    @classmethod
    def parse(cls, text: str | None) -> "TruncationRule":
        """Parse ``none``, ``percentile:0.99841`` or ``absolute:15``."""
        if text is None or text.strip().lower() in ("", "none"):
            return cls()
        kind, _, value = text.partition(":")
        if not value:
            raise ValueError(f"truncation rule {text!r} needs a value, e.g. percentile:0.99841")
        return cls(kind, float(value))

    def __str__(self) -> str:
        return "none" if self.kind == "NONE" else f"{self.kind.lower()}:{self.value:g}"


NO_TRUNCATION = TruncationRule()


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Per-observation weights, shape ``(n_families, 2)`` for each arm.

    ``excluded`` marks observations dropped by a truncation rule. They keep
    their raw weight here but contribute nothing to a contrast and no longer
    count towards the HT denominator.
    """

    family_id: np.ndarray
    arm1: np.ndarray
    arm0: np.ndarray
    source: WeightSource
    excluded: np.ndarray
    truncation: TruncationRule = NO_TRUNCATION
    missing_reason: MissingReason | None = None
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return self.missing_reason is not None

    @property
    def n_excluded(self) -> int:
        return int(np.count_nonzero(self.excluded))

    def effective(self, arm: int) -> np.ndarray:
        """Weights of ``arm`` with excluded observations set to zero."""
        w = self.arm1 if arm == 1 else self.arm0
        return np.where(self.excluded, 0.0, w)

    @property
    def max_weight(self) -> float:
        both = np.concatenate([self.effective(1).ravel(), self.effective(0).ravel()])
        return float(np.max(both)) if both.size else float("nan")

    def to_csv(self, path: str | Path | None = None) -> str:
        """``family_id,sibling,arm,weight,excluded``; arm is NA for discordant families.

        ``weight`` is the value before truncation so excluded points can be plotted.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family_id", "sibling", "arm", "weight", "excluded"])
        pooled = np.maximum(self.arm1, self.arm0)
        xbar = self.diagnostics.get("xbar")
        for i, fid in enumerate(self.family_id):
            arm = "NA" if xbar is None else {1.0: "1", 0.0: "0"}.get(float(xbar[i]), "NA")
            for j in range(2):
                w.writerow([int(fid), j + 1, arm, repr(float(pooled[i, j])), int(bool(self.excluded[i, j]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


def _weights_from_probs(d: Dataset, p_both: np.ndarray, p_neither: np.ndarray, source: WeightSource, **diag: Any) -> WeightSet:
    xbar = d.xbar
    in1, in0 = xbar == 1.0, xbar == 0.0
    reason = None
    if np.any(p_both[in1] < MIN_PROBABILITY) or np.any(p_neither[in0] < MIN_PROBABILITY):
        reason = MissingReason.ZERO_INVERSE_WEIGHT
    with np.errstate(divide="ignore"):
        w1 = np.where(in1, 1.0 / np.where(in1, p_both, 1.0), 0.0)
        w0 = np.where(in0, 1.0 / np.where(in0, p_neither, 1.0), 0.0)
    arm1 = np.repeat(w1[:, None], 2, axis=1)
    arm0 = np.repeat(w0[:, None], 2, axis=1)
    if not (np.all(np.isfinite(arm1)) and np.all(np.isfinite(arm0))):
        reason = MissingReason.ZERO_INVERSE_WEIGHT
    excluded = np.zeros((len(d), 2), dtype=bool)
    _freeze(arm1, arm0, excluded, xbar)
    return WeightSet(d.family_id, arm1, arm0, source, excluded, NO_TRUNCATION, reason, {"xbar": xbar, **diag})


def true_weights(d: Dataset, p: DgpParams) -> WeightSet:
    """Weights from the known exposure mechanism evaluated at the latent alpha."""
    if not d.has_latent:
        raise ValueError("true weights need the latent alpha")
    p0, _, p1 = exposure_level_probs(d.alpha, p.b_x)
    return _weights_from_probs(d, p1, p0, WeightSource.TRUE)


def estimated_weights(
    d: Dataset,
    alpha: np.ndarray,
    *,
    quadratic: bool = False,
    source: WeightSource = WeightSource.ESTIMATED_EST_ALPHA,
) -> WeightSet:
    """Weights from two logistic models of (both exposed) and (neither exposed) on ``alpha``."""
    a = np.asarray(alpha, dtype=float).reshape(-1)
    if a.shape[0] != len(d):
        raise ValueError("need one alpha value per family")
    nan_set = lambda reason, **diag: _missing_weights(d, source, reason, **diag)  # noqa: E731
    if not np.all(np.isfinite(a)):
        return nan_set(MissingReason.INSUFFICIENT_DATA, note="non-finite alpha")
    cov = np.column_stack([a, a * a]) if quadratic else a
    xbar = d.xbar
    models = (("M1", xbar == 1.0), ("M0", xbar == 0.0))
    for name, resp in models:
        if resp.all() or not resp.any():
            return nan_set(MissingReason.EMPTY_ARM, model=name)
    fits = {}
    for name, resp in models:
        fit = logistic_irls(resp.astype(float), cov)
        if not fit.converged:
            return nan_set(MissingReason.NONCONVERGENCE, model=name, failure=fit.diagnostics.get("failure"))
        fits[name] = fit
    p_both = fits["M1"].predict(cov)
    p_neither = fits["M0"].predict(cov)
    return _weights_from_probs(
        d,
        p_both,
        p_neither,
        source,
        m1=(fits["M1"].intercept, *fits["M1"].slopes),
        m0=(fits["M0"].intercept, *fits["M0"].slopes),
    )


def _missing_weights(d: Dataset, source: WeightSource, reason: MissingReason, **diag: Any) -> WeightSet:
    z = np.zeros((len(d), 2))
    excluded = np.zeros((len(d), 2), dtype=bool)
    _freeze(z, excluded)
    return WeightSet(d.family_id, z, z, source, excluded, NO_TRUNCATION, reason, diag)


def truncate_weights(w: WeightSet, rule: TruncationRule) -> WeightSet:
    """Exclude observations whose weight exceeds the rule's threshold."""
    if rule.kind == "NONE" or w.degenerate:
        return replace(w, truncation=rule)
    pooled = np.maximum(w.effective(1), w.effective(0))
    positive = pooled[pooled > 0]
    if positive.size == 0:
        return replace(w, truncation=rule)
    threshold = float(np.quantile(positive, rule.value)) if rule.kind == "PERCENTILE" else float(rule.value)
    newly = pooled > threshold
    excluded = w.excluded | newly
    _freeze(excluded)
    diag = {**w.diagnostics, "truncation_threshold": threshold, "n_truncated": int(np.count_nonzero(newly))}
    return replace(w, excluded=excluded, truncation=rule, diagnostics=diag)


def _arm_mean(y: np.ndarray, weights: np.ndarray, n_included: int, normalization: Normalization) -> float:
    total = float(np.sum(weights))
    if total <= 0.0:
        return float("nan")
    wy = float(np.sum(weights * y))
    return wy / n_included if normalization is Normalization.HT else wy / total


def weighted_contrast(d: Dataset, w: WeightSet, normalization: Normalization | str = Normalization.HT) -> FitResult:
    """Weighted mean outcome in arm 1 minus arm 0.

    HT divides the weighted sum by the number of (non-excluded) sibling
    observations; HAJEK divides by the arm's weight total.
    """
    normalization = Normalization(normalization)
    diag: dict[str, Any] = {"source": w.source.value, "normalization": normalization.value, "truncation": str(w.truncation)}
    if w.degenerate:
        return FitResult.missing_result(w.missing_reason, len(d), **diag, **{k: v for k, v in w.diagnostics.items() if k != "xbar"})
    y = np.column_stack([d.y1, d.y2])
    n_included = int(y.size - w.n_excluded)
    mu1 = _arm_mean(y, w.effective(1), n_included, normalization)
    mu0 = _arm_mean(y, w.effective(0), n_included, normalization)
    diag.update(mu1=mu1, mu0=mu0, max_weight=w.max_weight, n_excluded=w.n_excluded,
                n_truncated=int(w.diagnostics.get("n_truncated", 0)))
    if math.isnan(mu1) or math.isnan(mu0):
        return FitResult.missing_result(MissingReason.EMPTY_ARM, len(d), **diag)
    return FitResult(mu1 - mu0, float("nan"), True, len(d), diag)


# -- selection weighting -----------------------------------------------------------


def selection_weighted_mean(sample: SelectionSample, arm: tuple[int, int], p: DgpParams | None = None) -> FitResult:
    """HT estimate of ``E[Y1(x1, x2)]`` in the whole population from the selected families.

    Sibling 2 of a family with exposures ``(x2, x1)`` contributes to the same
    mean by sibling symmetry.
    """
    p = p or sample.params
    pop = sample.population
    if not pop.has_latent:
        raise ValueError("selection weighting needs the latent alpha")
    if np.any(sample.p_select[sample.selected] < MIN_PROBABILITY) or np.any(sample.p_select <= 0.0):
        return FitResult.missing_result(MissingReason.ZERO_INVERSE_WEIGHT, len(pop))
    x1, x2 = arm
    s = sample.selected
    hit1 = s & (pop.x1 == x1) & (pop.x2 == x2)
    hit2 = s & (pop.x2 == x1) & (pop.x1 == x2)
    f1 = pair_probability(pop.alpha, p, x1, x2) * sample.p_select
    f2 = pair_probability(pop.alpha, p, x2, x1) * sample.p_select
    if np.any(f1[hit1] < MIN_PROBABILITY) or np.any(f2[hit2] < MIN_PROBABILITY):
        return FitResult.missing_result(MissingReason.ZERO_INVERSE_WEIGHT, len(pop))
    w1 = np.where(hit1, 1.0 / np.where(hit1, f1, 1.0), 0.0)
    w2 = np.where(hit2, 1.0 / np.where(hit2, f2, 1.0), 0.0)
    if not (hit1.any() or hit2.any()):
        return FitResult.missing_result(MissingReason.EMPTY_ARM, len(pop), arm=list(arm))
    y = np.column_stack([pop.y1, pop.y2])
    weights = np.column_stack([w1, w2])
    est = float(np.sum(weights * y)) / y.size
    return FitResult(est, float("nan"), True, int(s.sum()), {"arm": list(arm), "max_weight": float(weights.max())})


def selection_weighted_contrast(
    sample: SelectionSample,
    p: DgpParams | None = None,
    arms: tuple[tuple[int, int], tuple[int, int]] = ((1, 1), (0, 0)),
) -> FitResult:
    """Difference of two selection-and-treatment weighted counterfactual means."""
    a = selection_weighted_mean(sample, arms[0], p)
    b = selection_weighted_mean(sample, arms[1], p)
    for r in (a, b):
        if r.missing:
            return r
    return FitResult(
        a.estimate - b.estimate,
        float("nan"),
        True,
        a.n_used,
        {"source": WeightSource.SELECTION.value, "mean_a": a.estimate, "mean_b": b.estimate, "arms": [list(x) for x in arms]},
    )
