"""Monte Carlo scenario runner, summaries and the family-level cluster bootstrap.

Replication ``r`` of scenario ``label`` always draws from the substream
``(seed, crc32(label), r)``, and bootstrap replicate ``b`` from
``(seed, b)``. Work can therefore be split over any number of processes and
the aggregated output is bit-identical.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .data import BwFit, Dataset, DgpParams, FitResult, MissingReason
from .dgp import SelectionModel, analytic_targets, simulate_dataset, simulate_selection_sample
from .estimators import AlphaConvention, estimate_alpha, fit_bw_model
from .rng import RandomSeed, generator, label_key, substream
from .weighting import (
    NO_TRUNCATION,
    Normalization,
    TruncationRule,
    WeightSet,
    WeightSource,
    estimated_weights,
    selection_weighted_contrast,
    true_weights,
    truncate_weights,
    weighted_contrast,
)

Z_95 = 1.959964


class Procedure(str, Enum):
    BW = "BW"
    W_TRUE = "W_TRUE"
    W_EST_TRUE_ALPHA = "W_EST_TRUE_ALPHA"
    W_EST_EST_ALPHA = "W_EST_EST_ALPHA"
    SELECTION = "SELECTION"


TABLE_PROCEDURES = (Procedure.BW, Procedure.W_TRUE, Procedure.W_EST_TRUE_ALPHA, Procedure.W_EST_EST_ALPHA)

COLUMN_TITLES = {
    Procedure.BW: "BW model",
    Procedure.W_TRUE: "Weighting w(alpha)",
    Procedure.W_EST_TRUE_ALPHA: "Weighting w^(alpha)",
    Procedure.W_EST_EST_ALPHA: "Weighting w^(alpha^)",
    Procedure.SELECTION: "Selection weighting",
}


def parse_procedures(names: Iterable[str | Procedure]) -> tuple[Procedure, ...]:
    out = []
    for name in names:
        try:
            out.append(Procedure(name.upper() if isinstance(name, str) else name))
        except ValueError:
            raise ValueError(f"unknown procedure {name!r}; choose from {', '.join(p.value for p in Procedure)}") from None
    return tuple(out)


@dataclass(frozen=True)
class ScenarioConfig:
    label: str
    dgp: DgpParams
    n_replications: int = 2000
    procedures: tuple[Procedure, ...] = TABLE_PROCEDURES
    seed: int = 20240501
    truncation: TruncationRule = NO_TRUNCATION
    normalization: Normalization = Normalization.HAJEK
    alpha_convention: AlphaConvention = AlphaConvention.MAINTEXT
    quadratic_weights: bool = False
    selection: SelectionModel | None = None

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("label must be non-empty")
        if self.n_replications < 1:
            raise ValueError("n_replications must be at least 1")
        object.__setattr__(self, "procedures", parse_procedures(self.procedures))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        object.__setattr__(self, "alpha_convention", AlphaConvention(self.alpha_convention))
        if Procedure.SELECTION in self.procedures and self.selection is None:
            raise ValueError("the SELECTION procedure needs a selection model")

    @property
    def target(self) -> float:
        return analytic_targets(self.dgp).tau3


def _weighted(d: Dataset, weights, cfg: ScenarioConfig) -> FitResult:
    return weighted_contrast(d, truncate_weights(weights, cfg.truncation), cfg.normalization)


def run_replication(cfg: ScenarioConfig, rep_index: int) -> dict[Procedure, FitResult]:
    """One simulated dataset analysed by every requested procedure.

    Failures never raise; they come back as missing results whose
    diagnostics carry a :class:`MissingReason`.
    """
    stream = substream(cfg.seed, label_key(cfg.label), rep_index)
    sample = None
    if cfg.selection is not None:
        sample = simulate_selection_sample(cfg.dgp, cfg.selection, stream)
        d = sample.study
    else:
        d = simulate_dataset(cfg.dgp, stream, meta={"scenario": cfg.label, "rep": rep_index})
    out: dict[Procedure, FitResult] = {}
    fit = None
    if Procedure.BW in cfg.procedures or Procedure.W_EST_EST_ALPHA in cfg.procedures:
        fit = fit_bw_model(d)
    for proc in cfg.procedures:
        if proc is Procedure.BW:
            out[proc] = fit.within_result()
        elif proc is Procedure.W_TRUE:
            out[proc] = _weighted(d, true_weights(d, cfg.dgp), cfg)
        elif proc is Procedure.W_EST_TRUE_ALPHA:
            w = estimated_weights(d, d.alpha, quadratic=cfg.quadratic_weights, source=WeightSource.ESTIMATED_TRUE_ALPHA)
            out[proc] = _weighted(d, w, cfg)
        elif proc is Procedure.W_EST_EST_ALPHA:
            if not fit.converged:
                out[proc] = FitResult.missing_result(MissingReason.NONCONVERGENCE, len(d), stage="bw fit")
                continue
            alpha_hat = estimate_alpha(fit, d, cfg.alpha_convention)
            w = estimated_weights(d, alpha_hat, quadratic=cfg.quadratic_weights, source=WeightSource.ESTIMATED_EST_ALPHA)
            out[proc] = _weighted(d, w, cfg)
        elif proc is Procedure.SELECTION:
            out[proc] = selection_weighted_contrast(sample)
    return out


# -- summaries -------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    n: int
    mean: float
    bias: float
    sd: float


def summarize_estimates(estimates: Iterable[float | None], target: float) -> SummaryRow:
    """Count, mean, bias and empirical SD of the non-missing estimates."""
    vals = np.array([np.nan if e is None else e for e in estimates], dtype=float)
    vals = vals[np.isfinite(vals)]
    n = int(vals.size)
    if n == 0:
        return SummaryRow(0, math.nan, math.nan, math.nan)
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1)) if n > 1 else math.nan
    return SummaryRow(n, mean, mean - target, sd)


@dataclass(frozen=True, eq=False)
class ScenarioReport:
    """Per-procedure summaries plus the raw replication estimates.

    ``estimates[k, r]`` is procedure ``k``'s estimate in replication ``r``
    (NaN when missing); ``reasons`` counts missing results by reason.
    """

    label: str
    target: float
    n_replications: int
    procedures: tuple[Procedure, ...]
    rows: Mapping[Procedure, SummaryRow]
    estimates: np.ndarray
    reasons: Mapping[Procedure, Mapping[str, int]] = field(default_factory=dict)

    def to_text(self) -> str:
        return format_table(self.label, self.target, self.n_replications, self.rows)

    def csv_rows(self) -> list[list[Any]]:
        return [[self.label, p.value, r.n, _csv_num(r.mean), _csv_num(r.bias), _csv_num(r.sd)] for p, r in self.rows.items()]

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "rep", *[p.value for p in self.procedures]])
        for r in range(self.n_replications):
            w.writerow([self.label, r, *[_csv_num(v) for v in self.estimates[:, r]]])
        return buf.getvalue()


def format_table(label: str, target: float, n_replications: int | None, rows: Mapping[Procedure, SummaryRow]) -> str:
    """Aligned N / Mean / Bias / SE block, one column per procedure."""
    width = 22
    procs = list(rows)
    rule = "-" * (6 + width * len(procs))
    reps = f", {n_replications} replications" if n_replications is not None else ""
    lines = [f"{label}  (target tau3 = {target:.4f}{reps})", rule]
    lines.append(f"{'':6}" + "".join(f"{COLUMN_TITLES[p]:>{width}}" for p in procs))
    lines.append(rule)
    cells = {"N": lambda r: f"{r.n:d}", "Mean": lambda r: _fmt(r.mean), "Bias": lambda r: _fmt(r.bias), "SE": lambda r: _fmt(r.sd)}
    for name, f in cells.items():
        lines.append(f"{name:6}" + "".join(f"{f(rows[p]):>{width}}" for p in procs))
    lines.append(rule)
    return "\n".join(lines)


REPORT_HEADER = ["scenario", "procedure", "n", "mean", "bias", "sd"]


def reports_csv(reports: Sequence[ScenarioReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for rep in reports:
        w.writerows(rep.csv_rows())
    return buf.getvalue()


def _fmt(v: float) -> str:
    return "NA" if not math.isfinite(v) else f"{v:.2f}"


def _csv_num(v: float) -> str:
    return "" if not math.isfinite(v) else repr(float(v))


def _run_chunk(args: tuple[ScenarioConfig, Sequence[int]]) -> list[tuple[int, dict[Procedure, FitResult]]]:
    cfg, reps = args
    return [(r, run_replication(cfg, r)) for r in reps]


def _map_chunks(fn, cfg: Any, indices: Sequence[int], workers: int) -> list[Any]:
    if workers <= 1 or len(indices) < 2:
        return fn((cfg, indices))
    n_chunks = min(len(indices), workers * 4)
    chunks = [indices[k::n_chunks] for k in range(n_chunks)]
    out: list[Any] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(fn, [(cfg, c) for c in chunks]):
            out.extend(part)
    return out


def run_scenario(cfg: ScenarioConfig, workers: int = 1) -> ScenarioReport:
    """Run every replication and summarise against the analytic tau3."""
    results = dict(_map_chunks(_run_chunk, cfg, list(range(cfg.n_replications)), workers))
    est = np.full((len(cfg.procedures), cfg.n_replications), np.nan)
    reasons: dict[Procedure, dict[str, int]] = {p: {} for p in cfg.procedures}
    for r in range(cfg.n_replications):
        for k, proc in enumerate(cfg.procedures):
            res = results[r][proc]
            if res.missing:
                why = res.reason or MissingReason.NONCONVERGENCE.value
                reasons[proc][why] = reasons[proc].get(why, 0) + 1
            else:
                est[k, r] = res.estimate
    target = cfg.target
    rows = {proc: summarize_estimates(est[k], target) for k, proc in enumerate(cfg.procedures)}
    est.setflags(write=False)
    return ScenarioReport(cfg.label, target, cfg.n_replications, cfg.procedures, rows, est, reasons)


# -- cluster bootstrap -------------------------------------------------------------


class AnalysisKind(str, Enum):
    BW_WITHIN = "BW_WITHIN"
    WEIGHTED_CONTRAST = "WEIGHTED_CONTRAST"


@dataclass(frozen=True)
class Analysis:
    """A complete single-dataset pipeline that the bootstrap re-runs on every resample."""

    kind: AnalysisKind = AnalysisKind.BW_WITHIN
    truncation: TruncationRule = NO_TRUNCATION
    normalization: Normalization = Normalization.HAJEK
    alpha_convention: AlphaConvention = AlphaConvention.MAINTEXT
    quadratic_weights: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AnalysisKind(self.kind))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        object.__setattr__(self, "alpha_convention", AlphaConvention(self.alpha_convention))


def analysis_weights(d: Dataset, analysis: Analysis, fit: BwFit | None = None) -> WeightSet | None:
    """Truncated estimated weights of the weighted pipeline, or None when the BW fit failed."""
    fit = fit if fit is not None else fit_bw_model(d)
    if not fit.converged:
        return None
    alpha_hat = estimate_alpha(fit, d, analysis.alpha_convention)
    w = estimated_weights(d, alpha_hat, quadratic=analysis.quadratic_weights)
    return truncate_weights(w, analysis.truncation)


def run_analysis(d: Dataset, analysis: Analysis) -> FitResult:
    fit = fit_bw_model(d)
    if analysis.kind is AnalysisKind.BW_WITHIN:
        return fit.within_result()
    w = analysis_weights(d, analysis, fit)
    if w is None:
        return FitResult.missing_result(MissingReason.NONCONVERGENCE, len(d), stage="bw fit")
    return weighted_contrast(d, w, analysis.normalization)


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    estimate: float
    boot_se: float
    ci_low: float
    ci_high: float
    n_boot: int
    n_failed: int
    replicates: np.ndarray
    n_truncated: np.ndarray
    point: FitResult | None = None

    @property
    def missing(self) -> bool:
        return not math.isfinite(self.estimate) or not math.isfinite(self.boot_se)

    def to_dict(self) -> dict[str, Any]:
        num = lambda v: float(v) if math.isfinite(v) else None  # noqa: E731
        return {
            "estimate": num(self.estimate),
            "boot_se": num(self.boot_se),
            "ci_low": num(self.ci_low),
            "ci_high": num(self.ci_high),
            "n_boot": self.n_boot,
            "n_failed": self.n_failed,
        }


def _bootstrap_chunk(args: tuple[tuple[Dataset, Analysis, RandomSeed], Sequence[int]]) -> list[tuple[int, FitResult]]:
    (d, analysis, seed), reps = args
    n = len(d)
    out = []
    for b in reps:
        idx = generator(seed, b).integers(0, n, n)
        resample = d.take(idx, renumber=True, meta={"bootstrap_replicate": b})
        out.append((b, run_analysis(resample, analysis)))
    return out


def cluster_bootstrap(d: Dataset, analysis: Analysis, B: int, seed: RandomSeed, workers: int = 1) -> BootstrapResult:
    """Resample families with replacement and re-run the whole pipeline ``B`` times.

    Weight estimation and any truncation rule are redone inside each
    replicate. Failed replicates are left out of the SD and counted in
    ``n_failed``. The interval is Wald: estimate -/+ 1.959964 * boot_se.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    point = run_analysis(d, analysis)
    results = dict(_map_chunks(_bootstrap_chunk, (d, analysis, seed), list(range(B)), workers))
    reps = np.array([results[b].estimate for b in range(B)])
    n_trunc = np.array([int(results[b].diagnostics.get("n_truncated", 0)) for b in range(B)])
    ok = np.isfinite(reps)
    n_failed = int(B - ok.sum())
    nan = math.nan
    if ok.sum() < 2 or point.missing:
        return BootstrapResult(point.estimate, nan, nan, nan, B, n_failed, reps, n_trunc, point)
    se = float(np.std(reps[ok], ddof=1))
    return BootstrapResult(point.estimate, se, point.estimate - Z_95 * se, point.estimate + Z_95 * se, B, n_failed, reps, n_trunc, point)
