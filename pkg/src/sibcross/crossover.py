"""Within-family two-period (ABBA) cross-over model and its estimators.

Each family randomises one sibling to arm 1 (exposed in period 1, unexposed
in period 2) and the other to arm 2 (the reverse). Outcomes follow::

    Y_ijp = mu + pi [p - 1]
            + beta [(2 - A_ij)(2 - p) + (A_ij - 1)(p - 1)]
            + lambda_{2 - A_ij} [p - 1] + alpha_i + s_ij + eps_ijp

so arm 1 carries ``lambda1`` into period 2 and arm 2 carries ``lambda0``.
Estimators reduce each family to one contrast (one sibling per arm), which
makes their standard errors simple family-level SDs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.special import ndtr

from .data import FitResult, MissingReason
from .rng import RandomSeed, row_normals, seed_sequence


@dataclass(frozen=True)
class CrossoverParams:
    n_families: int = 1000
    mu: float = 0.0
    pi_effect: float = 0.0
    beta: float = 1.0
    lambda0: float = 0.0
    lambda1: float = 0.0
    sd_alpha: float = 1.0
    sd_s: float = 1.0
    sd_eps: float = 1.0

    def __post_init__(self) -> None:
        if int(self.n_families) != self.n_families or self.n_families < 1:
            raise ValueError("n_families must be a positive integer")
        object.__setattr__(self, "n_families", int(self.n_families))
        for f in fields(self):
            if f.name != "n_families":
                object.__setattr__(self, f.name, float(getattr(self, f.name)))
        for name in ("sd_alpha", "sd_s", "sd_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CrossoverParams":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown CrossoverParams keys: {', '.join(sorted(unknown))}")
        return cls(**dict(data))


@dataclass(frozen=True, eq=False)
class CrossoverDataset:
    """``arm[i, j]`` in {1, 2}; ``y[i, j, p]`` for sibling ``j`` in period ``p + 1``."""

    family_id: np.ndarray
    arm: np.ndarray
    y: np.ndarray
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arm = np.array(self.arm, dtype=np.int64)
        y = np.array(self.y, dtype=float)
        fid = np.array(self.family_id, dtype=np.int64)
        n = fid.shape[0]
        if arm.shape != (n, 2) or y.shape != (n, 2, 2):
            raise ValueError("arm must be (n, 2) and y (n, 2, 2)")
        if n and not np.all(np.sort(arm, axis=1) == [1, 2]):
            raise ValueError("each family needs one sibling in each arm")
        for a in (arm, y, fid):
            a.setflags(write=False)
        object.__setattr__(self, "arm", arm)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "family_id", fid)

    def __len__(self) -> int:
        return int(self.family_id.shape[0])

    def _by_arm(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-family value of the arm-1 sibling and of the arm-2 sibling."""
        first_is_arm1 = self.arm[:, 0] == 1
        v1 = np.where(first_is_arm1, values[:, 0], values[:, 1])
        v2 = np.where(first_is_arm1, values[:, 1], values[:, 0])
        return v1, v2

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family_id", "sibling", "arm", "period", "y"])
        for i, fid in enumerate(self.family_id):
            for j in range(2):
                for p in range(2):
                    w.writerow([int(fid), j + 1, int(self.arm[i, j]), p + 1, repr(float(self.y[i, j, p]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv_text(cls, text: str) -> "CrossoverDataset":
        rows = list(csv.DictReader(io.StringIO(text)))
        ids = sorted({int(r["family_id"]) for r in rows})
        pos = {fid: k for k, fid in enumerate(ids)}
        arm = np.zeros((len(ids), 2), dtype=np.int64)
        y = np.full((len(ids), 2, 2), np.nan)
        for r in rows:
            i, j, p = pos[int(r["family_id"])], int(r["sibling"]) - 1, int(r["period"]) - 1
            arm[i, j] = int(r["arm"])
            y[i, j, p] = float(r["y"])
        return cls(np.array(ids), arm, y)


def crossover_outcome(p: CrossoverParams, arm: Any, period: int, alpha: Any = 0.0, s: Any = 0.0, eps: Any = 0.0) -> Any:
    arm = np.asarray(arm)
    treat = (2 - arm) * (2 - period) + (arm - 1) * (period - 1)
    carry = np.where(arm == 1, p.lambda1, p.lambda0) * (period - 1)
    return p.mu + p.pi_effect * (period - 1) + p.beta * treat + carry + alpha + s + eps


def simulate_crossover(p: CrossoverParams, seed: RandomSeed) -> CrossoverDataset:
    # per family: alpha, s1, s2, eps11, eps12, eps21, eps22, arm coin
    z = row_normals(seed_sequence(seed), p.n_families, 8, 3)
    first_arm = np.where(ndtr(z[:, 7]) < 0.5, 1, 2)
    arm = np.column_stack([first_arm, 3 - first_arm])
    alpha = p.sd_alpha * z[:, 0]
    y = np.empty((p.n_families, 2, 2))
    for j in range(2):
        s = p.sd_s * z[:, 1 + j]
        for per in range(2):
            eps = p.sd_eps * z[:, 3 + 2 * j + per]
            y[:, j, per] = crossover_outcome(p, arm[:, j], per + 1, alpha, s, eps)
    return CrossoverDataset(np.arange(1, p.n_families + 1), arm, y, meta={"seed": seed if isinstance(seed, int) else None})


def _family_contrast(c: np.ndarray, kind: str) -> FitResult:
    n = c.shape[0]
    if n == 0:
        return FitResult.missing_result(MissingReason.EMPTY_ARM, 0, estimator=kind)
    se = float(np.std(c, ddof=1)) / math.sqrt(n) if n > 1 else float("nan")
    return FitResult(float(np.mean(c)), se, True, n, {"estimator": kind})


def _check_arms(d: CrossoverDataset, kind: str) -> FitResult | None:
    if len(d) == 0 or not (np.any(d.arm == 1) and np.any(d.arm == 2)):
        return FitResult.missing_result(MissingReason.EMPTY_ARM, len(d), estimator=kind)
    return None


def period_difference_estimator(d: CrossoverDataset) -> FitResult:
    """Half the between-arm difference of within-sibling period differences."""
    bad = _check_arms(d, "period_difference")
    if bad:
        return bad
    delta = d.y[:, :, 0] - d.y[:, :, 1]
    d1, d2 = d._by_arm(delta)
    est = (float(np.mean(d1)) - float(np.mean(d2))) / 2.0
    fam = _family_contrast((d1 - d2) / 2.0, "period_difference")
    return FitResult(est, fam.std_error, True, fam.n_used, fam.diagnostics)


def cosibling_substitution_estimator(d: CrossoverDataset) -> FitResult:
    """Period-2 only: the cosibling's period-2 outcome stands in for period 1."""
    bad = _check_arms(d, "cosibling_substitution")
    if bad:
        return bad
    y2 = d.y[:, :, 1]
    delta = y2[:, ::-1] - y2
    d1, d2 = d._by_arm(delta)
    est = (float(np.mean(d1)) - float(np.mean(d2))) / 2.0
    fam = _family_contrast((d1 - d2) / 2.0, "cosibling_substitution")
    return FitResult(est, fam.std_error, True, fam.n_used, fam.diagnostics)


def carryover_difference_estimator(d: CrossoverDataset) -> FitResult:
    """Between-arm difference of within-sibling sums; estimates ``lambda1 - lambda0``."""
    bad = _check_arms(d, "carryover_difference")
    if bad:
        return bad
    total = d.y[:, :, 0] + d.y[:, :, 1]
    s1, s2 = d._by_arm(total)
    est = float(np.mean(s1)) - float(np.mean(s2))
    fam = _family_contrast(s1 - s2, "carryover_difference")
    return FitResult(est, fam.std_error, True, fam.n_used, fam.diagnostics)


def crossover_exposure_effect(d: CrossoverDataset) -> FitResult:
    """Average over arms of each sibling's exposed-minus-unexposed period difference."""
    bad = _check_arms(d, "crossover_exposure_effect")
    if bad:
        return bad
    (p1_arm1, p1_arm2), (p2_arm1, p2_arm2) = d._by_arm(d.y[:, :, 0]), d._by_arm(d.y[:, :, 1])
    exposed_first = p1_arm1 - p2_arm1  # arm 1: exposed in period 1
    exposed_second = p2_arm2 - p1_arm2  # arm 2: exposed in period 2
    est = 0.5 * (float(np.mean(exposed_first)) + float(np.mean(exposed_second)))
    fam = _family_contrast(0.5 * (exposed_first + exposed_second), "crossover_exposure_effect")
    return FitResult(est, fam.std_error, True, fam.n_used, fam.diagnostics)


@dataclass(frozen=True)
class BiasDecomposition:
    beta_period: FitResult
    beta_cosibling: FitResult
    carryover_difference: FitResult
    predicted_period_bias: float
    predicted_cosibling_bias: float
    beta: float

    def rows(self) -> list[tuple[str, float, float, float]]:
        """(label, estimate, std_error, prediction) rows."""
        return [
            ("beta_hat (period differences)", self.beta_period.estimate, self.beta_period.std_error,
             self.beta + self.predicted_period_bias),
            ("beta_hat (cosibling substitution)", self.beta_cosibling.estimate, self.beta_cosibling.std_error,
             self.beta + self.predicted_cosibling_bias),
            ("lambda1_hat - lambda0_hat", self.carryover_difference.estimate, self.carryover_difference.std_error,
             -2.0 * self.predicted_period_bias),
        ]

    def to_text(self) -> str:
        lines = [f"{'quantity':<36}{'estimate':>12}{'SE':>12}{'predicted':>12}"]
        for label, est, se, pred in self.rows():
            lines.append(f"{label:<36}{est:>12.4f}{se:>12.4f}{pred:>12.4f}")
        lines.append(f"aliasing (lambda0 - lambda1)/2 = {self.predicted_period_bias:.4f}; "
                     f"period-2 only (lambda0 - lambda1) = {self.predicted_cosibling_bias:.4f}")
        return "\n".join(lines)


def bias_decomposition(d: CrossoverDataset, p: CrossoverParams) -> BiasDecomposition:
    return BiasDecomposition(
        period_difference_estimator(d),
        cosibling_substitution_estimator(d),
        carryover_difference_estimator(d),
        (p.lambda0 - p.lambda1) / 2.0,
        p.lambda0 - p.lambda1,
        p.beta,
    )
