"""Shared data model: sibling-pair datasets, parameter bundles and fit containers.

Datasets are stored column-wise (one numpy array per field) because every
estimator works on whole columns; :class:`FamilyRecord` gives the row view.
All containers are frozen and their arrays are made read-only, so they can be
shared between worker processes and threads without copying.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

OBSERVED_COLUMNS = ("family_id", "x1", "x2", "y1", "y2")
LATENT_COLUMNS = ("u", "alpha", "alpha_tilde")


class MissingReason(str, Enum):
    """Why an estimator run produced no estimate."""

    NONCONVERGENCE = "NONCONVERGENCE"
    ZERO_INVERSE_WEIGHT = "ZERO_INVERSE_WEIGHT"
    EMPTY_ARM = "EMPTY_ARM"
    INSUFFICIENT_DATA = "INSUFFICIENT_DATA"


def _frozen(a: Any, dtype: Any) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LatentState:
    u: float
    alpha: float
    alpha_tilde: float


@dataclass(frozen=True)
class FamilyRecord:
    family_id: int
    x1: int
    x2: int
    y1: float
    y2: float
    latent: LatentState | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of sibling pairs.

    The latent columns (``u``, ``alpha``, ``alpha_tilde``) are either all
    present or all ``None``. Estimators never read them; only oracle code
    and the true-weight construction do.
    """

    family_id: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    u: np.ndarray | None = None
    alpha: np.ndarray | None = None
    alpha_tilde: np.ndarray | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        set_(self, "family_id", _frozen(self.family_id, np.int64))
        for name in ("x1", "x2"):
            set_(self, name, _frozen(getattr(self, name), np.int64))
        for name in ("y1", "y2"):
            set_(self, name, _frozen(getattr(self, name), np.float64))
        latent = [getattr(self, name) is not None for name in LATENT_COLUMNS]
        if any(latent) and not all(latent):
            raise ValueError("latent columns must be supplied together")
        if all(latent):
            for name in LATENT_COLUMNS:
                set_(self, name, _frozen(getattr(self, name), np.float64))
        n = self.family_id.shape[0]
        for name in OBSERVED_COLUMNS + (LATENT_COLUMNS if all(latent) else ()):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"column {name!r} has length {getattr(self, name).shape[0]}, expected {n}")
        set_(self, "meta", dict(self.meta))

    # -- views -----------------------------------------------------------------

    def __len__(self) -> int:
        return int(self.family_id.shape[0])

    @property
    def n_families(self) -> int:
        return len(self)

    @property
    def has_latent(self) -> bool:
        return self.alpha is not None

    @property
    def xbar(self) -> np.ndarray:
        return (self.x1 + self.x2) / 2.0

    @property
    def discordant(self) -> np.ndarray:
        return self.x1 != self.x2

    def __iter__(self) -> Iterator[FamilyRecord]:
        return iter(self.records())

    def records(self) -> list[FamilyRecord]:
        out = []
        for i in range(len(self)):
            latent = None
            if self.has_latent:
                latent = LatentState(float(self.u[i]), float(self.alpha[i]), float(self.alpha_tilde[i]))
            out.append(
                FamilyRecord(
                    int(self.family_id[i]),
                    int(self.x1[i]),
                    int(self.x2[i]),
                    float(self.y1[i]),
                    float(self.y2[i]),
                    latent,
                )
            )
        return out

    @classmethod
    def from_records(cls, records: Iterable[FamilyRecord], meta: Mapping[str, Any] | None = None) -> "Dataset":
        recs = list(records)
        cols: dict[str, Any] = {c: [getattr(r, c) for r in recs] for c in OBSERVED_COLUMNS}
        with_latent = [r.latent is not None for r in recs]
        if recs and all(with_latent):
            for c in LATENT_COLUMNS:
                cols[c] = [getattr(r.latent, c) for r in recs]
        return cls(**cols, meta=meta or {})

    # -- transformations ---------------------------------------------------------

    def _columns(self) -> dict[str, np.ndarray | None]:
        return {c: getattr(self, c) for c in OBSERVED_COLUMNS + LATENT_COLUMNS}

    def take(self, index: np.ndarray | Iterable[int], *, renumber: bool = False, meta: Mapping[str, Any] | None = None) -> "Dataset":
        """Rows at ``index`` (may repeat). ``renumber`` assigns ids 0..n-1."""
        idx = np.asarray(index, dtype=np.int64)
        cols = {c: (None if v is None else v[idx]) for c, v in self._columns().items()}
        if renumber:
            cols["family_id"] = np.arange(idx.shape[0])
        return Dataset(**cols, meta=dict(self.meta) if meta is None else meta)

    def strip_latent(self) -> "Dataset":
        return Dataset(self.family_id, self.x1, self.x2, self.y1, self.y2, meta=self.meta)

    def swap_siblings(self) -> "Dataset":
        """Exchange sibling 1 and sibling 2 in every family."""
        cols = self._columns()
        cols["x1"], cols["x2"] = self.x2, self.x1
        cols["y1"], cols["y2"] = self.y2, self.y1
        return Dataset(**cols, meta=self.meta)

    # -- serialization -----------------------------------------------------------

    def to_csv(self, path: str | Path | None = None, *, with_latent: bool = True) -> str:
        """Write ``family_id,x1,x2,y1,y2[,u,alpha,alpha_tilde]``; returns the text."""
        latent = with_latent and self.has_latent
        header = list(OBSERVED_COLUMNS) + (list(LATENT_COLUMNS) if latent else [])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for i in range(len(self)):
            row = [int(self.family_id[i]), int(self.x1[i]), int(self.x2[i]), repr(float(self.y1[i])), repr(float(self.y2[i]))]
            if latent:
                row += [repr(float(getattr(self, c)[i])) for c in LATENT_COLUMNS]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path: str | Path, meta: Mapping[str, Any] | None = None) -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls.from_csv_text(fh.read(), meta=meta or {"source": str(path)})

    @classmethod
    def from_csv_text(cls, text: str, meta: Mapping[str, Any] | None = None) -> "Dataset":
        reader = csv.DictReader(io.StringIO(text))
        header = reader.fieldnames or []
        missing = [c for c in OBSERVED_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"CSV is missing columns: {', '.join(missing)}")
        rows = list(reader)
        cols: dict[str, Any] = {}
        try:
            cols["family_id"] = [int(r["family_id"]) for r in rows]
            cols["x1"] = [_int_value(r["x1"]) for r in rows]
            cols["x2"] = [_int_value(r["x2"]) for r in rows]
            cols["y1"] = [float(r["y1"]) for r in rows]
            cols["y2"] = [float(r["y2"]) for r in rows]
            if all(c in header for c in LATENT_COLUMNS):
                for c in LATENT_COLUMNS:
                    cols[c] = [float(r[c]) for r in rows]
        except (TypeError, ValueError) as exc:
            raise ValueError(f"malformed CSV value: {exc}") from exc
        return cls(**cols, meta=meta or {})


def _int_value(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"exposure {text!r} is not an integer")
    return int(v)


# -- validation ------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.findings

    def __bool__(self) -> bool:
        return self.valid


def validate_dataset(d: Dataset) -> ValidationReport:
    findings: list[str] = []
    if len(d) == 0:
        return ValidationReport(("empty: dataset has no families",))
    ids, counts = np.unique(d.family_id, return_counts=True)
    for fid in ids[counts > 1]:
        findings.append(f"duplicate-id: family_id {int(fid)} occurs more than once")
    for name in ("x1", "x2"):
        bad = np.flatnonzero((getattr(d, name) != 0) & (getattr(d, name) != 1))
        for i in bad:
            findings.append(f"non-binary-exposure: {name} of family {int(d.family_id[i])}")
    for name in ("y1", "y2"):
        bad = np.flatnonzero(~np.isfinite(getattr(d, name)))
        for i in bad:
            findings.append(f"non-finite-outcome: {name} of family {int(d.family_id[i])}")
    return ValidationReport(tuple(findings))


def discordant_subset(d: Dataset) -> Dataset:
    """Families whose siblings differ in exposure, in their original order."""
    return d.take(np.flatnonzero(d.discordant))


# -- parameter bundles -----------------------------------------------------------


@dataclass(frozen=True)
class DgpParams:
    """Parameters of the confounded sibling-pair generating model.

    ``beta_b`` does not enter the generating equation; it is carried for
    completeness since the between-within fit estimates it.
    """

    n_families: int = 1000
    b_lambda: float = 0.5
    sigma_u: float = 2.0
    b_alpha: float = 0.4
    b_x: float = 0.2
    pi_x: float = 0.5
    tau: float = 2.0
    mu: float = 10.0
    beta_b: float = 2.0
    beta_w: float = 5.0
    beta_d: float = 0.0
    beta_c: float = 0.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if int(self.n_families) != self.n_families or self.n_families < 1:
            raise ValueError("n_families must be a positive integer")
        object.__setattr__(self, "n_families", int(self.n_families))
        for f in fields(self):
            if f.name != "n_families":
                v = float(getattr(self, f.name))
                if not math.isfinite(v):
                    raise ValueError(f"{f.name} must be finite")
                object.__setattr__(self, f.name, v)
        if not 0.0 <= self.pi_x <= 1.0:
            raise ValueError("pi_x must lie in [0, 1]")
        for name in ("sigma_u", "tau", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def mean_alpha(self) -> float:
        """E[alpha] = b_alpha * exp(b_lambda^2 sigma_u^2 / 2) (lognormal moment)."""
        return self.b_alpha * math.exp(self.b_lambda**2 * self.sigma_u**2 / 2.0)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DgpParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown DgpParams keys: {', '.join(sorted(unknown))}")
        return cls(**dict(data))

    def replace(self, **changes: Any) -> "DgpParams":
        return DgpParams(**{**self.to_dict(), **changes})


# -- fit containers --------------------------------------------------------------


def _json_float(v: float | None) -> float | None:
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass(frozen=True)
class FitResult:
    """Outcome of one estimator run. ``estimate`` is NaN when missing."""

    estimate: float = float("nan")
    std_error: float = float("nan")
    converged: bool = False
    n_used: int = 0
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    @property
    def missing(self) -> bool:
        return not math.isfinite(self.estimate)

    @property
    def reason(self) -> str | None:
        return self.diagnostics.get("missing_reason")

    @classmethod
    def missing_result(cls, reason: MissingReason, n_used: int = 0, **diagnostics: Any) -> "FitResult":
        return cls(converged=False, n_used=n_used, diagnostics={"missing_reason": reason.value, **diagnostics})

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimate": _json_float(self.estimate),
            "std_error": _json_float(self.std_error),
            "converged": bool(self.converged),
            "n_used": int(self.n_used),
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True, eq=False)
class BwFit:
    """Random-intercept between-within fit.

    ``se_*`` are model-based standard errors from the GLS covariance.
    ``fitted_mean`` holds the per-family fixed-part prediction of the family
    mean outcome, ``mean_residual`` the family mean minus that prediction.
    """

    mu_hat: float
    beta_b_hat: float
    beta_w_hat: float
    omega2_hat: float
    sigma2_hat: float
    blups: np.ndarray
    converged: bool
    se_mu: float = float("nan")
    se_beta_b: float = float("nan")
    se_beta_w: float = float("nan")
    n_families: int = 0
    n_discordant: int = 0
    mean_residual: np.ndarray | None = None
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mu_hat": _json_float(self.mu_hat),
            "beta_b_hat": _json_float(self.beta_b_hat),
            "beta_w_hat": _json_float(self.beta_w_hat),
            "omega2_hat": _json_float(self.omega2_hat),
            "sigma2_hat": _json_float(self.sigma2_hat),
            "se_mu": _json_float(self.se_mu),
            "se_beta_b": _json_float(self.se_beta_b),
            "se_beta_w": _json_float(self.se_beta_w),
            "converged": bool(self.converged),
            "n_families": int(self.n_families),
            "n_discordant": int(self.n_discordant),
            "blups": [_json_float(b) for b in np.asarray(self.blups)],
            "diagnostics": _jsonable(self.diagnostics),
        }

    def within_result(self) -> FitResult:
        """The within-family effect as a :class:`FitResult`."""
        if not self.converged or not math.isfinite(self.beta_w_hat):
            reason = self.diagnostics.get("missing_reason", MissingReason.NONCONVERGENCE.value)
            return FitResult(converged=False, n_used=self.n_families, diagnostics={**self.diagnostics, "missing_reason": reason})
        return FitResult(
            estimate=self.beta_w_hat,
            std_error=self.se_beta_w,
            converged=True,
            n_used=self.n_families,
            diagnostics={"omega2_hat": self.omega2_hat, "sigma2_hat": self.sigma2_hat, **self.diagnostics},
        )


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _json_float(obj)
    if isinstance(obj, Enum):
        return obj.value
    return obj
