"""Command-line entry point: ``sibcross <command> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 input/output error,
4 numerical failure (every requested result missing).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .crossover import CrossoverParams, bias_decomposition, simulate_crossover
from .data import Dataset, DgpParams, validate_dataset
from .dgp import PRESETS, SelectionModel, preset, simulate_dataset
from .estimators import AlphaConvention, conditional_ols, fit_bw_model
from .fixtures import DEFAULT_THRESHOLD
from .harness import (
    Z_95,
    Analysis,
    AnalysisKind,
    Procedure,
    ScenarioConfig,
    SummaryRow,
    TABLE_PROCEDURES,
    analysis_weights,
    cluster_bootstrap,
    format_table,
    parse_procedures,
    reports_csv,
    run_scenario,
)
from .weighting import Normalization, TruncationRule, weighted_contrast

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
DEFAULT_SEED = 20240501
MAX_SEED = 2**64 - 1


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG) -> None:
        super().__init__(message)
        self.code = code


# -- helpers ---------------------------------------------------------------------


def load_config(path: str | Path) -> dict[str, Any]:
    """Read a TOML or JSON (by ``.json`` suffix) config file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw.decode("utf-8"))
        else:
            data = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CliError(f"malformed config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise CliError(f"config {path} must be a table/object at top level")
    return data


def _seed(value: str) -> int:
    try:
        seed = int(value, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {value!r}") from None
    if not 0 <= seed <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64 - 1]")
    return seed


def _positive_int(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return n


def _nonnegative_int(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {value!r}") from None
    if n < 0:
        raise argparse.ArgumentTypeError("expected a nonnegative integer")
    return n


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from None


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out) if args.out else Path(".")
    if out.exists() and not out.is_dir():
        raise CliError(f"--out must be a directory: {out}", EXIT_IO)
    return out


def _dgp_from(entry: Mapping[str, Any], fallback_preset: str | None = None) -> DgpParams:
    entry = dict(entry)
    name = entry.pop("preset", fallback_preset)
    overrides = entry.pop("dgp", {})
    if entry:
        raise CliError(f"unexpected keys: {', '.join(sorted(entry))}")
    try:
        base = preset(name) if name is not None else DgpParams()
        return DgpParams.from_dict({**base.to_dict(), **dict(overrides)})
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None


# -- simulate --------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.config:
        cfg = load_config(args.config)
        seed = cfg.pop("seed", None)
        p = _dgp_from(cfg, args.preset)
        if args.seed is None and seed is not None:
            args.seed = _seed(str(seed))
    else:
        p = _dgp_from({}, args.preset or "scenario4")
    if args.n_families is not None:
        p = p.replace(n_families=args.n_families)
    seed = DEFAULT_SEED if args.seed is None else args.seed
    d = simulate_dataset(p, seed)
    text = d.to_csv(with_latent=args.with_latent)
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- run-scenarios ---------------------------------------------------------------

_SCENARIO_KEYS = {"label", "preset", "dgp", "n_replications", "selection", "procedures"}


def _scenario_configs(args: argparse.Namespace) -> list[ScenarioConfig]:
    cfg = load_config(args.config) if args.config else {}
    scenarios = cfg.pop("scenarios", None)
    defaults = {
        "seed": cfg.pop("seed", DEFAULT_SEED),
        "n_replications": cfg.pop("n_replications", 2000),
        "procedures": cfg.pop("procedures", [p.value for p in TABLE_PROCEDURES]),
        "truncation": cfg.pop("truncation", "none"),
        "normalization": cfg.pop("normalization", Normalization.HAJEK.value),
        "alpha_convention": cfg.pop("alpha_convention", AlphaConvention.MAINTEXT.value),
        "quadratic_weights": cfg.pop("quadratic_weights", False),
    }
    if cfg:
        raise CliError(f"unknown config keys: {', '.join(sorted(cfg))}")
    if args.seed is not None:
        defaults["seed"] = args.seed
    if args.reps is not None:
        defaults["n_replications"] = args.reps
    for key in ("procedures", "truncation", "normalization", "alpha_convention"):
        if getattr(args, key) is not None:
            defaults[key] = getattr(args, key)
    if isinstance(defaults["procedures"], str):
        defaults["procedures"] = [s.strip() for s in defaults["procedures"].split(",") if s.strip()]

    if args.preset:
        scenarios = [{"label": name, "preset": name} for name in args.preset]
    elif scenarios is None:
        scenarios = [{"label": name, "preset": name} for name in PRESETS]
    if not isinstance(scenarios, list) or not scenarios:
        raise CliError("'scenarios' must be a non-empty list of tables")

    out = []
    for sc in scenarios:
        sc = dict(sc)
        unknown = set(sc) - _SCENARIO_KEYS
        if unknown:
            raise CliError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        label = sc.get("label") or sc.get("preset")
        if not label:
            raise CliError("every scenario needs a label or a preset")
        dgp = _dgp_from({k: sc[k] for k in ("preset", "dgp") if k in sc})
        reps = sc.get("n_replications", defaults["n_replications"]) if args.reps is None else args.reps
        procs = sc.get("procedures", defaults["procedures"]) if args.procedures is None else defaults["procedures"]
        selection = None
        if "selection" in sc:
            try:
                selection = SelectionModel(**sc["selection"])
            except TypeError as exc:
                raise CliError(f"bad selection model: {exc}") from None
        try:
            out.append(ScenarioConfig(
                label=str(label),
                dgp=dgp,
                n_replications=int(reps),
                procedures=parse_procedures(procs),
                seed=_seed(str(defaults["seed"])),
                truncation=TruncationRule.parse(str(defaults["truncation"])),
                normalization=Normalization(str(defaults["normalization"]).upper()),
                alpha_convention=AlphaConvention(str(defaults["alpha_convention"]).upper()),
                quadratic_weights=bool(defaults["quadratic_weights"]),
                selection=selection,
            ))
        except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
            raise CliError(f"scenario {label!r}: {exc}") from None
    return out


def cmd_run_scenarios(args: argparse.Namespace) -> int:
    configs = _scenario_configs(args)
    out = _out_dir(args)
    reports = []
    for cfg in configs:
        rep = run_scenario(cfg, workers=args.threads)
        reports.append(rep)
        text = rep.to_text()
        if not args.quiet:
            print(text, flush=True)
            for proc, reasons in rep.reasons.items():
                if reasons:
                    print(f"  missing {proc.value}: " + ", ".join(f"{k}={v}" for k, v in sorted(reasons.items())))
        _write_text(out / f"{cfg.label}.txt", text + "\n")
        _write_text(out / f"{cfg.label}.csv", reports_csv([rep]))
        _write_text(out / f"{cfg.label}_raw.csv", rep.raw_csv())
    _write_text(out / "summary.csv", reports_csv(reports))
    _write_text(out / "report.txt", "\n\n".join(r.to_text() for r in reports) + "\n")
    if all(row.n == 0 for r in reports for row in r.rows.values()):
        print("error: every procedure returned missing results", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# -- analyze ---------------------------------------------------------------------


def read_analysis_input(path: str | Path, threshold: float) -> tuple[Dataset, str]:
    """Load a score CSV (``family_id,score1,score2,y1,y2``) or a dataset CSV (``x1,x2``).

    Score rows are exposed when ``score < threshold``.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    header = next(csv.reader(io.StringIO(text)), [])
    if {"x1", "x2"} <= set(header):
        try:
            return Dataset.from_csv_text(text, meta={"source": str(path)}), "dataset"
        except ValueError as exc:
            raise CliError(f"{path}: {exc}") from None
    needed = ["family_id", "score1", "score2", "y1", "y2"]
    missing = [c for c in needed if c not in header]
    if missing:
        raise CliError(f"{path}: missing columns {', '.join(missing)} (expected {','.join(needed)} or a dataset CSV)")
    rows = list(csv.DictReader(io.StringIO(text)))
    try:
        fid = [int(r["family_id"]) for r in rows]
        s1 = np.array([float(r["score1"]) for r in rows])
        s2 = np.array([float(r["score2"]) for r in rows])
        y1 = [float(r["y1"]) for r in rows]
        y2 = [float(r["y2"]) for r in rows]
    except (TypeError, ValueError) as exc:
        raise CliError(f"{path}: malformed value: {exc}") from None
    if not (np.all(np.isfinite(s1)) and np.all(np.isfinite(s2))):
        raise CliError(f"{path}: scores must be finite")
    x1 = (s1 < threshold).astype(int)
    x2 = (s2 < threshold).astype(int)
    return Dataset(fid, x1, x2, y1, y2, meta={"source": str(path), "threshold": threshold}), "scores"


def _coef(est: float, se: float) -> dict[str, float | None]:
    ok = math.isfinite(est) and math.isfinite(se)
    num = lambda v: float(v) if math.isfinite(v) else None  # noqa: E731
    return {
        "estimate": num(est),
        "std_error": num(se),
        "ci_low": num(est - Z_95 * se) if ok else None,
        "ci_high": num(est + Z_95 * se) if ok else None,
    }


def cmd_analyze(args: argparse.Namespace) -> int:
    if not math.isfinite(args.threshold):
        raise CliError("--threshold must be finite")
    if args.bootstrap == 1:
        raise CliError("--bootstrap needs at least 2 replicates (or 0 to skip)")
    try:
        truncation = TruncationRule.parse(args.truncation)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    d, schema = read_analysis_input(args.input, args.threshold)
    report = validate_dataset(d)
    if not report.valid:
        raise CliError(f"{args.input}: " + "; ".join(report.findings))
    seed = DEFAULT_SEED if args.seed is None else args.seed
    out = _out_dir(args)

    fit = fit_bw_model(d)
    within = fit.within_result()
    cols = conditional_ols(d)
    analysis = Analysis(AnalysisKind.WEIGHTED_CONTRAST, truncation, Normalization(args.normalization.upper()),
                        AlphaConvention(args.alpha_convention.upper()))
    weights = analysis_weights(d, analysis, fit)
    if weights is None:
        point = within  # carries the BW failure reason
        weighted: dict[str, Any] = {"estimate": None, "missing_reason": within.reason}
    else:
        point = weighted_contrast(d, weights, analysis.normalization)
        weighted = point.to_dict()
    weighted["settings"] = {
        "truncation": str(truncation),
        "normalization": analysis.normalization.value,
        "alpha_convention": analysis.alpha_convention.value,
    }
    if args.bootstrap >= 2 and not point.missing:
        boot = cluster_bootstrap(d, analysis, args.bootstrap, seed, workers=args.threads)
        weighted["bootstrap"] = {**boot.to_dict(), "seed": seed, "z": Z_95,
                                 "replicate_n_truncated_max": int(boot.n_truncated.max(initial=0))}

    result = {
        "input": str(args.input),
        "schema": schema,
        "threshold": args.threshold if schema == "scores" else None,
        "n_families": len(d),
        "n_discordant": int(np.count_nonzero(d.discordant)),
        "bw_model": {
            "converged": bool(fit.converged),
            "missing_reason": within.reason,
            "omega2": fit.to_dict()["omega2_hat"],
            "sigma2": fit.to_dict()["sigma2_hat"],
            "coefficients": {
                "intercept": _coef(fit.mu_hat, fit.se_mu),
                "beta_w": _coef(fit.beta_w_hat, fit.se_beta_w),
                "beta_b": _coef(fit.beta_b_hat, fit.se_beta_b),
            },
        },
        "conditional_ols": cols.to_dict(),
        "weighted_contrast": weighted,
    }
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    _write_text(out / "estimates.json", text)
    if weights is not None:
        _write_text(out / "weights.csv", weights.to_csv())
    if not args.quiet:
        print(_analysis_summary(result))
    if within.missing and point.missing and cols.missing:
        print("error: every estimate is missing (" + str(within.reason) + ")", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _analysis_summary(r: Mapping[str, Any]) -> str:
    def cell(v: Any) -> str:
        return "NA" if v is None else f"{v:.4f}"

    lines = [f"families: {r['n_families']}  discordant: {r['n_discordant']}",
             f"{'term':<12}{'estimate':>12}{'SE':>12}{'95% CI':>26}"]
    for name, c in r["bw_model"]["coefficients"].items():
        ci = f"[{cell(c['ci_low'])}, {cell(c['ci_high'])}]"
        lines.append(f"{name:<12}{cell(c['estimate']):>12}{cell(c['std_error']):>12}{ci:>26}")
    lines.append(f"{'cond. OLS':<12}{cell(r['conditional_ols']['estimate']):>12}{cell(r['conditional_ols']['std_error']):>12}")
    w = r["weighted_contrast"]
    b = w.get("bootstrap")
    if b:
        ci = f"[{cell(b['ci_low'])}, {cell(b['ci_high'])}]"
        lines.append(f"{'tau3 (IPW)':<12}{cell(w['estimate']):>12}{cell(b['boot_se']):>12}{ci:>26}")
    else:
        lines.append(f"{'tau3 (IPW)':<12}{cell(w['estimate']):>12}")
    return "\n".join(lines)


# -- crossover-demo --------------------------------------------------------------


def cmd_crossover_demo(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else {}
    cfg = dict(cfg.get("crossover", cfg))
    seed = cfg.pop("seed", None)
    try:
        p = CrossoverParams.from_dict(cfg)
        if args.n_families is not None:
            p = CrossoverParams.from_dict({**p.to_dict(), "n_families": args.n_families})
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None
    if args.seed is not None:
        seed = args.seed
    seed = DEFAULT_SEED if seed is None else _seed(str(seed))
    d = simulate_crossover(p, seed)
    table = bias_decomposition(d, p).to_text()
    print(table)
    if args.out:
        out = _out_dir(args)
        _write_text(out / "crossover.csv", d.to_csv())
        _write_text(out / "decomposition.txt", table + "\n")
    return EXIT_OK


# -- report ----------------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.input)
    if path.is_dir():
        path = path / "summary.csv"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["scenario", "procedure", "n", "mean", "bias", "sd"]:
        raise CliError(f"{path}: expected header scenario,procedure,n,mean,bias,sd")
    grouped: dict[str, dict[Procedure, SummaryRow]] = {}
    num = lambda v: float(v) if v not in ("", None) else math.nan  # noqa: E731
    try:
        for r in reader:
            grouped.setdefault(r["scenario"], {})[Procedure(r["procedure"])] = SummaryRow(
                int(r["n"]), num(r["mean"]), num(r["bias"]), num(r["sd"]))
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None
    blocks = []
    for label, rows in grouped.items():
        targets = [row.mean - row.bias for row in rows.values() if math.isfinite(row.mean)]
        blocks.append(format_table(label, targets[0] if targets else math.nan, None, rows))
    text = "\n\n".join(blocks) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write_text(_out_dir(args) / "report.txt", text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=None, help="master seed (unsigned 64-bit)")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker processes")
    common.add_argument("--out", default=None, help="output directory (output file for simulate)")
    common.add_argument("--quiet", action="store_true", help="suppress console tables")

    parser = argparse.ArgumentParser(prog="sibcross", description="Sibling comparison simulations and analyses.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate one sibling-pair dataset to CSV")
    s.add_argument("--preset", choices=sorted(PRESETS), default=None)
    s.add_argument("--config", default=None, help="TOML/JSON with optional preset, seed and [dgp] overrides")
    s.add_argument("--n-families", type=_positive_int, default=None)
    s.add_argument("--with-latent", action="store_true", help="include u, alpha, alpha_tilde columns")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run-scenarios", parents=[common], help="run the Monte Carlo scenario study")
    s.add_argument("--config", default=None, help="TOML/JSON scenario list (see docs/formats.md)")
    s.add_argument("--preset", action="append", choices=sorted(PRESETS), default=None,
                   help="run this preset (repeatable); default: all four")
    s.add_argument("--reps", type=_positive_int, default=None, help="replications per scenario")
    s.add_argument("--procedures", default=None, help="comma list of " + ",".join(p.value for p in Procedure))
    s.add_argument("--truncation", default=None, help="none | percentile:Q | absolute:C")
    s.add_argument("--normalization", default=None, choices=[n.value for n in Normalization], type=str.upper)
    s.add_argument("--alpha-convention", default=None, choices=[a.value for a in AlphaConvention], type=str.upper)
    s.set_defaults(func=cmd_run_scenarios)

    s = sub.add_parser("analyze", parents=[common], help="analyse one sibling dataset from CSV")
    s.add_argument("--input", required=True, help="family_id,score1,score2,y1,y2 or dataset CSV")
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="exposed iff score < threshold")
    s.add_argument("--truncation", default="none", help="none | percentile:Q | absolute:C")
    s.add_argument("--normalization", default=Normalization.HAJEK.value, choices=[n.value for n in Normalization], type=str.upper)
    s.add_argument("--alpha-convention", default=AlphaConvention.MAINTEXT.value,
                   choices=[a.value for a in AlphaConvention], type=str.upper)
    s.add_argument("--bootstrap", type=_nonnegative_int, default=1000, help="bootstrap replicates B (0 to skip)")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("crossover-demo", parents=[common], help="cross-over carry-over aliasing demo")
    s.add_argument("--config", default=None, help="TOML/JSON with CrossoverParams keys")
    s.add_argument("--n-families", type=_positive_int, default=None)
    s.set_defaults(func=cmd_crossover_demo)

    s = sub.add_parser("report", parents=[common], help="re-render summary CSV as text tables")
    s.add_argument("--input", required=True, help="run-scenarios output directory or summary.csv")
    s.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
