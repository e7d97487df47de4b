"""Command-line front end: ``simulate``, ``analyze``, ``compare`` and ``figure``.

Every command resolves one configuration (defaults, then ``--config``, then
``--set`` / ``--seed`` / ``--trials``), writes plot-ready CSVs into
``--out`` and finishes with ``manifest.json``. Feeding that manifest back
through ``--config`` reproduces the CSVs byte for byte; the worker count
(``--threads``) never changes the output.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .analytics import ergodic_coverage, ergodic_rate
from .config import EXIT_CONFIG, ConfigError, RunConfig, load_config
from .mcsim import (CoverageCurve, collect_metric, compare_schemes, coverage_from_samples, paired_one_sided_p,
                    paired_wilcoxon_p, rate_from_samples)
from .numerics import InvalidInputError, NumericFailureError
from .outputs import RunManifest, write_csv

log = logging.getLogger("risgeo")

EXIT_RUNTIME = 1
DEFAULT_SCHEMES = ("optimal", "suboptimal", "quantized:4", "random")
ANALYTIC_THRESHOLDS_DB = (0.0, 10.0)
ANALYTIC_DENSITIES = (1e-4, 3e-4, 6e-4, 1e-3, 2e-3, 3e-3)
RATE_DISTANCES_M = (10.0, 20.0, 40.0, 60.0, 80.0)
Z95 = 1.959963984540054

# (file name, header, rows)
Table = tuple


def _label(name: str) -> str:
    return name.replace(":", "").replace("-", "_")


def _t_col(prefix: str, t_db: float) -> str:
    return f"{prefix}_T{t_db:g}dB"


def _mean_ci(values: np.ndarray) -> tuple:
    values = np.asarray(values, float)
    if values.size < 2:
        return float(np.mean(values)), 0.0
    return float(np.mean(values)), Z95 * float(np.std(values, ddof=1)) / math.sqrt(values.size)


# ---------------------------------------------------------------------------
# Table builders shared by commands and recipes
# ---------------------------------------------------------------------------


def coverage_table(curve: CoverageCurve) -> tuple:
    rows = [[t, c, ci] for t, c, ci in zip(curve.threshold_db, curve.coverage, curve.ci_halfwidth)]
    return ["threshold_db", "coverage", "ci"], rows


def coverage_family(series: Sequence[tuple], threads: int) -> tuple:
    """Wide coverage table: one ``label`` / ``label_ci`` column pair per ``(label, RunConfig)``."""
    header, cols, grid = ["threshold_db"], [], None
    for label, rc in series:
        log.info("coverage curve %s", label)
        curve = coverage_from_samples(collect_metric(rc.experiment, threads), rc.experiment.thresholds_db)
        if grid is None:
            grid = curve.threshold_db
        elif list(grid) != list(curve.threshold_db):
            raise InvalidInputError("curves of one family need the same threshold grid")
        header += [label, f"{label}_ci"]
        cols.append((curve.coverage, curve.ci_halfwidth))
    rows = [[t] + [v for cov, ci in cols for v in (cov[i], ci[i])] for i, t in enumerate(grid)]
    return header, rows


def density_family(base: RunConfig, densities: Sequence[float], series: Sequence[tuple], metric: str,
                   threads: int) -> tuple:
    """Wide table over ``ris_density``: per series either the mean per-user rate or coverage at each threshold.

    ``series`` holds ``(label, overrides)`` pairs applied on top of ``base``.
    """
    header = ["ris_density"]
    for label, _ in series:
        if metric == "rate":
            header += [f"rate_{label}", f"rate_{label}_ci"]
        else:
            ts = base.updated(dict(series[0][1])).experiment.thresholds_db
            header += [c for t in ts for c in (_t_col(label, t), _t_col(label, t) + "_ci")]
    rows = []
    for lam in densities:
        row = [float(lam)]
        for label, over in series:
            rc = base.updated({**dict(over), "ris_density": float(lam)})
            log.info("%s at ris_density=%g", label, lam)
            samples = collect_metric(rc.experiment, threads)
            if metric == "rate":
                rate = rate_from_samples(samples, rc.system.bandwidth_hz, rc.experiment.rate_cap_db)
                row += list(_mean_ci(rate.trial_rates))
            else:
                curve = coverage_from_samples(samples, rc.experiment.thresholds_db)
                row += [v for c, ci in zip(curve.coverage, curve.ci_halfwidth) for v in (c, ci)]
        rows.append(row)
    return header, rows


def scheme_density_family(base: RunConfig, densities: Sequence[float], schemes: Sequence[str],
                          threads: int) -> tuple:
    """Mean per-user rate of each scheme over ``ris_density``, all schemes on common random numbers."""
    header = ["ris_density"] + [c for s in schemes for c in (f"rate_{_label(s)}", f"rate_{_label(s)}_ci")]
    rows = []
    for lam in densities:
        rc = base.updated({"ris_density": float(lam)})
        log.info("schemes at ris_density=%g", lam)
        res = compare_schemes(rc.experiment, schemes, threads)
        rows.append([float(lam)] + [v for s in schemes for v in _mean_ci(res[s].rate.trial_rates)])
    return header, rows


def analytic_density_table(base: RunConfig, densities: Sequence[float], thresholds_db: Sequence[float]) -> tuple:
    header = ["ris_density"] + [_t_col("coverage", t) for t in thresholds_db]
    rows = []
    for lam in densities:
        rc = base.updated({"ris_density": float(lam)})
        rows.append([float(lam)] + [ergodic_coverage(10.0 ** (t / 10.0), rc.system, rc.analytics)
                                    for t in thresholds_db])
    return header, rows


# ---------------------------------------------------------------------------
# Figure recipes
# ---------------------------------------------------------------------------

THRESHOLDS_WIDE = [float(t) for t in range(-10, 41, 5)]
FIG8_PATTERNS = {"mt10": [10.0, -10.0, 60.0], "mt20": [20.0, -10.0, 60.0]}
UE_PATTERN = [10.0, -10.0, 90.0]


@dataclass(frozen=True)
class Recipe:
    name: str
    summary: str
    run: Callable[[RunConfig, int], list]


def _fig4(rc: RunConfig, threads: int) -> list:
    base = rc.updated({"n_users": 30, "n_ue_antennas": 4})
    series = [(f"lambda_{lam:g}", base.updated({"ris_density": lam})) for lam in (1.5e-4, 1.5e-3, 5.5e-3)]
    return [("fig4_coverage_vs_density.csv",) + coverage_family(series, threads)]


def _fig5(rc: RunConfig, threads: int) -> list:
    base = rc.updated({"n_users": 30, "ris_density": 5.5e-3})
    series = [(f"nu_{nu}", base.updated({"n_ue_antennas": nu})) for nu in (1, 4)]
    return [("fig5_coverage_vs_ue_antennas.csv",) + coverage_family(series, threads)]


def _fig6(rc: RunConfig, threads: int) -> list:
    base = rc.updated({"n_users": 10})
    series = [(f"L{n}", {"ris_elements": n}) for n in (32, 64, 128)]
    dens = (1.5e-4, 5e-4, 1e-3, 3e-3, 5.5e-3)
    return [("fig6_rate_vs_density.csv",) + density_family(base, dens, series, "rate", threads)]


def _fig7(rc: RunConfig, threads: int) -> list:
    out = []
    for n in (64, 256):
        base = rc.updated({"n_users": 10, "ris_elements": n})
        table = scheme_density_family(base, (1.5e-4, 1e-3, 5.5e-3), DEFAULT_SCHEMES, threads)
        out.append((f"fig7_schemes_L{n}.csv",) + table)
    return out


def _fig8_base(rc: RunConfig) -> RunConfig:
    return rc.updated({"n_users": 10, "n_ue_antennas": 1, "ris_density": 1.5e-3, "ue_pattern_db": UE_PATTERN})


def _fig8(rc: RunConfig, threads: int) -> list:
    base = _fig8_base(rc).updated({"thresholds_db": THRESHOLDS_WIDE})
    series = [(k, base.updated({"bs_pattern_db": v})) for k, v in FIG8_PATTERNS.items()]
    return [("fig8_coverage_vs_main_lobe.csv",) + coverage_family(series, threads)]


def _fig9(rc: RunConfig, threads: int) -> list:
    base = _fig8_base(rc).updated({"thresholds_db": [10.0]})
    series = [(k, {"bs_pattern_db": v}) for k, v in FIG8_PATTERNS.items()]
    dens = (1.5e-4, 5e-4, 1.5e-3, 3e-3, 5.5e-3)
    return [("fig9_coverage_vs_density.csv",) + density_family(base, dens, series, "coverage", threads)]


def fig10_config(rc: RunConfig) -> RunConfig:
    """Scalar-array, interference-free setting in which the analytical model and the simulator coincide."""
    return rc.updated({"n_bs_antennas": 1, "n_ue_antennas": 1, "bs_pattern_db": [10.0, -10.0, 60.0],
                       "ue_pattern_db": UE_PATTERN, "interference": False,
                       "thresholds_db": list(ANALYTIC_THRESHOLDS_DB)})


def _fig10(rc: RunConfig, threads: int) -> list:
    base = fig10_config(rc)
    ts = base.experiment.thresholds_db
    header = ["ris_density"]
    for t in ts:
        header += [_t_col("analytic", t), _t_col("simulated", t), _t_col("simulated", t) + "_ci"]
    rows = []
    for lam in ANALYTIC_DENSITIES:
        cur = base.updated({"ris_density": lam})
        log.info("fig10 at ris_density=%g", lam)
        curve = coverage_from_samples(collect_metric(cur.experiment, threads), ts)
        row = [lam]
        for i, t in enumerate(ts):
            row += [ergodic_coverage(10.0 ** (t / 10.0), cur.system, cur.analytics), curve.coverage[i],
                    curve.ci_halfwidth[i]]
        rows.append(row)
    return [("fig10_analytic_vs_simulated.csv", header, rows)]


def _fig11(rc: RunConfig, threads: int) -> list:
    base = rc.updated({"ris_density": 5.5e-3, "n_ue_antennas": 1})
    series = [(f"{model.replace('-', '_')}_u{u}", base.updated({"deployment_model": model, "n_users": u}))
              for model in ("ppp", "pcp") for u in (10, 30)]
    return [("fig11_ppp_vs_pcp.csv",) + coverage_family(series, threads)]


def _fig13(rc: RunConfig, threads: int) -> list:
    base = rc.updated({"n_users": 30})
    series = [(f"L{n}", {"ris_elements": n}) for n in (32, 64, 128)]
    dens = (1.5e-4, 1.5e-3, 5.5e-3, 1.2e-2)
    return [("fig13_rate_vs_density.csv",) + density_family(base, dens, series, "rate", threads)]


RECIPES = {r.name: r for r in (
    Recipe("fig4", "coverage vs threshold for three RIS densities, 30 users, 4 UE antennas", _fig4),
    Recipe("fig5", "coverage vs threshold for 1 and 4 UE antennas at high RIS density", _fig5),
    Recipe("fig6", "per-user rate vs RIS density for 32, 64 and 128 elements", _fig6),
    Recipe("fig7", "rate vs RIS density for optimal, suboptimal, 4-bit and random phases, L = 64 and 256", _fig7),
    Recipe("fig8", "coverage vs threshold for BS main lobe 10 dB and 20 dB", _fig8),
    Recipe("fig9", "coverage at 10 dB vs RIS density for BS main lobe 10 dB and 20 dB", _fig9),
    Recipe("fig10", "analytical vs simulated ergodic coverage over RIS density at 0 and 10 dB", _fig10),
    Recipe("fig11", "PPP vs clustered RIS deployment for 10 and 30 users", _fig11),
    Recipe("fig13", "per-user rate vs RIS density up to 1.2e-2 with 30 users", _fig13),
)}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(rc: RunConfig, threads: int) -> list:
    exp = rc.experiment
    samples = collect_metric(exp, threads)
    curve = coverage_from_samples(samples, exp.thresholds_db)
    rate = rate_from_samples(samples, rc.system.bandwidth_hz, exp.rate_cap_db)
    mean, ci = _mean_ci(rate.trial_rates)
    tables = [
        ("coverage.csv",) + coverage_table(curve),
        ("rate.csv", ["user_index", "rate_bps"], [[i, r] for i, r in enumerate(rate.per_user_rate)]),
        ("rate_summary.csv", ["mean_rate_bps", "mean_rate_ci", "sum_rate_bps", "cap_db", "n_trials"],
         [[mean, ci, rate.sum_rate, rate.cap_db, exp.n_trials]]),
    ]
    param = rc.values["sweep"]["sweep_param"]
    if param:
        values = rc.values["sweep"]["sweep_values"]
        if not values:
            raise ConfigError("sweep_param is set but sweep_values is empty")
        header = [param, "rate_bps", "rate_ci"] + [c for t in exp.thresholds_db
                                                   for c in (_t_col("coverage", t), _t_col("coverage", t) + "_ci")]
        rows = []
        for v in values:
            cur = rc.updated({param: v})
            log.info("sweep %s=%s", param, v)
            s = collect_metric(cur.experiment, threads)
            c = coverage_from_samples(s, cur.experiment.thresholds_db)
            r = rate_from_samples(s, cur.system.bandwidth_hz, cur.experiment.rate_cap_db)
            rows.append([v] + list(_mean_ci(r.trial_rates))
                        + [x for a, b in zip(c.coverage, c.ci_halfwidth) for x in (a, b)])
        tables.append(("sweep.csv", header, rows))
    return tables


def cmd_analyze(rc: RunConfig) -> list:
    sysc, params = rc.system, rc.analytics
    ts = rc.experiment.thresholds_db
    cov = [[t, ergodic_coverage(10.0 ** (t / 10.0), sysc, params)] for t in ts]
    sw = rc.values["sweep"]
    dens = sw["sweep_values"] if sw["sweep_param"] in ("ris_density", "deployment.ris_density") else None
    cap = 10.0 ** (rc.experiment.rate_cap_db / 10.0)
    rates = [[xi, ergodic_rate(xi, cap, sysc, params)] for xi in RATE_DISTANCES_M if xi <= sysc.cell_radius_m]
    return [
        ("analytic_coverage.csv", ["threshold_db", "coverage"], cov),
        ("analytic_density_sweep.csv",) + analytic_density_table(rc, dens or ANALYTIC_DENSITIES,
                                                                 ANALYTIC_THRESHOLDS_DB),
        ("analytic_rate.csv", ["distance_m", "rate_bps"], rates),
    ]


def cmd_compare(rc: RunConfig, schemes: Sequence[str], threads: int) -> list:
    res = compare_schemes(rc.experiment, schemes, threads)
    rate_rows = []
    for s in schemes:
        mean, ci = _mean_ci(res[s].rate.trial_rates)
        rate_rows.append([s, mean, ci, res[s].rate.sum_rate])
    curves = [(_label(s), res[s].coverage) for s in schemes]
    cov_header = ["threshold_db"] + [c for lab, _ in curves for c in (lab, f"{lab}_ci")]
    cov_rows = [[t] + [v for _, c in curves for v in (c.coverage[i], c.ci_halfwidth[i])]
                for i, t in enumerate(curves[0][1].threshold_db)]
    p_rows = []
    for a, b in zip(schemes[:-1], schemes[1:]):
        ra, rb = res[a].rate.trial_rates, res[b].rate.trial_rates
        p_rows.append([a, b, float(np.mean(ra - rb)), paired_one_sided_p(ra, rb), paired_wilcoxon_p(ra, rb)])
    return [
        ("compare_rate.csv", ["scheme", "mean_rate_bps", "mean_rate_ci", "sum_rate_bps"], rate_rows),
        ("compare_coverage.csv", cov_header, cov_rows),
        ("compare_pvalues.csv", ["better", "worse", "mean_diff_bps", "p_ttest", "p_wilcoxon"], p_rows),
    ]


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config file or a manifest.json to replay")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one config key (bare name or section.key); repeatable")
    common.add_argument("--seed", type=int, help="base seed (sweep.seed)")
    common.add_argument("--trials", type=int, help="Monte Carlo trials per curve point (sweep.n_trials)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="worker processes; output does not depend on it")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="risgeo", description="RIS-assisted cell coverage and rate tool")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Monte Carlo coverage and rate")
    sub.add_parser("analyze", parents=[common], help="analytical ergodic coverage and rate")
    cmp_p = sub.add_parser("compare", parents=[common], help="phase-control schemes on common random numbers")
    cmp_p.add_argument("--schemes", default=",".join(DEFAULT_SCHEMES),
                       help="comma-separated schemes, best expected first (default: %(default)s)")
    fig = sub.add_parser("figure", parents=[common], help="run a figure recipe")
    fig.add_argument("recipe", nargs="?", help="recipe name; omit to list recipes")
    return parser


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(("sweep.seed", args.seed))
    if args.trials is not None:
        overrides.append(("sweep.n_trials", args.trials))
    return load_config(args.config, overrides)


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(message)s")
    if args.command == "figure" and args.recipe not in RECIPES:
        lines = [f"  {r.name:6s} {r.summary}" for r in RECIPES.values()]
        msg = "available recipes:\n" + "\n".join(lines)
        if args.recipe is None:
            print(msg)
            return 0
        print(f"error: unknown recipe '{args.recipe}'\n{msg}", file=sys.stderr)
        return EXIT_CONFIG
    rc = _resolve(args)
    threads = max(1, args.threads)
    start = time.perf_counter()
    extra: dict = {}
    if args.command == "simulate":
        tables = cmd_simulate(rc, threads)
        label = "simulate"
    elif args.command == "analyze":
        tables = cmd_analyze(rc)
        label = "analyze"
        extra["quad_tol"] = rc.analytics.tol
    elif args.command == "compare":
        schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
        tables = cmd_compare(rc, schemes, threads)
        label = "compare"
        extra["schemes"] = schemes
    else:
        tables = RECIPES[args.recipe].run(rc, threads)
        label = f"figure {args.recipe}"
    out = Path(args.out)
    files = []
    for name, header, rows in tables:
        path = write_csv(out / name, header, rows)
        files.append({"file": name, "sha256": _sha256(path)})
    manifest = RunManifest(command=label, config=rc.snapshot(), seed=int(rc.values["sweep"]["seed"]),
                           config_hash=rc.content_hash(), runtime_s=round(time.perf_counter() - start, 3),
                           outputs=files, extra=extra)
    manifest.write(out / "manifest.json")
    for f in files:
        print(out / f["file"])
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except InvalidInputError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailureError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
