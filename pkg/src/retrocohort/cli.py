"""Command-line interface: ``retrocohort {simulate,replicate,fit,predict}``.

Exit codes: 0 success, 1 data or validation error, 2 environment error
(unreadable input, unwritable output), 3 fit did not converge.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core_model import ModelError, read_keyvalue
from .estimation import FitResult, fit, run_scenario
from .likelihood import ConstantRateModel
from .prediction import MortalityTable, model_from_fit, prediction_rows
from .records import CohortSample, Design
from .simulator import SCENARIOS, ScenarioConfig, replication_rng, scenario, simulate_cohorts
from .survey_analysis import (COVARIATE_NAMES, IncidenceModel, baseline_rate_table, fit_survey,
                              rate_ratio_table, read_cohort_file, write_cohort_csv, write_table)

log = logging.getLogger("retrocohort")

EXIT_OK, EXIT_DATA, EXIT_ENV, EXIT_NONCONVERGED = 0, 1, 2, 3


class EnvironmentFailure(Exception):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: list
    config: str | None
    seed: int | None
    out: str
    version: str = __version__
    wall_clock_seconds: float = 0.0
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256(path)

    def write(self, out_dir: Path) -> None:
        with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise EnvironmentFailure(f"cannot write to output directory {out}: {exc}") from None
    return out


def _scenario_config(args) -> ScenarioConfig:
    if args.config:
        sc = ScenarioConfig.load(args.config)
    else:
        sc = scenario(args.scenario[0] if isinstance(args.scenario, list) else (args.scenario or "nd"))
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for key in ("n_per_design", "replications"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return sc.with_overrides(**overrides)


def cmd_simulate(args, manifest: RunManifest) -> int:
    sc = _scenario_config(args)
    out = _out_dir(args.out)
    manifest.seed = sc.seed
    coh_i, coh_ii = simulate_cohorts(replication_rng(sc.seed, 0), sc)
    for cohort in (coh_i, coh_ii):
        path = out / f"cohort_design_{cohort.design.value}.csv"
        write_cohort_csv(path, [cohort])
        manifest.outputs.append(path.name)
    print(f"design I: {len(coh_i)} records, design II: {len(coh_ii)} records")
    return EXIT_OK


def cmd_replicate(args, manifest: RunManifest) -> int:
    out = _out_dir(args.out)
    if args.config:
        configs = [_scenario_config(args)]
    else:
        names = args.scenario or ["nd"]
        configs = []
        for name in names:
            args_one = argparse.Namespace(**{**vars(args), "scenario": name})
            configs.append(_scenario_config(args_one))
    manifest.seed = configs[0].seed
    for sc in configs:
        summary = run_scenario(sc, workers=args.workers, progress=True)
        path = out / f"table_{sc.name}.csv"
        summary.to_csv(path)
        manifest.outputs.append(path.name)
        excluded = {k: v for k, v in summary.excluded.items() if v}
        sizes = ", ".join(f"{s:.1f}" for s in summary.mean_sizes)
        print(f"{sc.name}: {summary.n_replications} replications, mean cohort sizes ({sizes})"
              + (f", excluded {excluded}" if excluded else ""))
    return EXIT_OK


def _load_cohorts(paths) -> dict[Design, CohortSample]:
    parts: dict[Design, list] = {Design.I: [], Design.II: []}
    for p in paths:
        for design, cohort in read_cohort_file(p).items():
            if len(cohort):
                parts[design].append(cohort)
    return {d: CohortSample.concat(v) for d, v in parts.items() if v}


def _fit_one(cohorts: dict, args, out: Path, manifest: RunManifest) -> FitResult:
    if args.design_I_only:
        cohorts = {d: c for d, c in cohorts.items() if d is Design.I}
    if args.design_II_only:
        cohorts = {d: c for d, c in cohorts.items() if d is Design.II}
    if not cohorts:
        raise ModelError("no records for the selected design(s)")
    correction = not args.no_correction
    names = next(iter(cohorts.values())).covariate_names
    if names == COVARIATE_NAMES:
        spec = IncidenceModel(interval_censored=not args.exact_ages)
        result = fit_survey(cohorts.get(Design.I), cohorts.get(Design.II), spec, correction)
        base = baseline_rate_table(result, spec.cuts)
        ratios = rate_ratio_table(result)
    else:
        result = fit(list(cohorts.values()), ConstantRateModel(), correction=correction)
        base, ratios = _constant_rate_tables(result)
    (out / "estimates.json").write_text(result.to_json() + "\n", encoding="utf-8")
    write_table(out / "baseline_rates.csv", base, ("band", "rate", "ci_low", "ci_high"))
    write_table(out / "rate_ratios.csv", ratios, ("covariate", "level", "rr", "ci_low", "ci_high"))
    manifest.outputs += [str((out / n).relative_to(args.out))
                         for n in ("estimates.json", "baseline_rates.csv", "rate_ratios.csv")]
    return result


def _constant_rate_tables(result: FitResult):
    se = result.se if result.se is not None else np.full(len(result.names), np.nan)
    ci = result.theta_hat[:, None] + np.outer(se, [-1.959964, 1.959964])
    rows = {n: (result.theta_hat[i], ci[i]) for i, n in enumerate(result.names)}
    m, (lo, hi) = rows["m"]
    base = [{"band": "out of school, x=0", "rate": float(np.exp(m)),
             "ci_low": float(np.exp(lo)), "ci_high": float(np.exp(hi))}]
    ratios = []
    for name, label in (("b", ("x", "1")), ("c", ("in_school", "1"))):
        if name in rows:
            v, (lo, hi) = rows[name]
            ratios.append({"covariate": label[0], "level": label[1], "rr": float(np.exp(v)),
                           "ci_low": float(np.exp(lo)), "ci_high": float(np.exp(hi))})
    return base, ratios


def cmd_fit(args, manifest: RunManifest) -> int:
    out = _out_dir(args.out)
    for p in args.data:
        if not Path(p).is_file():
            raise EnvironmentFailure(f"input file not found: {p}")
        manifest.add_input(p)
    results = []
    if args.per_file:
        for p in args.data:
            sub = _out_dir(str(out / Path(p).stem))
            results.append(_fit_one(_load_cohorts([p]), args, sub, manifest))
    else:
        results.append(_fit_one(_load_cohorts(args.data), args, out, manifest))
    status = EXIT_OK
    for r in results:
        print(f"loglik={r.loglik:.4f} converged={r.converged} ({r.message})")
        if not r.converged:
            status = EXIT_NONCONVERGED
    return status


def _parse_covariates(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ModelError(f"covariate {item!r} is not key=value")
        out[key.strip()] = float(value)
    return out


def cmd_predict(args, manifest: RunManifest) -> int:
    out = _out_dir(args.out)
    for p in [args.fit] + ([args.mortality] if args.mortality else []):
        if not Path(p).is_file():
            raise EnvironmentFailure(f"input file not found: {p}")
        manifest.add_input(p)
    try:
        result = FitResult.from_dict(json.loads(Path(args.fit).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ModelError(f"{args.fit}: not a fit result ({exc})") from None
    model = model_from_fit(result)
    hi = 50.0
    mortality = MortalityTable.from_csv(args.mortality) if args.mortality else MortalityTable.zero(model.a_0, hi)
    ages = np.arange(args.a1, args.a2_max + 1e-9, args.step)
    rows = prediction_rows(model, mortality, args.a1, ages, _parse_covariates(args.covariate))
    path = out / "prediction.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("stratum", "age", "probability", "married_and_alive"))
        for r in rows:
            w.writerow((r["stratum"], f"{r['age']:g}", f"{r['probability']:.10f}",
                        f"{r['married_and_alive']:.10f}"))
    manifest.outputs.append(path.name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario key = value file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="parallel worker processes (default: all cores)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--scenario", action="append", choices=sorted(SCENARIOS),
                        help="shipped scenario; repeat for several (replicate)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="retrocohort", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate design-I and design-II cohorts")
    p.add_argument("--n-per-design", type=int, dest="n_per_design")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replicate", parents=[common], help="Monte Carlo replication tables")
    p.add_argument("--replications", type=int)
    p.add_argument("--n-per-design", type=int, dest="n_per_design")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("fit", parents=[common], help="fit cohort or survey CSV files")
    p.add_argument("data", nargs="+", help="CSV files (simulation or survey schema)")
    p.add_argument("--design-I-only", action="store_true", dest="design_I_only")
    p.add_argument("--design-II-only", action="store_true", dest="design_II_only")
    p.add_argument("--no-correction", action="store_true", help="drop the design-I sampling correction")
    p.add_argument("--exact-ages", action="store_true", help="treat survey marriage ages as exact")
    p.add_argument("--per-file", action="store_true", help="fit each file separately (strata)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="predictive marriage probabilities")
    p.add_argument("--fit", required=True, help="estimates.json from the fit command")
    p.add_argument("--mortality", help="mortality CSV (age_low,age_high,rate); default no deaths")
    p.add_argument("--a1", type=float, default=15.0, help="current age")
    p.add_argument("--a2-max", type=float, default=50.0, dest="a2_max")
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--covariate", action="append", metavar="NAME=CODE",
                   help="fixed covariate code, e.g. residence=1")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "design_I_only", False) and args.design_II_only:
        parser.error("--design-I-only and --design-II-only are exclusive")
    manifest = RunManifest(command=["retrocohort", *(sys.argv[1:] if argv is None else argv)],
                           config=args.config, seed=args.seed, out=str(args.out))
    start = time.perf_counter()
    try:
        if args.config:
            if not Path(args.config).is_file():
                raise EnvironmentFailure(f"config file not found: {args.config}")
            read_keyvalue(args.config)
            manifest.add_input(args.config)
        status = args.func(args, manifest)
    except EnvironmentFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    manifest.wall_clock_seconds = round(time.perf_counter() - start, 3)
    try:
        manifest.write(Path(args.out))
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return EXIT_ENV
    return status


if __name__ == "__main__":
    sys.exit(main())
