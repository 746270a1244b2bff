"""Command line front end: simulate, fit, reproduce.

Every run writes a manifest.json echoing the resolved options, the seed,
and the package version. Re-running the same command with that manifest
as --config reproduces the outputs byte for byte; the output directory
itself is never part of the recorded options, so reruns can land
anywhere. See FORMATS.md for the file layouts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, TrimSpec, load_dataset, save_dataset, validate
from .inference import (
    ESTIMATORS,
    InferenceError,
    bootstrap_multi,
    monte_carlo_study,
)
from .kernels import KernelError, shape_kernel, size_kernel
from .reference import ReferenceError, compare_to_reference, comparison_to_csv
from .report import render_comparison_figure, render_table_figure
from .shape import ShapeError, fit_shape
from .simulate import FRAILTIES, SCENARIOS, ScenarioSpec, simulate_dataset
from .size import SizeError, fit_size_exp, fit_size_mre, project_counts

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_manifest(out_dir: Path, command: str, options: dict) -> None:
    _write_json(out_dir / "manifest.json", {
        "command": command,
        "version": __version__,
        "options": options,
    })


def _apply_config(command: str, options: dict, config_path) -> dict:
    """Overlay options from a config/manifest file; config wins."""
    if config_path is None:
        return options
    loaded = json.loads(Path(config_path).read_text())
    if loaded.get("command") not in (None, command):
        raise DataError(
            f"config is for command {loaded.get('command')!r}, not {command!r}"
        )
    merged = dict(options)
    merged.update(loaded.get("options", {}))
    return merged


def _parse_vector(text: str | None):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise DataError(f"expected a comma-separated numeric vector, got {text!r}") from None


def cmd_simulate(args) -> int:
    options = {
        "scenario": args.scenario,
        "n": args.n,
        "frailty": args.frailty,
        "seed": args.seed,
        "beta0": _parse_vector(args.beta0),
        "gamma0": _parse_vector(args.gamma0),
        "tau": args.tau,
        "censor_rate_scale": args.censor_rate_scale,
    }
    options = _apply_config("simulate", options, args.config)
    kwargs = {}
    if options["beta0"]:
        kwargs["beta0"] = tuple(options["beta0"])
    spec = ScenarioSpec(
        scenario=options["scenario"],
        n=int(options["n"]),
        gamma0=tuple(options["gamma0"]) if options["gamma0"] else None,
        tau=options["tau"],
        frailty=options["frailty"],
        censor_rate_scale=float(options["censor_rate_scale"]),
        seed=int(options["seed"]),
        **kwargs,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = simulate_dataset(spec)
    save_dataset(ds, out / "subjects.csv", out / "events.csv")
    _write_json(out / "truth.json", spec.truth())
    _write_manifest(out, "simulate", options)
    print(f"wrote {ds.n} subjects, {ds.total_events()} events to {out}")
    return 0


def _trim_from(options) -> TrimSpec | None:
    box = options.get("z_box")
    lo = hi = None
    if box:
        vals = [float(v) for v in box] if isinstance(box, list) else _parse_vector(box)
        if len(vals) % 2:
            raise DataError("z-box needs an even count: lo1,hi1,lo2,hi2,...")
        lo = vals[0::2]
        hi = vals[1::2]
    if options.get("trim_tau0", 0.0) == 0.0 and options.get("trim_tau1") is None and lo is None:
        return None
    return TrimSpec(
        tau0=float(options.get("trim_tau0", 0.0)),
        tau1=options.get("trim_tau1"),
        z_lower=lo, z_upper=hi,
    )


def cmd_fit(args) -> int:
    options = {
        "subjects": args.subjects,
        "events": args.events,
        "tau": args.tau,
        "shape_objective": args.shape_objective,
        "size_link": args.size_link,
        "shape_a1": args.shape_a1,
        "shape_a2": args.shape_a2,
        "size_a1": args.size_a1,
        "size_a2": args.size_a2,
        "r0": args.r0,
        "trim_tau0": args.trim_tau0,
        "trim_tau1": args.trim_tau1,
        "z_box": args.z_box,
        "bootstrap_b": args.bootstrap_b,
        "ci_method": args.ci_method,
        "seed": args.seed,
    }
    options = _apply_config("fit", options, args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ds = load_dataset(options["subjects"], options["events"], float(options["tau"]))
    for note in validate(ds):
        print(f"note: {note}")
    kshape = shape_kernel(a1=float(options["shape_a1"]), a2=float(options["shape_a2"]),
                          r0=float(options["r0"]))
    ksize = size_kernel(a1=float(options["size_a1"]), a2=float(options["size_a2"]))
    trim = _trim_from(options)

    sf = fit_shape(ds, kernel=kshape, trim=trim, objective=options["shape_objective"])
    result = {"shape": sf.to_dict()}

    link = options["size_link"]
    if link not in ("exp", "mre", "both", "none"):
        raise DataError(f"size link must be exp|mre|both|none, got {link!r}")
    if link != "none":
        pc = project_counts(ds, sf, kernel=ksize)
        result["projected_counts"] = {
            "n": int(pc.values.size),
            "mean": float(pc.values.mean()),
            "max": float(pc.values.max()),
            "f_floor_hits": pc.f_floor_hits,
            "path": pc.diagnostics.get("path"),
        }
        if link in ("exp", "both"):
            result["size_exp"] = fit_size_exp(ds, pc, z_region=trim).to_dict()
        if link in ("mre", "both"):
            result["size_mre"] = fit_size_mre(ds, pc, z_region=trim).to_dict()

    B = int(options["bootstrap_b"] or 0)
    if B >= 2:
        ests = ["shape_" + options["shape_objective"]]
        if link in ("exp", "both"):
            ests.append("size_exp")
        if link in ("mre", "both"):
            ests.append("size_mre")
        boots = bootstrap_multi(
            ds, ests, B, int(options["seed"]), kernel_shape=kshape,
            kernel_size=ksize, trim=trim, z_region=trim,
            ci_method=options["ci_method"],
        )
        result["bootstrap"] = {name: b.to_dict() for name, b in boots.items()}

    _write_json(out / "fit.json", result)
    _write_manifest(out, "fit", options)
    beta = result["shape"]["beta"]
    print(f"shape direction: {np.round(beta, 4).tolist()} "
          f"(objective {options['shape_objective']})")
    return 0


_TABLE_ESTIMATORS = {1: ["shape_simplified", "shape_full"], 2: ["size_exp", "size_mre"]}


def cmd_reproduce(args) -> int:
    options = {
        "table": args.table,
        "scenario": args.scenario,
        "n": args.n,
        "frailty": args.frailty,
        "replicates": args.replicates,
        "bootstrap_b": args.bootstrap_b,
        "estimators": args.estimators.split(",") if args.estimators else None,
        "seed": args.seed,
        "workers": args.workers,
        "figures": not args.no_figures,
    }
    options = _apply_config("reproduce", options, args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    table_no = int(options["table"])
    if table_no not in (1, 2):
        raise DataError(f"table must be 1 or 2, got {table_no}")
    estimators = options["estimators"] or _TABLE_ESTIMATORS[table_no]
    for e in estimators:
        if e not in ESTIMATORS:
            raise DataError(f"unknown estimator {e!r}; expected subset of {ESTIMATORS}")

    spec = ScenarioSpec(
        scenario=options["scenario"], n=int(options["n"]),
        frailty=options["frailty"], seed=int(options["seed"]),
    )
    table = monte_carlo_study(
        spec, int(options["replicates"]), int(options["bootstrap_b"]),
        estimators, int(options["seed"]), workers=int(options["workers"]),
    )
    table.to_csv(out / "mc_table.csv")

    if spec.scenario == "M3":
        print("note: M3 rate is clamped at zero where the additive index is "
              "negative; reference bands for M3 are widened accordingly")

    try:
        rows = compare_to_reference(table, estimators)
    except ReferenceError as exc:
        print(f"note: {exc}; no comparison emitted")
        rows = None
    if rows:
        comparison_to_csv(rows, out / "comparison.csv")
        for r in rows:
            verdict = {True: "pass", False: "FAIL", None: "n/a"}[r["overall_pass"]]
            extra = f" (not estimable: {','.join(r['not_estimable'])})" if r["not_estimable"] else ""
            print(f"{r['estimator']} {r['parameter']}: {verdict}{extra}")
        if options["figures"]:
            render_comparison_figure(table, rows, out / "comparison.png")
    elif options["figures"]:
        render_table_figure(table, out / "table.png")

    _write_manifest(out, "reproduce", options)
    if table.n_failed:
        print(f"note: {table.n_failed} replicate(s) failed and were excluded")
    print(f"wrote Monte Carlo table ({len(table.rows)} cells) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="shapesize",
        description="Shape and size index models for recurrent-event rates",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a scenario dataset")
    sim.add_argument("--scenario", required=True, choices=SCENARIOS)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--frailty", choices=FRAILTIES, default="degenerate_one")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--beta0", help="comma-separated true shape vector")
    sim.add_argument("--gamma0", help="comma-separated true size vector (first scenario only)")
    sim.add_argument("--tau", type=float, help="observation horizon (scenario default otherwise)")
    sim.add_argument("--censor-rate-scale", type=float, default=0.1,
                     help="censoring hazard per unit frailty; 0 disables censoring")
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--config", help="JSON config or manifest; overrides flags")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit shape and size indices to a dataset")
    fit.add_argument("--subjects", required=True)
    fit.add_argument("--events", required=True)
    fit.add_argument("--tau", type=float, required=True)
    fit.add_argument("--shape-objective", choices=("full", "simplified"),
                     default="simplified")
    fit.add_argument("--size-link", choices=("exp", "mre", "both", "none"),
                     default="both")
    fit.add_argument("--shape-a1", type=float, default=1.0)
    fit.add_argument("--shape-a2", type=float, default=2.0 / 15.0)
    fit.add_argument("--size-a1", type=float, default=1.0)
    fit.add_argument("--size-a2", type=float, default=2.0 / 7.0)
    fit.add_argument("--r0", type=float, default=1e-6)
    fit.add_argument("--trim-tau0", type=float, default=0.0)
    fit.add_argument("--trim-tau1", type=float, default=None)
    fit.add_argument("--z-box", help="covariate box lo1,hi1,lo2,hi2,...")
    fit.add_argument("--bootstrap-b", type=int, default=0)
    fit.add_argument("--ci-method", choices=("normal", "percentile"), default="normal")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out-dir", required=True)
    fit.add_argument("--config", help="JSON config or manifest; overrides flags")
    fit.set_defaults(func=cmd_fit)

    rep = sub.add_parser("reproduce", help="rerun a benchmark study at desk scale")
    rep.add_argument("--table", type=int, required=True, choices=(1, 2))
    rep.add_argument("--scenario", required=True, choices=SCENARIOS)
    rep.add_argument("--n", type=int, required=True)
    rep.add_argument("--frailty", choices=FRAILTIES, default="degenerate_one")
    rep.add_argument("--replicates", type=int, required=True)
    rep.add_argument("--bootstrap-b", type=int, default=0,
                     help="bootstrap size per replicate; 0 skips ASE/CP")
    rep.add_argument("--estimators", help="comma-separated subset overriding the table default")
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--workers", type=int, default=1)
    rep.add_argument("--no-figures", action="store_true")
    rep.add_argument("--out-dir", required=True)
    rep.add_argument("--config", help="JSON config or manifest; overrides flags")
    rep.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, KernelError, ShapeError, SizeError, InferenceError,
            ReferenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
