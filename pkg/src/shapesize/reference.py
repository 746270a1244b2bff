"""Published benchmark values and comparison reports.

The packaged benchmarks.json stores the reference Monte Carlo summaries
(bias, ESE, ASE in thousandths; CP in percent) for every scenario,
sample size, frailty case, and estimator this library reproduces. A
comparison report lines up a fresh study against those cells with
tolerance bands that widen at small replicate counts, where the
empirical bias itself is noisy.
"""

from __future__ import annotations

import csv
import json
from importlib import resources

import numpy as np

from .inference import MonteCarloTable, _SHAPE_KINDS

_cache: dict | None = None

BIAS_FLOOR = 0.02       # natural-units floor of the bias band
ESE_RATIO_BAND = (0.6, 1.4)
ASE_RATIO_BAND = (0.7, 1.4)
CP_BAND = (0.88, 0.99)


class ReferenceError(KeyError):
    pass


def load_benchmarks() -> dict:
    global _cache
    if _cache is None:
        with resources.files(__package__).joinpath("benchmarks.json").open() as fh:
            _cache = json.load(fh)
    return _cache


def reference_cells(scenario: str, n: int, frailty: str, estimator: str) -> dict:
    """Reference {parameter: {bias, ese, ase?, cp}} for one table block."""
    table = "shape" if estimator in _SHAPE_KINDS else "size"
    bm = load_benchmarks()
    try:
        return bm[table][scenario][str(int(n))][frailty][estimator]
    except KeyError:
        raise ReferenceError(
            f"no reference values for {estimator} under {scenario}, n={n}, frailty={frailty}"
        ) from None


def _ratio(a, b):
    if a is None or b is None or b == 0:
        return None
    return a / b


def compare_to_reference(table: MonteCarloTable, estimators=None) -> list:
    """Per-cell comparison rows with pass/fail flags.

    Bias band: max(0.02, 3 * reference ESE / sqrt(replicates)) in natural
    units, so short runs are judged against their own Monte Carlo noise.
    ESE is checked as a ratio to the reference, ASE against the run's own
    ESE, CP against a wide nominal band. Cells the run did not estimate
    (no bootstrap, single replicate) are marked not estimable rather than
    failed.
    """
    if estimators is None:
        estimators = list(dict.fromkeys(r["estimator"] for r in table.rows))
    rows = []
    for est in estimators:
        ref = reference_cells(table.scenario, table.n, table.frailty, est)
        for r in table.rows:
            if r["estimator"] != est:
                continue
            cell = ref.get(r["parameter"])
            if cell is None:
                continue
            ref_bias = cell["bias"] / 1000.0
            ref_ese = cell["ese"] / 1000.0
            ref_ase = cell.get("ase")
            ref_ase = None if ref_ase is None else ref_ase / 1000.0
            ref_cp = cell["cp"] / 100.0

            bias_tol = max(BIAS_FLOOR, 3.0 * ref_ese / np.sqrt(max(r["n_replicates"], 1)))
            bias_pass = None if r["bias"] is None else bool(abs(r["bias"]) <= bias_tol)

            ese_ratio = _ratio(r["ese"], ref_ese)
            ese_pass = None if ese_ratio is None else bool(
                ESE_RATIO_BAND[0] <= ese_ratio <= ESE_RATIO_BAND[1]
            )
            ase_ratio = _ratio(r["ase"], r["ese"])
            ase_pass = None if ase_ratio is None else bool(
                ASE_RATIO_BAND[0] <= ase_ratio <= ASE_RATIO_BAND[1]
            )
            cp_pass = None if r["cp"] is None else bool(CP_BAND[0] <= r["cp"] <= CP_BAND[1])

            decided = [p for p in (bias_pass, ese_pass, ase_pass, cp_pass) if p is not None]
            rows.append({
                "estimator": est,
                "parameter": r["parameter"],
                "bias": r["bias"], "ref_bias": ref_bias, "bias_tol": bias_tol,
                "bias_pass": bias_pass,
                "ese": r["ese"], "ref_ese": ref_ese, "ese_ratio": ese_ratio,
                "ese_pass": ese_pass,
                "ase": r["ase"], "ref_ase": ref_ase, "ase_to_ese": ase_ratio,
                "ase_pass": ase_pass,
                "cp": r["cp"], "ref_cp": ref_cp, "cp_pass": cp_pass,
                "overall_pass": bool(all(decided)) if decided else None,
                "not_estimable": [
                    name for name, p in (
                        ("bias", bias_pass), ("ese", ese_pass),
                        ("ase", ase_pass), ("cp", cp_pass),
                    ) if p is None
                ],
            })
    return rows


def comparison_to_csv(rows: list, path) -> None:
    cols = [
        "estimator", "parameter",
        "bias_x1000", "ref_bias_x1000", "bias_tol_x1000", "bias_pass",
        "ese_x1000", "ref_ese_x1000", "ese_ratio", "ese_pass",
        "ase_x1000", "ref_ase_x1000", "ase_to_ese", "ase_pass",
        "cp_pct", "ref_cp_pct", "cp_pass", "overall_pass", "not_estimable",
    ]

    def x1000(v):
        return "" if v is None else f"{1000.0 * v:.6g}"

    def pct(v):
        return "" if v is None else f"{100.0 * v:.6g}"

    def flag(v):
        return "" if v is None else ("pass" if v else "FAIL")

    def num(v):
        return "" if v is None else f"{v:.6g}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([
                r["estimator"], r["parameter"],
                x1000(r["bias"]), x1000(r["ref_bias"]), x1000(r["bias_tol"]),
                flag(r["bias_pass"]),
                x1000(r["ese"]), x1000(r["ref_ese"]), num(r["ese_ratio"]),
                flag(r["ese_pass"]),
                x1000(r["ase"]), x1000(r["ref_ase"]), num(r["ase_to_ese"]),
                flag(r["ase_pass"]),
                pct(r["cp"]), pct(r["ref_cp"]), flag(r["cp_pass"]),
                flag(r["overall_pass"]),
                "|".join(r["not_estimable"]),
            ])
