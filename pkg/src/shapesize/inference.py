"""Bootstrap standard errors and Monte Carlo replication tables.

The bootstrap resamples subjects with replacement and refits the chosen
estimator on each resample. Shape refits always use the simplified
objective, whose replicate spread matches the full objective's in large
samples at a fraction of the cost, and search a bounded window (half a
bandwidth per angle) around the original-sample angles: a replicate
tracks the fluctuation of the original maximizer, including competition
between nearby local modes, while re-running the global search on a
resampled surface would occasionally hop to a spurious far mode and
inflate the standard error. Size refits rerun the whole pipeline
(shape, projection, size) on the resample. Replicate r draws its
indices from a stream derived from (seed, r), so results do not depend
on execution order, and a study aggregates replicates by index so that
any worker count produces identical output.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, Dataset, TrimSpec
from .kernels import KernelSpec
from .shape import ShapeError, fit_shape
from .simulate import ScenarioSpec, simulate_dataset, with_seed
from .size import SizeError, fit_size_exp, fit_size_mre, project_counts

ESTIMATORS = ("shape_simplified", "shape_full", "size_exp", "size_mre")

_SHAPE_KINDS = ("shape_simplified", "shape_full")
_SIZE_KINDS = ("size_exp", "size_mre")


class InferenceError(RuntimeError):
    pass


def _derive_seed(*entropy) -> int:
    ss = np.random.SeedSequence([int(v) for v in entropy])
    return int(ss.generate_state(1, np.uint64)[0])


def _replicate_multi(dataset: Dataset, estimators, kernel_shape, kernel_size,
                     trim, z_region, replicate_mode: bool, start_alpha=None):
    """Estimates for several estimators on one dataset, sharing work.

    replicate_mode switches shape_full to the simplified refit used
    inside bootstrap loops; start_alpha warm-starts the shape optimizer
    (bootstrap replicates pass the original-sample angles so a refit
    tracks the original maximizer instead of re-running the global
    search on a resampled, occasionally multimodal surface). Returns
    (values, errors, shape_angles) with values/errors keyed by
    estimator; an estimator appears in exactly one of the two.
    """
    values: dict = {}
    errors: dict = {}
    need_simple = any(e in ("shape_simplified", "size_exp", "size_mre") for e in estimators)
    need_simple = need_simple or (replicate_mode and "shape_full" in estimators)
    sf = None
    if need_simple:
        try:
            sf = fit_shape(dataset, kernel=kernel_shape, trim=trim,
                           objective="simplified", start_alpha=start_alpha)
        except (ShapeError, DataError) as exc:
            for e in estimators:
                errors[e] = f"shape refit failed: {exc}"
            return values, errors, None
    full_alpha = None
    if "shape_simplified" in estimators:
        values["shape_simplified"] = sf.beta
    if "shape_full" in estimators:
        if replicate_mode:
            values["shape_full"] = sf.beta
        else:
            try:
                ff = fit_shape(
                    dataset, kernel=kernel_shape, trim=trim, objective="full",
                    start_alpha=start_alpha,
                )
                values["shape_full"] = ff.beta
                full_alpha = ff.alpha
            except (ShapeError, DataError) as exc:
                errors["shape_full"] = str(exc)
    size_wanted = [e for e in estimators if e in _SIZE_KINDS]
    if size_wanted:
        try:
            pc = project_counts(dataset, sf, kernel=kernel_size)
        except (ShapeError, SizeError, DataError) as exc:
            for e in size_wanted:
                errors[e] = f"projection failed: {exc}"
            return values, errors, sf.alpha
        if "size_exp" in estimators:
            try:
                values["size_exp"] = fit_size_exp(dataset, pc, z_region=z_region).normalized_gamma
            except (SizeError, DataError) as exc:
                errors["size_exp"] = str(exc)
        if "size_mre" in estimators:
            try:
                values["size_mre"] = fit_size_mre(dataset, pc, z_region=z_region).gamma
            except (SizeError, DataError) as exc:
                errors["size_mre"] = str(exc)
    return values, errors, full_alpha if sf is None else sf.alpha


@dataclass(frozen=True)
class BootstrapResult:
    """Resampling summary for one estimator."""

    estimator: str
    point: np.ndarray
    estimates: np.ndarray
    se: np.ndarray
    ci: np.ndarray
    B: int
    seed: int
    n_dropped: int
    ci_method: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "point": [float(v) for v in self.point],
            "se": [float(v) for v in self.se],
            "ci": [[float(a), float(b)] for a, b in self.ci],
            "B": self.B,
            "seed": self.seed,
            "n_dropped": self.n_dropped,
            "ci_method": self.ci_method,
            "diagnostics": dict(self.diagnostics),
        }


def _resample(dataset: Dataset, idx) -> Dataset:
    return Dataset(subjects=tuple(dataset.subjects[i] for i in idx), tau=dataset.tau)


def bootstrap_multi(dataset: Dataset, estimators, B: int, seed: int,
                    kernel_shape: KernelSpec | None = None,
                    kernel_size: KernelSpec | None = None,
                    trim: TrimSpec | None = None,
                    z_region: TrimSpec | None = None,
                    ci_method: str = "normal",
                    index_sampler=None) -> dict:
    """Bootstrap several estimators over one shared set of resamples.

    Each resample's pipeline (shape refit, projection) is computed once
    and reused by every requested estimator. Failures are dropped and
    counted per estimator; more than 10% drops for any estimator is an
    error.
    """
    if B < 2:
        raise InferenceError(f"bootstrap needs B >= 2, got {B}")
    if ci_method not in ("normal", "percentile"):
        raise InferenceError(f"unknown ci_method {ci_method!r}")
    names = list(dict.fromkeys(estimators))
    callables = {}
    str_names = []
    for e in names:
        if callable(e):
            callables[e] = e
        elif e in ESTIMATORS:
            str_names.append(e)
        else:
            raise InferenceError(f"unknown estimator {e!r}; expected one of {ESTIMATORS}")

    points: dict = {}
    vals, errs, start_alpha = _replicate_multi(
        dataset, str_names, kernel_shape, kernel_size, trim, z_region, replicate_mode=False
    )
    if errs:
        first = next(iter(errs.items()))
        raise InferenceError(f"point estimate failed for {first[0]}: {first[1]}")
    points.update(vals)
    for e in callables:
        points[e] = np.atleast_1d(np.asarray(e(dataset), dtype=float))

    n = dataset.n
    kept: dict = {e: [] for e in names}
    dropped: dict = {e: 0 for e in names}
    notes: dict = {e: [] for e in names}
    for r in range(B):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        idx = index_sampler(rng, n) if index_sampler is not None else rng.integers(0, n, size=n)
        rs = _resample(dataset, np.asarray(idx, dtype=np.intp))
        if str_names:
            vals, errs, _ = _replicate_multi(
                rs, str_names, kernel_shape, kernel_size, trim, z_region,
                replicate_mode=True, start_alpha=start_alpha,
            )
            for e in str_names:
                if e in vals:
                    kept[e].append(np.asarray(vals[e], dtype=float))
                else:
                    dropped[e] += 1
                    if len(notes[e]) < 5:
                        notes[e].append(f"replicate {r}: {errs[e]}")
        for e in callables:
            kept[e].append(np.atleast_1d(np.asarray(e(rs), dtype=float)))

    out: dict = {}
    for e in names:
        if dropped[e] > 0.1 * B:
            raise InferenceError(
                f"estimator {e}: {dropped[e]} of {B} bootstrap replicates failed"
            )
        est = np.vstack(kept[e])
        se = est.std(axis=0, ddof=1)
        point = points[e]
        if ci_method == "normal":
            ci = np.column_stack([point - 1.96 * se, point + 1.96 * se])
        else:
            ci = np.percentile(est, [2.5, 97.5], axis=0).T
        key = e if isinstance(e, str) else getattr(e, "__name__", "callable")
        out[e] = BootstrapResult(
            estimator=key, point=point, estimates=est, se=se, ci=ci, B=B,
            seed=int(seed), n_dropped=dropped[e], ci_method=ci_method,
            diagnostics={"drop_notes": notes[e]},
        )
    return out


def bootstrap(dataset: Dataset, estimator, B: int, seed: int,
              kernel_shape: KernelSpec | None = None,
              kernel_size: KernelSpec | None = None,
              trim: TrimSpec | None = None,
              z_region: TrimSpec | None = None,
              ci_method: str = "normal",
              index_sampler=None) -> BootstrapResult:
    """Nonparametric bootstrap for one estimator; see bootstrap_multi."""
    res = bootstrap_multi(
        dataset, [estimator], B, seed, kernel_shape=kernel_shape,
        kernel_size=kernel_size, trim=trim, z_region=z_region,
        ci_method=ci_method, index_sampler=index_sampler,
    )
    return res[estimator]


@dataclass(frozen=True)
class MonteCarloTable:
    """Replicate-level aggregation in the usual bias/ESE/ASE/CP layout."""

    scenario: str
    n: int
    frailty: str
    replicates: int
    B: int
    seed: int
    rows: tuple
    n_failed: int
    diagnostics: dict = field(default_factory=dict)

    def row(self, estimator: str, parameter: str) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["parameter"] == parameter:
                return r
        raise KeyError((estimator, parameter))

    def to_csv(self, path) -> None:
        cols = [
            "estimator", "parameter", "truth",
            "bias_x1000", "ese_x1000", "ase_x1000", "cp_pct", "n_replicates",
        ]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([
                    r["estimator"], r["parameter"], f"{r['truth']:.10g}",
                    _fmt_x1000(r["bias"]), _fmt_x1000(r["ese"]),
                    _fmt_x1000(r["ase"]),
                    "" if r["cp"] is None else f"{100.0 * r['cp']:.6g}",
                    r["n_replicates"],
                ])


def _fmt_x1000(v) -> str:
    return "" if v is None else f"{1000.0 * v:.6g}"


def _truth_vector(spec: ScenarioSpec, estimator: str) -> np.ndarray:
    if estimator in _SHAPE_KINDS:
        b = np.asarray(spec.beta0, dtype=float)
        b = b / np.linalg.norm(b)
        return -b if b[-1] < 0 else b
    g = np.asarray(spec.gamma0, dtype=float)
    return g / np.linalg.norm(g)


def _mc_task(payload):
    (spec, r, estimators, B, seed, kernel_shape, kernel_size, trim, z_region) = payload
    data_seed = _derive_seed(seed, r, 0)
    ds = simulate_dataset(with_seed(spec, data_seed))
    try:
        vals, errs, _ = _replicate_multi(
            ds, estimators, kernel_shape, kernel_size, trim, z_region, replicate_mode=False
        )
    except (ShapeError, SizeError, DataError) as exc:
        return r, {}, {}, str(exc)
    ses: dict = {}
    if B >= 2 and vals:
        try:
            boots = bootstrap_multi(
                ds, [e for e in estimators if e in vals], B, _derive_seed(seed, r, 1),
                kernel_shape=kernel_shape, kernel_size=kernel_size,
                trim=trim, z_region=z_region,
            )
            ses = {e: b.se for e, b in boots.items()}
        except InferenceError as exc:
            return r, {}, {}, str(exc)
    note = "; ".join(f"{e}: {m}" for e, m in errs.items()) if errs else None
    return r, vals, ses, note


def monte_carlo_study(spec: ScenarioSpec, replicates: int, B: int, estimators,
                      seed: int, workers: int = 1,
                      kernel_shape: KernelSpec | None = None,
                      kernel_size: KernelSpec | None = None,
                      trim: TrimSpec | None = None,
                      z_region: TrimSpec | None = None) -> MonteCarloTable:
    """Simulate, fit, and aggregate bias/ESE/ASE/CP over replicates.

    B < 2 skips the bootstrap (ASE and CP reported absent). Replicate r
    simulates with a seed derived from (seed, r, 0) and bootstraps with
    (seed, r, 1); aggregation sorts by replicate index, so the result is
    identical for any worker count.
    """
    if replicates < 1:
        raise InferenceError(f"replicates must be >= 1, got {replicates}")
    names = list(dict.fromkeys(estimators))
    if not names:
        raise InferenceError("need at least one estimator")
    for e in names:
        if e not in ESTIMATORS:
            raise InferenceError(f"unknown estimator {e!r}; expected one of {ESTIMATORS}")

    payloads = [
        (spec, r, tuple(names), B, int(seed), kernel_shape, kernel_size, trim, z_region)
        for r in range(replicates)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_mc_task, payloads, chunksize=1))
    else:
        results = [_mc_task(p) for p in payloads]
    results.sort(key=lambda t: t[0])

    est_by_name: dict = {e: [] for e in names}
    se_by_name: dict = {e: [] for e in names}
    failures = []
    for r, vals, ses, note in results:
        if note:
            failures.append(f"replicate {r}: {note}")
        for e in names:
            if e in vals:
                est_by_name[e].append(np.asarray(vals[e], dtype=float))
                se_by_name[e].append(ses.get(e))

    hard_failures = replicates - max(len(v) for v in est_by_name.values()) if names else 0
    n_failed = max(
        (replicates - len(est_by_name[e]) for e in names), default=0
    )
    if n_failed > max(0.05 * replicates, 0):
        raise InferenceError(
            f"{n_failed} of {replicates} replicates failed; first: "
            + (failures[0] if failures else "unknown")
        )

    rows = []
    for e in names:
        truth = _truth_vector(spec, e)
        est = np.vstack(est_by_name[e]) if est_by_name[e] else np.empty((0, truth.size))
        R = est.shape[0]
        ses = [s for s in se_by_name[e] if s is not None]
        semat = np.vstack(ses) if ses else None
        for k in range(truth.size):
            bias = float(est[:, k].mean() - truth[k]) if R else None
            ese = float(est[:, k].std(ddof=1)) if R >= 2 else None
            ase = float(semat[:, k].mean()) if semat is not None else None
            cp = None
            if semat is not None and semat.shape[0] == R:
                cover = np.abs(est[:, k] - truth[k]) <= 1.96 * semat[:, k]
                cp = float(cover.mean())
            prefix = "beta" if e in _SHAPE_KINDS else "gamma"
            rows.append({
                "estimator": e,
                "parameter": f"{prefix}{k + 1}",
                "truth": float(truth[k]),
                "bias": bias,
                "ese": ese,
                "ase": ase,
                "cp": cp,
                "n_replicates": R,
            })
    return MonteCarloTable(
        scenario=spec.scenario, n=spec.n, frailty=spec.frailty,
        replicates=replicates, B=B, seed=int(seed), rows=tuple(rows),
        n_failed=n_failed,
        diagnostics={"failures": failures[:10], "hard_failures": hard_failures},
    )
