"""Size-index estimation from projected event counts.

Censoring hides part of each subject's event history. The projection
step divides the observed count by a kernel estimate of the fraction of
shape mass remaining after the censoring time, evaluated at the fitted
shape index, which restores (in expectation) the full-window count.
Two estimators then relate projected counts to covariates: a moment
equation under an exponential link, and a maximum rank correlation
style estimator that only uses the ordering of counts and is therefore
link-free up to scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import Dataset, TrimSpec
from .kernels import KernelSpec, size_kernel, _values
from .shape import (
    EPS_DEN,
    ShapeFit,
    ShapeError,
    integrated_reverse_hazard,
    polyspherical_map,
)

F_FLOOR = 1e-8  # survival-fraction clamp


class SizeError(ValueError):
    pass


def cumulative_shape(dataset: Dataset, beta, x: float, t: float,
                     kernel: KernelSpec | None = None) -> float:
    """Estimated fraction of shape mass beyond time t at index value x.

    exp(-integrated ratio), clamped to [1e-8, 1]. Uses the untrimmed
    smoother over the full window.
    """
    kernel = size_kernel() if kernel is None else kernel
    r = integrated_reverse_hazard(dataset, beta, x, t, kernel=kernel, trim=None)
    return float(min(1.0, max(math.exp(-r), F_FLOOR)))


@dataclass(frozen=True)
class ProjectedCounts:
    """Observed counts divided by the estimated remaining-mass fraction."""

    values: np.ndarray
    f_values: np.ndarray
    f_floor_hits: int
    shape_source: ShapeFit
    diagnostics: dict = field(default_factory=dict)


def _batch_tails_dense(x, c, subjects, h, family):
    # same contraction pattern as the shape workspace, untrimmed window,
    # evaluated only at each subject's censoring time
    n = len(subjects)
    times = []
    owners = []
    for j, s in enumerate(subjects):
        if s.events.size:
            times.append(s.events)
            owners.append(np.full(s.events.size, j, dtype=np.intp))
    if not times:
        return np.zeros(n), 0
    t = np.concatenate(times)
    o = np.concatenate(owners)
    order = np.argsort(t, kind="stable")
    atoms, owner = t[order], o[order]
    E = atoms.size
    D = np.zeros((E, n))
    for j, s in enumerate(subjects):
        ev = s.events
        if ev.size:
            counts = np.searchsorted(ev, atoms, side="right")
            D[:, j] = np.where(c[j] >= atoms, counts, 0.0)
    A = _values(family, (x[:, None] - x[None, :]) / h) / h
    den = A @ D.T
    w = A[:, owner]
    bad = np.abs(den) < EPS_DEN
    skipped = int(bad.sum())
    ratio = np.where(bad, 0.0, w / np.where(bad, 1.0, den))
    tails = np.cumsum(ratio[:, ::-1], axis=1)[:, ::-1]
    cpos = np.searchsorted(atoms, c, side="left")
    has_tail = cpos < E
    out = np.where(has_tail, tails[np.arange(n), np.minimum(cpos, E - 1)], 0.0)
    return out, skipped


def _batch_tails_neighbors(x, c, subjects, h, family):
    # compact support: only subjects with |x_i - x_j| < h interact
    n = len(subjects)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    out = np.zeros(n)
    skipped = 0
    max_event = max((float(s.events[-1]) for s in subjects if s.events.size), default=-np.inf)
    for i in range(n):
        if c[i] > max_event:
            continue  # no atoms at or beyond the censoring time
        lo = np.searchsorted(xs, x[i] - h, side="right")
        hi = np.searchsorted(xs, x[i] + h, side="left")
        nbr = order[lo:hi]
        wts = _values(family, (x[i] - x[nbr]) / h) / h
        atom_t = []
        atom_w = []
        for weight, j in zip(wts, nbr):
            ev = subjects[j].events
            if ev.size:
                late = ev[ev >= c[i]]
                if late.size:
                    atom_t.append(late)
                    atom_w.append(np.full(late.size, weight))
        if not atom_t:
            continue
        u = np.concatenate(atom_t)
        uw = np.concatenate(atom_w)
        den = np.zeros(u.size)
        for weight, j in zip(wts, nbr):
            ev = subjects[j].events
            if ev.size:
                den += weight * np.where(c[j] >= u, np.searchsorted(ev, u, side="right"), 0.0)
        bad = np.abs(den) < EPS_DEN
        skipped += int(bad.sum())
        out[i] = float(np.sum(np.where(bad, 0.0, uw / np.where(bad, 1.0, den))))
    return out, skipped


def project_counts(dataset: Dataset, shape_fit: ShapeFit,
                   kernel: KernelSpec | None = None,
                   max_dense_entries: float = 3e7) -> ProjectedCounts:
    """Divide each observed count by the estimated remaining-mass fraction.

    Subjects censored at the end of the window pass through unchanged
    (their remaining fraction is one). The dense path materializes the
    full atoms-by-subjects contraction; above max_dense_entries a
    per-subject pass over kernel neighbors computes the same numbers.
    """
    kernel = size_kernel() if kernel is None else kernel
    h = kernel.bandwidth(dataset.n)
    beta = np.asarray(shape_fit.beta, dtype=float)
    x = dataset.covariates() @ beta
    c = dataset.censoring()
    subjects = dataset.subjects
    E = dataset.total_events()
    if E * dataset.n <= max_dense_entries:
        tails, skipped = _batch_tails_dense(x, c, subjects, h, kernel.family)
        path = "dense"
    else:
        tails, skipped = _batch_tails_neighbors(x, c, subjects, h, kernel.family)
        path = "neighbors"
    f_raw = np.exp(-tails)
    floor_hits = int(np.sum(f_raw < F_FLOOR))
    f = np.clip(f_raw, F_FLOOR, 1.0)
    counts = dataset.event_counts()
    return ProjectedCounts(
        values=counts / f,
        f_values=f,
        f_floor_hits=floor_hits,
        shape_source=shape_fit,
        diagnostics={"path": path, "skipped_terms": skipped, "bandwidth": h},
    )


@dataclass(frozen=True)
class SizeFitExp:
    """Exponential-link size fit from the moment equations."""

    intercept: float
    gamma: np.ndarray
    normalized_gamma: np.ndarray
    n_used: int
    diagnostics: dict = field(default_factory=dict)

    link: str = "exp"

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "intercept": float(self.intercept),
            "gamma": [float(v) for v in self.gamma],
            "normalized_gamma": [float(v) for v in self.normalized_gamma],
            "n_used": self.n_used,
            "diagnostics": dict(self.diagnostics),
        }


def fit_size_exp(dataset: Dataset, projected: ProjectedCounts,
                 z_region: TrimSpec | None = None,
                 max_iter: int = 100, tol: float = 1e-10) -> SizeFitExp:
    """Solve the exponential-link moment equations for the size index.

    The score of a log-link mean model is concave in (intercept, gamma),
    so damped Newton steps converge globally. Singular information
    matrices (for example a constant covariate) are handled by a
    least-squares step, leaving the unidentified coordinate at zero.
    """
    Z = dataset.covariates()
    y = np.asarray(projected.values, dtype=float)
    if z_region is not None:
        mask = z_region.in_region(Z)
        Z, y = Z[mask], y[mask]
    n, p = Z.shape
    if n < p + 1:
        raise SizeError(f"need at least {p + 1} subjects in region, have {n}")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise SizeError("projected counts must be finite and nonnegative")
    if np.all(y == 0.0):
        raise SizeError("all projected counts are zero; no finite solution")

    X = np.column_stack([np.ones(n), Z])
    scale = max(1.0, float(np.abs(y).sum()))
    theta = np.zeros(p + 1)
    theta[0] = math.log(float(y.mean()))

    def score_at(th):
        eta = X @ th
        if np.any(eta > 700.0):
            return None, None
        mu = np.exp(eta)
        return X.T @ (y - mu), mu

    score, mu = score_at(theta)
    norm = float(np.linalg.norm(score))
    n_damped = 0
    for it in range(max_iter):
        if norm <= tol * scale:
            break
        info = X.T @ (X * mu[:, None])
        step, *_ = np.linalg.lstsq(info, score, rcond=None)
        lam = 1.0
        for _ in range(40):
            cand = theta + lam * step
            s2, m2 = score_at(cand)
            if s2 is not None and float(np.linalg.norm(s2)) < norm:
                break
            lam *= 0.5
            n_damped += 1
        else:
            break  # no further progress possible
        theta, score, mu = cand, s2, m2
        norm = float(np.linalg.norm(score))
    if norm > 1e-8 * scale:
        raise SizeError(
            f"moment equations did not converge: residual norm {norm:.3e} after {it + 1} iterations"
        )
    gamma = theta[1:]
    gnorm = float(np.linalg.norm(gamma))
    normalized = gamma / gnorm if gnorm > 0 else gamma.copy()
    return SizeFitExp(
        intercept=float(theta[0]),
        gamma=gamma,
        normalized_gamma=normalized,
        n_used=n,
        diagnostics={
            "iterations": it + 1,
            "residual_norm": norm,
            "damped_steps": n_damped,
        },
    )


def dual_index_trim(z, beta_hat, gamma_tilde, a: float):
    """Indicator of the dual-index box used to trim size estimation.

    Splits the fitted shape direction into its projection on a size
    direction and the rejection, and keeps z when both index values are
    within [-a, a]. Accepts a single vector or a matrix of rows.
    """
    if a <= 0:
        raise SizeError(f"trim half-width a must be positive, got {a}")
    b = np.asarray(beta_hat, dtype=float)
    g = np.asarray(gamma_tilde, dtype=float)
    for name, v in (("beta_hat", b), ("gamma_tilde", g)):
        nv = float(np.linalg.norm(v))
        if abs(nv - 1.0) > 1e-6:
            raise SizeError(f"{name} must have unit norm, got {nv}")
    par = float(b @ g) * g
    rej = b - par
    zz = np.atleast_2d(np.asarray(z, dtype=float))
    keep = (np.abs(zz @ par) <= a) & (np.abs(zz @ rej) <= a)
    return bool(keep[0]) if np.asarray(z).ndim == 1 else keep


@dataclass(frozen=True)
class SizeFitMre:
    """Rank-based size fit: direction maximizing pairwise concordance."""

    gamma: np.ndarray
    objective_value: float
    n_used: int
    identifiable: bool
    unique: bool
    diagnostics: dict = field(default_factory=dict)

    link: str = "rank"

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "gamma": [float(v) for v in self.gamma],
            "objective_value": float(self.objective_value),
            "n_used": self.n_used,
            "identifiable": self.identifiable,
            "unique": self.unique,
            "diagnostics": dict(self.diagnostics),
        }


def _rank_objective(Z: np.ndarray, y: np.ndarray, gamma: np.ndarray) -> float:
    s = Z @ gamma
    gt = s[:, None] > s[None, :]
    return float(y @ gt.sum(axis=1))


def _mre_sweep_2d(Z: np.ndarray, y: np.ndarray):
    # the objective is piecewise constant in the angle; it only changes
    # where gamma is orthogonal to some pairwise difference
    n = y.size
    ii, jj = np.triu_indices(n, k=1)
    d = Z[ii] - Z[jj]
    dy = y[ii] - y[jj]
    live = (np.abs(d).sum(axis=1) > 0.0) & (dy != 0.0)
    d, dy = d[live], dy[live]
    twopi = 2.0 * math.pi
    if d.shape[0] == 0:
        return None  # objective constant in the angle
    phi = np.arctan2(d[:, 1], d[:, 0])
    # crossing phi + pi/2 flips the pair from y_i to y_j and vice versa
    th1 = np.mod(phi + 0.5 * math.pi, twopi)
    th2 = np.mod(phi - 0.5 * math.pi, twopi)
    angles = np.concatenate([th1, th2])
    deltas = np.concatenate([-dy, dy])
    order = np.argsort(angles, kind="stable")
    angles, deltas = angles[order], deltas[order]

    start = 0.5 * (angles[0] + (angles[-1] - twopi))  # midpoint of wraparound arc
    q = _rank_objective(Z, y, np.array([math.cos(start), math.sin(start)]))
    arc_lo = angles[-1] - twopi
    arcs = [(q, arc_lo, angles[0])]
    running = q
    k = 0
    total = angles.size
    while k < total:
        k2 = k
        while k2 < total and angles[k2] == angles[k]:
            running += deltas[k2]
            k2 += 1
        hi = angles[k2] if k2 < total else angles[0] + twopi
        arcs.append((running, angles[k], hi))
        k = k2

    swept = np.array([a[0] for a in arcs])
    scale = max(1.0, float(np.abs(y).sum()))
    near = np.flatnonzero(swept >= swept.max() - 1e-6 * scale)
    # refresh candidates exactly to remove accumulated float drift
    best_val = -np.inf
    best_mid = None
    exact = []
    for a in near:
        qv, lo, hi = arcs[a]
        mid = 0.5 * (lo + hi)
        g = np.array([math.cos(mid), math.sin(mid)])
        v = _rank_objective(Z, y, g)
        exact.append(v)
        if v > best_val + 0.0:
            best_val, best_mid = v, mid
    n_best = int(np.sum(np.isclose(exact, best_val, rtol=0.0, atol=1e-9 * scale)))
    gamma = np.array([math.cos(best_mid), math.sin(best_mid)])
    info = {
        "n_pairs": int(live.sum()),
        "n_breakpoints": int(total),
        "n_arcs": int(len(arcs)),
        "n_tied_arcs": n_best,
        "method": "breakpoint_sweep",
    }
    return gamma, best_val, n_best == 1, info


def fit_size_mre(dataset: Dataset, projected: ProjectedCounts,
                 z_region: TrimSpec | None = None,
                 restarts: int = 20) -> SizeFitMre:
    """Maximize pairwise concordance between the index and the counts.

    For two covariates the angle axis is swept exactly across all arc
    breakpoints; in higher dimensions a deterministic multi-start
    simplex search over angles is used. The estimate is scale-free, so
    only the direction (unit norm) is returned; no sign convention is
    applied because reversing the direction reverses the ordering.
    """
    Z = dataset.covariates()
    y = np.asarray(projected.values, dtype=float)
    if z_region is not None:
        mask = z_region.in_region(Z)
        Z, y = Z[mask], y[mask]
    n, p = Z.shape
    if n < 2:
        raise SizeError("need at least two subjects in region")
    if np.ptp(y) == 0.0:
        return SizeFitMre(
            gamma=np.array([1.0] + [0.0] * (p - 1)),
            objective_value=_rank_objective(Z, y, np.array([1.0] + [0.0] * (p - 1))),
            n_used=n,
            identifiable=False,
            unique=False,
            diagnostics={"method": "degenerate", "note": "all counts equal"},
        )

    if p == 2:
        res = _mre_sweep_2d(Z, y)
        if res is None:
            return SizeFitMre(
                gamma=np.array([1.0, 0.0]),
                objective_value=_rank_objective(Z, y, np.array([1.0, 0.0])),
                n_used=n,
                identifiable=False,
                unique=False,
                diagnostics={"method": "degenerate", "note": "no informative pairs"},
            )
        gamma, val, unique, info = res
        return SizeFitMre(
            gamma=gamma, objective_value=val, n_used=n,
            identifiable=True, unique=unique, diagnostics=info,
        )

    # higher dimensions: deterministic multi-start over angles
    rng = np.random.default_rng(0)
    starts = [rng.uniform(0.0, math.pi, size=p - 1) for _ in range(restarts)]
    best_val, best_gamma = -np.inf, None
    for x0 in starts:
        res = minimize(
            lambda a: -_rank_objective(Z, y, polyspherical_map(a)),
            x0=x0, method="Nelder-Mead",
            options={"xatol": 1e-4, "fatol": 0.5, "maxiter": 500},
        )
        v = -float(res.fun)
        if v > best_val:
            best_val, best_gamma = v, polyspherical_map(np.atleast_1d(res.x))
    return SizeFitMre(
        gamma=best_gamma, objective_value=best_val, n_used=n,
        identifiable=True, unique=True,
        diagnostics={"method": "multistart_simplex", "restarts": restarts},
    )
