"""Shape-index estimation from recurrent event data.

The shape of the event rate over time is allowed to depend on covariates
only through a single index, the inner product of an unknown unit vector
with Z. Estimation works on the time-transformed scale where the size of
the rate cancels: at each observed event time one forms a kernel-smoothed
ratio of event intensity to the count-weighted at-risk mass and either
integrates it (full objective) or keeps only its logarithm at the events
(simplified objective). Both objectives are maximized over the unit
sphere through polyspherical angles.

Layout of the computation: one workspace per (dataset, kernel, trim)
holds everything that does not depend on the candidate direction, which
is the pooled atom list (in-window events with their owning subjects)
and two atoms-by-subjects matrices, the time-kernel mass B[e, j] =
sum_l K_h(u_e - T_jl) and the at-risk count D[e, j] = 1{C_j >= u_e} *
(N_j(u_e) - N_j(tau0)). A candidate direction then only requires the
covariate-kernel matrix A[i, j] = K_h(s_i - s_j) and a handful of
matrix contractions, which keeps a single objective evaluation cheap
enough for grid search plus simplex refinement and for bootstrap loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import Dataset, TrimSpec, UNTRIMMED
from .kernels import KernelSpec, shape_kernel, _values

EPS_DEN = 1e-12  # integrated-ratio terms with |denominator| below this are skipped

# A fourth-order kernel takes negative values, so an at-risk denominator can
# cancel to nearly zero while its numerator stays O(1), putting razor-thin
# poles in the objective surface. The share q = |den| / (total unsigned mass
# of the denominator's own terms) measures how cancellation-compromised a
# term is; q is identically 1 under a nonnegative kernel, so none of the
# guards below ever fire for one. Integrated-ratio atoms with q below REL_DEN
# are skipped (and counted). Each event's log-rate term is weighted by the
# ramp ((q - RAMP_LO) / (RAMP_HI - RAMP_LO) clipped to [0, 1]), which removes
# the pole smoothly: the weighted term can be shown never to exceed its value
# at q = RAMP_HI, so no threshold shoulder is left behind for the optimizer
# or a grid search to mistake for a maximum.
REL_DEN = 0.02
RAMP_LO = 0.1
RAMP_HI = 0.5

OBJECTIVE_KINDS = ("full", "simplified")


class ShapeError(ValueError):
    pass


def polyspherical_map(alpha) -> np.ndarray:
    """Map angles to a unit vector of length len(alpha) + 1.

    beta_k = cos(alpha_k) * prod_{j<k} sin(alpha_j) for k < p - 1 and
    beta_{p-1} = prod_j sin(alpha_j). For p = 2 this is
    (cos(alpha), sin(alpha)).
    """
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if a.ndim != 1 or a.size < 1:
        raise ShapeError("alpha must be a nonempty 1-d angle vector")
    sins = np.concatenate(([1.0], np.cumprod(np.sin(a))))
    beta = np.empty(a.size + 1)
    beta[:-1] = np.cos(a) * sins[:-1]
    beta[-1] = sins[-1]
    return beta


def direction_angles(beta) -> np.ndarray:
    """Inverse of polyspherical_map for a unit vector.

    First p-2 angles lie in [0, pi]; the last lies in [0, 2*pi).
    """
    b = np.atleast_1d(np.asarray(beta, dtype=float))
    p = b.size
    if p < 2:
        raise ShapeError("need at least two coordinates")
    alpha = np.empty(p - 1)
    for k in range(p - 2):
        alpha[k] = math.atan2(float(np.linalg.norm(b[k + 1 :])), float(b[k]))
    alpha[p - 2] = math.atan2(float(b[p - 1]), float(b[p - 2])) % (2.0 * math.pi)
    return alpha


class _Workspace:
    """Direction-independent precomputation for one (dataset, kernel, trim)."""

    def __init__(self, dataset: Dataset, kernel: KernelSpec, trim: TrimSpec,
                 max_dense_entries: float = 6e7):
        self.dataset = dataset
        self.kernel = kernel
        self.trim = trim
        self.n_total = dataset.n
        self.h = kernel.bandwidth(dataset.n)
        self.r0 = kernel.r0
        tau0, tau1 = trim.window(dataset.tau)
        self.tau0, self.tau1 = tau0, tau1

        Z = dataset.covariates()
        keep = trim.in_region(Z)
        self.keep = keep
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            raise ShapeError("no subjects inside the covariate trimming region")
        self.z = Z[idx]
        self.c = dataset.censoring()[idx]
        subs = [dataset.subjects[i] for i in idx]

        # pooled atoms: in-window events of kept subjects; window is
        # (tau0, tau1], closed at 0 when tau0 == 0 so events at exactly 0 count
        times = []
        owners = []
        all_events = []  # per kept subject, all raw events (for B and N(.))
        n_window = np.zeros(len(subs), dtype=float)
        for j, s in enumerate(subs):
            ev = s.events
            all_events.append(ev)
            if ev.size:
                inwin = (ev <= tau1) & ((ev > tau0) | (tau0 == 0.0))
                sel = ev[inwin]
                n_window[j] = sel.size
                times.append(sel)
                owners.append(np.full(sel.size, j, dtype=np.intp))
        if times:
            t = np.concatenate(times)
            o = np.concatenate(owners)
            order = np.argsort(t, kind="stable")
            self.atoms = t[order]
            self.owner = o[order]
        else:
            self.atoms = np.empty(0)
            self.owner = np.empty(0, dtype=np.intp)
        self.n_window = n_window
        E = self.atoms.size
        m = len(subs)
        self.E, self.m = E, m

        if E * m > max_dense_entries:
            raise ShapeError(
                f"dense workspace would need {E}x{m} entries; trim the window or "
                "reduce the sample for shape fitting"
            )

        # first index of each tie group, so tail sums starting at an event
        # time include every atom at exactly that time
        if E:
            newgrp = np.empty(E, dtype=bool)
            newgrp[0] = True
            newgrp[1:] = self.atoms[1:] > self.atoms[:-1]
            grp_start = np.flatnonzero(newgrp)
            self.tie_first = grp_start[np.cumsum(newgrp) - 1]
        else:
            self.tie_first = np.empty(0, dtype=np.intp)

        # D[e, j] = 1{c_j >= u_e} (N_j(u_e) - N_j(tau0)); B[e, j] = time-kernel mass
        D = np.zeros((E, m))
        B = np.zeros((E, m))
        h = self.h
        fam = kernel.family
        u = self.atoms
        for j, ev in enumerate(all_events):
            if ev.size:
                counts = np.searchsorted(ev, u, side="right") - np.searchsorted(
                    ev, tau0, side="right"
                )
                D[:, j] = np.where(self.c[j] >= u, np.maximum(counts, 0), 0.0)
                if E:
                    B[:, j] = _values(fam, (u[:, None] - ev[None, :]) / h).sum(axis=1) / h
        self.D = D
        self.B = B
        # first atom index at or after each kept subject's censoring time
        self.cpos = np.searchsorted(self.atoms, self.c, side="left")

    def _weights(self, beta: np.ndarray) -> np.ndarray:
        s = self.z @ beta
        return _values(self.kernel.family, (s[:, None] - s[None, :]) / self.h) / self.h

    def _log_rates(self, A: np.ndarray, diag: dict | None) -> np.ndarray:
        G = A[self.owner]
        num = np.einsum("ej,ej->e", G, self.B)
        den = np.einsum("ej,ej->e", G, self.D)
        # D is nonnegative, so this is the unsigned mass of the denominator
        mass = np.einsum("ej,ej->e", np.abs(G), self.D)
        # mass > 0 for every in-window event: the owner is at risk of its own
        # event with a positive count and weight |K(0)| / h
        q = np.abs(den) / mass
        w = np.clip((q - RAMP_LO) / (RAMP_HI - RAMP_LO), 0.0, 1.0)
        live = w > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = num / den
        ratio = np.where(live & np.isfinite(ratio), ratio, -np.inf)
        floored = live & (ratio < self.r0)
        if diag is not None:
            diag["rate_floor_hits"] = diag.get("rate_floor_hits", 0) + int(floored.sum())
            diag["damped_terms"] = diag.get("damped_terms", 0) + int((w < 1.0).sum())
        return w * np.log(np.where(floored | ~live, self.r0, ratio))

    def simplified(self, beta: np.ndarray, diag: dict | None = None) -> float:
        if self.E == 0:
            raise ShapeError("objective undefined: no events in the estimation window")
        A = self._weights(np.asarray(beta, dtype=float))
        return float(self._log_rates(A, diag).sum()) / self.n_total

    def _tail_sums(self, A: np.ndarray, diag: dict | None) -> np.ndarray:
        # ratio[i, e] = A[i, owner_e] / sum_j A[i, j] D[e, j], summed from the top
        den = A @ self.D.T
        mass = np.abs(A) @ self.D.T
        w = A[:, self.owner]
        bad = np.abs(den) < np.maximum(EPS_DEN, REL_DEN * mass)
        if diag is not None:
            diag["skipped_terms"] = diag.get("skipped_terms", 0) + int(bad.sum())
        ratio = np.where(bad, 0.0, w / np.where(bad, 1.0, den))
        return np.cumsum(ratio[:, ::-1], axis=1)[:, ::-1]

    def full(self, beta: np.ndarray, diag: dict | None = None) -> float:
        if self.E == 0:
            raise ShapeError("objective undefined: no events in the estimation window")
        beta = np.asarray(beta, dtype=float)
        A = self._weights(beta)
        logs = self._log_rates(A, diag)
        tails = self._tail_sums(A, diag)
        r_at_events = tails[self.owner, self.tie_first]
        has_tail = self.cpos < self.E
        r_at_c = np.where(has_tail, tails[np.arange(self.m), np.minimum(self.cpos, self.E - 1)], 0.0)
        value = logs.sum() - r_at_events.sum() + float(self.n_window @ r_at_c)
        return float(value) / self.n_total

    def identity_statistic(self, beta: np.ndarray) -> float:
        """Average over subjects of the integrated-ratio event mass.

        For any direction this is an estimate of the mean in-window event
        count; for a single subject it equals the count exactly.
        """
        if self.E == 0:
            return 0.0
        A = self._weights(np.asarray(beta, dtype=float))
        tails = self._tail_sums(A, None)
        r_at_events = tails[self.owner, self.tie_first]
        has_tail = self.cpos < self.E
        r_at_c = np.where(has_tail, tails[np.arange(self.m), np.minimum(self.cpos, self.E - 1)], 0.0)
        return (float(r_at_events.sum()) - float(self.n_window @ r_at_c)) / self.n_total


def _pointwise_setup(dataset, beta, x, kernel, trim):
    trim = UNTRIMMED if trim is None else trim
    tau0, tau1 = trim.window(dataset.tau)
    Z = dataset.covariates()
    keep = trim.in_region(Z)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise ShapeError("no subjects inside the covariate trimming region")
    h = kernel.bandwidth(dataset.n)
    s = Z[idx] @ np.asarray(beta, dtype=float)
    w = _values(kernel.family, (float(x) - s) / h) / h
    near = np.flatnonzero(w != 0.0)
    subs = [dataset.subjects[i] for i in idx[near]]
    return trim, tau0, tau1, h, w[near], subs


def reverse_hazard(dataset: Dataset, beta, x: float, t: float,
                   kernel: KernelSpec | None = None, trim: TrimSpec | None = None,
                   diagnostics: dict | None = None) -> float:
    """Kernel estimate of the event rate over at-risk count mass at (t, x).

    Floored at kernel.r0; a vanishing denominator returns the floor and
    is recorded in diagnostics when a dict is supplied.
    """
    kernel = shape_kernel() if kernel is None else kernel
    trim, tau0, tau1, h, w, subs = _pointwise_setup(dataset, beta, x, kernel, trim)
    num = 0.0
    den = 0.0
    mass = 0.0
    for weight, s in zip(w, subs):
        ev = s.events
        if ev.size:
            num += weight * float(np.sum(_values(kernel.family, (t - ev) / h))) / h
            if s.c >= t:
                k = max(
                    int(np.searchsorted(ev, t, side="right"))
                    - int(np.searchsorted(ev, tau0, side="right")),
                    0,
                )
                den += weight * k
                mass += abs(weight) * k
        # subjects with no events contribute nothing to either sum
    if abs(den) < max(EPS_DEN, REL_DEN * mass):
        if diagnostics is not None:
            diagnostics["rate_floor_hits"] = diagnostics.get("rate_floor_hits", 0) + 1
        return kernel.r0
    val = num / den
    if val < kernel.r0:
        if diagnostics is not None:
            diagnostics["rate_floor_hits"] = diagnostics.get("rate_floor_hits", 0) + 1
        return kernel.r0
    return float(val)


def integrated_reverse_hazard(dataset: Dataset, beta, x: float, t: float,
                              kernel: KernelSpec | None = None,
                              trim: TrimSpec | None = None,
                              diagnostics: dict | None = None) -> float:
    """Sum of at-risk weighted event-mass ratios over atoms in [t, tau1].

    Nonnegative-kernel weights give a nonincreasing step function of t
    that vanishes beyond the last in-window atom.
    """
    kernel = shape_kernel() if kernel is None else kernel
    trim, tau0, tau1, h, w, subs = _pointwise_setup(dataset, beta, x, kernel, trim)
    times = []
    weights = []
    for weight, s in zip(w, subs):
        ev = s.events
        if ev.size:
            inwin = (ev <= tau1) & ((ev > tau0) | (tau0 == 0.0)) & (ev >= t)
            if np.any(inwin):
                times.append(ev[inwin])
                weights.append(np.full(int(inwin.sum()), weight))
    if not times:
        return 0.0
    u = np.concatenate(times)
    uw = np.concatenate(weights)
    total = 0.0
    skipped = 0
    for atom, aw in zip(u, uw):
        den = 0.0
        mass = 0.0
        for weight, s in zip(w, subs):
            if s.c >= atom and s.events.size:
                k = int(np.searchsorted(s.events, atom, side="right")) - int(
                    np.searchsorted(s.events, tau0, side="right")
                )
                if k > 0:
                    den += weight * k
                    mass += abs(weight) * k
        if abs(den) < max(EPS_DEN, REL_DEN * mass):
            skipped += 1
            continue
        total += aw / den
    if diagnostics is not None and skipped:
        diagnostics["skipped_terms"] = diagnostics.get("skipped_terms", 0) + skipped
    return float(total)


def conditional_loglik(dataset: Dataset, beta, kernel: KernelSpec | None = None,
                       trim: TrimSpec | None = None,
                       diagnostics: dict | None = None) -> float:
    """Full pseudolikelihood objective at a direction (higher is better)."""
    kernel = shape_kernel() if kernel is None else kernel
    ws = _Workspace(dataset, kernel, UNTRIMMED if trim is None else trim)
    return ws.full(beta, diagnostics)


def simplified_loglik(dataset: Dataset, beta, kernel: KernelSpec | None = None,
                      trim: TrimSpec | None = None,
                      diagnostics: dict | None = None) -> float:
    """Simplified objective: average log smoothed rate at the events."""
    kernel = shape_kernel() if kernel is None else kernel
    ws = _Workspace(dataset, kernel, UNTRIMMED if trim is None else trim)
    return ws.simplified(beta, diagnostics)


def count_identity_statistic(dataset: Dataset, betas, kernel: KernelSpec | None = None,
                             trim: TrimSpec | None = None) -> np.ndarray:
    """Evaluate the projection identity statistic at one or more directions."""
    kernel = shape_kernel() if kernel is None else kernel
    ws = _Workspace(dataset, kernel, UNTRIMMED if trim is None else trim)
    arr = np.atleast_2d(np.asarray(betas, dtype=float))
    return np.array([ws.identity_statistic(b) for b in arr])


@dataclass(frozen=True)
class ShapeFit:
    """Result of a shape-index fit."""

    beta: np.ndarray
    alpha: np.ndarray
    objective_kind: str
    objective_value: float
    converged: bool
    kernel: KernelSpec
    trim: TrimSpec
    n: int
    bandwidth: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "beta": [float(v) for v in self.beta],
            "alpha": [float(v) for v in self.alpha],
            "objective_kind": self.objective_kind,
            "objective_value": float(self.objective_value),
            "converged": bool(self.converged),
            "kernel": {
                "family": self.kernel.family,
                "a1": self.kernel.a1,
                "a2": self.kernel.a2,
                "r0": self.kernel.r0,
            },
            "trim": {
                "tau0": self.trim.tau0,
                "tau1": self.trim.tau1,
                "z_lower": None if self.trim.z_lower is None else list(self.trim.z_lower),
                "z_upper": None if self.trim.z_upper is None else list(self.trim.z_upper),
            },
            "n": self.n,
            "bandwidth": self.bandwidth,
            "diagnostics": dict(self.diagnostics),
        }


def _coarse_grid(p: int, grid_size: int):
    if p == 2:
        angles = np.arange(grid_size) * (2.0 * math.pi / grid_size)
        return angles[:, None]
    axes = [np.linspace(0.0, math.pi, 5)] * (p - 1)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def fit_shape(dataset: Dataset, kernel: KernelSpec | None = None,
              trim: TrimSpec | None = None, objective: str = "simplified",
              grid_size: int = 64, n_refine: int = 3,
              xatol: float = 1e-5, fatol: float = 1e-6,
              maxiter: int = 400, start_alpha=None,
              window: float | None = None) -> ShapeFit:
    """Estimate the shape direction by grid search plus simplex refinement.

    objective is "simplified" (log smoothed rate at events only, cheaper,
    same limiting spread) or "full" (adds the integrated-ratio terms).
    The returned direction has unit norm and a positive last coordinate;
    both objectives are even in beta so the sign is a pure convention.

    start_alpha (polyspherical angles, length p-1) replaces the global
    coarse grid with a bounded local search: candidates within `window`
    of the start per angle coordinate, simplex refinement constrained to
    that box (window defaults to half the bandwidth; numpy.inf gives a
    single unconstrained run from the start). Bootstrap refits use this:
    a replicate is meant to track the fluctuation of the original
    maximizer, including competition between nearby local modes, while a
    fully global re-search would occasionally hop to a spurious far mode
    of the resampled surface and inflate the spread.
    """
    if objective not in OBJECTIVE_KINDS:
        raise ShapeError(f"objective must be one of {OBJECTIVE_KINDS}, got {objective!r}")
    kernel = shape_kernel() if kernel is None else kernel
    trim = UNTRIMMED if trim is None else trim
    p = dataset.p
    if p < 2:
        raise ShapeError("shape fitting needs at least two covariates")

    ws = _Workspace(dataset, kernel, trim)
    Zk = ws.z
    centered = Zk - Zk.mean(axis=0)
    if np.linalg.matrix_rank(centered) < p:
        raise ShapeError("covariate matrix rank-deficient; shape index unidentifiable")

    evaluate = ws.simplified if objective == "simplified" else ws.full
    n_evals = 0

    def value_at(alpha_vec) -> float:
        nonlocal n_evals
        n_evals += 1
        return evaluate(polyspherical_map(alpha_vec))

    bounds = None
    if start_alpha is not None:
        start_alpha = np.atleast_1d(np.asarray(start_alpha, dtype=float))
        if start_alpha.size != p - 1:
            raise ShapeError(
                f"start_alpha needs {p - 1} angle(s) for p={p}, got {start_alpha.size}"
            )
        W = 0.5 * ws.h if window is None else float(window)
        if W <= 0:
            raise ShapeError(f"window must be positive, got {W}")
        if np.isfinite(W):
            offsets = [start_alpha]
            for j in range(p - 1):
                for k in (-1.0, -0.5, 0.5, 1.0):
                    cand = start_alpha.copy()
                    cand[j] += k * W
                    offsets.append(cand)
            grid = np.vstack(offsets)
            bounds = [(a - W, a + W) for a in start_alpha]
        else:
            grid = start_alpha[None, :]
    else:
        grid = _coarse_grid(p, grid_size)
    grid_vals = np.array([value_at(a) for a in grid])
    top = np.argsort(-grid_vals)[: max(n_refine, 1)]

    candidates = []
    any_success = False
    for gi in top:
        res = minimize(
            lambda a: -value_at(a),
            x0=grid[gi],
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter},
        )
        any_success = any_success or bool(res.success)
        candidates.append((-float(res.fun), np.atleast_1d(res.x)))

    # deterministic reduction: best objective, then lexicographically
    # smallest normalized angle
    def norm_alpha(a: np.ndarray) -> np.ndarray:
        b = polyspherical_map(a)
        if b[-1] < 0:
            b = -b
        return direction_angles(b)

    best_val, best_alpha = max(
        candidates, key=lambda c: (c[0], tuple(-x for x in norm_alpha(c[1])))
    )
    alpha = norm_alpha(best_alpha)
    beta = polyspherical_map(alpha)
    if beta[-1] < 0:  # only possible when the last coordinate is exactly zero
        beta = -beta

    diag: dict = {
        "grid_size": int(grid.shape[0]),
        "n_refinements": int(len(top)),
        "n_evaluations": int(n_evals),
        "grid_best_value": float(grid_vals.max()),
        "warm_start": start_alpha is not None,
    }
    final_value = evaluate(beta, diag)
    return ShapeFit(
        beta=beta,
        alpha=alpha,
        objective_kind=objective,
        objective_value=final_value,
        converged=any_success,
        kernel=kernel,
        trim=trim,
        n=dataset.n,
        bandwidth=ws.h,
        diagnostics=diag,
    )
