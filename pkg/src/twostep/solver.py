"""The two-step transport problem: a free flight of duration ``T/2``, a kick
by the force potential ``Q``, and a second free flight of duration ``T/2``.

With the modified potential ``Q~(z) = (T/2) Q(z) + |z|^2`` the problem is
the transport problem that maximises ``sum pi_ij Q~*(x_i + y_j)``.  From an
optimal plan:

* the kick point of a matched pair is ``z = grad Q~*(x + y)``, which is also
  ``grad phi~(x)``;
* ``phi = (2/T)(phi~ - |x|^2/2)``, so the initial velocity is ``grad phi``;
* the full map is ``m(x) = grad Q~(z) - x``.

Equivalently one may minimise the full cost
``c_T(x, y) = -(2/T) Q~*(x + y) + (|x|^2 + |y|^2)/T``, which is the action
of the optimal broken path between ``x`` and ``y``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .conditions import check_H1
from .errors import (ConditionFailure, ConvergenceError, DerivativeEvaluationError,
                     InconsistencyError, TwostepError, ValidationError)
from .legendre import LegendreDual, smooth_dual
from .measures import DiscreteMeasure, Grid, balance, binned_density, wasserstein2
from .ot_core import CostMatrix, TransportPlan, plan_to_map, solve_entropic, solve_exact, \
    solve_monotone_1d
from .parallel import chunks, ordered_map
from .potentials import ScalarField, modified_potential

log = logging.getLogger(__name__)

STATIONARITY_TOL = 1e-8
EXACT_W2_CELLS = 250_000


@dataclass(frozen=True, eq=False)
class TwoStepProblem:
    """Source, target, force potential and horizon.

    ``modified`` and ``dual`` default to ``(T/2) Q + |z|^2`` and its smooth
    Legendre dual.  ``cost_field`` replaces ``Q~*`` in the reduced cost when
    the cost is known in closed form but ``Q~*`` is only formal.
    """

    source: DiscreteMeasure
    target: DiscreteMeasure
    Q: ScalarField | None = None
    T: float = 1.0
    modified: ScalarField | None = None
    dual: ScalarField | None = None
    cost_field: ScalarField | None = None
    name: str = ""

    def __post_init__(self):
        if not (isinstance(self.T, (int, float)) and self.T > 0 and math.isfinite(self.T)):
            raise ValidationError(f"horizon T must be positive, got {self.T!r}", "T")
        if self.source.dim != self.target.dim:
            raise ValidationError("source and target have different dimensions")
        if self.Q is None and self.modified is None:
            raise ValidationError("a force potential or a modified potential is required")
        Qt = self.modified if self.modified is not None else modified_potential(self.Q, self.T)
        if Qt.dim != self.source.dim:
            raise ValidationError(f"potential dimension {Qt.dim} does not match measures "
                                  f"({self.source.dim})")
        object.__setattr__(self, "modified", Qt)
        if self.dual is None:
            object.__setattr__(self, "dual", smooth_dual(Qt))

    @classmethod
    def from_entry(cls, source, target, entry, T: float = 1.0) -> "TwoStepProblem":
        return cls(source, target, entry.force(T), T, modified=entry.modified(T),
                   dual=entry.modified_dual(T), cost_field=entry.cost_field, name=entry.name)

    @property
    def dim(self) -> int:
        return self.source.dim

    @property
    def cost(self) -> ScalarField:
        return self.cost_field if self.cost_field is not None else self.dual

    def force_value(self, z):
        """``Q(z)``, recovered from ``Q~`` when only the modified potential is given."""
        z = np.asarray(z, dtype=float)
        if self.Q is not None:
            return self.Q.value(z)
        return (2.0 / self.T) * (self.modified.value(z) - np.sum(z * z, axis=-1))

    def kick_points(self, p, guess=None):
        """``grad Q~*(p)``; ``guess`` warm-starts gradient inversion."""
        if guess is not None and isinstance(self.dual, LegendreDual):
            return self.dual.derivative_with_guess(p, 1, guess)
        return np.asarray(self.dual.grad(p), dtype=float)


@dataclass(frozen=True, eq=False)
class TwoStepSolution:
    problem: TwoStepProblem
    plan: TransportPlan
    matched: np.ndarray          # y_i: matched (or barycentric) target of each source point
    kick: np.ndarray             # z_i = grad phi~(x_i)
    phi_tilde: np.ndarray
    phi: np.ndarray
    grad_phi: np.ndarray
    intermediate: DiscreteMeasure
    map_points: np.ndarray       # m(x_i)
    split_rows: tuple
    diagnostics: dict = field(default_factory=dict)

    @property
    def source(self) -> DiscreteMeasure:
        return self.problem.source

    def velocity(self) -> np.ndarray:
        """Initial velocity ``(2/T)(grad phi~(x) - x)``."""
        return (2.0 / self.problem.T) * (self.kick - self.source.points)

    def first_leg(self) -> np.ndarray:
        return self.kick

    def second_leg(self, z=None) -> np.ndarray:
        """``y = grad Q~(z) - x`` at the kick points."""
        z = self.kick if z is None else z
        return np.asarray(self.problem.modified.grad(z)) - self.source.points


# ------------------------------------------------------------ cost


def _eval_rows(fn, X, Y, label):
    """``fn(x_i + y_j)`` for all pairs, row blocks in parallel; on failure
    the first offending pair is named."""
    n = len(X)

    def work(block):
        a, b = block
        P = X[a:b, None, :] + Y[None, :, :]
        return np.asarray(fn(P), dtype=float)

    try:
        out = ordered_map(work, chunks(n, max(1, 20000 // max(1, len(Y)))))
        vals = np.concatenate(out, axis=0) if out else np.zeros((0, len(Y)))
    except (TwostepError, FloatingPointError, ArithmeticError) as exc:
        for i in range(n):
            for j in range(len(Y)):
                try:
                    v = float(np.asarray(fn(X[i] + Y[j])))
                except (TwostepError, FloatingPointError, ArithmeticError):
                    v = math.nan
                if not math.isfinite(v):
                    raise DerivativeEvaluationError(
                        f"{label} evaluation failed at pair ({i}, {j}): {exc}",
                        (X[i] + Y[j]).tolist()) from exc
        raise
    bad = np.argwhere(~np.isfinite(vals))
    if bad.size:
        i, j = (int(t) for t in bad[0])
        raise DerivativeEvaluationError(f"{label} is not finite at pair ({i}, {j})",
                                        (X[i] + Y[j]).tolist())
    return vals


def reduced_cost(problem: TwoStepProblem, full: bool = False) -> CostMatrix:
    """``Q~*(x_i + y_j)`` to be maximised, or with ``full=True`` the action
    ``c_T = -(2/T) Q~*(x + y) + (|x|^2 + |y|^2)/T`` to be minimised."""
    X, Y = problem.source.points, problem.target.points
    C = _eval_rows(problem.cost.value, X, Y, "reduced cost")
    if not full:
        return CostMatrix(C, "maximize", problem.source, problem.target)
    T = problem.T
    sx = np.sum(X * X, axis=1)
    sy = np.sum(Y * Y, axis=1)
    return CostMatrix(-(2.0 / T) * C + (sx[:, None] + sy[None, :]) / T, "minimize",
                      problem.source, problem.target)


def stationarity_residual(problem: TwoStepProblem, x, y, z) -> np.ndarray:
    """``|grad Q~(z) - (x + y)|`` relative to ``1 + |x + y|``."""
    p = np.asarray(x, dtype=float) + np.asarray(y, dtype=float)
    g = np.asarray(problem.modified.grad(z), dtype=float)
    return np.linalg.norm(g - p, axis=-1) / (1.0 + np.linalg.norm(p, axis=-1))


def inner_minimizer(x, y, problem: TwoStepProblem, tol: float = STATIONARITY_TOL):
    """Kick point minimising ``(1/T)(|z - x|^2 + |y - z|^2) + Q(z)``.

    Computed as ``grad Q~*(x + y)``; works on single pairs or batches.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = problem.kick_points(x + y)
    res = stationarity_residual(problem, x, y, z)
    worst = float(np.max(res)) if np.size(res) else 0.0
    if not worst <= tol:
        k = int(np.argmax(np.ravel(res)))
        raise InconsistencyError(
            f"kick point violates stationarity (relative residual {worst:.3e})", worst,
            k if np.ndim(res) else None)
    return z


# ------------------------------------------------------------ a priori box


def minkowski_box(problem: TwoStepProblem, per_axis: int | None = None):
    """Bounding box of ``grad Q~*`` over a grid of the box ``[lo0 + loT, hi0 + hiT]``.

    Returns ``(lo, hi, C)`` with ``C`` the largest ``|grad Q~*|`` seen, the
    a priori bound on ``|grad phi~|``.
    """
    lo0, hi0 = problem.source.bounds()
    loT, hiT = problem.target.bounds()
    lo, hi = lo0 + loT, hi0 + hiT
    d = problem.dim
    k = per_axis or max(2, min(9, int(round(4096 ** (1.0 / d)))))
    axes = [np.linspace(a, b, k) if b > a else np.array([a]) for a, b in zip(lo, hi)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    Z = problem.kick_points(P)
    bound = float(np.max(np.linalg.norm(Z, axis=1)))
    zlo, zhi = Z.min(axis=0), Z.max(axis=0)
    pad = 1e-3 * max(1.0, float(np.max(zhi - zlo)))
    return zlo - pad, zhi + pad, bound


# ------------------------------------------------------------ solve


def _plan(problem, solver, eps, schedule):
    mu, nu = problem.source, problem.target
    if solver == "exact" and problem.dim == 1 and problem.cost_field is None:
        x, y = mu.points[:, 0], nu.points[:, 0]
        cost = problem.cost

        def pair_cost(i, j):
            return float(cost.value(np.array([x[i] + y[j]])))

        return solve_monotone_1d(mu, nu, pair_cost, "maximize")
    cm = reduced_cost(problem)
    if solver == "exact":
        return solve_exact(mu, nu, cm)
    if solver == "entropic":
        return solve_entropic(mu, nu, cm, eps=eps, schedule=schedule)
    raise ValidationError(f"unknown solver {solver!r}", solver)


def solve(problem: TwoStepProblem, solver: str = "exact", eps: float | None = None,
          schedule=None, map_mode: str = "auto", check_convexity: bool = True,
          ma_cells: int | None = None, diagnostics: bool = True) -> TwoStepSolution:
    """Solve the two-step problem and recover potentials, intermediate measure and map.

    ``map_mode`` is passed to :func:`plan_to_map`; with ``"auto"`` rows that
    split their mass get barycentric targets and are listed in
    ``split_rows``.  ``ma_cells`` sets the cells per axis of the
    Monge–Ampère residual grid (``0`` disables it).
    """
    mu, nu = balance(problem.source, problem.target)
    if mu is not problem.source or nu is not problem.target:
        problem = TwoStepProblem(mu, nu, problem.Q, problem.T, problem.modified, problem.dual,
                                 problem.cost_field, problem.name)
    try:
        zlo, zhi, c1 = minkowski_box(problem)
    except ConvergenceError as exc:
        raise ConditionFailure(
            "grad Q~ cannot be inverted on the Minkowski sum of the supports; "
            f"the modified potential is not convex there ({exc})", None) from exc
    if check_convexity:
        h1 = check_H1(problem.modified, (zlo, zhi), samples=200)
        if not h1.verdict:
            raise ConditionFailure(
                f"modified potential is not strictly convex on the working box "
                f"(eigenvalue {h1.margin:.3e})", h1)
    plan = _plan(problem, solver, eps, schedule)
    pmap = plan_to_map(plan, mu, nu, map_mode)
    X = mu.points
    Y = pmap.images
    split = pmap.split_rows
    if split:
        # barycentric kick: mass-weighted mean of grad Q~* over the row's targets
        acc = np.zeros_like(X)
        Zc = problem.kick_points(X[plan.rows] + nu.points[plan.cols])
        np.add.at(acc, plan.rows, plan.mass[:, None] * Zc)
        rm = plan.row_sums()
        Z = problem.kick_points(X + Y)
        has = rm > 0
        Z[has] = acc[has] / rm[has, None]
        log.warning("%d source rows split their mass; barycentric kicks reported", len(split))
    else:
        Z = problem.kick_points(X + Y)
    res = stationarity_residual(problem, X, Y, Z)
    dominant = np.ones(len(X), dtype=bool)
    dominant[list(split)] = False
    if dominant.any() and not float(res[dominant].max()) <= STATIONARITY_TOL:
        k = int(np.flatnonzero(dominant)[np.argmax(res[dominant])])
        raise InconsistencyError(f"kick point of source {k} violates stationarity",
                                 float(res[k]), k)
    M = np.asarray(problem.modified.grad(Z), dtype=float) - X
    T = problem.T
    u = plan.u
    first = 0
    xf = X[first]
    phi_t = u - u[first] + 0.5 * float(xf @ xf)
    phi = (2.0 / T) * (phi_t - 0.5 * np.sum(X * X, axis=1))
    grad_phi = (2.0 / T) * (Z - X)
    inter = DiscreteMeasure(Z, mu.weights)
    diag = {"solver": dict(_plain(plan.meta)), "objective": plan.objective,
            "split_rows": len(split), "stationarity_max": float(res.max()) if len(res) else 0.0,
            "c1_bound": {"bound": c1, "max_grad_phi_tilde": float(np.max(np.linalg.norm(Z, axis=1))),
                         "box_lo": zlo.tolist(), "box_hi": zhi.tolist()}}
    diag["c1_bound"]["satisfied"] = bool(diag["c1_bound"]["max_grad_phi_tilde"]
                                         <= c1 * (1 + 1e-9) + 1e-12)
    sol = TwoStepSolution(problem, plan, Y, Z, phi_t, phi, grad_phi, inter, M, split, diag)
    if diagnostics:
        _fill_diagnostics(sol, ma_cells)
    return sol


def _plain(meta):
    out = {}
    for k, v in meta.items():
        if k == "residual_trace":
            out["residual_final"] = float(v[-1]) if v else None
            out["sweeps"] = len(v)
        elif k == "schedule":
            out[k] = [float(e) for e in v]
        else:
            out[k] = v.item() if hasattr(v, "item") else v
    return out


def _fill_diagnostics(sol: TwoStepSolution, ma_cells):
    prob = sol.problem
    mu, nu = prob.source, prob.target
    diag = sol.diagnostics
    pushed = DiscreteMeasure(sol.map_points, mu.weights)
    bound = 0.5 * math.fsum(
        sol.plan.mass * np.sum((sol.map_points[sol.plan.rows] - nu.points[sol.plan.cols]) ** 2, axis=1))
    diag["pushforward"] = {"w2_plan_bound": math.sqrt(max(bound, 0.0))}
    affordable = prob.dim == 1 or mu.n * nu.n <= EXACT_W2_CELLS
    diag["pushforward"]["w2"] = math.sqrt(wasserstein2(pushed, nu)) if affordable else None
    diag["action"] = float(math.fsum(sol.plan.mass * action_cost(
        prob, mu.points[sol.plan.rows], nu.points[sol.plan.cols])))
    diag["K_intermediate"] = problem3_functional(sol.intermediate, prob) if affordable else None
    if ma_cells is None:
        ma_cells = max(1, min(32, int((mu.n / 20) ** (1.0 / prob.dim))))
    if ma_cells >= 3:
        diag["ma_residual"] = ma_residual(sol, ma_cells).to_dict()
    else:
        diag["ma_residual"] = None


def action_cost(problem: TwoStepProblem, x, y) -> np.ndarray:
    """``c_T(x, y)``, the action of the optimal broken path from ``x`` to ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    T = problem.T
    return (-(2.0 / T) * np.asarray(problem.cost.value(x + y))
            + (np.sum(x * x, axis=-1) + np.sum(y * y, axis=-1)) / T)


# ------------------------------------------------------------ Monge–Ampère


def local_hessians(points, gradients, k: int | None = None) -> np.ndarray:
    """Hessian estimates from gradient samples.

    At each point, an affine model ``g(x) = g0 + H (x - x0)`` is fitted to the
    gradients of the ``k = 2 d^2 + 6`` nearest samples with tricube weights
    (a local quadratic fit of the potential), and ``H`` is symmetrised.
    """
    X = np.asarray(points, dtype=float)
    G = np.asarray(gradients, dtype=float)
    n, d = X.shape
    k = min(n, k or 2 * d * d + 6)
    tree = cKDTree(X)
    dist, idx = tree.query(X, k=k)
    dist = dist.reshape(n, k)
    idx = idx.reshape(n, k)

    def work(block):
        a, b = block
        out = np.full((b - a, d, d), np.nan)
        for r, i in enumerate(range(a, b)):
            nb = idx[i]
            h = dist[i].max() * 1.0001
            if h == 0:
                continue
            w = (1 - (dist[i] / h) ** 3) ** 3
            A = np.hstack([np.ones((k, 1)), X[nb] - X[i]])
            sw = np.sqrt(w)[:, None]
            coef, *_ = np.linalg.lstsq(A * sw, G[nb] * sw, rcond=None)
            if np.linalg.matrix_rank(A * sw) < d + 1:
                continue
            H = coef[1:].T
            out[r] = 0.5 * (H + H.T)
        return out

    return np.concatenate(ordered_map(work, chunks(n, 512)), axis=0)


def _cells(grid: Grid, points):
    """Flat cell index (-1 outside) and boundary-cell flag per point."""
    idx = grid.cell_index(points)
    inside = idx[:, 0] >= 0
    flat = np.full(len(idx), -1)
    if inside.any():
        flat[inside] = np.ravel_multi_index(tuple(idx[inside].T), grid.shape)
    top = np.array(grid.shape) - 1
    edge = inside & np.any((idx == 0) | (idx == top), axis=1)
    return flat, edge


@dataclass(frozen=True)
class MAResidual:
    cells_evaluated: int
    cells_skipped: int
    boundary_cells: int
    max_abs: float | None
    l1: float | None
    cells: list

    def to_dict(self) -> dict:
        return {"cells_evaluated": self.cells_evaluated, "cells_skipped": self.cells_skipped,
                "boundary_cells": self.boundary_cells, "max_abs": self.max_abs, "l1": self.l1}


def ma_residual(solution: TwoStepSolution, cells: int = 16, min_points: int = 10,
                source_density=None, target_density=None, hessians=None) -> MAResidual:
    """Cellwise defect of ``det[D^2 phi~ - (D^2 Q~(z))^-1] = rho0 / (det D^2 Q~(z) rho_T(m))``.

    Per source point, the left side uses local Hessian fits of ``grad phi~``
    and the right side binned densities (or the given density callables).
    Cells on the grid boundary and cells with fewer than ``min_points``
    points are excluded; source points whose image lands in a boundary or
    empty target cell are dropped.  The cell residual is the mean over its
    points.
    """
    prob = solution.problem
    mu, nu = prob.source, prob.target
    d = prob.dim
    shape = (int(cells),) * d
    g0 = Grid.covering(mu, shape)
    gT = Grid.covering(nu, shape)
    if mu.n < min_points or np.all(np.ptp(mu.points, axis=0) == 0):
        return MAResidual(0, 0, 0, None, None, [])
    X, Z, M = mu.points, solution.kick, solution.map_points
    Hphi = local_hessians(X, Z) if hessians is None else np.asarray(hessians, dtype=float)
    HQ = np.asarray(prob.modified.hess(Z), dtype=float)
    lhs = np.linalg.det(Hphi - np.linalg.inv(HQ))
    c0, b0 = _cells(g0, X)
    cT, bT = _cells(gT, M)
    if source_density is None:
        r0 = np.where(c0 >= 0, binned_density(mu, g0).reshape(-1)[np.maximum(c0, 0)], 0.0)
    else:
        r0 = np.asarray(source_density(X), dtype=float)
    if target_density is None:
        rT = np.where(cT >= 0, binned_density(nu, gT).reshape(-1)[np.maximum(cT, 0)], 0.0)
        usable = (cT >= 0) & ~bT & (rT > 0)
    else:
        rT = np.asarray(target_density(M), dtype=float)
        usable = rT > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = r0 / (np.linalg.det(HQ) * rT)
    usable &= np.isfinite(lhs) & np.isfinite(rhs)
    per_cell = []
    skipped = boundary = 0
    for c in np.unique(c0[c0 >= 0]):
        members = c0 == c
        if b0[members][0]:
            boundary += 1
            continue
        good = members & usable
        if good.sum() < min_points:
            skipped += 1
            continue
        r = float(np.mean(lhs[good] - rhs[good]))
        per_cell.append((int(c), float(np.mean(lhs[good])), float(np.mean(rhs[good])), r,
                         int(good.sum())))
    if not per_cell:
        return MAResidual(0, skipped, boundary, None, None, [])
    res = np.array([p[3] for p in per_cell])
    return MAResidual(len(per_cell), skipped, boundary, float(np.max(np.abs(res))),
                      float(np.sum(np.abs(res)) * g0.cell_volume), per_cell)


# ------------------------------------------------------------ Problem 3


def problem3_functional(rho: DiscreteMeasure, problem: TwoStepProblem, kernel=None) -> float:
    """``K(rho) = (2/T) W2^2(rho0, rho) + F(rho) + (2/T) W2^2(rho, rhoT)``.

    ``F(rho)`` is the potential energy ``sum w Q(z)``, or with a ``kernel``
    the interaction energy ``1/2 sum_ij w_i w_j kappa(z_i - z_j)``.
    """
    from .measures import check_balance

    check_balance(problem.source, rho)
    T = problem.T
    if kernel is None:
        F = math.fsum(rho.weights * np.asarray(problem.force_value(rho.points), dtype=float))
    else:
        from .meanfield import interaction_energy
        F = interaction_energy(rho, kernel)
    return (2.0 / T) * wasserstein2(problem.source, rho) + F + \
        (2.0 / T) * wasserstein2(rho, problem.target)
