"""Discrete optimal transport: exact transportation simplex, 1D monotone
matching, log-domain entropic solver, and map extraction from plans.

Every solver accepts an orientation.  ``"maximize"`` on a cost ``C`` is
solved as ``"minimize"`` on ``-C`` and the duals are mapped back, so that for
an optimal plan ``u_i + v_j = C_ij`` on the support in both cases, with
``u_i + v_j <= C_ij`` everywhere when minimising and ``>=`` when maximising.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import (BalanceError, ConvergenceError, MultivaluedMapError, SizeError,
                     ValidationError)
from .measures import DiscreteMeasure
from .parallel import chunks, ordered_map

log = logging.getLogger(__name__)

MAX_CELLS = 4_000_000
ORIENTATIONS = ("minimize", "maximize")


@dataclass(frozen=True, eq=False)
class CostMatrix:
    values: np.ndarray
    orientation: str = "minimize"
    source: DiscreteMeasure | None = None
    target: DiscreteMeasure | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValidationError("cost matrix must be two-dimensional")
        if not np.all(np.isfinite(v)):
            i, j = np.argwhere(~np.isfinite(v))[0]
            raise ValidationError(f"non-finite cost entry at ({i}, {j})")
        if self.orientation not in ORIENTATIONS:
            raise ValidationError(f"orientation must be one of {ORIENTATIONS}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def minimization_values(self) -> np.ndarray:
        return self.values if self.orientation == "minimize" else -self.values


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling (COO triples) with objective, duals and metadata."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    shape: tuple
    objective: float
    u: np.ndarray
    v: np.ndarray
    orientation: str
    meta: dict = field(default_factory=dict)

    @property
    def coupling(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.mass, minlength=self.shape[0])

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.mass, minlength=self.shape[1])

    def dual_objective(self, a, b) -> float:
        return float(math.fsum(np.concatenate([a * self.u, b * self.v])))

    def transpose(self) -> "TransportPlan":
        order = np.lexsort((self.rows, self.cols))
        return TransportPlan(self.cols[order], self.rows[order], self.mass[order],
                             (self.shape[1], self.shape[0]), self.objective, self.v, self.u,
                             self.orientation, dict(self.meta))

    def triples(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))


def _coerce_cost(cost, orientation) -> CostMatrix:
    if isinstance(cost, CostMatrix):
        return cost
    return CostMatrix(np.asarray(cost, dtype=float), orientation or "minimize")


def _weights(m) -> np.ndarray:
    return m.weights if isinstance(m, DiscreteMeasure) else np.asarray(m, dtype=float)


def _check_balance(a, b, rtol=1e-9):
    sa, sb = math.fsum(a), math.fsum(b)
    if abs(sa - sb) > rtol * max(sa, sb):
        raise BalanceError(f"unbalanced masses {sa!r} vs {sb!r}", sa, sb)


def _finish(rows, cols, mass, shape, C, u, v, orientation, meta) -> TransportPlan:
    order = np.lexsort((cols, rows))
    rows, cols, mass = rows[order], cols[order], mass[order]
    objective = float(math.fsum(mass * C[rows, cols])) if mass.size else 0.0
    return TransportPlan(rows, cols, mass, shape, objective, u, v, orientation, meta)


# ------------------------------------------------------------ exact simplex


class _TransportSimplex:
    """Transportation simplex (MODI) on a dense minimisation cost.

    Basis cells form a spanning tree on the bipartite row/column graph.
    Entering cell: most negative reduced cost, first in (i, j) order on ties;
    after ``bland_after`` consecutive degenerate pivots the rule switches to
    Bland's (first negative reduced cost in (i, j) order) until a
    non-degenerate pivot occurs.  Leaving cell: smallest (i, j) among the
    blocking cells.
    """

    def __init__(self, C, a, b, tol=None, bland_after=20, max_iter=None):
        self.C = C
        self.a = a
        self.b = b
        self.n, self.m = C.shape
        scale = max(1.0, float(np.max(np.abs(C))) if C.size else 1.0)
        self.tol = tol if tol is not None else 1e-12 * scale
        self.mass_eps = 1e-15 * max(1.0, float(a.sum()))
        self.bland_after = bland_after
        self.max_iter = max_iter or 50 * (self.n + self.m) ** 2 + 1000

    def initial_basis(self):
        n, m = self.n, self.m
        s, d = self.a.copy(), self.b.copy()
        row_open = np.ones(n, bool)
        col_open = np.ones(m, bool)
        rows_left, cols_left = n, m
        flow = {}
        order = np.argsort(self.C, axis=None, kind="stable")
        for flat in order:
            if rows_left + cols_left == 1:
                break
            i, j = divmod(int(flat), m)
            if not (row_open[i] and col_open[j]):
                continue
            q = min(s[i], d[j])
            flow[(i, j)] = q
            s[i] -= q
            d[j] -= q
            if s[i] <= self.mass_eps:
                s[i] = 0.0
            if d[j] <= self.mass_eps:
                d[j] = 0.0
            if s[i] <= d[j] and rows_left > 1 or cols_left == 1:
                row_open[i] = False
                rows_left -= 1
                d[j] += s[i]  # push rounding residue to the column
                s[i] = 0.0
            else:
                col_open[j] = False
                cols_left -= 1
                s[i] += d[j]
                d[j] = 0.0
        return flow

    def _adjacency(self, flow):
        adj = {}
        for (i, j) in flow:
            adj.setdefault(("r", i), []).append(("c", j))
            adj.setdefault(("c", j), []).append(("r", i))
        return adj

    def duals(self, adj):
        u = np.zeros(self.n)
        v = np.zeros(self.m)
        seen = {("r", 0)}
        queue = deque([("r", 0)])
        while queue:
            node = queue.popleft()
            for nb in sorted(adj.get(node, ())):
                if nb in seen:
                    continue
                seen.add(nb)
                if node[0] == "r":
                    v[nb[1]] = self.C[node[1], nb[1]] - u[node[1]]
                else:
                    u[nb[1]] = self.C[nb[1], node[1]] - v[node[1]]
                queue.append(nb)
        return u, v

    def _tree_path(self, adj, start, goal):
        prev = {start: None}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            if node == goal:
                break
            for nb in adj.get(node, ()):
                if nb not in prev:
                    prev[nb] = node
                    queue.append(nb)
        path = [goal]
        while path[-1] != start:
            path.append(prev[path[-1]])
        return path[::-1]

    def solve(self):
        flow = self.initial_basis()
        degenerate_streak = 0
        it = 0
        for it in range(1, self.max_iter + 1):
            adj = self._adjacency(flow)
            u, v = self.duals(adj)
            red = self.C - u[:, None] - v[None, :]
            if degenerate_streak >= self.bland_after:
                neg = np.flatnonzero(red.reshape(-1) < -self.tol)
                if neg.size == 0:
                    return flow, u, v, it
                flat = int(neg[0])
            else:
                flat = int(np.argmin(red))
                if red.flat[flat] >= -self.tol:
                    return flow, u, v, it
            ei, ej = divmod(flat, self.m)
            # cycle: entering cell closes the tree path column ej -> row ei
            path = self._tree_path(adj, ("c", ej), ("r", ei))
            cells = []
            for k in range(len(path) - 1):
                p, q = path[k], path[k + 1]
                cells.append((q[1], p[1]) if p[0] == "c" else (p[1], q[1]))
            # signs alternate: entering +, first path cell -, ...
            minus = cells[0::2]
            plus = cells[1::2]
            theta = min(flow[c] for c in minus)
            blocking = sorted(c for c in minus if flow[c] <= theta + self.mass_eps)
            leave = blocking[0]
            degenerate_streak = degenerate_streak + 1 if theta <= self.mass_eps else 0
            for c in minus:
                flow[c] -= theta
            for c in plus:
                flow[c] += theta
            del flow[leave]
            flow[(ei, ej)] = theta
        raise ConvergenceError("transportation simplex hit its iteration cap", iterations=it)


def solve_exact(mu, nu, cost, orientation: str | None = None, tol=None) -> TransportPlan:
    """Globally optimal plan of the discrete transport LP.

    Zero-weight points are removed before solving and reinserted with empty
    rows/columns; their duals are set to the tightest feasible value.
    """
    cm = _coerce_cost(cost, orientation)
    a, b = _weights(mu), _weights(nu)
    n, m = cm.shape
    if a.shape[0] != n or b.shape[0] != m:
        raise ValidationError(f"cost shape {cm.shape} does not match measures ({n}, {m})")
    if n * m > MAX_CELLS:
        raise SizeError(f"n*m = {n * m} exceeds the exact-solver cap {MAX_CELLS}; "
                        "use the entropic solver")
    _check_balance(a, b)
    C = cm.minimization_values()
    ri = np.flatnonzero(a > 0)
    ci = np.flatnonzero(b > 0)
    sub = C[np.ix_(ri, ci)]
    # renormalise the target so the LP is exactly balanced
    bb = b[ci] * (math.fsum(a[ri]) / math.fsum(b[ci]))
    solver = _TransportSimplex(sub, a[ri].copy(), bb, tol=tol)
    flow, us, vs, iters = solver.solve()
    u = np.zeros(n)
    v = np.zeros(m)
    u[ri], v[ci] = us, vs
    if len(ci) < m:
        dropped = np.setdiff1d(np.arange(m), ci)
        v[dropped] = np.min(C[np.ix_(ri, dropped)] - u[ri, None], axis=0)
    if len(ri) < n:
        dropped = np.setdiff1d(np.arange(n), ri)
        u[dropped] = np.min(C[np.ix_(dropped, np.arange(m))] - v[None, :], axis=1)
    cells = [(c, q) for c, q in flow.items() if q > 0]
    rows = np.array([ri[c[0]] for c, _ in cells], dtype=int)
    cols = np.array([ci[c[1]] for c, _ in cells], dtype=int)
    mass = np.array([q for _, q in cells], dtype=float)
    if cm.orientation == "maximize":
        u, v = -u, -v
    meta = {"solver": "exact", "iterations": iters, "tolerance": solver.tol}
    return _finish(rows, cols, mass, (n, m), cm.values, u, v, cm.orientation, meta)


def solve_monotone_1d(mu: DiscreteMeasure, nu: DiscreteMeasure, pair_cost: Callable,
                      orientation: str = "maximize") -> TransportPlan:
    """Comonotone (north-west corner on sorted supports) coupling in 1D.

    Optimal whenever the cost makes the comonotone coupling optimal:
    supermodular costs when maximising (e.g. ``F(x + y)`` with ``F`` convex)
    and submodular costs when minimising (e.g. ``|x - y|^2``).  Only the
    staircase cells are evaluated, through ``pair_cost(i, j)``, and the duals
    are propagated along the staircase.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise ValidationError("monotone matching requires one-dimensional measures")
    if orientation not in ORIENTATIONS:
        raise ValidationError(f"orientation must be one of {ORIENTATIONS}")
    a, b = mu.weights, nu.weights
    _check_balance(a, b)
    b = b * (math.fsum(a) / math.fsum(b))
    px = np.argsort(mu.points[:, 0], kind="stable")
    py = np.argsort(nu.points[:, 0], kind="stable")
    px = px[a[px] > 0]
    py = py[b[py] > 0]
    s = a[px].astype(float)
    d = b[py].astype(float)
    cache = {}

    def cost(i, j):
        key = (int(px[i]), int(py[j]))
        if key not in cache:
            cache[key] = float(pair_cost(*key))
        return cache[key]

    u = np.zeros(len(a))
    v = np.zeros(len(b))
    v[py[0]] = cost(0, 0)
    cells = []
    i = j = 0
    last_i, last_j = len(px) - 1, len(py) - 1
    while True:
        q = min(s[i], d[j])
        if q > 0:
            cells.append((int(px[i]), int(py[j]), q, cost(i, j)))
        s[i] -= q
        d[j] -= q
        if i == last_i and j == last_j:
            break
        if j == last_j or (i != last_i and s[i] <= d[j]):
            i += 1
            u[px[i]] = cost(i, j) - v[py[j]]
        else:
            j += 1
            v[py[j]] = cost(i, j) - u[px[i]]
    pick = min if orientation == "minimize" else max
    for k in np.flatnonzero(a <= 0):
        u[k] = pick(pair_cost(k, jj) - v[jj] for jj in py)
    for k in np.flatnonzero(b <= 0):
        v[k] = pick(pair_cost(ii, k) - u[ii] for ii in px)
    rows = np.array([c[0] for c in cells], dtype=int)
    cols = np.array([c[1] for c in cells], dtype=int)
    mass = np.array([c[2] for c in cells], dtype=float)
    objective = float(math.fsum(c[2] * c[3] for c in cells))
    order = np.lexsort((cols, rows))
    meta = {"solver": "monotone-1d", "iterations": 0, "tolerance": 0.0}
    return TransportPlan(rows[order], cols[order], mass[order], (len(a), len(b)), objective,
                         u, v, orientation, meta)


# ------------------------------------------------------------ entropic


def default_schedule(cost_range: float, eps_final: float | None = None, stages: int = 10):
    """Geometric decreasing regularisation, 1e-1 to 1e-4 of the cost range."""
    top = 1e-1 * cost_range
    bottom = 1e-4 * cost_range if eps_final is None else eps_final
    top = max(top, bottom)
    if stages <= 1:
        return [bottom]
    return list(np.geomspace(top, bottom, stages))


def solve_entropic(mu, nu, cost, eps: float | None = None, schedule=None,
                   orientation: str | None = None, tol: float = 1e-9, max_iter: int = 20000,
                   marginal_tol: float = 1e-6) -> TransportPlan:
    """Log-domain Sinkhorn with epsilon scaling.

    ``schedule`` is a decreasing list of regularisation values; by default
    :func:`default_schedule` ending at ``eps``.  Each stage warm-starts from
    the previous potentials.  The L1 row-marginal residual after each sweep
    is recorded in ``meta["residual_trace"]``.
    """
    cm = _coerce_cost(cost, orientation)
    a, b = _weights(mu), _weights(nu)
    _check_balance(a, b)
    C = cm.minimization_values()
    n, m = C.shape
    cost_range = float(C.max() - C.min()) or 1.0
    if schedule is None:
        schedule = default_schedule(cost_range, eps)
    schedule = [float(e) for e in schedule]
    if any(e <= 0 for e in schedule):
        raise ValidationError("regularisation must be positive")
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    f = np.zeros(n)
    g = np.zeros(m)
    row_blocks = chunks(n, 256)
    col_blocks = chunks(m, 256)

    def row_update(e):
        def work(block):
            lo, hi = block
            return -e * logsumexp((g[None, :] - C[lo:hi]) / e + lb[None, :], axis=1)
        return np.concatenate(ordered_map(work, row_blocks))

    def col_update(e):
        def work(block):
            lo, hi = block
            return -e * logsumexp((f[:, None] - C[:, lo:hi]) / e + la[:, None], axis=0)
        return np.concatenate(ordered_map(work, col_blocks))

    def log_plan(e):
        return (f[:, None] + g[None, :] - C) / e + la[:, None] + lb[None, :]

    trace = []
    total = 0
    residual = np.inf
    for stage, e in enumerate(schedule):
        final = stage == len(schedule) - 1
        stage_tol = tol * a.sum() if final else max(tol, 1e-6) * a.sum()
        for _ in range(max_iter):
            f = row_update(e)
            g = col_update(e)
            total += 1
            rows = np.exp(logsumexp(log_plan(e), axis=1))
            residual = float(np.abs(rows - a).sum())
            trace.append(residual)
            if residual <= stage_tol:
                break
    if not residual <= marginal_tol * a.sum():
        raise ConvergenceError(f"entropic solver did not converge (residual {residual:.3e})",
                               residual=residual, iterations=total)
    P = np.exp(log_plan(schedule[-1]))
    rr, cc = np.nonzero(P > 0)
    u, v = f, g
    if cm.orientation == "maximize":
        u, v = -u, -v
    meta = {"solver": "entropic", "iterations": total, "tolerance": residual,
            "eps": schedule[-1], "schedule": schedule, "residual_trace": trace}
    return _finish(rr, cc, P[rr, cc], (n, m), cm.values, u, v, cm.orientation, meta)


# ------------------------------------------------------------ maps


@dataclass(frozen=True, eq=False)
class PlanMap:
    """Map on the source support extracted from a plan.

    ``images[i]`` is the image of source point ``i``; calling the object on a
    support point looks it up.  ``split_rows`` lists rows whose mass is not
    concentrated on one target (within ``1 - 1e-6``).
    """

    sources: np.ndarray
    images: np.ndarray
    mode: str
    split_rows: tuple
    dominant_fraction: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        hit = np.flatnonzero(np.all(self.sources == x, axis=1))
        if hit.size == 0:
            raise KeyError(f"{x.tolist()} is not a source support point")
        return self.images[hit[0]].copy()


def plan_to_map(plan: TransportPlan, source: DiscreteMeasure, target: DiscreteMeasure,
                mode: str = "auto", dominance: float = 1 - 1e-6) -> PlanMap:
    """Extract ``x_i -> y`` from a plan.

    ``dominant`` maps each row to its heaviest target and refuses split rows;
    ``barycentric`` uses the row-weighted mean of targets; ``auto`` is
    dominant when every row is dominant and barycentric otherwise.
    """
    if mode not in ("dominant", "barycentric", "auto"):
        raise ValidationError(f"unknown map mode {mode!r}")
    n = plan.shape[0]
    row_mass = plan.row_sums()
    heaviest = np.zeros(n)
    arg = np.zeros(n, dtype=int)
    for r, c, q in zip(plan.rows, plan.cols, plan.mass):
        if q > heaviest[r]:
            heaviest[r] = q
            arg[r] = c
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(row_mass > 0, heaviest / np.where(row_mass > 0, row_mass, 1), 1.0)
    split = tuple(int(i) for i in np.flatnonzero(frac < dominance))
    if mode == "dominant" and split:
        worst = int(np.argmin(frac))
        raise MultivaluedMapError(
            f"row {worst} splits its mass (dominant fraction {frac[worst]:.6f})", worst, frac[worst])
    if mode == "auto":
        mode = "barycentric" if split else "dominant"
    if mode == "dominant":
        images = target.points[arg].copy()
    else:
        acc = np.zeros((n, target.dim))
        np.add.at(acc, plan.rows, plan.mass[:, None] * target.points[plan.cols])
        images = np.where(row_mass[:, None] > 0, acc / np.where(row_mass > 0, row_mass, 1)[:, None],
                          source.points)
    images.setflags(write=False)
    return PlanMap(source.points, images, mode, split, frac)
