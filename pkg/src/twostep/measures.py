"""Discrete measures, domains, pushforwards and the Wasserstein-2 distance.

Throughout the package the squared Wasserstein distance carries a factor one
half::

    W2^2(mu, nu) = min over couplings pi of  sum pi_ij * |x_i - y_j|^2 / 2

Most OT software omits the one half; :func:`wasserstein2` returns the
halved value and :func:`w2_distance` its square root.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import (BalanceError, DomainError, MapEvaluationError, OutsideGridError,
                     ValidationError)
from .finite_diff import fd_derivatives

MASS_RTOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud ``sum_i w_i delta_{x_i}``.

    ``points`` has shape ``(n, d)``; ``weights`` shape ``(n,)``.  Arrays are
    copied and made read-only, so instances are safe to share.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=float).reshape(-1)
        if pts.ndim != 2:
            raise ValidationError("points must be an (n, d) array")
        if pts.shape[0] != w.shape[0]:
            raise ValidationError(
                f"points ({pts.shape[0]}) and weights ({w.shape[0]}) differ in length")
        if pts.shape[0] == 0:
            raise ValidationError("a measure needs at least one support point")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise ValidationError("non-finite coordinates or weights")
        if np.any(w < 0):
            raise ValidationError(f"negative weight at index {int(np.argmin(w))}")
        if w.sum() <= 0:
            raise ValidationError("total mass must be positive")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, points, mass: float = 1.0) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, mass / n))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(math.fsum(self.weights))

    def barycenter(self) -> np.ndarray:
        return self.weights @ self.points / self.mass

    def second_moment(self) -> float:
        return float(self.weights @ np.sum(self.points ** 2, axis=1))

    def bounds(self):
        return self.points.min(axis=0), self.points.max(axis=0)

    def diameter(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def with_points(self, points) -> "DiscreteMeasure":
        return DiscreteMeasure(points, self.weights)

    def scaled(self, factor: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights * factor)

    def support_mask(self) -> np.ndarray:
        return self.weights > 0

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n}, dim={self.dim}, mass={self.mass:.6g})"


def balance(mu: DiscreteMeasure, nu: DiscreteMeasure, warn_rtol: float = 1e-6):
    """Rescale ``nu`` to the mass of ``mu``; warn if the masses differ by more than ``warn_rtol``."""
    m0, m1 = mu.mass, nu.mass
    rel = abs(m0 - m1) / max(m0, m1)
    if rel > warn_rtol:
        warnings.warn(f"mass imbalance {rel:.3e}: target renormalised to {m0:.12g}",
                      RuntimeWarning, stacklevel=2)
    if rel == 0:
        return mu, nu
    return mu, nu.scaled(m0 / m1)


def check_balance(mu: DiscreteMeasure, nu: DiscreteMeasure, rtol: float = 1e-9):
    m0, m1 = mu.mass, nu.mass
    if abs(m0 - m1) > rtol * max(m0, m1):
        raise BalanceError(f"unbalanced masses {m0!r} vs {m1!r}", m0, m1)


def pushforward(mu: DiscreteMeasure, fmap: Callable) -> DiscreteMeasure:
    """Image measure ``fmap_# mu``: points moved, weights untouched."""
    out = np.empty_like(mu.points)
    for i, x in enumerate(mu.points):
        try:
            y = np.asarray(fmap(np.array(x)), dtype=float).reshape(-1)
        except Exception as exc:  # noqa: BLE001 - reported with the index
            raise MapEvaluationError(f"map failed at support point {i}: {exc}", i) from exc
        if y.shape != (mu.dim,) or not np.all(np.isfinite(y)):
            raise MapEvaluationError(f"map returned invalid value at support point {i}", i)
        out[i] = y
    return DiscreteMeasure(out, mu.weights)


def wasserstein2(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Squared W2 with the one-half convention (see module docstring)."""
    from . import ot_core

    check_balance(mu, nu)
    if mu.dim != nu.dim:
        raise ValidationError("measures live in different dimensions")
    if mu.dim == 1:
        plan = ot_core.solve_monotone_1d(
            mu, nu, lambda i, j: 0.5 * (mu.points[i, 0] - nu.points[j, 0]) ** 2,
            orientation="minimize")
    else:
        diff = mu.points[:, None, :] - nu.points[None, :, :]
        cost = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
        plan = ot_core.solve_exact(mu, nu, ot_core.CostMatrix(cost, "minimize"))
    return max(0.0, plan.objective)


def w2_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    return math.sqrt(wasserstein2(mu, nu))


# ---------------------------------------------------------------- grids


@dataclass(frozen=True, eq=False)
class Grid:
    """Axis-aligned box ``[lo, hi]`` split into ``shape`` equal cells."""

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        shape = self.shape
        if np.isscalar(shape):
            shape = (int(shape),) * lo.shape[0]
        shape = tuple(int(s) for s in shape)
        if lo.shape != hi.shape or len(shape) != lo.shape[0]:
            raise ValidationError("grid bounds and resolution disagree in dimension")
        if np.any(hi <= lo) or min(shape) < 1:
            raise ValidationError("empty grid")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))
        object.__setattr__(self, "shape", shape)

    @classmethod
    def covering(cls, mu: DiscreteMeasure, resolution, pad: float = 1e-9) -> "Grid":
        lo, hi = mu.bounds()
        span = np.maximum(hi - lo, 1e-12)
        return cls(lo - pad * span, hi + pad * span, resolution)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def cell_index(self, points) -> np.ndarray:
        """Integer cell coordinates, shape ``(n, d)``; -1 marks points outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (pts - self.lo) / self.spacing
        idx = np.floor(rel).astype(int)
        shape = np.array(self.shape)
        # points exactly on the upper face belong to the last cell
        on_top = (idx == shape) & np.isclose(pts, self.hi, rtol=0, atol=1e-12 * np.max(np.abs(self.hi) + 1))
        idx[on_top] -= 1
        outside = np.any((idx < 0) | (idx >= shape), axis=1)
        idx[outside] = -1
        return idx

    def centers(self) -> np.ndarray:
        axes = [self.lo[k] + (np.arange(s) + 0.5) * self.spacing[k] for k, s in enumerate(self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def is_boundary_cell(self, idx) -> bool:
        idx = np.asarray(idx)
        return bool(np.any(idx == 0) or np.any(idx == np.array(self.shape) - 1))


def binned_density(mu: DiscreteMeasure, grid: Grid) -> np.ndarray:
    """Histogram density: cell mass divided by cell volume, array of ``grid.shape``."""
    if grid.dim != mu.dim:
        raise ValidationError("grid and measure dimensions differ")
    idx = grid.cell_index(mu.points)
    outside = idx[:, 0] < 0
    if outside.any():
        raise OutsideGridError(f"{int(outside.sum())} support points lie outside the grid",
                               int(outside.sum()))
    flat = np.ravel_multi_index(tuple(idx.T), grid.shape)
    mass = np.bincount(flat, weights=mu.weights, minlength=int(np.prod(grid.shape)))
    return (mass / grid.cell_volume).reshape(grid.shape)


# ---------------------------------------------------------------- domains


def _sphere_directions(d: int, m: int, seed: int = 0) -> np.ndarray:
    if d == 1:
        return np.array([[-1.0], [1.0]])
    if d == 2:
        t = 2 * np.pi * np.arange(m) / m
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if d == 3:
        # Fibonacci lattice: deterministic and nearly uniform
        k = np.arange(m) + 0.5
        polar = np.arccos(1 - 2 * k / m)
        azim = np.pi * (1 + 5 ** 0.5) * k
        return np.stack([np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar),
                         np.cos(polar)], axis=1)
    g = np.random.default_rng(seed).standard_normal((m, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class Domain:
    """Bounded domain ``{phi < 0}`` with a defining function and boundary samples.

    ``phi``, ``grad`` and ``hess`` act on batches of shape ``(k, d)``.
    ``center`` is an interior point the domain is star-shaped about (used for
    ray casting and interior sampling).
    """

    kind: str
    phi: Callable
    grad: Callable
    hess: Callable
    boundary: np.ndarray
    center: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    params: dict = field(default_factory=dict)
    boundary_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "boundary", _frozen(np.atleast_2d(self.boundary)))
        object.__setattr__(self, "center", _frozen(self.center))
        object.__setattr__(self, "lo", _frozen(self.lo))
        object.__setattr__(self, "hi", _frozen(self.hi))
        vals = np.asarray(self.phi(self.boundary), dtype=float)
        bad = np.abs(vals) > self.boundary_tol
        if bad.any():
            k = int(np.argmax(np.abs(vals)))
            raise DomainError(f"defining function is {vals[k]:.3e} at boundary sample {k}")
        if not float(np.asarray(self.phi(self.center[None, :]))[0]) < 0:
            raise DomainError("defining function is not negative at the domain centre")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains(self, points) -> np.ndarray:
        return np.asarray(self.phi(np.atleast_2d(points))) < 0

    def sample_interior(self, n: int, seed: int = 0) -> np.ndarray:
        """Rejection samples from the bounding box (deterministic for a seed)."""
        rng = np.random.default_rng(seed)
        out = []
        count = 0
        while count < n:
            cand = rng.uniform(self.lo, self.hi, size=(max(64, 2 * n), self.dim))
            keep = cand[self.contains(cand)]
            out.append(keep)
            count += len(keep)
        return np.concatenate(out)[:n]

    # ------------------------------------------------------------ factories

    @classmethod
    def ball(cls, center, radius: float, n_boundary: int = 200, seed: int = 0) -> "Domain":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        r = float(radius)
        d = c.shape[0]

        def phi(x):
            return np.sum((np.asarray(x) - c) ** 2, axis=-1) - r * r

        def grad(x):
            return 2.0 * (np.asarray(x) - c)

        def hess(x):
            x = np.asarray(x)
            return np.broadcast_to(2.0 * np.eye(d), x.shape[:-1] + (d, d)).copy()

        bnd = c + r * _sphere_directions(d, n_boundary, seed)
        # project onto the exact sphere to kill rounding in phi
        bnd = c + r * (bnd - c) / np.linalg.norm(bnd - c, axis=1, keepdims=True)
        return cls("ball", phi, grad, hess, bnd, c, c - r, c + r,
                   {"center": c.tolist(), "radius": r})

    @classmethod
    def box(cls, lo, hi, n_per_face: int = 9) -> "Domain":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        c = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        d = lo.shape[0]

        def phi(x):
            return np.max(np.abs(np.asarray(x) - c) - half, axis=-1)

        def grad(x):
            x = np.asarray(x)
            s = np.abs(x - c) - half
            k = np.argmax(s, axis=-1)
            g = np.zeros_like(x)
            sign = np.take_along_axis(np.sign(x - c), k[..., None], axis=-1)
            np.put_along_axis(g, k[..., None], sign, axis=-1)
            return g

        def hess(x):
            x = np.asarray(x)
            return np.zeros(x.shape[:-1] + (d, d))

        pts = []
        ticks = (np.arange(n_per_face) + 0.5) / n_per_face
        for axis in range(d):
            others = [k for k in range(d) if k != axis]
            mesh = np.meshgrid(*[lo[k] + ticks * (hi[k] - lo[k]) for k in others], indexing="ij") \
                if others else []
            flat = [m.reshape(-1) for m in mesh]
            count = flat[0].shape[0] if flat else 1
            for face in (lo[axis], hi[axis]):
                p = np.empty((count, d))
                p[:, axis] = face
                for k, vals in zip(others, flat):
                    p[:, k] = vals
                pts.append(p)
        return cls("box", phi, grad, hess, np.concatenate(pts), c, lo, hi,
                   {"lo": lo.tolist(), "hi": hi.tolist()})

    @classmethod
    def polytope(cls, normals, offsets, n_boundary: int = 200, interior=None, seed: int = 0) -> "Domain":
        """Bounded polytope ``{x : a_k . x <= b_k}``."""
        a = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.asarray(offsets, dtype=float).reshape(-1)
        norms = np.linalg.norm(a, axis=1)
        an, bn = a / norms[:, None], b / norms
        d = a.shape[1]
        if interior is None:
            # Chebyshev centre: maximise r subject to a_k.x + r <= b_k
            res = optimize.linprog(np.r_[np.zeros(d), -1.0], A_ub=np.c_[an, np.ones(len(bn))],
                                   b_ub=bn, bounds=[(None, None)] * d + [(0, None)])
            if not res.success or res.x[-1] <= 0:
                raise DomainError("polytope is empty or unbounded")
            interior = res.x[:d]
        c = np.asarray(interior, dtype=float)

        def phi(x):
            return np.max(np.asarray(x) @ an.T - bn, axis=-1)

        def grad(x):
            k = np.argmax(np.asarray(x) @ an.T - bn, axis=-1)
            return an[k]

        def hess(x):
            x = np.asarray(x)
            return np.zeros(x.shape[:-1] + (d, d))

        dirs = _sphere_directions(d, n_boundary, seed)
        slack = bn - an @ c
        with np.errstate(divide="ignore"):
            rate = dirs @ an.T
            t = np.where(rate > 0, slack / np.where(rate > 0, rate, 1), np.inf).min(axis=1)
        if not np.all(np.isfinite(t)):
            raise DomainError("polytope is unbounded")
        bnd = c + t[:, None] * dirs
        return cls("polytope", phi, grad, hess, bnd, c, bnd.min(axis=0), bnd.max(axis=0),
                   {"normals": a.tolist(), "offsets": b.tolist()})

    @classmethod
    def implicit(cls, phi, center, n_boundary: int = 200, grad=None, hess=None,
                 seed: int = 0, rmax: float = 1e3, kind: str = "implicit", params=None) -> "Domain":
        """Domain star-shaped about ``center`` given by a vectorised ``phi``.

        Boundary samples are found by root-finding along rays.  Missing
        derivatives fall back to central finite differences.
        """
        c = np.atleast_1d(np.asarray(center, dtype=float))
        d = c.shape[0]

        def scalar(x):
            return float(np.asarray(phi(np.asarray(x, dtype=float)[None, :]))[0])

        dirs = _sphere_directions(d, n_boundary, seed)
        bnd = []
        for u in dirs:
            hi_t = 1.0
            while scalar(c + hi_t * u) < 0:
                hi_t *= 2
                if hi_t > rmax:
                    raise DomainError("implicit domain appears unbounded")
            t = optimize.brentq(lambda s: scalar(c + s * u), 0.0, hi_t, xtol=1e-15, rtol=4e-16)
            bnd.append(c + t * u)
        bnd = np.array(bnd)
        if grad is None:
            def grad(x):
                x = np.atleast_2d(x)
                return np.array([fd_derivatives(phi, p, 1) for p in x])
        if hess is None:
            def hess(x):
                x = np.atleast_2d(x)
                return np.array([fd_derivatives(phi, p, 2, 1e-4) for p in x])
        return cls(kind, phi, grad, hess, bnd, c, bnd.min(axis=0), bnd.max(axis=0), params or {})

    @classmethod
    def star2d(cls, radius_fn, center=(0.0, 0.0), n_boundary: int = 400,
               kind: str = "implicit", params=None) -> "Domain":
        """Planar star-shaped domain ``{rho < r(theta)}`` with gauge defining function.

        ``phi(x) = |x - c| / r(theta) - 1`` is positively homogeneous about the
        centre, so its Hessian is positive semidefinite exactly on the convex
        parts of the boundary.
        """
        c = np.asarray(center, dtype=float)

        def phi(x):
            v = np.asarray(x, dtype=float) - c
            rho = np.hypot(v[..., 0], v[..., 1])
            theta = np.arctan2(v[..., 1], v[..., 0])
            return rho / radius_fn(theta) - 1.0

        t = 2 * np.pi * np.arange(n_boundary) / n_boundary
        r = radius_fn(t)
        bnd = c + r[:, None] * np.stack([np.cos(t), np.sin(t)], axis=1)

        def grad(x):
            x = np.atleast_2d(x)
            return np.array([fd_derivatives(phi, p, 1) for p in x])

        def hess(x):
            x = np.atleast_2d(x)
            return np.array([fd_derivatives(phi, p, 2, 1e-4) for p in x])

        return cls(kind, phi, grad, hess, bnd, c, bnd.min(axis=0), bnd.max(axis=0),
                   params or {}, boundary_tol=1e-8)


def kidney(center=(0.0, 0.0), scale: float = 1.0, dent: float = 0.65, n_boundary: int = 400) -> Domain:
    """Kidney-shaped planar fixture ``r(theta) = scale * (1 + dent * cos theta)``.

    For ``dent > 1/2`` the boundary is concave near ``theta = pi``.
    """
    return Domain.star2d(lambda t: scale * (1 + dent * np.cos(t)), center, n_boundary,
                         kind="implicit", params={"shape": "kidney", "dent": dent, "scale": scale})


def parse_domain(spec: str, dim: int | None = None) -> Domain:
    """Parse ``ball:r[@c1,c2,..]``, ``box:lo:hi``, ``box:lo1,lo2:hi1,hi2`` or ``kidney``."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "ball":
            r, _, c = rest.partition("@")
            radius = float(r) if r else 1.0
            if c:
                center = [float(t) for t in c.split(",")]
            else:
                center = [0.0] * (dim or 1)
            return Domain.ball(center, radius)
        if kind == "box":
            lo_s, hi_s = rest.split(":")
            lo = [float(t) for t in lo_s.split(",")]
            hi = [float(t) for t in hi_s.split(",")]
            if len(lo) == 1 and dim:
                lo, hi = lo * dim, hi * dim
            return Domain.box(lo, hi)
        if kind == "kidney":
            return kidney()
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"malformed domain spec {spec!r}", spec) from exc
    raise ValidationError(f"unknown domain kind {kind!r}", spec)


# ---------------------------------------------------------------- generators


def gaussian(n: int, dim: int = 1, seed: int = 0, mean=0.0, std: float = 1.0,
             mass: float = 1.0) -> DiscreteMeasure:
    rng = np.random.default_rng(seed)
    pts = np.asarray(mean, dtype=float) + std * rng.standard_normal((n, dim))
    return DiscreteMeasure.uniform(pts, mass)


def uniform_ball(n: int, dim: int = 2, seed: int = 0, center=0.0, radius: float = 1.0,
                 mass: float = 1.0) -> DiscreteMeasure:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    return DiscreteMeasure.uniform(np.asarray(center, dtype=float) + r * g, mass)


def uniform_box(n: int, dim: int = 1, seed: int = 0, lo=0.0, hi=1.0,
                mass: float = 1.0) -> DiscreteMeasure:
    rng = np.random.default_rng(seed)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
    return DiscreteMeasure.uniform(rng.uniform(lo, hi, size=(n, dim)), mass)


def ring(n: int, dim: int = 2, seed: int = 0, radius: float = 1.0, width: float = 0.1,
         mass: float = 1.0) -> DiscreteMeasure:
    if dim != 2:
        raise ValidationError("the ring generator is planar (dim=2)")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 2 * np.pi, n)
    r = radius + width * (rng.uniform(size=n) - 0.5)
    return DiscreteMeasure.uniform(np.stack([r * np.cos(t), r * np.sin(t)], axis=1), mass)


def lattice(n_per_axis: int, dim: int = 1, lo=0.0, hi=1.0, mass: float = 1.0) -> DiscreteMeasure:
    """Cell centres of a regular grid on ``[lo, hi]^dim`` (deterministic)."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
    grid = Grid(lo, hi, n_per_axis)
    return DiscreteMeasure.uniform(grid.centers().reshape(-1, dim), mass)


GENERATORS = {
    "gaussian": gaussian,
    "uniform-ball": uniform_ball,
    "uniform-box": uniform_box,
    "ring": ring,
    "lattice": lattice,
}


def _parse_value(text: str):
    if "," in text or ";" in text:
        return [float(t) for t in text.replace(";", ",").split(",")]
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_generator(spec: str) -> dict:
    """``gen:<name>:key=value;key=value`` → dict with ``name`` and keyword arguments.

    Vector values use ``|`` between components, e.g. ``mean=0|1``.
    """
    body = spec[4:] if spec.startswith("gen:") else spec
    name, _, args = body.partition(":")
    if name not in GENERATORS:
        raise ValidationError(f"unknown generator {name!r}", name)
    kwargs = {}
    for item in filter(None, args.split(";")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValidationError(f"malformed generator argument {item!r}", spec)
        key = key.strip().replace("-", "_")
        if "|" in val:
            kwargs[key] = [float(t) for t in val.split("|")]
        else:
            kwargs[key] = _parse_value(val)
    if name != "lattice":
        kwargs.setdefault("seed", 0)
    if name == "lattice":
        kwargs.setdefault("n_per_axis", kwargs.pop("n", 16))
    return {"name": name, **kwargs}


def generate(spec) -> DiscreteMeasure:
    if isinstance(spec, str):
        spec = parse_generator(spec)
    spec = dict(spec)
    name = spec.pop("name")
    try:
        return GENERATORS[name](**spec)
    except TypeError as exc:
        raise ValidationError(f"bad arguments for generator {name!r}: {exc}", name) from exc


# ---------------------------------------------------------------- CSV


def fmt(x: float) -> str:
    """Shortest round-tripping decimal for a float."""
    return repr(float(x))


def write_measure_csv(mu: DiscreteMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(mu.dim)] + ["w"])
        for p, wt in zip(mu.points, mu.weights):
            w.writerow([fmt(v) for v in p] + [fmt(wt)])


def read_measure_csv(path) -> DiscreteMeasure:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty measure file", str(path))
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if d < 1 or header != [f"x{k + 1}" for k in range(d)] + ["w"]:
        raise ValidationError(f"{path}: header must be x1,...,xd,w", str(path))
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry", str(path)) from exc
    if data.ndim != 2 or data.shape[1] != d + 1:
        raise ValidationError(f"{path}: ragged rows", str(path))
    return DiscreteMeasure(data[:, :d], data[:, d])


def load_measure(source) -> DiscreteMeasure:
    """Measure from a CSV path or a ``gen:`` spec string."""
    if isinstance(source, DiscreteMeasure):
        return source
    if isinstance(source, dict):
        return generate(source)
    if isinstance(source, str) and source.startswith("gen:"):
        return generate(source)
    return read_measure_csv(source)
