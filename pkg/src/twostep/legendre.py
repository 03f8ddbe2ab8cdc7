"""Legendre–Fenchel transforms.

Three routes:

* closed forms (quadratics, catalog entries) via ``field.closed_form_dual()``;
* :class:`LegendreDual`, a smooth dual for strictly convex fields, evaluated
  by solving ``grad F(z) = p`` with damped Newton; its derivatives follow from
  the inverse-function theorem, ``D^2 F*(p) = (D^2 F(z))^-1`` and so on;
* :class:`DiscreteConjugate`, the discrete transform on a sampled box, using
  per-axis convex-hull passes for additively separable inputs and a direct
  maximum over the sample grid otherwise.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, ConvexityError, ValidationError
from .parallel import chunks, ordered_map
from .potentials import Polynomial, ScalarField


class LegendreDual(ScalarField):
    """Smooth Legendre dual ``F*(p) = z.p - F(z)`` with ``grad F(z) = p``."""

    def __init__(self, field: ScalarField, tol: float = 1e-14, max_iter: int = 100):
        self.field = field
        self.dim = field.dim
        self.mode = field.mode
        self.tol = tol
        self.max_iter = max_iter

    def _initial_guess(self, p):
        zero = np.zeros(self.dim)
        try:
            H0 = self.field.hess(zero)
            g0 = self.field.grad(zero)
            if np.all(np.isfinite(H0)) and np.linalg.eigvalsh(H0)[0] > 0:
                return np.linalg.solve(H0, (p - g0)[..., None])[..., 0] if p.ndim > 1 else \
                    np.linalg.solve(H0, p - g0)
        except Exception:  # noqa: BLE001 - singular fields start from p/2
            pass
        return 0.5 * p

    def argmax(self, p, z0=None):
        """Solve ``grad F(z) = p`` for a batch of slopes ``p``."""
        p = np.asarray(p, dtype=float)
        flat = p.reshape(-1, self.dim)
        z = (self._initial_guess(flat) if z0 is None
             else np.array(np.broadcast_to(np.asarray(z0, dtype=float), flat.shape)))
        F = self.field
        scale = 1.0 + np.linalg.norm(flat, axis=1)

        def objective(zz, pp):
            return F.value(zz) - np.sum(zz * pp, axis=-1)

        res = np.linalg.norm(F.grad(z) - flat, axis=1)
        best = res.copy()
        stall = np.zeros(len(flat), dtype=int)
        active = res > self.tol * scale
        for _ in range(self.max_iter):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            za, pa = z[idx], flat[idx]
            g = F.grad(za) - pa
            H = F.hess(za)
            try:
                step = np.linalg.solve(H, g[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.array([np.linalg.lstsq(h, gg, rcond=None)[0] for h, gg in zip(H, g)])
            f0 = objective(za, pa)
            t = np.ones(len(idx))
            znew = za - step
            for _ in range(40):
                fn = objective(znew, pa)
                resn = np.linalg.norm(F.grad(znew) - pa, axis=1)
                ok = (fn <= f0 - 1e-4 * t * np.sum(g * step, axis=1) + 1e-15 * np.abs(f0)) | \
                     (resn < np.linalg.norm(g, axis=1))
                ok &= np.isfinite(fn)
                if ok.all():
                    break
                t = np.where(ok, t, 0.5 * t)
                znew = np.where(ok[:, None], znew, za - t[:, None] * step)
            z[idx] = znew
            r = np.linalg.norm(F.grad(znew) - pa, axis=1)
            improved = r < 0.5 * best[idx]
            stall[idx] = np.where(improved, 0, stall[idx] + 1)
            best[idx] = np.minimum(best[idx], r)
            res[idx] = r
            active[idx] = (r > self.tol * scale[idx]) & (stall[idx] < 3)
        bad = res > 1e-9 * scale
        if bad.any():
            k = int(np.argmax(res / scale))
            raise ConvergenceError(
                f"Legendre dual: gradient inversion failed at p={flat[k].tolist()} "
                f"(residual {res[k]:.3e})", residual=float(res[k]))
        return z.reshape(p.shape)

    def derivatives_from_primal(self, z, order):
        """Dual derivative tensor of order >= 2 at ``p = grad F(z)``, from ``F``'s derivatives at ``z``."""
        F = self.field
        H = F.hess(z)
        A = np.linalg.inv(H)
        if order == 2:
            return A
        T3 = F.third(z)
        Tt = np.einsum("...ia,...jb,...kc,...abc->...ijk", A, A, A, T3)
        if order == 3:
            return -Tt
        T4 = F.fourth(z)
        T4t = np.einsum("...ia,...jb,...kc,...ld,...abcd->...ijkl", A, A, A, A, T4)
        X = np.einsum("...ial,...ab,...bjk->...ijkl", Tt, H, Tt)
        return -T4t + X + np.einsum("...jikl->...ijkl", X) + np.einsum("...kjil->...ijkl", X)

    def _derivative(self, p, order, z0=None):
        z = self.argmax(p, z0)
        if order == 0:
            return np.sum(z * p, axis=-1) - self.field.value(z)
        if order == 1:
            return z
        return self.derivatives_from_primal(z, order)

    def derivative_with_guess(self, p, order, z0):
        from .potentials import _as_points
        return self._derivative(_as_points(p, self.dim), order, z0)


# ---------------------------------------------------------------- discrete


def _lower_hull(x, f):
    """Indices of the lower convex hull of sorted points ``(x_k, f_k)``."""
    hull = []
    for k in range(len(x)):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # drop j if it lies on or above the chord i -> k
            if (f[j] - f[i]) * (x[k] - x[i]) >= (f[k] - f[i]) * (x[j] - x[i]):
                hull.pop()
            else:
                break
        hull.append(k)
    return np.array(hull, dtype=int)


class _Conjugate1D:
    """Discrete conjugate of samples ``f_k`` at sorted nodes ``x_k``.

    After the hull pass each query is a binary search over hull slopes.
    """

    def __init__(self, x, f):
        h = _lower_hull(x, f)
        self.x = x[h]
        self.f = f[h]
        self.slopes = np.diff(self.f) / np.diff(self.x) if len(h) > 1 else np.zeros(0)

    def argmax_index(self, p):
        return np.searchsorted(self.slopes, p, side="left")

    def value(self, p):
        k = self.argmax_index(p)
        return p * self.x[k] - self.f[k]

    def argmax(self, p):
        return self.x[self.argmax_index(p)]


class DiscreteConjugate(ScalarField):
    """``F*(p) = max over grid nodes z of (z.p - F(z))``.

    Values and (sub)gradients only: the result is piecewise linear, so higher
    derivatives are not provided.
    """

    mode = "discrete"

    def __init__(self, field: ScalarField, lo, hi, resolution, check_convexity: bool = True,
                 max_checks: int = 4096):
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (field.dim,)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (field.dim,)).copy()
        if np.any(hi <= lo):
            raise ValidationError("empty search box")
        self.dim = field.dim
        self.lo, self.hi = lo, hi
        self.resolution = int(resolution)
        self.axes = [np.linspace(lo[k], hi[k], self.resolution) for k in range(self.dim)]
        self.spacing = float(np.max((hi - lo) / (self.resolution - 1)))
        if check_convexity:
            _check_convexity(field, self.axes, max_checks)
        parts = field.separable_parts()
        self.parts = None
        if parts is not None:
            self.parts = [_Conjugate1D(ax, np.asarray(part.value(ax[:, None]), dtype=float))
                          for ax, part in zip(self.axes, parts)]
            self.nodes = self.values = None
        else:
            mesh = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
            self.nodes = mesh
            self.values = np.asarray(field.value(mesh), dtype=float)

    def separable_parts(self):
        if self.parts is None:
            return None
        return [_PartField(part) for part in self.parts]

    def _direct(self, p):
        flat = p.reshape(-1, self.dim)
        size = max(1, 4_000_000 // max(1, len(self.values)))

        def work(block):
            a, b = block
            s = flat[a:b] @ self.nodes.T - self.values[None, :]
            k = np.argmax(s, axis=1)
            return s[np.arange(b - a), k], k

        out = ordered_map(work, chunks(len(flat), size))
        vals = np.concatenate([o[0] for o in out]) if out else np.zeros(0)
        idx = np.concatenate([o[1] for o in out]) if out else np.zeros(0, dtype=int)
        return vals.reshape(p.shape[:-1]), self.nodes[idx].reshape(p.shape)

    def _derivative(self, p, order):
        if order > 1:
            raise ValidationError("the discrete conjugate provides values and subgradients only")
        if self.parts is not None:
            if order == 0:
                return sum(part.value(p[..., k]) for k, part in enumerate(self.parts))
            return np.stack([part.argmax(p[..., k]) for k, part in enumerate(self.parts)], axis=-1)
        vals, arg = self._direct(p)
        return vals if order == 0 else arg


class _PartField(ScalarField):
    mode = "discrete"

    def __init__(self, part: _Conjugate1D):
        self.part = part
        self.dim = 1

    def _derivative(self, p, order):
        if order == 0:
            return self.part.value(p[..., 0])
        if order == 1:
            return self.part.argmax(p[..., 0])[..., None]
        raise ValidationError("the discrete conjugate provides values and subgradients only")


def _check_convexity(field, axes, max_checks):
    if isinstance(field, (DiscreteConjugate, _PartField)):
        return
    d = len(axes)
    n = len(axes[0])
    total = n ** d
    stride = max(1, total // max_checks)
    flat = np.arange(0, total, stride)
    idx = np.array(np.unravel_index(flat, (n,) * d)).T
    pts = np.stack([axes[k][idx[:, k]] for k in range(d)], axis=1)
    eig = np.linalg.eigvalsh(field.hess(pts))[:, 0]
    k = int(np.argmin(eig))
    if not eig[k] > 0:
        raise ConvexityError(
            f"field is not strictly convex: Hessian eigenvalue {eig[k]:.3e} at {pts[k].tolist()}",
            pts[k], float(eig[k]))


def legendre_transform(field: ScalarField, lo, hi, resolution: int = 101,
                       method: str = "auto") -> ScalarField:
    """Legendre–Fenchel dual of a strictly convex field.

    ``method``: ``"auto"`` (closed form if known, else discrete),
    ``"closed"``, ``"newton"`` (smooth dual by gradient inversion) or
    ``"discrete"``.  Strict convexity is checked on the sample box first;
    nonconvex inputs raise :class:`ConvexityError` instead of silently
    returning their convex envelope.
    """
    if method not in ("auto", "closed", "newton", "discrete"):
        raise ValidationError(f"unknown Legendre method {method!r}")
    axes = [np.linspace(a, b, min(int(resolution), 41))
            for a, b in zip(np.broadcast_to(lo, (field.dim,)), np.broadcast_to(hi, (field.dim,)))]
    _check_convexity(field, axes, 4096)
    if method in ("auto", "closed"):
        dual = field.closed_form_dual()
        if dual is not None:
            return dual
        if method == "closed":
            raise ValidationError("no closed-form dual for this field")
    if method == "newton":
        return LegendreDual(field)
    return DiscreteConjugate(field, lo, hi, resolution, check_convexity=False)


def smooth_dual(field: ScalarField) -> ScalarField:
    """Closed-form dual when available, else :class:`LegendreDual`."""
    dual = field.closed_form_dual()
    return dual if dual is not None else LegendreDual(field)


__all__ = ["LegendreDual", "DiscreteConjugate", "legendre_transform", "smooth_dual", "Polynomial"]
