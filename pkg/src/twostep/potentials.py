"""Scalar fields with derivative tensors through order four.

Every field acts on batches: a point array of shape ``(..., d)`` gives
values of shape ``(...)``, gradients ``(..., d)``, Hessians ``(..., d, d)``
and so on up to fourth derivatives ``(..., d, d, d, d)``.

Fields support ``+``, ``-`` and scalar ``*``.  Polynomials stay polynomials
under these operations and under translation, which keeps convolutions of
polynomial kernels exact.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict

import numpy as np

from .errors import SingularityError, ValidationError
from .finite_diff import DEFAULT_STEPS, EXTRAPOLATED_STEPS, fd_derivatives, fill_symmetric, symmetric_indices

_ORDER_NAMES = ("value", "grad", "hess", "third", "fourth")


def _as_points(z, dim):
    z = np.asarray(z, dtype=float)
    if z.shape[-1:] != (dim,):
        if dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
            z = z[..., None]
        else:
            raise ValidationError(f"expected points of dimension {dim}, got shape {z.shape}")
    return z


class ScalarField:
    """Base class.  Subclasses implement ``_derivative(z, order)``."""

    dim: int = 1
    mode: str = "analytic"
    #: centre of an isolated singularity (kernels such as Coulomb), if any
    singular_at = None

    def _derivative(self, z, order):
        raise NotImplementedError

    def derivative(self, z, order: int):
        if order not in (0, 1, 2, 3, 4):
            raise ValueError("derivative order must be between 0 and 4")
        return self._derivative(_as_points(z, self.dim), order)

    def value(self, z):
        return self.derivative(z, 0)

    def grad(self, z):
        return self.derivative(z, 1)

    def hess(self, z):
        return self.derivative(z, 2)

    def third(self, z):
        return self.derivative(z, 3)

    def fourth(self, z):
        return self.derivative(z, 4)

    __call__ = value

    def closed_form_dual(self):
        """Exact Legendre dual when available, else ``None``."""
        return None

    def separable_parts(self):
        """One-dimensional fields ``f_k`` with ``F(z) = sum_k f_k(z_k)``, or ``None``."""
        return None

    def finite_difference(self, steps=None, extrapolate: bool = True) -> "FiniteDifferenceField":
        return FiniteDifferenceField(self.value, self.dim, steps, extrapolate)

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        if np.isscalar(other):
            other = Polynomial.constant(self.dim, float(other))
        return LinearCombination.of([(1.0, self), (1.0, other)])

    __radd__ = __add__

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return LinearCombination.of([(float(c), self)])

    __rmul__ = __mul__

    def __neg__(self):
        return -1.0 * self

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rsub__(self, other):
        return (-1.0) * self + other


# ---------------------------------------------------------------- polynomials


def _falling(e, k):
    out = 1
    for t in range(k):
        out *= e - t
    return out


class Polynomial(ScalarField):
    """``sum_k c_k z^{e_k}`` with integer exponent rows ``e_k``."""

    def __init__(self, exponents, coefficients, dim: int | None = None):
        exps = np.asarray(exponents, dtype=int)
        coefs = np.asarray(coefficients, dtype=float).reshape(-1)
        if exps.ndim == 1:
            exps = exps.reshape(-1, 1) if dim in (None, 1) else exps.reshape(-1, dim)
        if dim is None:
            dim = exps.shape[1]
        if exps.size == 0:
            exps = np.zeros((0, dim), dtype=int)
        if exps.shape != (coefs.shape[0], dim):
            raise ValidationError("exponent rows and coefficients disagree")
        if np.any(exps < 0):
            raise ValidationError("negative exponent in polynomial")
        merged = defaultdict(float)
        for e, c in zip(map(tuple, exps), coefs):
            merged[e] += c
        keys = sorted(k for k, c in merged.items() if c != 0.0)
        self.dim = int(dim)
        self.exponents = np.array(keys, dtype=int).reshape(-1, self.dim)
        self.coefficients = np.array([merged[k] for k in keys], dtype=float)
        self._cache = {}

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, dim, c=0.0):
        return cls(np.zeros((1, dim), dtype=int), [c], dim)

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros((0, dim), dtype=int), [], dim)

    @classmethod
    def from_terms(cls, terms: dict, dim: int):
        """``{(e_1, ..., e_d): c}`` mapping."""
        if not terms:
            return cls.zero(dim)
        exps = [tuple(int(t) for t in e) for e in terms]
        return cls(exps, list(terms.values()), dim)

    @classmethod
    def norm_squared(cls, dim, scale=1.0):
        return cls(2 * np.eye(dim, dtype=int), [scale] * dim, dim)

    @classmethod
    def norm_fourth(cls, dim, scale=1.0):
        """``scale * |z|^4`` expanded."""
        terms = defaultdict(float)
        for i in range(dim):
            for j in range(dim):
                e = [0] * dim
                e[i] += 2
                e[j] += 2
                terms[tuple(e)] += scale
        return cls.from_terms(terms, dim)

    @classmethod
    def linear(cls, g, c=0.0):
        g = np.asarray(g, dtype=float).reshape(-1)
        d = g.shape[0]
        return cls(np.vstack([np.eye(d, dtype=int), np.zeros((1, d), dtype=int)]), list(g) + [c], d)

    @classmethod
    def from_json(cls, path):
        """Load ``{"i,j,k": coef, ...}`` (optionally nested under ``"coefficients"``)."""
        with open(path) as fh:
            data = json.load(fh)
        return cls.from_mapping(data)[0]

    @classmethod
    def from_mapping(cls, data):
        level = "force"
        if isinstance(data, dict) and "coefficients" in data:
            level = data.get("level", "force")
            data = data["coefficients"]
        if not isinstance(data, dict) or not data:
            raise ValidationError("polynomial file must map multi-indices to coefficients")
        terms = {}
        for key, val in data.items():
            try:
                e = tuple(int(t) for t in str(key).replace(" ", "").split(","))
            except ValueError as exc:
                raise ValidationError(f"bad multi-index {key!r}", key) from exc
            terms[e] = float(val)
        dims = {len(e) for e in terms}
        if len(dims) != 1:
            raise ValidationError("multi-indices of different lengths")
        if level not in ("force", "modified"):
            raise ValidationError(f"unknown polynomial level {level!r}", level)
        return cls.from_terms(terms, dims.pop()), level

    def to_mapping(self):
        return {",".join(str(int(t)) for t in e): float(c)
                for e, c in zip(self.exponents, self.coefficients)}

    # evaluation ---------------------------------------------------------
    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max()) if len(self.coefficients) else 0

    def _monomials(self, z, exps):
        if exps.shape[0] == 0:
            return np.zeros(z.shape[:-1] + (0,))
        return np.prod(z[..., None, :] ** exps, axis=-1)

    def _derived(self, idx):
        """Exponents and coefficients of the partial derivative along ``idx``."""
        if idx not in self._cache:
            counts = np.bincount(np.array(idx, dtype=int), minlength=self.dim) if idx else \
                np.zeros(self.dim, dtype=int)
            factor = np.ones(len(self.coefficients))
            for axis, k in enumerate(counts):
                if k:
                    factor *= np.array([_falling(e, k) for e in self.exponents[:, axis]], dtype=float)
            keep = factor != 0
            self._cache[idx] = (self.exponents[keep] - counts, self.coefficients[keep] * factor[keep])
        return self._cache[idx]

    def _derivative(self, z, order):
        batch = z.shape[:-1]
        values = {}
        for idx in symmetric_indices(self.dim, order):
            exps, coefs = self._derived(idx)
            values[idx] = self._monomials(z, exps) @ coefs if len(coefs) else np.zeros(batch)
        if order == 0:
            return values[()]
        return fill_symmetric(values, self.dim, order, batch)

    # algebra ------------------------------------------------------------
    def _combine(self, other, c_self=1.0, c_other=1.0):
        if other.dim != self.dim:
            raise ValidationError("dimension mismatch")
        return Polynomial(np.vstack([self.exponents, other.exponents]),
                          np.concatenate([c_self * self.coefficients, c_other * other.coefficients]),
                          self.dim)

    def __add__(self, other):
        if np.isscalar(other):
            other = Polynomial.constant(self.dim, float(other))
        if isinstance(other, Polynomial):
            return self._combine(other)
        return ScalarField.__add__(self, other)

    __radd__ = __add__

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return Polynomial(self.exponents, float(c) * self.coefficients, self.dim)

    __rmul__ = __mul__

    def shifted(self, y) -> "Polynomial":
        """The polynomial ``z -> p(z - y)``."""
        y = np.asarray(y, dtype=float).reshape(-1)
        terms = defaultdict(float)
        for e, c in zip(self.exponents, self.coefficients):
            ranges = [range(int(k) + 1) for k in e]
            for ks in itertools.product(*ranges):
                coef = c
                for axis, (ea, ka) in enumerate(zip(e, ks)):
                    coef *= math.comb(int(ea), ka) * (-y[axis]) ** (int(ea) - ka)
                terms[ks] += coef
        return Polynomial.from_terms(terms, self.dim)

    def separable_parts(self):
        mixed = np.count_nonzero(self.exponents, axis=1) > 1
        if mixed.any():
            return None
        parts = []
        for axis in range(self.dim):
            sel = self.exponents[:, axis] > 0
            if axis == 0:
                sel = sel | (self.exponents.sum(axis=1) == 0)
            parts.append(Polynomial(self.exponents[sel, axis].reshape(-1, 1),
                                    self.coefficients[sel], 1))
        return parts

    def quadratic_parts(self):
        """``(H, g, c)`` with ``p(z) = z.H.z/2 + g.z + c`` if degree <= 2, else ``None``."""
        if self.degree > 2:
            return None
        zero = np.zeros(self.dim)
        return self.hess(zero), self.grad(zero), float(self.value(zero))

    def closed_form_dual(self):
        parts = self.quadratic_parts()
        if parts is None:
            return None
        H, g, c = parts
        if np.linalg.eigvalsh(H).min() <= 0:
            return None
        Hi = np.linalg.inv(H)
        # F*(p) = (p - g).Hi.(p - g)/2 - c
        terms = defaultdict(float)
        d = self.dim
        for i in range(d):
            for j in range(d):
                e = [0] * d
                e[i] += 1
                e[j] += 1
                terms[tuple(e)] += 0.5 * Hi[i, j]
        lin = -Hi @ g
        for i in range(d):
            e = [0] * d
            e[i] = 1
            terms[tuple(e)] += lin[i]
        terms[(0,) * d] += 0.5 * g @ Hi @ g - c
        return Polynomial.from_terms(terms, d)

    def __repr__(self):
        return f"Polynomial(dim={self.dim}, terms={len(self.coefficients)}, degree={self.degree})"


# ---------------------------------------------------------------- radial powers


class RadialPower(ScalarField):
    """``coef * |z - center|^s`` for real ``s``; singular at the centre unless ``s``
    is large enough for the requested derivative."""

    def __init__(self, coef: float, exponent: float, dim: int, center=None):
        self.coef = float(coef)
        self.exponent = float(exponent)
        self.dim = int(dim)
        self.center = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        if self.exponent < 0:
            self.singular_at = self.center

    def _h(self, u, k):
        """k-th derivative of ``coef * u^(s/2)``."""
        a = self.exponent / 2
        return self.coef * _falling(a, k) * u ** (a - k)

    def _derivative(self, z, order):
        v = z - self.center
        u = np.sum(v * v, axis=-1)
        if np.any(u == 0) and (self.exponent <= 0 or order > self.exponent):
            k = int(np.argmax(np.ravel(u) == 0))
            raise SingularityError("radial power evaluated at its centre",
                                   pair={"point": np.reshape(z, (-1, self.dim))[k].tolist()})
        d = self.dim
        eye = np.eye(d)
        if order == 0:
            return self._h(u, 0)
        h1 = self._h(u, 1)[..., None]
        if order == 1:
            return 2 * h1 * v
        h2 = self._h(u, 2)
        if order == 2:
            return (4 * h2[..., None, None] * np.einsum("...i,...j->...ij", v, v)
                    + 2 * h1[..., None] * eye)
        h3 = self._h(u, 3)
        if order == 3:
            vvv = np.einsum("...i,...j,...k->...ijk", v, v, v)
            dv = np.einsum("ij,...k->...ijk", eye, v)
            sym = dv + np.einsum("...ikj->...ijk", dv) + np.einsum("...jki->...ijk", dv)
            return 8 * h3[..., None, None, None] * vvv + 4 * h2[..., None, None, None] * sym
        h4 = self._h(u, 4)
        v4 = np.einsum("...i,...j,...k,...l->...ijkl", v, v, v, v)
        dvv = np.einsum("ij,...k,...l->...ijkl", eye, v, v)
        six = sum(np.einsum(f"...{p}->...ijkl", dvv) for p in
                  ("ijkl", "ikjl", "iljk", "jkil", "jlik", "klij"))
        dd = np.einsum("ij,kl->ijkl", eye, eye)
        three = dd + np.einsum("ikjl->ijkl", dd) + np.einsum("iljk->ijkl", dd)
        return (16 * h4[..., None, None, None, None] * v4
                + 8 * h3[..., None, None, None, None] * six
                + 4 * h2[..., None, None, None, None] * three)

    def __repr__(self):
        return f"RadialPower({self.coef:g} |z|^{self.exponent:g}, dim={self.dim})"


# ---------------------------------------------------------------- combinators


class LinearCombination(ScalarField):
    """``sum_k c_k f_k``; polynomial terms are merged."""

    def __init__(self, terms):
        self.terms = list(terms)
        dims = {f.dim for _, f in self.terms}
        if len(dims) != 1:
            raise ValidationError("cannot combine fields of different dimensions")
        self.dim = dims.pop()
        modes = {f.mode for _, f in self.terms}
        self.mode = "analytic" if modes == {"analytic"} else "finite-difference"
        sing = [f.singular_at for _, f in self.terms if f.singular_at is not None]
        self.singular_at = sing[0] if sing else None

    @classmethod
    def of(cls, terms):
        flat = []
        for c, f in terms:
            if isinstance(f, LinearCombination):
                flat.extend((c * ci, fi) for ci, fi in f.terms)
            else:
                flat.append((c, f))
        poly = None
        rest = []
        for c, f in flat:
            if isinstance(f, Polynomial):
                poly = c * f if poly is None else poly + c * f
            elif c != 0.0:
                rest.append((c, f))
        if not rest:
            return poly
        if poly is not None and len(poly.coefficients):
            rest.append((1.0, poly))
        return cls(rest) if len(rest) > 1 or rest[0][0] != 1.0 else rest[0][1]

    def _derivative(self, z, order):
        out = None
        for c, f in self.terms:
            val = c * f._derivative(z, order)
            out = val if out is None else out + val
        return out

    def separable_parts(self):
        parts = [f.separable_parts() for _, f in self.terms]
        if any(p is None for p in parts):
            return None
        return [LinearCombination.of([(c, p[k]) for (c, _), p in zip(self.terms, parts)])
                for k in range(self.dim)]


class Shifted(ScalarField):
    """``z -> f(z - y)``."""

    def __init__(self, field: ScalarField, y):
        self.field = field
        self.shift = np.asarray(y, dtype=float).reshape(-1)
        self.dim = field.dim
        self.mode = field.mode
        if field.singular_at is not None:
            self.singular_at = np.asarray(field.singular_at) + self.shift

    def _derivative(self, z, order):
        return self.field._derivative(z - self.shift, order)


def shift(field: ScalarField, y) -> ScalarField:
    if isinstance(field, Polynomial):
        return field.shifted(y)
    return Shifted(field, y)


class FiniteDifferenceField(ScalarField):
    """Derivatives by central differences of a value function.

    ``steps`` maps derivative order (1..4) to the step size.  By default one
    Richardson step is applied with steps 1e-4, 1e-3, 1e-2 and 3e-2; with
    ``extrapolate=False`` the plain stencils use 1e-6, 1e-5, 3e-4 and 1e-3.
    """

    mode = "finite-difference"

    def __init__(self, fn, dim: int, steps=None, extrapolate: bool = True):
        self.fn = fn
        self.dim = int(dim)
        self.extrapolate = bool(extrapolate)
        base = dict(enumerate(EXTRAPOLATED_STEPS if extrapolate else DEFAULT_STEPS))
        base.pop(0)
        if steps:
            base.update({int(k): float(v) for k, v in dict(steps).items()})
        self.steps = base

    def _derivative(self, z, order):
        if order == 0:
            return np.asarray(self.fn(z), dtype=float)
        flat = z.reshape(-1, self.dim)
        out = np.array([fd_derivatives(self.fn, p, order, self.steps[order], self.extrapolate)
                        for p in flat])
        return out.reshape(z.shape[:-1] + (self.dim,) * order)


# ---------------------------------------------------------------- helpers


def modified_potential(Q: ScalarField, T: float) -> ScalarField:
    """``(T/2) Q(z) + |z|^2``."""
    if not T > 0:
        raise ValidationError("horizon T must be positive")
    return (T / 2.0) * Q + Polynomial.norm_squared(Q.dim)


def force_from_modified(Qt: ScalarField, T: float) -> ScalarField:
    """Inverse of :func:`modified_potential`: ``(2/T)(Q~(z) - |z|^2)``."""
    if not T > 0:
        raise ValidationError("horizon T must be positive")
    return (2.0 / T) * (Qt - Polynomial.norm_squared(Qt.dim))


def min_hessian_eigenvalue(field: ScalarField, points) -> np.ndarray:
    return np.linalg.eigvalsh(field.hess(points))[..., 0]
