"""Named potentials.

Each entry stores one field at a stated level:

* ``force``: the kick potential ``Q``; the modified potential is
  ``(T/2) Q + |z|^2``;
* ``modified``: the field is already the modified potential ``Q~``.

Names (``d`` is the spatial dimension where the family allows any):

============================  ===========  ================================
name                          level        field
============================  ===========  ================================
``zero``                      force        0
``quadratic``                 force        ``|z|^2``
``quartic``                   force        ``|z|^4``
``softwell[:A]``              force        ``A|z|^2 - |z|^4`` (A = 2)
``linear:g1,..,gd``           force        ``g.z``
``ex61-Q[:A]``                modified     ``z2^2 z3^2 + z1 z3^2 + z1 z2^2 + A|z|^2``
``ex61-Qprime[:A]``           modified     cubic terms with flipped sign
``ex61-Qavg[:A]``             modified     ``z2^2 z3^2 + A|z|^2``
``coulomb:d[:c]``             modified     ``c |z|^(2-d)`` (c = 1)
``poly:<file>``               per file     polynomial from JSON
============================  ===========  ================================

The Coulomb kernel is not convex, so its Legendre transform is not
computed numerically.  The entry carries the closed forms
``kappa*(p) = -K c^(1-m) |p|^m`` and the transport cost
``c(x, y) = K c^(1-m) |x + y|^m`` with ``m = (2-d)/(1-d)`` and
``K = (d-1)/(d-2)^m``.  These are formal: ``kappa*`` inverts ``grad kappa``
locally, but it is not a convex conjugate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .potentials import (Polynomial, RadialPower, ScalarField, force_from_modified,
                         modified_potential)

EX61_DEFAULT_A = 50.0


@dataclass(frozen=True, eq=False)
class PotentialCatalogEntry:
    name: str
    dim: int
    field: ScalarField
    level: str = "force"
    dual: ScalarField | None = None
    cost_field: ScalarField | None = None
    notes: str = ""
    params: dict = field(default_factory=dict)

    def modified(self, T: float = 1.0) -> ScalarField:
        return self.field if self.level == "modified" else modified_potential(self.field, T)

    def force(self, T: float = 1.0) -> ScalarField:
        return self.field if self.level == "force" else force_from_modified(self.field, T)

    def modified_dual(self, T: float = 1.0) -> ScalarField | None:
        """Closed-form dual of the modified potential, if known."""
        if self.level == "modified" and self.dual is not None:
            return self.dual
        return self.modified(T).closed_form_dual()


def ex61_field(variant: str = "Q", A: float = EX61_DEFAULT_A) -> Polynomial:
    """The three-dimensional family ``z2^2 z3^2 +/- (z1 z3^2 + z1 z2^2) + A|z|^2``."""
    sign = {"Q": 1.0, "Qprime": -1.0, "Qavg": 0.0}[variant]
    terms = {(0, 2, 2): 1.0}
    if sign:
        terms[(1, 0, 2)] = sign
        terms[(1, 2, 0)] = sign
    return Polynomial.from_terms(terms, 3) + Polynomial.norm_squared(3, A)


def coulomb_constants(d: int):
    """``(m, K)`` with ``m = (2-d)/(1-d)`` and ``K = (d-1)/(d-2)^m``."""
    if d < 3:
        raise ValidationError("the Coulomb family needs d >= 3", f"coulomb:{d}")
    m = (2.0 - d) / (1.0 - d)
    return m, (d - 1.0) / (d - 2.0) ** m


def coulomb_entry(d: int, c: float = 1.0) -> PotentialCatalogEntry:
    m, K = coulomb_constants(d)
    if not c > 0:
        raise ValidationError("only c_d > 0 is covered", f"coulomb:{d}:{c}")
    kappa = RadialPower(c, 2.0 - d, d)
    scale = K * c ** (1.0 - m)
    return PotentialCatalogEntry(
        f"coulomb:{d}", d, kappa, "modified",
        dual=RadialPower(-scale, m, d),
        cost_field=RadialPower(scale, m, d),
        notes="nonconvex kernel; closed-form formal dual and cost",
        params={"c": c, "m": m, "K": K})


def _split(name: str):
    head, _, rest = name.partition(":")
    return head, rest


def get_potential(name: str, dim: int | None = None) -> PotentialCatalogEntry:
    """Look up a catalog entry; ``dim`` is required for dimension-free families."""
    head, rest = _split(name)

    def need_dim():
        if dim is None:
            raise ValidationError(f"potential {name!r} needs a dimension", name)
        return int(dim)

    try:
        if head == "zero":
            d = need_dim()
            return PotentialCatalogEntry("zero", d, Polynomial.zero(d))
        if head == "quadratic":
            d = need_dim()
            return PotentialCatalogEntry("quadratic", d, Polynomial.norm_squared(d))
        if head == "quartic":
            d = need_dim()
            return PotentialCatalogEntry("quartic", d, Polynomial.norm_fourth(d))
        if head == "softwell":
            d = need_dim()
            A = float(rest) if rest else 2.0
            f = Polynomial.norm_squared(d, A) - Polynomial.norm_fourth(d)
            return PotentialCatalogEntry(f"softwell:{A:g}", d, f, params={"A": A})
        if head == "linear":
            g = [float(t) for t in rest.split(",")]
            if dim is not None and len(g) != dim:
                raise ValidationError(f"linear potential has {len(g)} components, expected {dim}", name)
            return PotentialCatalogEntry(name, len(g), Polynomial.linear(g))
        if head in ("ex61-Q", "ex61-Qprime", "ex61-Qavg"):
            if dim not in (None, 3):
                raise ValidationError(f"{head} is three-dimensional", name)
            A = float(rest) if rest else EX61_DEFAULT_A
            return PotentialCatalogEntry(head, 3, ex61_field(head[5:], A), "modified",
                                         params={"A": A})
        if head == "coulomb":
            parts = rest.split(":") if rest else []
            d = int(parts[0]) if parts else need_dim()
            c = float(parts[1]) if len(parts) > 1 else 1.0
            if dim is not None and d != dim:
                raise ValidationError(f"{name} has dimension {d}, expected {dim}", name)
            return coulomb_entry(d, c)
        if head == "poly":
            if not rest:
                raise ValidationError("poly: needs a coefficient file", name)
            import json
            try:
                with open(rest) as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ValidationError(f"cannot read polynomial file {rest!r}: {exc}", rest) from exc
            poly, level = Polynomial.from_mapping(data)
            if dim is not None and poly.dim != dim:
                raise ValidationError(f"polynomial has dimension {poly.dim}, expected {dim}", name)
            return PotentialCatalogEntry(name, poly.dim, poly, level)
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed potential name {name!r}", name) from exc
    raise ValidationError(f"unknown potential {name!r}", head)


def get_kernel(name: str, dim: int) -> ScalarField:
    """Interaction kernels: ``zero``, ``quadratic``, ``quartic``, ``softwell[:A]``,
    ``coulomb:d[:c]`` or ``poly:<file>``."""
    head, _ = _split(name)
    if head not in ("zero", "quadratic", "quartic", "softwell", "coulomb", "poly"):
        raise ValidationError(f"unknown kernel {name!r}", head)
    return get_potential(name, dim).field


def standard_entries(dim: int = 3, A: float = EX61_DEFAULT_A):
    """Entries used by property suites, all in dimension ``dim`` where possible."""
    out = [get_potential(n, dim) for n in ("zero", "quadratic", "quartic", "softwell")]
    if dim == 3:
        out += [get_potential(f"ex61-{v}:{A:g}") for v in ("Q", "Qprime", "Qavg")]
    if dim >= 3:
        out.append(get_potential(f"coulomb:{dim}"))
    return out


def unit_ball_samples(dim: int, n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.uniform(size=(n, 1)) ** (1.0 / dim)
