"""Central finite-difference derivative tensors up to order four.

Mixed partial derivatives are built as products of one-dimensional central
stencils, one per distinct axis in the multi-index.  For a polynomial of
degree at most ``order + 1`` in each variable the stencils are exact up to
rounding.

With ``extrapolate=True`` one Richardson step combines the steps ``h`` and
``h/2`` (``(4 D(h/2) - D(h)) / 3``), cancelling the leading ``h^2`` error
term.  That allows much larger steps and so far less rounding, which is what
limits the plain fourth-order stencil.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import DerivativeEvaluationError

#: default steps per derivative order (index 0 unused)
DEFAULT_STEPS = (None, 1e-6, 1e-5, 3e-4, 1e-3)
#: steps used with Richardson extrapolation
EXTRAPOLATED_STEPS = (None, 1e-4, 1e-3, 1e-2, 3e-2)

# one-dimensional central stencils for d^k/dx^k: (offsets, weights), scaled by h^-k
_STENCILS = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
}


def symmetric_indices(d: int, order: int):
    """Sorted multi-indices (combinations with replacement)."""
    return list(itertools.combinations_with_replacement(range(d), order))


def fill_symmetric(values: dict, d: int, order: int, batch_shape=()) -> np.ndarray:
    """Expand ``{sorted index tuple: array}`` to a dense symmetric tensor."""
    out = np.zeros(tuple(batch_shape) + (d,) * order)
    for idx, val in values.items():
        for perm in set(itertools.permutations(idx)):
            out[(Ellipsis,) + perm] = val
    return out


def _evaluate(f, pts: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(f(pts), dtype=float)
        if vals.shape != pts.shape[:-1]:
            raise ValueError
    except (ValueError, TypeError):
        vals = np.array([float(f(p)) for p in pts])
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.argmax(bad))
        raise DerivativeEvaluationError(
            f"non-finite function value at stencil point {pts[k].tolist()}", pts[k])
    return vals


def fd_derivatives(f, z, order: int, h: float | None = None,
                   extrapolate: bool = False) -> np.ndarray:
    """Derivative tensor of ``f`` at a single point ``z``.

    Parameters
    ----------
    f : callable
        Maps an array of points of shape ``(k, d)`` to ``(k,)`` values.  Plain
        scalar callables are accepted and evaluated point by point.
    z : array_like, shape (d,)
    order : int
        0 to 4.
    h : float, optional
        Step; defaults to ``DEFAULT_STEPS[order]`` (``EXTRAPOLATED_STEPS``
        with ``extrapolate``).
    extrapolate : bool
        Apply one Richardson step with ``h`` and ``h/2``.

    Returns
    -------
    ndarray of shape ``(d,) * order``, symmetric under index permutation.
    """
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    if order == 0:
        return _evaluate(f, z[None, :])[0]
    if order not in (1, 2, 3, 4):
        raise ValueError("order must be between 0 and 4")
    if h is None:
        h = (EXTRAPOLATED_STEPS if extrapolate else DEFAULT_STEPS)[order]
    if extrapolate:
        coarse = fd_derivatives(f, z, order, h)
        fine = fd_derivatives(f, z, order, 0.5 * h)
        return (4.0 * fine - coarse) / 3.0
    # representable step per axis so that (z + h) - z == h exactly
    steps = (z + h) - z

    indices = symmetric_indices(d, order)
    stencil_pts = []
    stencil_w = []
    owners = []
    for n, idx in enumerate(indices):
        counts = [(axis, idx.count(axis)) for axis in sorted(set(idx))]
        axis_offsets = []
        for axis, k in counts:
            offs, ws = _STENCILS[k]
            axis_offsets.append([(axis, o, w / steps[axis] ** k) for o, w in zip(offs, ws)])
        for combo in itertools.product(*axis_offsets):
            p = z.copy()
            w = 1.0
            for axis, o, wk in combo:
                p[axis] = z[axis] + o * steps[axis]
                w *= wk
            stencil_pts.append(p)
            stencil_w.append(w)
            owners.append(n)
    vals = _evaluate(f, np.array(stencil_pts))
    acc = np.zeros(len(indices))
    np.add.at(acc, np.array(owners), np.array(stencil_w) * vals)
    return fill_symmetric({idx: acc[n] for n, idx in enumerate(indices)}, d, order)


def fd_derivatives_batch(f, z, order: int, h: float | None = None,
                         extrapolate: bool = False) -> np.ndarray:
    """:func:`fd_derivatives` over a batch of points of shape ``(..., d)``."""
    z = np.asarray(z, dtype=float)
    flat = z.reshape(-1, z.shape[-1])
    out = np.array([fd_derivatives(f, p, order, h, extrapolate) for p in flat])
    return out.reshape(z.shape[:-1] + out.shape[1:])
