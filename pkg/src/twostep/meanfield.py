"""Self-interacting transport: the kick potential is the convolution
``Q = kappa * rho_bar`` of a pair kernel with the intermediate measure.

The intermediate measure is found by damped Picard iteration on the
position of each source point's kick point.  Every iterate is a two-step
solve with ``Q = kappa * rho_bar``; the new kick points are mixed with the
old ones, ``z <- (1 - lam) z + lam z_new``.  Damping is halved whenever the
gap between successive iterates grows twice in a row.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .conditions import ConditionReport, check_H1, check_H2c
from .errors import ConvexityError, SingularityError, SolverStageError, TwostepError, \
    ValidationError
from .measures import DiscreteMeasure, w2_distance
from .parallel import chunks, ordered_map
from .potentials import Polynomial, ScalarField
from .solver import TwoStepProblem, TwoStepSolution, problem3_functional, solve

log = logging.getLogger(__name__)

EXCLUSION_FACTOR = 1e-6


def _is_singular(kernel: ScalarField) -> bool:
    return getattr(kernel, "singular_at", None) is not None


def _exclusion(rho: DiscreteMeasure, radius):
    return EXCLUSION_FACTOR * rho.diameter() if radius is None else float(radius)


class Convolution(ScalarField):
    """``Q(x) = sum_i w_i kappa(x - y_i)`` with the same sums for derivatives.

    For kernels with a singularity at the origin, evaluating within
    ``exclusion`` of a support point raises :class:`SingularityError`.
    """

    def __init__(self, kernel: ScalarField, rho: DiscreteMeasure, exclusion: float | None = None):
        if kernel.dim != rho.dim:
            raise ValidationError("kernel and measure dimensions differ")
        self.kernel = kernel
        self.rho = rho
        self.dim = rho.dim
        self.mode = kernel.mode
        self.exclusion = _exclusion(rho, exclusion) if _is_singular(kernel) else None

    def _derivative(self, z, order):
        flat = z.reshape(-1, self.dim)
        Y, w = self.rho.points, self.rho.weights
        if self.exclusion is not None:
            dist = np.linalg.norm(flat[:, None, :] - Y[None, :, :], axis=-1)
            hit = np.argwhere(dist <= self.exclusion)
            if hit.size:
                k, i = (int(t) for t in hit[0])
                raise SingularityError(
                    f"kernel evaluated within {self.exclusion:.3e} of support point {i}",
                    pair={"point": flat[k].tolist(), "support_index": i})
        tail = (self.dim,) * order
        out = np.zeros((len(flat),) + tail)
        for yi, wi in zip(Y, w):
            if wi != 0:
                out += wi * np.asarray(self.kernel.derivative(flat - yi, order)).reshape(out.shape)
        return out.reshape(z.shape[:-1] + tail)


def convolve_potential(kernel: ScalarField, rho: DiscreteMeasure,
                       exclusion: float | None = None) -> ScalarField:
    """``Q = kappa * rho``; exact polynomial arithmetic for polynomial kernels."""
    if isinstance(kernel, Polynomial):
        terms = [kernel.shifted(y) * float(w) for y, w in zip(rho.points, rho.weights) if w != 0]
        if not terms:
            return Polynomial.zero(rho.dim)
        # sum in support order, merging equal exponents
        acc = {}
        for t in terms:
            for e, c in zip(map(tuple, t.exponents.tolist()), t.coefficients):
                acc[e] = acc.get(e, 0.0) + float(c)
        return Polynomial.from_terms(acc, rho.dim)
    return Convolution(kernel, rho, exclusion)


def interaction_energy(rho: DiscreteMeasure, kernel: ScalarField,
                       exclusion: float | None = None) -> float:
    """``1/2 sum_ij w_i w_j kappa(y_i - y_j)``.

    Singular kernels skip self-pairs and refuse pairs closer than the
    exclusion radius.
    """
    Y, w = rho.points, rho.weights
    n = rho.n
    singular = _is_singular(kernel)
    excl = _exclusion(rho, exclusion) if singular else None

    def work(block):
        a, b = block
        D = Y[a:b, None, :] - Y[None, :, :]
        if singular:
            dist = np.linalg.norm(D, axis=-1)
            mask = np.ones_like(dist, dtype=bool)
            mask[np.arange(b - a), np.arange(a, b)] = False
            close = np.argwhere(mask & (dist <= excl))
            if close.size:
                i, j = int(close[0][0]) + a, int(close[0][1])
                raise SingularityError(f"support points {i} and {j} are closer than {excl:.3e}",
                                       pair=(i, j))
            D = np.where(mask[..., None], D, np.inf)
            vals = np.zeros(dist.shape)
            vals[mask] = np.asarray(kernel.value(D[mask]), dtype=float)
        else:
            vals = np.asarray(kernel.value(D), dtype=float)
        return [math.fsum(w[a + r] * w * vals[r]) for r in range(b - a)]

    rows = [v for block in ordered_map(work, chunks(n, 256)) for v in block]
    return 0.5 * math.fsum(rows)


# ------------------------------------------------------------ fixed point


@dataclass(frozen=True, eq=False)
class MeanFieldProblem:
    source: DiscreteMeasure
    target: DiscreteMeasure
    kernel: ScalarField
    T: float = 1.0
    damping: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200
    solver: str = "exact"
    check_convexity: bool = True

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValidationError(f"damping must lie in (0, 1], got {self.damping!r}", "damping")
        if not self.T > 0:
            raise ValidationError("horizon T must be positive", "T")
        if not self.tol > 0:
            raise ValidationError("tolerance must be positive", "tol")

    def problem(self, Q: ScalarField) -> TwoStepProblem:
        return TwoStepProblem(self.source, self.target, Q, self.T)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    gap: float
    functional: float | None
    damping: float
    inner: dict

    def to_dict(self):
        return {"iteration": self.iteration, "w2_gap": self.gap, "functional": self.functional,
                "damping": self.damping, "inner": self.inner}


@dataclass(frozen=True, eq=False)
class FixedPointTrace:
    records: list
    converged: bool
    final: DiscreteMeasure
    self_consistency: float | None
    solution: TwoStepSolution | None = None
    potential: ScalarField | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"converged": self.converged, "iterations": len(self.records),
                "self_consistency_w2": self.self_consistency,
                "records": [r.to_dict() for r in self.records], **self.meta}


def _inner(problem: MeanFieldProblem, Q, iteration, check, diagnostics=False):
    try:
        return solve(problem.problem(Q), solver=problem.solver, check_convexity=check,
                     diagnostics=diagnostics)
    except TwostepError as exc:
        raise SolverStageError(f"inner solve failed at iteration {iteration}: {exc}",
                               iteration, exc) from exc


def _functional(problem: MeanFieldProblem, rho, affordable):
    if not affordable:
        return None
    base = TwoStepProblem(problem.source, problem.target, Polynomial.zero(rho.dim), problem.T)
    return problem3_functional(rho, base, kernel=problem.kernel)


def fixed_point_solve(problem: MeanFieldProblem) -> FixedPointTrace:
    """Damped Picard iteration for the intermediate measure.

    Starts from the intermediate measure of the ``Q = 0`` solve.  Stops when
    the W2 distance between successive iterates is at most ``tol``; the
    final self-consistency residual ``W2(rho_bar, intermediate(kappa *
    rho_bar))`` is always reported.
    """
    mu = problem.source
    if problem.check_convexity:
        lo = np.minimum(*(m.bounds()[0] for m in (mu, problem.target)))
        hi = np.maximum(*(m.bounds()[1] for m in (mu, problem.target)))
        span = np.maximum(hi - lo, 1e-3)
        h1 = check_H1(problem.kernel, (-span, span), samples=64)
        if h1.margin < -1e-12:
            raise ConvexityError(f"kernel is not convex (eigenvalue {h1.margin:.3e})",
                                 h1.witness.get("z"), h1.margin)
    affordable = problem.source.dim == 1 or problem.source.n * problem.target.n <= 250_000
    start = _inner(problem, Polynomial.zero(mu.dim), 0, problem.check_convexity)
    Z = start.kick.copy()
    w = mu.weights
    lam = problem.damping
    records = []
    gaps = []
    converged = False
    sol = start
    for it in range(1, problem.max_iter + 1):
        rho = DiscreteMeasure(Z, w)
        Q = convolve_potential(problem.kernel, rho)
        sol = _inner(problem, Q, it, problem.check_convexity)
        Znew = (1.0 - lam) * Z + lam * sol.kick
        gap = w2_distance(rho, DiscreteMeasure(Znew, w))
        records.append(IterationRecord(it, gap, _functional(problem, DiscreteMeasure(Znew, w),
                                                             affordable), lam,
                                       {"objective": sol.plan.objective,
                                        "split_rows": len(sol.split_rows)}))
        Z = Znew
        gaps.append(gap)
        if gap <= problem.tol:
            converged = True
            break
        if len(gaps) >= 3 and gaps[-1] > gaps[-2] > gaps[-3]:
            lam *= 0.5
            log.info("damping halved to %g at iteration %d", lam, it)
    final = DiscreteMeasure(Z, w)
    Q = convolve_potential(problem.kernel, final)
    check = _inner(problem, Q, len(records) + 1, problem.check_convexity, True)
    resid = w2_distance(final, check.intermediate)
    return FixedPointTrace(records, converged, final, resid, check, Q,
                           {"damping_final": lam, "kernel": repr(problem.kernel)})


# ------------------------------------------------------------ screening


def kernel_condition_screen(kernel: ScalarField, region, T: float = 1.0, samples: int = 64,
                            seed: int = 0) -> list:
    """Convexity of ``kappa`` and the fourth-order condition with the
    contraction ``(D^2 kappa + (2/T) I)^-1``."""
    conv = check_H1(kernel, region, samples=samples, seed=seed)
    conv = ConditionReport("convexity", bool(conv.margin >= -1e-12), conv.margin, conv.witness,
                           conv.samples)
    try:
        h2c = check_H2c(kernel, region, samples=samples, seed=seed, contraction_shift=2.0 / T)
    except TwostepError as exc:
        h2c = ConditionReport("H2c", False, None, {}, 0, {"error": str(exc)})
    return [conv, h2c]
