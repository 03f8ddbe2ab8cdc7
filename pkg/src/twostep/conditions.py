"""Numerical checks of the structure conditions on the modified potential.

Sign conventions
----------------
For a modified potential ``Q~`` with Hessian ``H`` and ``A = H^-1`` three
fourth-order quantities are evaluated at ``(z, xi, eta)``:

``value_primal``
    ``(Q~_ijrs - 2 Q~^pq Q~_ijp Q~_qrs) Q~^rk Q~^sl xi_k xi_l eta_i eta_j``,
    index pairing exactly as written in the defining inequality.  The
    conditions (H2)/(H2w) ask for this to be ``<= -delta0`` / ``<= 0``.
``value_A``
    ``D^2_{eta eta} A_{xi xi}``, computed by differentiating ``A = H^-1``
    twice: ``D_k A = -A (D_k H) A`` and
    ``D^2_kl A = -A (D^2_kl H) A + A D_k H A D_l H A + A D_l H A D_k H A``.
``value_dual``
    the classical cost-curvature form on the dual ``G = Q~*`` at
    ``p = grad Q~(z)``,
    ``(G_ijrs - G^pq G_ijp G_qrs) G^rk G^sl eta_k eta_l xi_i xi_j``.
    With ``eta`` in the contracted slots this equals ``D^2_{eta eta} A_{xi xi}``.

``-value_primal``, ``value_dual`` and ``value_A`` coincide whenever the
third derivatives of ``Q~`` vanish.  With nonzero third derivatives the
literal pairing of the primal form pairs ``(eta, eta)`` and ``(xi, xi)``
through ``Q~^pq`` where the derivative of ``A`` pairs ``(eta, xi)`` with
``(eta, xi)``; the two then differ and :attr:`MtwEvaluation.agreement`
reports the gap.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConditionFailure, ConditioningError, SingularityError, ValidationError
from .legendre import LegendreDual, smooth_dual
from .measures import Domain
from .parallel import ordered_map
from .potentials import ScalarField

COND_MAX = 1e8
TOL_FACTOR = 1e-7


def _f(x):
    return None if x is None else float(x)


def _vec(x):
    return None if x is None else [float(t) for t in np.ravel(x)]


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    verdict: bool
    margin: float | None
    witness: dict
    samples: int
    extras: dict = field(default_factory=dict)

    @property
    def verdict_str(self) -> str:
        return "pass" if self.verdict else "fail"

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "verdict": self.verdict_str,
            "margin": _f(self.margin),
            "witness": {k: (_vec(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                        for k, v in self.witness.items()},
            "samples": int(self.samples),
            **({"extras": self.extras} if self.extras else {}),
        }


@dataclass(frozen=True)
class MtwEvaluation:
    z: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    value_primal: float
    value_dual: float
    value_A: float
    agreement: float
    raw_bracket: float
    scale: float

    def routes(self):
        """The three values on the common sign convention (``D^2 A``)."""
        return -self.value_primal, self.value_dual, self.value_A


# ------------------------------------------------------------ tensor kernels


@dataclass(frozen=True, eq=False)
class PointTensors:
    """Derivatives of a field at one point plus the inverse Hessian."""

    z: np.ndarray
    H: np.ndarray
    A: np.ndarray
    T3: np.ndarray
    T4: np.ndarray
    eigenvalues: np.ndarray

    @property
    def scale(self) -> float:
        """Size of the fourth-order terms at unit directions."""
        a = float(np.max(np.abs(self.A)))
        t4 = float(np.max(np.abs(self.T4)))
        t3 = float(np.max(np.abs(self.T3)))
        d = self.z.shape[0]
        return d ** 4 * a * a * (t4 + d * t3 * t3 * a)


def point_tensors(field: ScalarField, z, shift: float = 0.0, cond_max: float = COND_MAX,
                  check: bool = True) -> PointTensors:
    z = np.asarray(z, dtype=float).reshape(-1)
    H = np.asarray(field.hess(z), dtype=float) + shift * np.eye(z.shape[0])
    eig = np.linalg.eigvalsh(H)
    big = float(np.max(np.abs(eig)))
    small = float(np.min(np.abs(eig)))
    if check and (small == 0 or big / small > cond_max or not np.all(np.isfinite(eig))):
        raise ConditioningError(
            f"Hessian at {z.tolist()} is singular or ill-conditioned (eigenvalues {eig.tolist()})",
            eig, z)
    A = np.linalg.inv(H)
    return PointTensors(z, H, A, np.asarray(field.third(z), dtype=float),
                        np.asarray(field.fourth(z), dtype=float), eig)


def primal_value(t: PointTensors, xi, eta) -> float:
    """Primal (H2) form with the literal index pairing."""
    xt = t.A @ xi
    quart = np.einsum("ijrs,i,j,r,s->", t.T4, eta, eta, xt, xt)
    left = np.einsum("ijp,i,j->p", t.T3, eta, eta)
    right = np.einsum("qrs,r,s->q", t.T3, xt, xt)
    return float(quart - 2.0 * left @ t.A @ right)


def raw_bracket(t: PointTensors, xi, eta) -> float:
    """Primal bracket without any inverse-Hessian factors."""
    quart = np.einsum("ijrs,i,j,r,s->", t.T4, eta, eta, xi, xi)
    left = np.einsum("ijp,i,j->p", t.T3, eta, eta)
    right = np.einsum("qrs,r,s->q", t.T3, xi, xi)
    return float(quart - 2.0 * left @ right)


def a_route_value(t: PointTensors, xi, eta) -> float:
    """``D^2_{eta eta} A_{xi xi}`` via the derivatives of the inverse matrix."""
    A = t.A
    dH = np.einsum("ijk,k->ij", t.T3, eta)
    d2H = np.einsum("ijkl,k,l->ij", t.T4, eta, eta)
    d2A = -A @ d2H @ A + 2.0 * (A @ dH @ A @ dH @ A)
    return float(xi @ d2A @ xi)


def h2c_value(t: PointTensors, xi, eta) -> float:
    xt = t.A @ xi
    return float(np.einsum("ijrs,i,j,r,s->", t.T4, eta, eta, xt, xt))


def h2cc_value(t: PointTensors, xi, eta) -> float:
    return float(np.einsum("ijrs,i,j,r,s->", t.T4, eta, eta, xi, xi))


def classical_mtw(G2, G3, G4, xi, eta) -> float:
    """Cost-curvature form of a function ``G`` of ``x + y``:
    ``(G_ijrs - G^pq G_ijp G_qrs) G^rk G^sl eta_k eta_l xi_i xi_j``."""
    Gi = np.linalg.inv(G2)
    et = Gi @ eta
    quart = np.einsum("ijrs,i,j,r,s->", G4, xi, xi, et, et)
    left = np.einsum("ijp,i,j->p", G3, xi, xi)
    right = np.einsum("qrs,r,s->q", G3, et, et)
    return float(quart - left @ Gi @ right)


def _dual_tensors(dual: ScalarField, Qt: ScalarField, z, p):
    if isinstance(dual, LegendreDual) and dual.field is Qt:
        return tuple(dual.derivative_with_guess(p, k, z) for k in (2, 3, 4))
    return tuple(np.asarray(dual.derivative(p, k), dtype=float) for k in (2, 3, 4))


def _agreement(values, scale):
    floor = 1e-12 * scale
    worst = 0.0
    for a, b in itertools.combinations(values, 2):
        den = max(abs(a), abs(b), floor)
        if den > 0:
            worst = max(worst, abs(a - b) / den)
    return worst


def mtw_tensor(Qt: ScalarField, z, xi, eta, dual: ScalarField | None = None) -> MtwEvaluation:
    """Evaluate the primal, dual and A-route forms at one ``(z, xi, eta)``.

    ``dual`` defaults to the closed-form dual of ``Qt`` if known, else the
    smooth Legendre dual obtained by gradient inversion.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1)
    eta = np.asarray(eta, dtype=float).reshape(-1)
    t = point_tensors(Qt, z)
    if dual is None:
        dual = smooth_dual(Qt)
    p = np.asarray(Qt.grad(t.z), dtype=float)
    G2, G3, G4 = _dual_tensors(dual, Qt, t.z, p)
    vp = primal_value(t, xi, eta)
    va = a_route_value(t, xi, eta)
    vd = classical_mtw(G2, G3, G4, xi, eta)
    scale = t.scale
    return MtwEvaluation(t.z, xi, eta, vp, vd, va, _agreement((-vp, vd, va), scale),
                         raw_bracket(t, xi, eta), scale)


# ------------------------------------------------------------ sampling


def candidate_directions(d: int) -> np.ndarray:
    """Axes, then normalised pairwise sums/differences, then sign diagonals."""
    vecs = [np.eye(d)[i] for i in range(d)]
    for i, j in itertools.combinations(range(d), 2):
        for s in (1.0, -1.0):
            v = np.zeros(d)
            v[i], v[j] = 1.0, s
            vecs.append(v / math.sqrt(2))
    if d >= 3:
        for signs in itertools.product((1.0, -1.0), repeat=d - 1):
            vecs.append(np.array((1.0,) + signs) / math.sqrt(d))
    return np.array(vecs)


def direction_pairs(d: int, orthogonal: bool = True, n_deterministic: int = 26,
                    n_random: int = 64, seed: int = 0):
    """Deterministic axis/diagonal pairs followed by seeded random pairs.

    Orthogonal mode draws orthonormal pairs (random rotations of ``e1, e2``);
    otherwise independent unit vectors.  Returns ``(xi, eta)`` arrays.
    """
    cand = candidate_directions(d)
    det = []
    for a, b in itertools.product(range(len(cand)), repeat=2):
        u, v = cand[a], cand[b]
        if orthogonal and (a == b or abs(u @ v) > 1e-12):
            continue
        det.append((u, v))
        if len(det) == n_deterministic:
            break
    rng = np.random.default_rng(seed)
    rand = []
    for _ in range(n_random if (d >= 2 or not orthogonal) else 0):
        if orthogonal:
            q, r = np.linalg.qr(rng.standard_normal((d, d)))
            q = q * np.sign(np.diag(r))
            rand.append((q[:, 0], q[:, 1]))
        else:
            u = rng.standard_normal(d)
            v = rng.standard_normal(d)
            rand.append((u / np.linalg.norm(u), v / np.linalg.norm(v)))
    pairs = det + rand
    if not pairs:
        return np.zeros((0, d)), np.zeros((0, d))
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def region_points(region, n: int = 64, seed: int = 0) -> np.ndarray:
    """Sample points of a region: its centre, half-way axis points, then seeded interior points.

    ``region`` is a :class:`Domain`, a ``(lo, hi)`` box, or an explicit
    ``(k, d)`` point array (returned unchanged).
    """
    if isinstance(region, np.ndarray):
        return region
    if not isinstance(region, Domain):
        lo, hi = (np.atleast_1d(np.asarray(t, dtype=float)) for t in region)
        region = Domain.box(lo, hi, n_per_face=1)
    c = region.center
    half = 0.5 * (region.hi - region.lo)
    pts = [c]
    for i in range(region.dim):
        for s in (-0.5, 0.5):
            q = c.copy()
            q[i] += s * half[i]
            pts.append(q)
    pts = np.array(pts)
    pts = pts[region.contains(pts) | np.all(pts == c, axis=1)]
    extra = max(0, n - len(pts))
    if extra:
        pts = np.vstack([pts, region.sample_interior(extra, seed)])
    return pts[:max(n, 1)]


def _tol(scale: float) -> float:
    return TOL_FACTOR * scale


# ------------------------------------------------------------ scans


def check_H1(Qt: ScalarField, region, samples: int = 200, seed: int = 0) -> ConditionReport:
    """Smallest Hessian eigenvalue over sampled points; pass iff positive."""
    pts = region_points(region, samples, seed)
    eig = ordered_map(lambda z: float(np.linalg.eigvalsh(np.asarray(Qt.hess(z)))[0]), list(pts))
    k = int(np.argmin(eig))
    return ConditionReport("H1", bool(eig[k] > 0), float(eig[k]), {"z": pts[k]}, len(pts))


def _require_h1(Qt, pts, shift=0.0):
    for z in pts:
        ev = np.linalg.eigvalsh(np.asarray(Qt.hess(z)) + shift * np.eye(len(z)))
        if not ev[0] > 0:
            rep = ConditionReport("H1", False, float(ev[0]), {"z": z}, len(pts))
            raise ConditionFailure(f"convexity precondition fails at {np.asarray(z).tolist()}", rep)


def _scan(Qt, pts, xis, etas, value_fn, shift=0.0):
    """Per point: tensors, then each direction pair in order.  Returns
    (values, tolerances) arrays of shape (points, pairs)."""

    def work(z):
        t = point_tensors(Qt, z, shift)
        tol = _tol(t.scale)
        return [value_fn(t, xi, eta) for xi, eta in zip(xis, etas)], tol

    out = ordered_map(work, list(pts))
    vals = np.array([o[0] for o in out]).reshape(len(pts), len(xis))
    tols = np.array([o[1] for o in out])
    return vals, tols


def _worst(vals, tols, pts, xis, etas):
    excess = vals - tols[:, None]
    flat = int(np.argmax(vals))
    i, j = divmod(flat, vals.shape[1])
    return float(vals[i, j]), {"z": pts[i], "xi": xis[j], "eta": etas[j]}, float(excess.max()), tols[i]


def check_H2(Qt: ScalarField, region, samples: int = 64, mode: str = "H2w",
             n_random_pairs: int = 64, seed: int = 0, route: str = "primal") -> ConditionReport:
    """Maximum over sampled points and orthonormal pairs of the (H2) form.

    ``route="primal"`` uses the form with the literal index pairing;
    ``route="A"`` uses ``-D^2_{eta eta} A_{xi xi}`` instead.  H2w passes iff
    every sample is ``<= tol``; H2 iff the maximum is below ``-tol``.
    """
    if mode not in ("H2", "H2w"):
        raise ValidationError(f"mode must be H2 or H2w, not {mode!r}")
    pts = region_points(region, samples, seed)
    _require_h1(Qt, pts)
    xis, etas = direction_pairs(Qt.dim, True, n_random=n_random_pairs, seed=seed)
    if len(xis) == 0:
        return ConditionReport(mode, True, None, {}, 0,
                               {"note": "no orthogonal direction pairs in one dimension"})
    fn = primal_value if route == "primal" else (lambda t, x, e: -a_route_value(t, x, e))
    vals, tols = _scan(Qt, pts, xis, etas, fn)
    margin, witness, excess, tol = _worst(vals, tols, pts, xis, etas)
    verdict = excess <= 0 if mode == "H2w" else margin < -tol
    return ConditionReport(mode, bool(verdict), margin, witness, vals.size,
                           {"route": route, "tolerance": tol})


def check_H2c(Qt: ScalarField, region, samples: int = 64, n_random_pairs: int = 64,
              seed: int = 0, contraction_shift: float = 0.0) -> ConditionReport:
    """Fourth-derivative form contracted with ``(D^2 Q~ + shift I)^-1`` on
    unrestricted unit pairs; pass iff every sample is ``<= tol``.  The
    uncontracted form is reported under ``extras["H2cc_margin"]``."""
    pts = region_points(region, samples, seed)
    _require_h1(Qt, pts, contraction_shift)
    xis, etas = direction_pairs(Qt.dim, False, n_random=n_random_pairs, seed=seed)
    vals, tols = _scan(Qt, pts, xis, etas, h2c_value, contraction_shift)
    margin, witness, excess, tol = _worst(vals, tols, pts, xis, etas)
    raw, _ = _scan(Qt, pts, xis, etas, h2cc_value, contraction_shift)
    k = int(np.argmax(raw))
    i, j = divmod(k, raw.shape[1])
    extras = {"H2cc_margin": float(raw[i, j]),
              "H2cc_verdict": "pass" if bool(np.all(raw <= tols[:, None])) else "fail",
              "tolerance": tol, "contraction_shift": contraction_shift}
    return ConditionReport("H2c", bool(excess <= 0), margin, witness, vals.size, extras)


def reevaluate(report: ConditionReport, Qt: ScalarField, contraction_shift: float = 0.0) -> float:
    """Recompute the value at a report's witness with the scan's own code path."""
    w = report.witness
    z = np.asarray(w["z"], dtype=float)
    if report.condition == "H1":
        return float(np.linalg.eigvalsh(np.asarray(Qt.hess(z)))[0])
    t = point_tensors(Qt, z, contraction_shift)
    xi, eta = np.asarray(w["xi"], dtype=float), np.asarray(w["eta"], dtype=float)
    if report.condition in ("H2", "H2w"):
        if report.extras.get("route", "primal") == "primal":
            return primal_value(t, xi, eta)
        return -a_route_value(t, xi, eta)
    if report.condition == "H2c":
        return h2c_value(t, xi, eta)
    raise ValidationError(f"cannot re-evaluate {report.condition}")


# ------------------------------------------------------------ domains


def _domain_matrices(domain: Domain, x):
    return (np.asarray(domain.grad(x[None, :]), dtype=float)[0],
            np.asarray(domain.hess(x[None, :]), dtype=float)[0])


def q_convexity(domain: Domain, other_points, Qt_star: ScalarField, uniform: bool = False,
                tol: float = 1e-9) -> ConditionReport:
    """Smallest eigenvalue of ``phi_ij(x) - G^kl G_ijk(x + y) phi_l(x)`` with
    ``G = Q~*``, over boundary samples ``x`` of ``domain`` and points ``y``.

    ``uniform=False`` reports q-convexity (pass iff margin >= -tol),
    ``uniform=True`` uniform q-convexity (pass iff margin > tol).  The
    role-swapped check is ``q_convexity(omega_T, omega_0_points, ...)``.
    """
    ys = np.atleast_2d(np.asarray(other_points, dtype=float))
    bnd = domain.boundary

    def work(x):
        g, Hphi = _domain_matrices(domain, x)
        p = x[None, :] + ys
        G2 = np.asarray(Qt_star.hess(p), dtype=float)
        G3 = np.asarray(Qt_star.third(p), dtype=float)
        corr = np.einsum("nijk,nkl,l->nij", G3, np.linalg.inv(G2), g)
        M = Hphi[None] - corr
        eig = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, 1, 2)))[:, 0]
        j = int(np.argmin(eig))
        return float(eig[j]), j

    out = ordered_map(work, list(bnd))
    vals = np.array([o[0] for o in out])
    i = int(np.argmin(vals))
    j = out[i][1]
    margin = float(vals[i])
    verdict = margin > tol if uniform else margin >= -tol
    return ConditionReport("uniform-q-convex" if uniform else "q-convex", bool(verdict), margin,
                           {"x": bnd[i], "y": ys[j]}, len(bnd) * len(ys),
                           {"tolerance": tol})


def meanfield_domain_conditions(omega0: Domain, omegaT: Domain, kappa: ScalarField, T: float,
                                M: float, region, samples: int = 12, seed: int = 0,
                                tol: float = 1e-9):
    """``(b0, b1)`` reports: smallest eigenvalue of
    ``phi_ij(x) + (T M / 8) kappa_ijk(z - w) phi_k(x)`` over boundary ``x`` of
    ``omega0`` (resp. ``omegaT``) and pairs ``z, w`` from ``region``.
    Pass iff the margin is ``>= -tol``; ``extras["uniform"]`` flags ``> tol``."""
    pts = region_points(region, samples, seed)
    pairs = [(a, b) for a in range(len(pts)) for b in range(len(pts))]
    diffs = np.array([pts[a] - pts[b] for a, b in pairs])
    K3 = np.asarray(kappa.third(diffs), dtype=float)
    factor = T * M / 8.0
    reports = []
    for name, dom in (("cx1", omega0), ("cx2", omegaT)):
        bnd = dom.boundary

        def work(x, dom=dom):
            g, Hphi = _domain_matrices(dom, x)
            Mx = Hphi[None] + factor * np.einsum("nijk,k->nij", K3, g)
            eig = np.linalg.eigvalsh(Mx)[:, 0]
            j = int(np.argmin(eig))
            return float(eig[j]), j

        out = ordered_map(work, list(bnd))
        vals = np.array([o[0] for o in out])
        i = int(np.argmin(vals))
        a, b = pairs[out[i][1]]
        margin = float(vals[i])
        reports.append(ConditionReport(
            name, bool(margin >= -tol), margin, {"x": bnd[i], "z": pts[a], "w": pts[b]},
            len(bnd) * len(pairs), {"uniform": bool(margin > tol), "TM": T * M}))
    return tuple(reports)


# ------------------------------------------------------------ Coulomb


def coulomb_mtw_lhs(z, xi, eta, d: int) -> float:
    """Closed-form left-hand side for the Coulomb cost ``K |x + y|^m``.

    ``K (m-2)/(m-1) |z|^(-m/(m-1)) { 1 - m/(m-1) (z.eta)^2/|z|^2
    - m (z.xi)^2/|z|^2 + m(3m-2)/(m-1) (z.xi)^2 (z.eta)^2/|z|^4
    + (m-1)(xi.eta)^2 }`` with ``m = (2-d)/(1-d)``, ``K = (d-1)/(d-2)^m``.
    """
    z = np.asarray(z, dtype=float)
    r = float(np.linalg.norm(z))
    if r == 0:
        raise SingularityError("Coulomb form is singular at z = 0", pair={"z": z.tolist()})
    if d < 3:
        raise ValidationError("Coulomb form needs d >= 3")
    m = (2.0 - d) / (1.0 - d)
    K = (d - 1.0) / (d - 2.0) ** m
    a = float(z @ xi) / r
    b = float(z @ eta) / r
    c = float(np.dot(xi, eta))
    brace = (1 - m / (m - 1) * b * b - m * a * a + m * (3 * m - 2) / (m - 1) * a * a * b * b
             + (m - 1) * c * c)
    return K * (m - 2) / (m - 1) * r ** (-m / (m - 1)) * brace


def cost_mtw(G: ScalarField, p, xi, eta) -> float:
    """Classical cost-curvature form of ``c(x, y) = G(x + y)`` at ``p = x + y``."""
    p = np.asarray(p, dtype=float)
    return classical_mtw(np.asarray(G.hess(p)), np.asarray(G.third(p)), np.asarray(G.fourth(p)),
                         np.asarray(xi, dtype=float), np.asarray(eta, dtype=float))
