"""Command-line front end.

Subcommands: ``solve``, ``check``, ``check-domains``, ``meanfield``, ``w2``
and ``legendre``.  Every run writes ``config.resolved.json`` next to its
outputs; replaying it with ``--config`` reproduces the run.  Exit codes:
0 success, 2 invalid input, 3 solver or condition failure, 4 I/O failure.
On failure the outputs of the run are removed and ``error.json`` is written.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import schemas
from .catalog import get_kernel, get_potential
from .conditions import (check_H1, check_H2, check_H2c, meanfield_domain_conditions, q_convexity,
                         region_points)
from .errors import TwostepError, ValidationError
from .legendre import legendre_transform
from .measures import Domain, fmt, load_measure, parse_domain, wasserstein2
from .meanfield import MeanFieldProblem, fixed_point_solve
from .parallel import set_threads
from .solver import TwoStepProblem, minkowski_box, solve

log = logging.getLogger("twostep")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
SUBCOMMANDS = ("solve", "check", "check-domains", "meanfield", "w2", "legendre")
KNOWN_CONDITIONS = ("H1", "H2", "H2w", "H2c")


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.  Unused fields stay ``None``."""

    subcommand: str
    source: str | None = None
    target: str | None = None
    potential: str | None = None
    kernel: str | None = None
    dim: int | None = None
    T: float = 1.0
    solver: str = "exact"
    eps: float | None = None
    map_mode: str = "auto"
    ma_cells: int | None = None
    damping: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200
    box: str | None = None
    conditions: list = field(default_factory=lambda: ["H1", "H2w", "H2c"])
    samples: int = 64
    pairs: int = 64
    seed: int = 0
    omega0: str | None = None
    omegaT: str | None = None
    mass: float = 1.0
    points: str | None = None
    resolution: int = 101
    method: str = "auto"
    out: str | None = None
    threads: int | None = None

    def to_dict(self, include_threads: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not include_threads:
            d.pop("threads")
        return d

    def to_json(self, include_threads: bool = True) -> str:
        return dumps(self.to_dict(include_threads))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}", sorted(unknown)[0])
        if data.get("subcommand") not in SUBCOMMANDS:
            raise ValidationError(f"unknown subcommand {data.get('subcommand')!r}",
                                  data.get("subcommand"))
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc

    def validate(self):
        if not (isinstance(self.T, (int, float)) and self.T > 0 and math.isfinite(self.T)):
            raise ValidationError(f"T must be positive, got {self.T!r}", "T")
        if self.solver not in ("exact", "entropic"):
            raise ValidationError(f"unknown solver {self.solver!r}", self.solver)
        for key in ("source", "target"):
            src = getattr(self, key)
            if src and not src.startswith("gen:") and not Path(src).is_file():
                raise ValidationError(f"{key} file {src!r} does not exist", src)
        bad = [c for c in self.conditions if c not in KNOWN_CONDITIONS]
        if bad:
            raise ValidationError(f"unknown condition {bad[0]!r}", bad[0])
        return self


# ------------------------------------------------------------ emission


def clean(obj):
    """JSON-ready copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=2) + "\n"


class Emitter:
    """Tracks files written by a run so that a failed run can remove them."""

    def __init__(self, out_dir: Path):
        self.dir = Path(out_dir)
        self.written = []

    def path(self, name) -> Path:
        return self.dir / name

    def _open(self, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.path(name)
        self.written.append(p)
        return open(p, "w", newline="")

    def json(self, name, obj):
        with self._open(name) as fh:
            fh.write(dumps(obj))

    def csv(self, name, header, rows):
        with self._open(name) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([v if isinstance(v, (str, int, np.integer)) else fmt(v) for v in r])

    def rollback(self):
        for p in self.written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        self.written = []


def emit_measure(em: Emitter, name, mu):
    em.csv(name, [f"x{k + 1}" for k in range(mu.dim)] + ["w"],
           [list(p) + [w] for p, w in zip(mu.points, mu.weights)])


def emit_solution(em: Emitter, sol):
    d = sol.problem.dim
    xs = [f"x{k + 1}" for k in range(d)]
    plan = sol.plan
    em.csv("plan.csv", ["i", "j", "mass"],
           [(int(i), int(j), q) for i, j, q in zip(plan.rows, plan.cols, plan.mass) if q > 0])
    em.csv("phi.csv", xs + ["phi"] + [f"dphi{k + 1}" for k in range(d)],
           [list(x) + [p] + list(g) for x, p, g in zip(sol.source.points, sol.phi, sol.grad_phi)])
    emit_measure(em, "intermediate.csv", sol.intermediate)
    split = set(sol.split_rows)
    em.csv("map.csv", xs + [f"m{k + 1}" for k in range(d)] + ["split"],
           [list(x) + list(m) + [int(i in split)]
            for i, (x, m) in enumerate(zip(sol.source.points, sol.map_points))])
    em.json("diagnostics.json", sol.diagnostics)


# ------------------------------------------------------------ runners


def _measures(cfg):
    if not cfg.source or not cfg.target:
        raise ValidationError("--source and --target are required", "source")
    return load_measure(cfg.source), load_measure(cfg.target)


def run_solve(cfg: RunConfig, em: Emitter):
    mu, nu = _measures(cfg)
    entry = get_potential(cfg.potential or "zero", mu.dim)
    problem = TwoStepProblem.from_entry(mu, nu, entry, cfg.T)
    sol = solve(problem, solver=cfg.solver, eps=cfg.eps, map_mode=cfg.map_mode,
                ma_cells=cfg.ma_cells)
    emit_solution(em, sol)
    em.json("schema.json", schemas.solve_schema(mu.dim))


def _check_region(cfg, entry):
    if cfg.box:
        return parse_domain(cfg.box, entry.dim)
    if cfg.source and cfg.target:
        mu, nu = _measures(cfg)
        problem = TwoStepProblem.from_entry(mu, nu, entry, cfg.T)
        lo, hi, _ = minkowski_box(problem)
        return Domain.box(lo, hi)
    return Domain.ball(np.zeros(entry.dim), 1.0)


def run_check(cfg: RunConfig, em: Emitter):
    entry = get_potential(cfg.potential or "quadratic", cfg.dim)
    Qt = entry.modified(cfg.T)
    region = _check_region(cfg, entry)
    reports = []
    for cond in cfg.conditions:
        if cond == "H1":
            reports.append(check_H1(Qt, region, samples=max(cfg.samples, 1), seed=cfg.seed))
        elif cond in ("H2", "H2w"):
            reports.append(check_H2(Qt, region, cfg.samples, cond, cfg.pairs, cfg.seed))
        else:
            reports.append(check_H2c(Qt, region, cfg.samples, cfg.pairs, cfg.seed))
    em.json(_report_name(cfg), {"potential": entry.name, "T": cfg.T,
                                "region": {"kind": region.kind, "lo": region.lo, "hi": region.hi},
                                "reports": [r.to_dict() for r in reports]})
    em.json("schema.json", schemas.report_schema())


def _report_name(cfg):
    return Path(cfg.out).name if cfg.out and cfg.out.endswith(".json") else "report.json"


def run_check_domains(cfg: RunConfig, em: Emitter):
    if not cfg.omega0 or not cfg.omegaT:
        raise ValidationError("--omega0 and --omegaT are required", "omega0")
    dim = cfg.dim
    if dim is None:
        # a domain given without a centre takes the dimension of the other one
        dim = max(parse_domain(cfg.omega0).dim, parse_domain(cfg.omegaT).dim)
    om0 = parse_domain(cfg.omega0, dim)
    omT = parse_domain(cfg.omegaT, dim)
    if om0.dim != omT.dim:
        raise ValidationError("domains have different dimensions", cfg.omegaT)
    d = om0.dim
    entry = get_potential(cfg.potential or "zero", d)
    dual = entry.modified_dual(cfg.T)
    if dual is None:
        from .legendre import smooth_dual
        dual = smooth_dual(entry.modified(cfg.T))
    ys_T = np.vstack([omT.boundary, omT.sample_interior(cfg.samples, cfg.seed)])
    ys_0 = np.vstack([om0.boundary, om0.sample_interior(cfg.samples, cfg.seed)])
    reports = [q_convexity(om0, ys_T, dual), q_convexity(om0, ys_T, dual, uniform=True)]
    swapped = [q_convexity(omT, ys_0, dual), q_convexity(omT, ys_0, dual, uniform=True)]
    out = {"potential": entry.name, "T": cfg.T, "omega0": cfg.omega0, "omegaT": cfg.omegaT,
           "reports": [r.to_dict() for r in reports],
           "swapped": [r.to_dict() for r in swapped]}
    if cfg.kernel:
        kappa = get_kernel(cfg.kernel, d)
        if cfg.box:
            region = parse_domain(cfg.box, d)
        else:
            # midpoint box: the intermediate support of the interaction-free problem
            lo = 0.5 * (om0.lo + omT.lo)
            hi = 0.5 * (om0.hi + omT.hi)
            region = Domain.box(lo, hi)
        cx = meanfield_domain_conditions(om0, omT, kappa, cfg.T, cfg.mass, region,
                                         samples=min(cfg.samples, 16), seed=cfg.seed)
        out["meanfield"] = [r.to_dict() for r in cx]
    em.json(_report_name(cfg), out)
    em.json("schema.json", schemas.report_schema())


def run_meanfield(cfg: RunConfig, em: Emitter):
    mu, nu = _measures(cfg)
    kappa = get_kernel(cfg.kernel or "quadratic", mu.dim)
    trace = fixed_point_solve(MeanFieldProblem(mu, nu, kappa, cfg.T, cfg.damping, cfg.tol,
                                               cfg.max_iter, cfg.solver))
    em.json("trace.json", trace.to_dict())
    emit_measure(em, "intermediate_final.csv", trace.final)
    emit_solution(em, trace.solution)
    em.json("schema.json", schemas.solve_schema(mu.dim, meanfield=True))


def run_w2(cfg: RunConfig, em: Emitter):
    mu, nu = _measures(cfg)
    w2sq = wasserstein2(mu, nu)
    name = _report_name(cfg) if cfg.out and cfg.out.endswith(".json") else "w2.json"
    em.json(name, {"w2_squared": w2sq, "w2": math.sqrt(w2sq), "convention": "1/2 |x - y|^2"})


def run_legendre(cfg: RunConfig, em: Emitter):
    entry = get_potential(cfg.potential or "quadratic", cfg.dim)
    F = entry.modified(cfg.T)
    if entry.level == "modified" and entry.dual is not None:
        dual = entry.dual
        method = "closed"
    else:
        if cfg.box:
            dom = parse_domain(cfg.box, entry.dim)
            lo, hi = dom.lo, dom.hi
        else:
            lo, hi = -np.ones(entry.dim), np.ones(entry.dim)
        dual = legendre_transform(F, lo, hi, cfg.resolution, cfg.method)
        method = type(dual).__name__
    if cfg.points:
        P = load_measure(cfg.points).points
    else:
        P = region_points((-np.ones(entry.dim), np.ones(entry.dim)), cfg.samples, cfg.seed)
    vals = np.asarray(dual.value(P), dtype=float)
    grads = np.asarray(dual.grad(P), dtype=float).reshape(len(P), entry.dim)
    d = entry.dim
    em.csv("legendre.csv", [f"p{k + 1}" for k in range(d)] + ["value"] +
           [f"grad{k + 1}" for k in range(d)],
           [list(p) + [v] + list(g) for p, v, g in zip(P, vals, grads)])
    em.json("legendre.json", {"potential": entry.name, "method": method, "T": cfg.T,
                              "points": len(P)})


RUNNERS = {"solve": run_solve, "check": run_check, "check-domains": run_check_domains,
           "meanfield": run_meanfield, "w2": run_w2, "legendre": run_legendre}


# ------------------------------------------------------------ argument parsing


def _add_common(p, measures=False, potential=False):
    p.add_argument("--config", help="RunConfig JSON; explicit flags override it")
    p.add_argument("--out", help="output directory (or .json file for reports)")
    p.add_argument("--threads", type=int, help="worker threads (env TWOSTEP_THREADS)")
    p.add_argument("--seed", type=int)
    p.add_argument("--T", type=float, help="horizon (default 1)")
    if measures:
        p.add_argument("--source", help="CSV file (x1..xd,w) or gen:<name>:k=v;...")
        p.add_argument("--target")
    if potential:
        p.add_argument("--potential", help="catalog name, e.g. quadratic, ex61-Q, coulomb:3")
        p.add_argument("--dim", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twostep", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("solve", help="solve the two-step transport problem")
    _add_common(p, measures=True, potential=True)
    p.add_argument("--solver", choices=["exact", "entropic"])
    p.add_argument("--eps", type=float)
    p.add_argument("--map-mode", dest="map_mode", choices=["auto", "dominant", "barycentric"])
    p.add_argument("--ma-cells", dest="ma_cells", type=int)

    p = sub.add_parser("check", help="check structure conditions of a potential")
    _add_common(p, measures=True, potential=True)
    p.add_argument("--box", help="ball:r[@c] or box:lo:hi (default: a priori box or unit ball)")
    p.add_argument("--conditions", help="comma list of H1,H2,H2w,H2c")
    p.add_argument("--samples", type=int)
    p.add_argument("--pairs", type=int, help="random direction pairs per point")

    p = sub.add_parser("check-domains", help="q-convexity and mean-field domain conditions")
    _add_common(p, potential=True)
    p.add_argument("--omega0")
    p.add_argument("--omegaT")
    p.add_argument("--kernel")
    p.add_argument("--mass", type=float)
    p.add_argument("--box")
    p.add_argument("--samples", type=int)

    p = sub.add_parser("meanfield", help="damped fixed point of the self-interacting problem")
    _add_common(p, measures=True)
    p.add_argument("--kernel")
    p.add_argument("--damping", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--solver", choices=["exact", "entropic"])

    p = sub.add_parser("w2", help="W2 distance (1/2 |x-y|^2 convention)")
    _add_common(p, measures=True)

    p = sub.add_parser("legendre", help="Legendre dual of a (modified) potential")
    _add_common(p, potential=True)
    p.add_argument("--box")
    p.add_argument("--points")
    p.add_argument("--resolution", type=int)
    p.add_argument("--method", choices=["auto", "closed", "newton", "discrete"])
    p.add_argument("--samples", type=int)
    return ap


def resolve_config(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = RunConfig.from_json(fh.read()).to_dict()
        if base["subcommand"] != args.subcommand:
            raise ValidationError(f"config is for {base['subcommand']!r}, not {args.subcommand!r}",
                                  base["subcommand"])
    base["subcommand"] = args.subcommand
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for key, val in vars(args).items():
        if key in names and val is not None:
            base[key] = val
    if isinstance(base.get("conditions"), str):
        base["conditions"] = [c.strip() for c in base["conditions"].split(",") if c.strip()]
    if base.get("threads") is None and os.environ.get("TWOSTEP_THREADS"):
        base["threads"] = int(os.environ["TWOSTEP_THREADS"])
    return RunConfig.from_dict(base).validate()


def _out_dir(cfg: RunConfig) -> Path:
    if cfg.out is None:
        return Path(".")
    p = Path(cfg.out)
    return p.parent if p.suffix == ".json" else p


def _error_payload(exc, code):
    details = exc.details() if isinstance(exc, TwostepError) else {}
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code,
            "details": details}


def run(cfg: RunConfig) -> int:
    """Execute a validated config; returns the exit code."""
    set_threads(cfg.threads)
    em = Emitter(_out_dir(cfg))
    try:
        RUNNERS[cfg.subcommand](cfg, em)
        em.json("config.resolved.json", cfg.to_dict(include_threads=False))
        return EXIT_OK
    except ValidationError as exc:
        code = EXIT_INVALID
        err = exc
    except TwostepError as exc:
        code = EXIT_SOLVER
        err = exc
    except OSError as exc:
        code = EXIT_IO
        err = exc
    em.rollback()
    log.error("%s: %s", type(err).__name__, err)
    try:
        em.json("error.json", _error_payload(err, code))
    except OSError:
        pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ValidationError as exc:
        log.error("%s", exc)
        out = getattr(args, "out", None)
        if out:
            em = Emitter(Path(out).parent if out.endswith(".json") else Path(out))
            try:
                em.json("error.json", _error_payload(exc, EXIT_INVALID))
            except OSError:
                pass
        return EXIT_INVALID
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
