"""JSON schemas of the emitted files, written as ``schema.json`` by the CLI."""

from __future__ import annotations

_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}
_VEC = {"type": "array", "items": _NUM}

CONDITION_REPORT = {
    "type": "object",
    "required": ["condition", "verdict", "margin", "witness", "samples"],
    "properties": {
        "condition": {"enum": ["H0", "H1", "H2", "H2w", "H2c", "q-convex", "uniform-q-convex",
                               "cx1", "cx2", "convexity"]},
        "verdict": {"enum": ["pass", "fail"]},
        "margin": _NUM_OR_NULL,
        "witness": {"type": "object", "additionalProperties": _VEC},
        "samples": {"type": "integer", "minimum": 0},
        "extras": {"type": "object"},
    },
}

MA_RESIDUAL = {
    "type": ["object", "null"],
    "required": ["cells_evaluated", "cells_skipped", "boundary_cells", "max_abs", "l1"],
    "properties": {
        "cells_evaluated": {"type": "integer"},
        "cells_skipped": {"type": "integer"},
        "boundary_cells": {"type": "integer"},
        "max_abs": _NUM_OR_NULL,
        "l1": _NUM_OR_NULL,
    },
}

DIAGNOSTICS = {
    "type": "object",
    "required": ["solver", "objective", "split_rows", "stationarity_max", "c1_bound",
                 "pushforward", "action", "ma_residual"],
    "properties": {
        "solver": {"type": "object", "required": ["solver", "iterations", "tolerance"]},
        "objective": _NUM,
        "split_rows": {"type": "integer", "minimum": 0},
        "stationarity_max": _NUM,
        "c1_bound": {
            "type": "object",
            "required": ["bound", "max_grad_phi_tilde", "satisfied", "box_lo", "box_hi"],
            "properties": {"bound": _NUM, "max_grad_phi_tilde": _NUM,
                           "satisfied": {"type": "boolean"}, "box_lo": _VEC, "box_hi": _VEC},
        },
        "pushforward": {
            "type": "object",
            "required": ["w2", "w2_plan_bound"],
            "properties": {"w2": _NUM_OR_NULL, "w2_plan_bound": _NUM},
        },
        "action": _NUM,
        "K_intermediate": _NUM_OR_NULL,
        "ma_residual": MA_RESIDUAL,
    },
}

TRACE = {
    "type": "object",
    "required": ["converged", "iterations", "self_consistency_w2", "records"],
    "properties": {
        "converged": {"type": "boolean"},
        "iterations": {"type": "integer"},
        "self_consistency_w2": _NUM_OR_NULL,
        "records": {"type": "array", "items": {
            "type": "object",
            "required": ["iteration", "w2_gap", "functional", "damping"],
            "properties": {"iteration": {"type": "integer"}, "w2_gap": _NUM,
                           "functional": _NUM_OR_NULL, "damping": _NUM}}},
    },
}


def _columns(d, names):
    return [f"x{k + 1}" for k in range(d)] + names


def solve_schema(d: int, meanfield: bool = False) -> dict:
    csvs = {
        "plan.csv": {"columns": ["i", "j", "mass"],
                     "description": "nonzero coupling entries (source index, target index, mass)"},
        "phi.csv": {"columns": _columns(d, ["phi"] + [f"dphi{k + 1}" for k in range(d)]),
                    "description": "velocity potential and its gradient (initial velocity) "
                                   "at source points; phi is zero at the first source point"},
        "intermediate.csv": {"columns": _columns(d, ["w"]),
                             "description": "intermediate measure at time T/2"},
        "map.csv": {"columns": _columns(d, [f"m{k + 1}" for k in range(d)] + ["split"]),
                    "description": "full map at source points; split=1 marks rows whose mass "
                                   "is divided between targets (barycentric values)"},
    }
    out = {"csv": csvs, "json": {"diagnostics.json": DIAGNOSTICS}}
    if meanfield:
        csvs["intermediate_final.csv"] = {"columns": _columns(d, ["w"]),
                                          "description": "final fixed-point intermediate measure"}
        out["json"]["trace.json"] = TRACE
    return out


def report_schema() -> dict:
    return {"json": {"report": {
        "type": "object",
        "required": ["reports"],
        "properties": {"reports": {"type": "array", "items": CONDITION_REPORT},
                       "swapped": {"type": "array", "items": CONDITION_REPORT},
                       "meanfield": {"type": "array", "items": CONDITION_REPORT}},
    }}}
