"""Probe reports, their verdict rules, and on-disk formats.

A report's verdict is always the output of ``evaluate_rule`` on the report's
own grid (and sub-reports), so a reader can recompute it from the saved file.
"""
import csv
from dataclasses import dataclass, field
import json
import math
import os

import numpy as np

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
TABLE_HEADER = ["T_or_r", "estimate", "stderr", "reps"]


@dataclass
class GridRow:
    x: float
    estimate: float
    stderr: float
    reps: int

    def as_list(self):
        return [float(self.x), float(self.estimate), float(self.stderr), int(self.reps)]


@dataclass
class ProbeReport:
    name: str
    grid: list
    rule: dict
    verdict: str = None
    seed: int = 0
    config_hash: str = ""
    details: dict = field(default_factory=dict)
    subreports: list = field(default_factory=list)

    def __post_init__(self):
        if any(not (r.stderr >= 0 or math.isnan(r.stderr)) for r in self.grid):
            raise ValueError("standard errors must be nonnegative")
        if self.verdict is None:
            self.verdict = evaluate_rule(self)

    def sub(self, name):
        for s in self.subreports:
            if s.name == name:
                return s
        raise KeyError(name)

    def estimates(self):
        return np.array([r.estimate for r in self.grid])

    def to_dict(self):
        return {
            "name": self.name,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "grid": [r.as_list() for r in self.grid],
            "verdict": self.verdict,
            "rule": self.rule,
            "details": _plain(self.details),
            "subreports": [s.to_dict() for s in self.subreports],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d["name"],
            grid=[GridRow(*row) for row in d["grid"]],
            rule=d["rule"],
            verdict=d["verdict"],
            seed=d["seed"],
            config_hash=d["config_hash"],
            details=d.get("details", {}),
            subreports=[cls.from_dict(s) for s in d.get("subreports", [])],
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def write(self, out_dir, stem=None):
        """Write ``<stem>.json`` plus one flat table per (sub)report; returns table paths."""
        stem = stem or self.name
        with open(os.path.join(out_dir, stem + ".json"), "w") as fh:
            fh.write(self.to_json())
        return self.write_tables(out_dir, stem)

    def write_tables(self, out_dir, stem=None):
        stem = stem or self.name
        paths = []
        if self.grid:
            path = os.path.join(out_dir, stem + ".csv")
            write_table(self.grid, path)
            paths.append(path)
        for s in self.subreports:
            paths += s.write_tables(out_dir, f"{stem}.{s.name.replace('/', '_').replace('*', 'x')}")
        return paths


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in rows:
            x, est, se, n = r.as_list()
            w.writerow([repr(x), repr(est), repr(se), n])


def load_report(path):
    with open(path) as fh:
        return ProbeReport.from_dict(json.load(fh))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- rules -------------------------------------------------------------------

def rule_decreasing_below(threshold=None, floor=1e-8):
    text = "estimates strictly decreasing along the schedule"
    if threshold is not None:
        text += f" and final estimate < {threshold}"
    text += f"; a sequence entirely <= {floor} counts as converged"
    return {"kind": "decreasing_below", "threshold": threshold, "floor": floor, "text": text}


def rule_bounded_running_median(factor=1.2):
    return {"kind": "bounded_running_median", "factor": factor,
            "text": f"every estimate <= {factor} x median of the estimates up to and including it"}


def rule_loglog_slope_min(min_slope=0.9):
    return {"kind": "loglog_slope_min", "min_slope": min_slope,
            "text": f"least-squares slope of log estimate vs log x >= {min_slope}; all-zero estimates skip the check (pass)"}


def rule_positive_min():
    return {"kind": "positive_min", "text": "minimum estimate > 0"}


def rule_band_last(target, z=3.0):
    return {"kind": "band_last", "target": target, "z": z,
            "text": f"|final estimate - {target!r}| <= {z} x final stderr"}


def rule_last_below(threshold):
    return {"kind": "last_below", "threshold": threshold, "text": f"final estimate < {threshold}"}


def rule_pld(min_slope=-2.0):
    return {"kind": "pld", "min_slope": min_slope,
            "text": ("estimates nonincreasing in r; least-squares slope of log P vs log r over P > 0 "
                     f"<= {min_slope}; r^2 P <= its value at the smallest r; all-zero P is a vacuous pass; "
                     "fewer than two positive points is inconclusive")}


def rule_all_subreports():
    return {"kind": "all_subreports", "text": "fail if any sub-report fails, else inconclusive if any is, else pass"}


def rule_efficiency(max_boundary_rate=0.2):
    return {"kind": "efficiency", "max_boundary_rate": max_boundary_rate,
            "text": (f"inconclusive if the final boundary-hit rate (sub-report boundary_rate) > {max_boundary_rate}; "
                     "otherwise the verdict of sub-report median")}


def rule_finite_stable(max_rel_change=0.1):
    return {"kind": "finite_stable", "max_rel_change": max_rel_change,
            "text": (f"max estimate of sub-reports reps and doubled finite and relative change <= {max_rel_change}")}


def _decreasing(est, threshold, floor):
    if est.size == 0:
        return INCONCLUSIVE
    if np.all(est <= floor):
        return PASS
    ok = bool(np.all(np.diff(est) < 0))
    if threshold is not None:
        ok = ok and est[-1] < threshold
    return PASS if ok else FAIL


def evaluate_rule(report):
    rule = report.rule
    kind = rule["kind"]
    est = report.estimates()
    if kind == "decreasing_below":
        return _decreasing(est, rule["threshold"], rule["floor"])
    if kind == "bounded_running_median":
        if est.size == 0 or not np.all(np.isfinite(est)):
            return FAIL
        ok = all(est[k] <= rule["factor"] * np.median(est[: k + 1]) for k in range(est.size))
        return PASS if ok else FAIL
    if kind == "loglog_slope_min":
        if np.all(est == 0):
            return PASS
        if np.any(est <= 0) or est.size < 2:
            return FAIL
        x = np.array([r.x for r in report.grid])
        slope = np.polyfit(np.log(x), np.log(est), 1)[0]
        return PASS if slope >= rule["min_slope"] else FAIL
    if kind == "positive_min":
        return PASS if est.size and np.min(est) > 0 else FAIL
    if kind == "band_last":
        last = report.grid[-1]
        return PASS if abs(last.estimate - rule["target"]) <= rule["z"] * last.stderr else FAIL
    if kind == "last_below":
        return PASS if est.size and est[-1] < rule["threshold"] else FAIL
    if kind == "pld":
        return _pld_verdict(report, rule)
    if kind == "all_subreports":
        vs = [s.verdict for s in report.subreports]
        if FAIL in vs:
            return FAIL
        return INCONCLUSIVE if INCONCLUSIVE in vs else PASS
    if kind == "efficiency":
        rate = report.sub("boundary_rate").grid[-1].estimate
        if rate > rule["max_boundary_rate"]:
            return INCONCLUSIVE
        return report.sub("median").verdict
    if kind == "finite_stable":
        c1 = float(np.max(report.sub("reps").estimates()))
        c2 = float(np.max(report.sub("doubled").estimates()))
        if not (math.isfinite(c1) and math.isfinite(c2)):
            return FAIL
        if c1 == c2 == 0:
            return PASS
        return PASS if abs(c2 - c1) <= rule["max_rel_change"] * max(abs(c1), abs(c2)) else FAIL
    raise ValueError(f"unknown rule kind {kind!r}")


def _pld_verdict(report, rule):
    est = report.estimates()
    r = np.array([row.x for row in report.grid])
    if np.all(est == 0):
        return PASS
    if np.any(np.diff(est) > 0):
        return FAIL
    pos = est > 0
    if pos.sum() < 2:
        return INCONCLUSIVE
    slope = np.polyfit(np.log(r[pos]), np.log(est[pos]), 1)[0]
    bounded = np.all(r**2 * est <= r[0] ** 2 * est[0] * (1 + 1e-12))
    return PASS if slope <= rule["min_slope"] and bounded else FAIL


def pld_slope(report):
    est = report.estimates()
    r = np.array([row.x for row in report.grid])
    pos = est > 0
    if pos.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(r[pos]), np.log(est[pos]), 1)[0])
