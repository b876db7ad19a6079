"""``qla`` command line: run probes from a config, digest a run, single estimates.

Exit status is 0 when every verdict passes, 2 when something is
inconclusive or a run is incomplete, and 1 on any failure or error.
"""
import argparse
import json
import os
import sys
import warnings

import numpy as np

from .config import DEFAULT_OUT_ENV, parse_config
from .core import LocalChart
from .errors import QLAError
from .estimators import estimate
from .models import write_path_csv
from .parallel import resolve_threads
from .verification import probes as pr
from .verification.report import FAIL, INCONCLUSIVE, PASS, load_report

ERROR = "error"
PARTIAL_MARKER = "PARTIAL"
SUMMARY_JSON = "summary.json"
SUMMARY_TXT = "summary.txt"
RESOLVED = "config.resolved.json"


def exit_status(verdicts):
    if any(v in (FAIL, ERROR) for v in verdicts):
        return 1
    if any(v == INCONCLUSIVE for v in verdicts):
        return 2
    return 0


def call_probe(name, cfg, threads):
    """Run probe ``name`` with the config's model, schedule and settings."""
    s = cfg.probe_settings(name)
    model, sched = cfg.model(), cfg.schedule()
    common = dict(seed=cfg.seed, config_hash=cfg.config_hash)
    if name == "identifiability":
        return pr.identifiability_probe(model, grid_size=s["grid_size"], **common)
    common.update(reps=s["reps"], threads=threads)
    if name == "pld_tail":
        return pr.pld_tail_probe(model, sched, cfg.profile(), r_grid=s["r_grid"], **common)
    if name == "condition_norm":
        return pr.condition_norm_probe(model, sched, cfg.profile(), deltas=s["deltas"],
                                       grid_points=s["grid_points"], **common)
    if name == "gamma_uniform_consistency":
        return pr.gamma_uniform_consistency_probe(model, sched, K=s["K"], threshold=s["threshold"],
                                                  grid_points=s["grid_points"], **common)
    if name == "efficiency_residual":
        return pr.efficiency_residual_probe(model, sched, threshold=s["threshold"], opt=cfg.optimizer(), **common)
    if name == "mle_bayes_gap":
        return pr.mle_bayes_gap_probe(model, sched, prior=cfg.prior(), threshold=s["threshold"],
                                      opt=cfg.optimizer(), quad=cfg.quadrature(), strict=cfg.strict, **common)
    if name == "moment_convergence":
        return pr.moment_convergence_probe(model, sched, f_family=tuple(s["f_family"]),
                                           estimators=tuple(s["estimators"]), prior=cfg.prior(),
                                           limit_draws=s["limit_draws"], opt=cfg.optimizer(),
                                           quad=cfg.quadrature(), strict=cfg.strict, **common)
    if name == "studentized_normality":
        return pr.studentized_normality_probe(model, sched, threshold=s["threshold"], opt=cfg.optimizer(), **common)
    if name == "qbe_integrability":
        return pr.qbe_integrability_check(model, sched, q=s["q"], delta_=s["delta"], **common)
    raise ValueError(f"unknown probe {name!r}")


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _summary_text(rows, cfg):
    out = [f"config_hash {cfg.config_hash}", f"seed {cfg.seed}"]
    for r in rows:
        line = f"{r['probe']:<28} {r['verdict'].upper()}"
        if r.get("message"):
            line += f"  ({r['message']})"
        out.append(line)
    out.append(f"status {exit_status([r['verdict'] for r in rows])}")
    return "\n".join(out) + "\n"


def execute(cfg, names, out_dir, threads, dump_paths=False, log=None):
    """Run ``names`` and persist everything under ``out_dir``; returns the exit status."""
    log = log or sys.stderr
    marker = os.path.join(out_dir, PARTIAL_MARKER)
    try:
        os.makedirs(out_dir, exist_ok=True)
        _write(marker, "run started; summary not yet written\n")
        _write(os.path.join(out_dir, RESOLVED), json.dumps(cfg.resolved, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"error: cannot prepare output directory {out_dir}: {exc}", file=log)
        return 1
    rows = []
    done = None
    try:
        if dump_paths:
            _dump_paths(cfg, out_dir)
        for name in names:
            done = name
            print(f"[qla] running {name}", file=log)
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    rep = call_probe(name, cfg, threads)
                for w in caught:
                    print(f"[qla] {name}: warning: {w.message}", file=log)
            except (QLAError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                print(f"[qla] {name}: error: {exc}", file=log)
                rows.append({"probe": name, "verdict": ERROR, "message": str(exc), "tables": []})
                continue
            tables = rep.write(out_dir, name)
            rows.append({"probe": name, "verdict": rep.verdict, "report": name + ".json",
                         "tables": [os.path.basename(t) for t in tables]})
        status = exit_status([r["verdict"] for r in rows])
        summary = {"config_hash": cfg.config_hash, "seed": cfg.seed, "probes": rows, "status": status}
        _write(os.path.join(out_dir, SUMMARY_JSON), json.dumps(summary, indent=2, sort_keys=True) + "\n")
        _write(os.path.join(out_dir, SUMMARY_TXT), _summary_text(rows, cfg))
        os.remove(marker)
    except OSError as exc:
        msg = f"I/O failure while running {done}: {exc}\n"
        print(f"error: {msg.strip()}", file=log)
        try:
            _write(marker, msg)
        except OSError:
            pass
        return 1
    return status


def _dump_paths(cfg, out_dir):
    model = cfg.model()
    if model.kind == "synthetic-laq":
        return
    pdir = os.path.join(out_dir, "paths")
    os.makedirs(pdir, exist_ok=True)
    for t in cfg.schedule().times:
        sample = model.with_horizon(t).simulate(pr.sample_stream(cfg.seed, t, 0), keep_path=True)
        write_path_csv(sample, os.path.join(pdir, f"path_T{pr.horizon_key(t)}.csv"))


def digest(out_dir, out=None):
    """Print the verdict matrix of a finished run; returns the exit status."""
    out = out or sys.stdout
    if not os.path.isdir(out_dir):
        print(f"error: no such run directory: {out_dir}", file=sys.stderr)
        return 1
    marker = os.path.join(out_dir, PARTIAL_MARKER)
    if os.path.exists(marker):
        with open(marker) as fh:
            print(f"incomplete run in {out_dir}: {fh.read().strip()}", file=out)
        return 2
    path = os.path.join(out_dir, SUMMARY_JSON)
    if not os.path.exists(path):
        print(f"error: {path} not found; not a completed run", file=sys.stderr)
        return 1
    with open(path) as fh:
        summary = json.load(fh)
    times = []
    resolved = os.path.join(out_dir, RESOLVED)
    if os.path.exists(resolved):
        with open(resolved) as fh:
            times = [float(t) for t in json.load(fh)["schedule"]["times"]]
    cells, other = {}, {}
    for row in summary["probes"]:
        if not row.get("report"):
            continue
        rep = load_report(os.path.join(out_dir, row["report"]))
        per_t = [s for s in rep.subreports if s.name.startswith("T=")]
        if per_t:
            # one sub-report per horizon (e.g. the PLD tail): show its verdict
            cells[row["probe"]] = {float(s.name[2:]): s.verdict.upper() for s in per_t}
            continue
        series = rep if rep.grid else (rep.subreports[0] if rep.subreports else rep)
        xs = [r.x for r in series.grid]
        if xs and all(x in times for x in xs):
            cells[row["probe"]] = {r.x: f"{r.estimate:.4g}" for r in series.grid}
        elif series.grid:
            other[row["probe"]] = f"{series.grid[-1].estimate:.4g}"
    print(f"run {out_dir}  config_hash {summary['config_hash'][:12]}  seed {summary['seed']}", file=out)
    print(f"{'probe':<28}" + "".join(f"{'T=' + format(t, 'g'):>12}" for t in times)
          + f"{'value':>12}{'verdict':>10}", file=out)
    for row in summary["probes"]:
        c = cells.get(row["probe"], {})
        line = f"{row['probe']:<28}" + "".join(f"{c.get(t, ''):>12}" for t in times)
        print(line + f"{other.get(row['probe'], ''):>12}{row['verdict'].upper():>10}", file=out)
    tables = [t for row in summary["probes"] for t in row.get("tables", [])]
    if tables:
        print("tables:", file=out)
        for t in tables:
            print("  " + os.path.join(out_dir, t), file=out)
    return exit_status([r["verdict"] for r in summary["probes"]])


def _load(args):
    overrides = {"seed": args.seed, "reps": getattr(args, "reps", None), "threads": getattr(args, "threads", None),
                 "out_dir": getattr(args, "out", None), "strict": True if getattr(args, "strict", False) else None}
    if overrides["threads"] not in (None, "auto"):
        overrides["threads"] = int(overrides["threads"])
    return parse_config(args.config, overrides)


def cmd_run(args):
    cfg = _load(args)
    return execute(cfg, cfg.probe_names(), cfg.out_dir, resolve_threads(cfg.threads), args.dump_paths)


def cmd_probe(args):
    cfg = _load(args)
    if args.name not in pr.PROBES:
        print(f"error: unknown probe {args.name!r}; available: {', '.join(pr.PROBES)}", file=sys.stderr)
        return 1
    cfg.probe_settings(args.name)
    return execute(cfg, [args.name], cfg.out_dir, resolve_threads(cfg.threads))


def cmd_estimate(args):
    cfg = _load(args)
    model = cfg.model()
    t = args.horizon if args.horizon is not None else cfg.schedule().times[-1]
    model = model.with_horizon(t)
    sample = model.simulate(pr.sample_stream(cfg.seed, t, args.replicate))
    a = cfg.schedule().a(t)
    rec = estimate(sample, a, cfg.prior(), cfg.optimizer(), cfg.quadrature(), strict=cfg.strict)
    out = {"T": t, "replicate": args.replicate, "seed": cfg.seed, "b_T": LocalChart(sample, a).b, **rec.as_dict()}
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="qla", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, full=True):
        sp.add_argument("--config", required=True, help="YAML experiment config")
        sp.add_argument("--seed", type=int, help="override the master seed")
        if full:
            sp.add_argument("--reps", type=int, help="override the replicate count")
            sp.add_argument("--threads", help="worker threads (integer or 'auto')")
            sp.add_argument("--out", help=f"output directory (default: config out_dir, ${DEFAULT_OUT_ENV}, ./qla-out)")
        sp.add_argument("--strict", action="store_true", help="quadrature self-check failures become errors")

    run = sub.add_parser("run", help="run every probe listed in the config")
    common(run)
    run.add_argument("--dump-paths", action="store_true", help="write replicate-0 paths as CSV under paths/")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="print the verdict matrix of a finished run")
    rep.add_argument("dir")
    rep.set_defaults(func=lambda a: digest(a.dir))

    est = sub.add_parser("estimate", help="QMLE and QBE for one simulated sample")
    common(est, full=False)
    est.add_argument("--horizon", type=float, help="T to simulate (default: largest scheduled T)")
    est.add_argument("--replicate", type=int, default=0)
    est.set_defaults(func=cmd_estimate)

    one = sub.add_parser("probe", help="run a single probe")
    one.add_argument("name", help=", ".join(pr.PROBES))
    common(one)
    one.set_defaults(func=cmd_probe)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except QLAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
