"""Command-line interface: solver reports, index tables, simulations, sweeps.

One JSON config document drives everything:

    {
      "system": {"N": 100, "beta": 4.0, "M": 25, "zipf_alpha": 1.0,
                 "lambda": 0.01},
      "costs":  {"c_a": 0.1, "c_f": 1.0, "c_w": 0.01},
      "policy": "whittle",
      "sim":    {"horizon_events": 1000000, "seed": 7, "warmup": 0.1,
                 "mode": "expected"},
      "sweep":  {"axis": "M", "values": [20, 22, 24], "reps": 5}
    }

``system.popularity`` / ``system.lambdas`` may replace the Zipf /
shared-rate shortcuts with explicit per-content lists.  All outputs are
CSV with fixed column order plus a manifest JSON recording the config
digest and seed, so every row set is reproducible.

Exit codes: 0 ok, 2 config error, 3 runtime error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .model import (
    ContentParams,
    CostModel,
    SingleContentState,
    SystemParams,
    validate,
    zipf_popularity,
)
from .oracle import value_iterate_infinite, whittle_by_sweep
from .policies import PolicyKind, relaxed_lower_bound
from .simulator import AgeingMode, SimConfig, aggregate, run, sweep
from .thresholds import compute_I, solve_case2, solve_thresholds, case2_residuals
from .whittle import verify_indexability, whittle_cached, whittle_uncached

_FMT = "%.12g"


class ConfigError(Exception):
    pass


def _f(x) -> str:
    return _FMT % x


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def build_system(doc: dict) -> SystemParams:
    try:
        sysdoc = doc["system"]
        costs = doc["costs"]
        n = int(sysdoc["N"])
        beta = float(sysdoc["beta"])
        m = int(sysdoc["M"])
        if "popularity" in sysdoc:
            pops = [float(x) for x in sysdoc["popularity"]]
        else:
            pops = zipf_popularity(n, float(sysdoc.get("zipf_alpha", 1.0))).tolist()
        if "lambdas" in sysdoc:
            lams = [float(x) for x in sysdoc["lambdas"]]
        else:
            lams = [float(sysdoc["lambda"])] * n
        cm = CostModel(float(costs["c_a"]), float(costs["c_f"]), float(costs["c_w"]),
                       float(costs.get("C_h", 0.0)))
        contents = tuple(
            ContentParams(lam=lams[i], p=pops[i], costs=cm) for i in range(n)
        )
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ConfigError(f"malformed config: {e}") from e
    system = SystemParams(beta=beta, contents=contents, M=m)
    problems = validate(system)
    if problems:
        raise ConfigError("; ".join(map(str, problems)))
    return system


def _sim_config(doc: dict, system: SystemParams, args) -> SimConfig:
    sim = doc.get("sim", {})
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    mode = args.mode or sim.get("mode", "expected")
    try:
        policy = PolicyKind(doc.get("policy", "whittle"))
        ageing = AgeingMode(mode)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return SimConfig(
        system=system,
        policy=policy,
        horizon_events=int(sim["horizon_events"]) if "horizon_events" in sim else None,
        horizon_time=float(sim["horizon_time"]) if "horizon_time" in sim else None,
        seed=seed,
        ageing_mode=ageing,
        warmup=float(sim.get("warmup", 0.1)),
    )


def config_digest(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class Reporter:
    """Writes CSVs (and the run manifest) to --out, or CSV to stdout."""

    def __init__(self, out: str | None, doc: dict, args):
        self.dir = Path(out) if out else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": " ".join(sys.argv[1:]),
            "config_digest": config_digest(doc),
            "seed": getattr(args, "seed", None),
            "version": __version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "outputs": [],
        }
        self._t0 = time.time()

    def table(self, name: str, header: list[str], rows) -> None:
        if self.dir:
            path = self.dir / name
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
            self.manifest["outputs"].append(str(path))
            print(f"wrote {path}")
        else:
            w = csv.writer(sys.stdout)
            w.writerow(header)
            w.writerows(rows)

    def close(self) -> None:
        if self.dir:
            self.manifest["wall_clock_s"] = round(time.time() - self._t0, 3)
            path = self.dir / "manifest.json"
            path.write_text(json.dumps(self.manifest, indent=2) + "\n")
            print(f"wrote {path}")


def cmd_solve(doc: dict, args) -> int:
    system = build_system(doc)
    rep = Reporter(args.out, doc, args)
    rows = []
    for i, c in enumerate(system.contents):
        I = compute_I(c, system.beta)
        for ch in np.linspace(0.0, I, args.ch_points):
            ts = solve_thresholds(c, system.beta, float(ch))
            rows.append([
                i, _f(ch), _f(ts.tau_bar), _f(ts.tau_tilde), ts.Q_bar,
                ts.Q_hat, _f(ts.tau0), _f(ts.I), _f(ts.theta),
            ])
    rep.table("thresholds.csv",
              ["content_id", "C_h", "tau_bar", "tau_tilde", "Q_bar", "Q_hat",
               "tau0", "I", "theta"], rows)
    rep.close()
    return 0


def cmd_whittle(doc: dict, args) -> int:
    system = build_system(doc)
    if args.family not in ("cached", "uncached", "both"):
        raise ConfigError(f"unknown state family {args.family!r}")
    which = list(range(system.N)) if not args.contents else [
        int(x) for x in args.contents.split(",")
    ]
    rep = Reporter(args.out, doc, args)
    rows = []
    for i in which:
        c = system.contents[i]
        ts = solve_thresholds(c, system.beta, 0.0)
        if args.family in ("cached", "both"):
            for tau in np.linspace(0.0, ts.tau_star, args.tau_points):
                w = whittle_cached(c, system.beta, 0, float(tau))
                rows.append([i, "cached", 0, _f(tau), _f(w)])
        if args.family in ("uncached", "both"):
            for q in range(ts.Q_hat + 3):
                w = whittle_uncached(c, system.beta, q)
                rows.append([i, "uncached", q, _f(0.0), _f(w)])
    rep.table("whittle.csv", ["content_id", "family", "Q", "tau", "W"], rows)
    rep.close()
    return 0


_METRIC_HEADER = ["axis_value", "policy", "replication", "avg_cost", "fetch_cost",
                  "ageing_cost", "waiting_cost", "avg_wait_time",
                  "avg_cost_se", "avg_wait_time_se"]


def cmd_simulate(doc: dict, args) -> int:
    system = build_system(doc)
    cfg = _sim_config(doc, system, args)
    rep = Reporter(args.out, doc, args)
    reps = args.reps or 1
    cells = sweep(cfg, "M", [system.M], reps, processes=args.processes)
    agg = aggregate(cells)
    rows = [
        [c.value, cfg.policy.value, c.replication, _f(c.metrics.avg_total_cost),
         _f(c.metrics.fetch_cost_rate), _f(c.metrics.ageing_cost_rate),
         _f(c.metrics.waiting_cost_rate), _f(c.metrics.avg_wait_time), "", ""]
        for c in cells
    ] + [
        [a["value"], cfg.policy.value, "mean", _f(a["avg_cost"]), _f(a["fetch_cost"]),
         _f(a["ageing_cost"]), _f(a["waiting_cost"]), _f(a["avg_wait_time"]),
         _f(a["avg_cost_se"]), _f(a["avg_wait_time_se"])]
        for a in agg
    ]
    rep.table("metrics.csv", _METRIC_HEADER, rows)
    rep.close()
    return 0


def cmd_sweep(doc: dict, args) -> int:
    system = build_system(doc)
    cfg = _sim_config(doc, system, args)
    swp = doc.get("sweep", {})
    axis = args.axis or swp.get("axis")
    values = args.values.split(",") if args.values else swp.get("values")
    reps = args.reps or int(swp.get("reps", 1))
    if not axis or not values:
        raise ConfigError("sweep needs an axis and values (config or flags)")
    if axis == "M":
        values = [int(v) for v in values]
    elif axis == "c_w":
        values = [float(v) for v in values]
    elif axis != "policy":
        raise ConfigError(f"unknown sweep axis {axis!r}")
    rep = Reporter(args.out, doc, args)
    cells = sweep(cfg, axis, values, reps, processes=args.processes)
    agg = aggregate(cells)
    polname = cfg.policy.value
    rows = [
        [c.value, c.value if axis == "policy" else polname, c.replication,
         _f(c.metrics.avg_total_cost), _f(c.metrics.fetch_cost_rate),
         _f(c.metrics.ageing_cost_rate), _f(c.metrics.waiting_cost_rate),
         _f(c.metrics.avg_wait_time), "", ""]
        for c in cells
    ] + [
        [a["value"], a["value"] if axis == "policy" else polname, "mean",
         _f(a["avg_cost"]), _f(a["fetch_cost"]), _f(a["ageing_cost"]),
         _f(a["waiting_cost"]), _f(a["avg_wait_time"]),
         _f(a["avg_cost_se"]), _f(a["avg_wait_time_se"])]
        for a in agg
    ]
    rep.table("metrics.csv", _METRIC_HEADER, rows)
    rep.close()
    return 0


def cmd_lower_bound(doc: dict, args) -> int:
    system = build_system(doc)
    m_values = ([int(x) for x in args.m_values.split(",")]
                if args.m_values else [system.M])
    rep = Reporter(args.out, doc, args)
    rows = []
    from dataclasses import replace as _replace
    for m in m_values:
        ch, bound = relaxed_lower_bound(_replace(system, M=m))
        rows.append([m, _f(ch), _f(bound)])
    rep.table("lower_bound.csv", ["M", "C_h_star", "bound"], rows)
    rep.close()
    return 0


def cmd_compare(doc: dict, args) -> int:
    """Join a sweep CSV (M axis) against the dual bound; report the gap."""
    system = build_system(doc)
    from dataclasses import replace as _replace
    rep = Reporter(args.out, doc, args)
    rows = []
    with open(args.metrics) as fh:
        for row in csv.DictReader(fh):
            if row["replication"] != "mean":
                continue
            m = int(row["axis_value"])
            _, bound = relaxed_lower_bound(_replace(system, M=m))
            cost = float(row["avg_cost"])
            rows.append([m, row["policy"], _f(cost), _f(bound),
                         _f((cost - bound) / bound)])
    rep.table("compare.csv", ["M", "policy", "avg_cost", "bound", "relative_gap"], rows)
    rep.close()
    return 0


def cmd_verify(doc: dict, args) -> int:
    """Oracle-equivalence and invariant battery; nonzero exit on failure."""
    system = build_system(doc)
    beta = system.beta
    checks: list[tuple[str, bool, str]] = []
    quick = args.quick

    def check(name: str, ok: bool, detail: str = "") -> None:
        checks.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))

    picks = list(range(system.N))[: (2 if quick else 4)]
    for i in picks:
        c = system.contents[i]
        rate = c.p * beta
        cm = c.costs
        ts = solve_thresholds(c, beta, 0.0)
        vt = value_iterate_infinite(rate, c.lam, cm.c_a, cm.c_f, cm.c_w,
                                    tol=1e-7 if quick else 1e-9)
        rel = abs(vt.theta - ts.theta) / ts.theta
        check(f"theta-vs-oracle[content {i}]", rel < 5e-3, f"rel={rel:.2e}")
        ch = 0.6 * ts.I
        tb, tt, qb, theta2 = solve_case2(ch, c, beta)
        r1, r2, r3 = case2_residuals(ch, c, beta, tb, tt, qb)
        check(f"case2-residuals[content {i}]",
              max(abs(r1), abs(r2), abs(r3)) < 1e-9)
        grid = np.linspace(0.0, 1.02 * ts.I, 60 if quick else 200)
        viol = verify_indexability(c, beta, grid)
        check(f"indexability[content {i}]", not viol, f"{len(viol)} violations")
        prev = None
        mono_ok = True
        for chv in np.linspace(ts.I / 50, ts.I, 25):
            tb2, tt2, qb2, _ = solve_case2(float(chv), c, beta)
            if prev is not None and not (tb2 < prev[0] and tt2 > prev[1] and qb2 >= prev[2]):
                mono_ok = False
            prev = (tb2, tt2, qb2)
        check(f"threshold-monotonicity[content {i}]", mono_ok)
        if not quick:
            w = whittle_cached(c, beta, 0, 0.5 * ts.tau_star)
            sw_grid = np.linspace(0, 1.02 * ts.I, 80)
            ws = whittle_by_sweep(c, beta,
                                  SingleContentState(0, 0.5 * ts.tau_star, True, False),
                                  sw_grid, tol=1e-6)
            step = sw_grid[1] - sw_grid[0]
            check(f"whittle-vs-sweep[content {i}]", abs(w - ws) <= step + 1e-3,
                  f"|{w:.4g}-{ws:.4g}| vs step {step:.4g}")

    cfg = _sim_config(doc, system, args)
    horizon = min(cfg.horizon_events or 200_000, 200_000 if quick else 500_000)
    cfg = SimConfig(system=system, policy=cfg.policy, horizon_events=horizon,
                    seed=cfg.seed, ageing_mode=cfg.ageing_mode, warmup=cfg.warmup)
    try:
        m1 = run(cfg, verify_every=97)
        m2 = run(cfg)
        check("simulation-determinism", m1 == m2)
        check("cost-reconciliation", m1.reconciliation <= 1e-9,
              f"{m1.reconciliation:.2e}")
        check("occupancy", m1.occupancy_ok)
        check("no-serve-after-wait", m1.serve_after_wait == 0,
              f"{m1.serve_after_wait} occurrences")
    except Exception as e:  # pragma: no cover - battery failure path
        check("simulation", False, str(e))

    failed = [name for name, ok, _ in checks if not ok]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 4
    print(f"all {len(checks)} properties passed")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="aovcache",
        description="Content caching with version-ageing, fetching and waiting "
                    "costs: threshold solvers, Whittle indices, simulator.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, sim=False):
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory (default: stdout)")
        if sim:
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--reps", type=int, default=None)
            p.add_argument("--processes", type=int, default=None)
            p.add_argument("--mode", choices=["expected", "realized"], default=None)

    p = sub.add_parser("solve", help="threshold report per content and C_h")
    common(p)
    p.add_argument("--ch-points", type=int, default=9)

    p = sub.add_parser("whittle", help="Whittle index tables as CSV")
    common(p)
    p.add_argument("--family", default="both",
                   help="state family: cached, uncached, or both")
    p.add_argument("--contents", default=None, help="comma list of content ids")
    p.add_argument("--tau-points", type=int, default=21)

    p = sub.add_parser("simulate", help="run the configured simulation")
    common(p, sim=True)

    p = sub.add_parser("sweep", help="sweep M, c_w, or policy")
    common(p, sim=True)
    p.add_argument("--axis", choices=["M", "c_w", "policy"], default=None)
    p.add_argument("--values", default=None, help="comma-separated axis values")

    p = sub.add_parser("lower-bound", help="relaxed-problem dual lower bound")
    common(p)
    p.add_argument("--m-values", default=None, help="comma list of capacities")

    p = sub.add_parser("compare", help="gap between a sweep CSV and the bound")
    common(p)
    p.add_argument("--metrics", required=True, help="metrics.csv from sweep")

    p = sub.add_parser("verify", help="oracle-equivalence and invariant battery")
    common(p, sim=True)
    p.add_argument("--quick", action="store_true")

    args = ap.parse_args(argv)
    handlers = {
        "solve": cmd_solve,
        "whittle": cmd_whittle,
        "simulate": cmd_simulate,
        "sweep": cmd_sweep,
        "lower-bound": cmd_lower_bound,
        "compare": cmd_compare,
        "verify": cmd_verify,
    }
    try:
        doc = load_config(args.config)
        return handlers[args.cmd](doc, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
