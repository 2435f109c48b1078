"""Command-line entry point: ``osp <experiment> [options]``."""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import Scenario
from .topology import TopologyError


def _common(p: argparse.ArgumentParser, kind: str) -> None:
    p.add_argument("--topology", default=None,
                   help="GML, edge-list or YAML topology scenario; bundled names such as geant.yaml, "
                        "abilene.gml, line5.txt work too (default: geant.yaml)")
    p.add_argument("--scenario", default=None, help="YAML experiment scenario; flags override its values")
    p.add_argument("--seed", type=int, default=None, help="first seed; repetitions use seed, seed+1, ... (default: 0)")
    p.add_argument("--repetitions", type=int, default=None,
                   help=f"independent runs (default: {harness.DEFAULT_REPETITIONS[kind]})")
    p.add_argument("--out", default="results", help="directory for CSV output (default: results)")
    p.add_argument("--trace-dir", default=None, help="also write one JSON-lines event trace per simulation")
    p.add_argument("--period", type=float, default=None, help="gossip period T in seconds (default: 5)")
    p.add_argument("--loss", type=float, default=None, help="per-transmission loss probability (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osp", description="Off-path signaling protocol experiments.")
    sub = parser.add_subparsers(dest="command", metavar="{discover,distribute,overhead,partial,sweep}")
    sub.required = True

    p = sub.add_parser("discover", help="gossip discovery time for one PTS size")
    _common(p, "discover")
    p.add_argument("--pts", type=int, default=None, help="peers shared per gossip message (default: 2)")

    p = sub.add_parser("sweep", help="discovery time across PTS sizes")
    _common(p, "sweep")
    p.add_argument("--pts", type=int, nargs="+", default=None, help="PTS sizes (default: 1 2 4 8)")

    p = sub.add_parser("distribute", help="probe overhead grouped by path length L and radius r")
    _common(p, "distribute")
    p.add_argument("--pts", type=int, default=None, help="PTS size for the discovery pre-run (default: 2)")
    p.add_argument("--r", type=int, nargs="+", default=None, help="off-path radii (default: 0 1 2 3)")
    p.add_argument("--payload", type=int, default=None, help="probe payload in bytes (default: 1024)")
    p.add_argument("--pairs", type=int, default=None, help="max sampled pairs per path length (default: 30)")
    p.add_argument("--reliable-data", action="store_true", help="never drop Data/DataResponse messages")

    p = sub.add_parser("overhead", help="analytic and measured gossip bandwidth")
    _common(p, "overhead")
    p.add_argument("--pts", type=int, default=None, help="peers shared per gossip message (default: 2)")

    p = sub.add_parser("partial", help="gossip bandwidth versus fraction of OSP nodes")
    _common(p, "partial")
    p.add_argument("--pts", type=int, default=None, help="peers shared per gossip message (default: 2)")
    p.add_argument("--fractions", type=float, nargs="+", default=None,
                   help="fractions of nodes running OSP (default: 0.25 0.5 0.75 1.0)")
    return parser


def scenario_from_args(args: argparse.Namespace) -> Scenario:
    kind = args.command
    base = Scenario.load(args.scenario, kind=kind) if args.scenario else Scenario(kind=kind, repetitions=1)
    gossip = base.gossip
    pts = getattr(args, "pts", None)
    if kind == "sweep":
        pts_sizes = tuple(pts) if pts else (base.pts_sizes if args.scenario else (1, 2, 4, 8))
    else:
        pts_sizes = (pts,) if pts is not None else base.pts_sizes
        if pts is not None:
            gossip = replace(gossip, pts_size=pts)
    if args.period is not None:
        gossip = replace(gossip, period_T=args.period, gossip_timer=args.period)
    sim = base.sim if args.loss is None else replace(base.sim, loss_probability=args.loss)
    distribution = base.distribution
    if getattr(args, "reliable_data", False):
        distribution = replace(distribution, reliable_data_mode=True)
    seed = args.seed if args.seed is not None else base.seed
    if args.repetitions is not None:
        repetitions = args.repetitions
    elif args.scenario:
        repetitions = base.repetitions
    else:
        repetitions = harness.DEFAULT_REPETITIONS[kind]
    seeds = base.seeds if args.scenario and args.seed is None and args.repetitions is None else None
    return replace(
        base, kind=kind, topology=args.topology or base.topology, gossip=gossip, sim=sim,
        distribution=distribution, pts_sizes=pts_sizes, seed=seed, repetitions=repetitions, seeds=seeds,
        radii=tuple(args.r) if getattr(args, "r", None) else base.radii,
        payload=args.payload if getattr(args, "payload", None) is not None else base.payload,
        pairs_per_group=args.pairs if getattr(args, "pairs", None) is not None else base.pairs_per_group,
        fractions=tuple(args.fractions) if getattr(args, "fractions", None) else base.fractions,
        trace_dir=args.trace_dir or base.trace_dir,
    )


def _num(value, digits: int = 2) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.{digits}f}" if isinstance(value, float) else str(value)


def summarize(kind: str, records) -> list[str]:
    tables = harness.tabulate(kind, records)
    lines = []
    if kind in ("discover", "sweep"):
        for pts, runs, done, m, lo, hi, mn, mx, tgd in tables["discovery_summary"]:
            lines.append(f"pts={pts} runs={runs} converged={done} mean n_GC={_num(m)} "
                         f"ci95=[{_num(lo)}, {_num(hi)}] range=[{_num(mn)}, {_num(mx)}] T_GD={_num(tgd)} s")
    elif kind == "distribute":
        lines.append(f"{'L':>3} {'r':>3} {'pairs':>5} {'mean_bytes':>12} {'ci95':>23} {'time_s':>7} {'coverage':>8}")
        for L, r, pairs, m, lo, hi, _codec, t, _tmax, cov in tables["distribution_summary"]:
            lines.append(f"{L:>3} {r:>3} {pairs:>5} {_num(m, 1):>12} {'[' + _num(lo, 1) + ', ' + _num(hi, 1) + ']':>23} "
                         f"{_num(t, 3):>7} {_num(cov, 3):>8}")
    elif kind == "overhead":
        for seed, K, n_gc, v, eta, measured in tables["overhead_runs"]:
            lines.append(f"seed={seed} K={K} n_GC={_num(n_gc)} v_mean={_num(v, 3)} eta={_num(eta, 0)} bit/s "
                         f"measured={_num(measured, 0)} bit/s")
    else:
        for fraction, runs, K, v, m, lo, hi in tables["partial_summary"]:
            lines.append(f"fraction={fraction} runs={runs} K={_num(K, 1)} v_mean={_num(v, 3)} "
                         f"eta={_num(m, 0)} bit/s ci95=[{_num(lo, 0)}, {_num(hi, 0)}]")
    return lines


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        scenario = scenario_from_args(args)
        records = harness.run_experiment(scenario)
        written = harness.emit_results(scenario.kind, records, args.out)
    except (TopologyError, ValueError, OSError, harness.UnconvergedError) as exc:
        print(f"osp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except harness.OracleMismatch as exc:
        print(f"osp {args.command}: coverage does not match the off-path domain: {exc}", file=sys.stderr)
        return 3
    for line in summarize(scenario.kind, records):
        print(line)
    print("wrote " + ", ".join(str(Path(p)) for p in written))
    return 0


if __name__ == "__main__":
    sys.exit(main())
