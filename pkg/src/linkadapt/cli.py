"""Command-line driver: ``validate-codes``, ``run`` and ``replay``."""

from __future__ import annotations

import argparse
import sys
import time
from collections import defaultdict
from pathlib import Path

from .bandit import dump_snapshot
from .config import PROFILES, ConfigError, build_config
from .experiment import (
    GridError,
    fixed_csv,
    metrics_csv,
    parse_metrics_csv,
    run_grid,
    series_csv,
    speed_summary,
    write_csv,
)
from .qcldpc import BUILTIN_CODE_FILES, CodeConstructionError, builtin_codes, load_code

ZERO_BASELINE = "n/a (zero baseline)"


def cmd_validate_codes(code_dir: str | None = None, out=None) -> int:
    """Load the three codes, check them and print one line per code."""
    out = out or sys.stdout
    try:
        if code_dir is None:
            codes = builtin_codes()
        else:
            codes = [load_code(Path(code_dir) / f, f"R{r}") for r, f in BUILTIN_CODE_FILES.items()]
    except (CodeConstructionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for c in codes:
        # full rank, 4-cycle freedom and G.H^T = 0 are enforced while loading
        print(f"{c.name}: n={c.n} k={c.k} rate={c.rate:.4f} Z={c.Z} sha256={c.checksum()[:16]} ok", file=out)
    return 0


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


def cmd_run(args: argparse.Namespace) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.zero_noise:
        overrides["zero_noise"] = True
    if args.strict_eq15:
        overrides["deadline_penalty"] = False
    try:
        cfg = build_config(args.profile, args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    plan = cfg.plan()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "effective_config.json", cfg.to_json())

    cells = len(plan.seeds) * len(plan.speeds) * len(plan.ebn0_grid) * len(plan.policies)
    print(f"running {cells} cells ({args.profile} profile, jobs={args.jobs}) -> {out}", file=sys.stderr)
    t0 = time.perf_counter()
    try:
        result = run_grid(plan, jobs=args.jobs)
    except GridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write(out / "metrics.csv", metrics_csv(result.records))
    _write(out / "training_series.csv", series_csv(result.series))
    _write(out / "fixed_choices.csv", fixed_csv(result))
    snap_dir = out / "policies"
    snap_dir.mkdir(exist_ok=True)
    for name, snap in sorted(result.snapshots.items()):
        _write(snap_dir / f"{name}.json", dump_snapshot(snap))
    print(f"wrote {len(result.records)} metric rows in {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return 0


def reduction_rows(records) -> list[list]:
    """LinUCB vs greedy per (speed, Eb/N0, seed): ``1 - P_UE^L / P_UE^G``."""
    cell = defaultdict(dict)
    for r in records:
        cell[r.speed, r.ebn0_db, r.seed][r.policy] = r.p_ue
    rows = []
    for (v, e, s), p in sorted(cell.items()):
        if "linucb" not in p or "greedy" not in p:
            continue
        lin, gre = p["linucb"], p["greedy"]
        red = ZERO_BASELINE if gre == 0 else f"{100.0 * (1.0 - lin / gre):.1f}"
        rows.append([v, e, s, repr(lin), repr(gre), red])
    return rows


def cmd_replay(metrics_path: str, out_dir: str | None = None) -> int:
    path = Path(metrics_path)
    try:
        records = parse_metrics_csv(path.read_text(encoding="utf-8"))
        summary = speed_summary(records)
    except (OSError, ValueError) as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return 1
    out = Path(out_dir) if out_dir else path.parent
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "speed_summary.csv", write_csv(
        ("speed_kmh", "policy", "mean_p_ue"), ([v, p, repr(x)] for (v, p), x in sorted(summary.items()))
    ))
    _write(out / "reduction.csv", write_csv(
        ("speed_kmh", "ebn0_db", "seed", "p_ue_linucb", "p_ue_greedy", "reduction_pct"), reduction_rows(records)
    ))
    for (v, p), x in sorted(summary.items()):
        print(f"v={v:>5} km/h  {p:<7} mean P_UE = {x:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linkadapt", description="CRC/QC-LDPC link adaptation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-codes", help="check the shipped QC-LDPC code files")
    p.add_argument("--code-dir", help="directory holding replacement code files")

    p = sub.add_parser("run", help="train, validate and evaluate over the grid")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--seed", type=int, help="run a single master seed instead of the configured list")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--zero-noise", action="store_true", help="test mode: noiseless channel")
    p.add_argument("--strict-eq15", action="store_true", help="drop the deadline-miss reward penalty")

    p = sub.add_parser("replay", help="summarize an existing metrics.csv")
    p.add_argument("metrics", help="path to metrics.csv")
    p.add_argument("--out", help="output directory (default: next to metrics.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate-codes":
        return cmd_validate_codes(args.code_dir)
    if args.command == "run":
        if args.jobs < 1:
            print("error: --jobs must be >= 1", file=sys.stderr)
            return 2
        if args.seed is not None and args.seed < 0:
            print("error: --seed must be non-negative", file=sys.stderr)
            return 2
        return cmd_run(args)
    return cmd_replay(args.metrics, args.out)


if __name__ == "__main__":
    sys.exit(main())
