"""Command line: ``run``, ``verify``, ``bench`` and ``report``.

Exit codes: 0 ok, 1 config error, 2 data error, 3 runtime fault,
4 verify found divergent runs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import multiprocessing
import os
import shutil
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from marketsim.config import AgentSpec, ConfigError, RunConfig, load_config
from marketsim.domain import SimError
from marketsim.engine import DATA_ERRORS, DataError, RunOutputs, load_market_data, run_simulation
from marketsim.evaluator.report import AUDIT_LOG, REPORT_JSON, TRADE_LOG, build_report, canonical_bytes, \
    regenerate, trade_log_bytes, write_run

log = logging.getLogger("marketsim")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME, EXIT_DIVERGENT = 0, 1, 2, 3, 4
BENCH_COLUMNS = ["agents", "bars", "wall_ms", "per_agent_ms", "events", "events_per_sec", "peak_rss_mb",
                 "trade_log_sha256"]


def audit_bytes(records: Sequence[dict]) -> bytes:
    return b"".join(json.dumps(r, sort_keys=True, separators=(",", ":")).encode() + b"\n" for r in records)


def output_bytes(out: RunOutputs) -> dict:
    """The byte artifacts compared by ``verify``."""
    report = build_report(out.meta, out.recorders, out.metrics_config)
    return {TRADE_LOG: trade_log_bytes(out.trade_log), REPORT_JSON: canonical_bytes(report)}


def write_outputs(out: RunOutputs, outdir: Path, force: bool = False) -> Path:
    """Write a run into ``outdir`` atomically: a failed write leaves nothing behind."""
    outdir = Path(outdir)
    if outdir.exists() and not force:
        raise SimError(f"output directory {outdir} already exists (pass --force to replace it)",
                       code="OUTPUT_EXISTS")
    outdir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{outdir.name}.", dir=outdir.parent))
    try:
        tmp.chmod(0o755)
        write_run(tmp, out.meta, out.candles, out.recorders, out.trade_log, out.metrics_config)
        (tmp / AUDIT_LOG).write_bytes(audit_bytes(out.audit))
        if outdir.exists():
            old = outdir.with_name(f".{outdir.name}.old")
            os.replace(outdir, old)
            os.replace(tmp, outdir)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(tmp, outdir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return outdir


def _transport_kw(args) -> dict:
    kw = {}
    if getattr(args, "transport", None):
        kw["transport"] = args.transport
    if getattr(args, "processes", False):
        kw["transport"] = "tcp"
        kw["processes"] = True
    return kw


# -- commands ---------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    outdir = Path(args.out) if args.out else cfg.resolve(cfg.output_dir or f"runs/{Path(args.config).stem}")
    out = run_simulation(cfg, **_transport_kw(args))
    path = write_outputs(out, outdir, args.force)
    print(f"{out.ticks} ticks, {len(out.trade_log)} agent fills -> {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.runs < 2:
        raise ConfigError("verify needs --runs >= 2", key="runs")
    cfg = load_config(args.config)
    data = load_market_data(cfg)
    digests: List[dict] = []
    for i in range(args.runs):
        c = replace(cfg, seed=cfg.seed + i) if args.vary_seed else cfg
        t0 = time.perf_counter()
        blobs = output_bytes(run_simulation(c, data=data, **_transport_kw(args)))
        d = {k: hashlib.sha256(v).hexdigest() for k, v in blobs.items()}
        digests.append(d)
        print(f"run {i + 1}: " + " ".join(f"{k}={v[:16]}" for k, v in sorted(d.items()))
              + f" ({time.perf_counter() - t0:.1f}s)")
    same = all(d == digests[0] for d in digests)
    print("identical" if same else "divergent")
    return EXIT_OK if same else EXIT_DIVERGENT


def scaled_config(cfg: RunConfig, n_agents: int) -> RunConfig:
    """The template's first agent entry, repeated ``n_agents`` times."""
    spec = cfg.agents[0]
    base = spec.id or spec.strategy
    return replace(cfg, agents=[AgentSpec(spec.strategy, spec.initial_cash, base, n_agents, dict(spec.params),
                                          spec.seed)], transport="inprocess", processes=False)


def _peak_rss_mb() -> Optional[float]:
    try:
        import resource
    except ImportError:  # pragma: no cover - non-posix
        return None
    kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return round(kb / (1024 * 1024 if sys.platform == "darwin" else 1024), 1)


def bench_one(cfg: RunConfig, n_agents: int) -> dict:
    """One bench row: run the scaled config once and measure it."""
    c = scaled_config(cfg, n_agents)
    out = run_simulation(c)
    wall = out.wall_seconds
    return {
        "agents": n_agents,
        "bars": len(out.candles),
        "wall_ms": round(wall * 1000, 1),
        "per_agent_ms": round(wall * 1000 / n_agents, 3),
        "events": out.deliveries,
        "events_per_sec": round(out.deliveries / wall, 1) if wall > 0 else None,
        "peak_rss_mb": _peak_rss_mb(),
        "trade_log_sha256": hashlib.sha256(trade_log_bytes(out.trade_log)).hexdigest()[:16],
    }


def run_bench(cfg: RunConfig, counts: Sequence[int], isolate: bool = True) -> List[dict]:
    """Rows per agent count. With ``isolate`` each count runs in a fresh process so peak RSS is its own."""
    if not isolate:
        return [bench_one(cfg, n) for n in counts]
    ctx = multiprocessing.get_context("spawn")
    rows = []
    for n in counts:
        with ctx.Pool(1) as pool:
            rows.append(pool.apply(bench_one, (cfg, n)))
    return rows


def bench_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def cmd_bench(args) -> int:
    try:
        counts = [int(x) for x in args.agents.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--agents must be a comma-separated list of integers, got {args.agents!r}") from None
    if not counts or min(counts) < 1:
        raise ConfigError("--agents needs at least one positive count")
    cfg = load_config(args.config)
    text = bench_csv(run_bench(cfg, counts, isolate=not args.no_isolate))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    path = regenerate(args.rundir, args.format)
    print(path)
    return EXIT_OK


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="marketsim", description="config-driven market simulator")
    ap.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = ap.add_subparsers(dest="command", required=True)

    def transport_opts(p):
        p.add_argument("--transport", choices=["inprocess", "tcp"], help="override the config's transport")
        p.add_argument("--processes", action="store_true", help="run agents as OS processes over TCP")

    p = sub.add_parser("run", help="run one simulation and write its outputs")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.add_argument("--force", action="store_true", help="replace an existing output directory")
    transport_opts(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="run N times and byte-compare trade logs and report.json")
    p.add_argument("config")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--vary-seed", action="store_true", help="use seed+i for run i (negative control)")
    transport_opts(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="time the config at several agent counts; prints CSV")
    p.add_argument("config")
    p.add_argument("--agents", default="10,50,150")
    p.add_argument("--out", help="also write the CSV here")
    p.add_argument("--no-isolate", action="store_true", help="measure every count in this process")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("report", help="regenerate report.json or report.html of a run directory")
    p.add_argument("rundir")
    p.add_argument("--format", choices=["html", "json"], default="html")
    p.set_defaults(fn=cmd_report)
    return ap


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError) or getattr(exc, "code", None) in ("MISSING_CONFIG", "OUTPUT_EXISTS"):
        return EXIT_CONFIG
    if isinstance(exc, DataError) or getattr(exc, "code", None) in DATA_ERRORS:
        return EXIT_DATA
    return EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (SimError, OSError) as exc:
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    except Exception as exc:  # runtime fault: report, do not dump a traceback at the user
        log.debug("unhandled", exc_info=True)
        print(f"error: runtime fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
