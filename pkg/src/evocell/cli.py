"""Command-line front end: a thin client over the engine, evaluator and compiler.

Exit codes: 0 success, 1 usage error, 2 run-directory error, 3 engine error.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import threading
from pathlib import Path

from .compiler import mac_count
from .control import genome_sets
from .engine import (
    Intervention,
    MailboxSource,
    RunConfig,
    build_report,
    init_run,
    load_run,
    run_generations,
    write_mailbox,
)
from .errors import CorruptCheckpoint, EvoCellError, FormatVersionMismatch
from .evaluator import SurrogateSpec
from .genome import dumps as genome_dumps
from .operators import OperatorConfig


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_run_dir(parser, flag="--run"):
    parser.add_argument(flag, dest="run_dir", default="run", help="run directory (default: run)")


def build_parser() -> _Parser:
    parser = _Parser(prog="evocell", description="Evolutionary CNN-architecture search engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a run directory with a seeded generation-0 population")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pop", type=int, default=12)
    p.add_argument("--out", dest="run_dir", default="run")
    p.add_argument("--width", type=int, default=32, help="uniform phase-1 channel width")
    p.add_argument("--gens", type=int, default=15, help="phase-1 generation budget")
    p.add_argument("--phase2-gens", type=int, default=10)
    p.add_argument("--classes", type=int, default=5)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("run", help="advance the run by N generations")
    _add_run_dir(p)
    p.add_argument("--gens", type=int, default=15)
    p.add_argument("--backend", choices=("surrogate", "external"), default=None)
    p.add_argument("--plugin", default=None, help="plugin command line for the external backend")
    p.add_argument("--parallelism", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="continue the run from its latest checkpoint")
    _add_run_dir(p)
    p.add_argument("--gens", type=int, default=10)
    p.set_defaults(func=cmd_run, backend=None, plugin=None, parallelism=None)

    p = sub.add_parser("status", help="show run progress")
    _add_run_dir(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("top", help="list the all-time best individuals")
    _add_run_dir(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_top)

    p = sub.add_parser("handpick", help="queue a hand-pick intervention for the next boundary")
    _add_run_dir(p)
    p.add_argument("--ids", required=True, help="comma-separated digests")
    p.add_argument("--reschedule", action="store_true",
                   help="re-initialize per-layer channels and enter phase 2")
    p.set_defaults(func=cmd_handpick)

    p = sub.add_parser("export", help="print a genome or compiled network document")
    _add_run_dir(p)
    p.add_argument("--id", dest="digest", required=True)
    p.add_argument("--what", choices=("genome", "network"), default="genome")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="serve the HTTP state/control API (and UI if built)")
    _add_run_dir(p)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", default=None, help="static dashboard bundle to mount")
    p.add_argument("--live", action="store_true", help="also run the engine loop in-process")
    p.add_argument("--gens", type=int, default=15, help="generations to run with --live")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="paired ablation: torque-guided vs random-cut crossover")
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--gens", type=int, default=15)
    p.add_argument("--pop", type=int, default=12)
    p.add_argument("--pair-weight", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.01)
    p.set_defaults(func=cmd_bench)

    return parser


def cmd_init(args) -> int:
    run_dir = Path(args.run_dir)
    if run_dir.exists() and any(run_dir.glob("gen_*.json")):
        print(f"error: {run_dir} already contains checkpoints", file=sys.stderr)
        return 2
    config = RunConfig(
        population_size=args.pop,
        max_generations=args.gens,
        phase2_generations=args.phase2_gens,
        phase1_width=args.width,
        seed=args.seed,
        num_classes=args.classes,
    )
    state = init_run(config, run_dir)
    print(f"initialized {run_dir} with {len(state.population)} individuals (seed {args.seed})")
    return 0


def cmd_run(args) -> int:
    state = load_run(args.run_dir)
    if args.backend:
        state.config.backend = args.backend
    if args.plugin:
        state.config.plugin_command = tuple(args.plugin.split())
    if args.parallelism:
        state.config.parallelism = args.parallelism
    if state.config.backend == "external" and not state.config.plugin_command:
        print("error: external backend requires --plugin", file=sys.stderr)
        return 1
    done = run_generations(state, args.gens, MailboxSource(args.run_dir), poll_wait=0.2)
    report = build_report(state)
    best = report.best
    best_line = f"best {best.fitness:.4f} ({best.digest})" if best else "no evaluations"
    print(f"ran {done} generation(s), now at generation {state.generation} "
          f"(phase {state.phase}); {best_line}")
    return 0


def cmd_status(args) -> int:
    state = load_run(args.run_dir)
    best = state.best()
    doc = {
        "generation": state.generation,
        "phase": state.phase,
        "paused": state.paused,
        "stopped": state.stopped,
        "history_rows": len(state.history),
        "best": best.to_doc() if best else None,
    }
    if args.json:
        print(json.dumps(doc, sort_keys=True, indent=2))
    else:
        print(f"generation {state.generation}  phase {state.phase}"
              f"{'  paused' if state.paused else ''}{'  stopped' if state.stopped else ''}")
        if best:
            print(f"best: {best.digest}  fitness {best.fitness:.4f}  params {best.params}")
        else:
            print("best: (no evaluated individuals yet)")
    return 0


def cmd_top(args) -> int:
    state = load_run(args.run_dir)
    rows = state.archive[: args.k]
    if args.json:
        print(json.dumps([ind.to_doc() for ind in rows], sort_keys=True, indent=2))
    else:
        print(f"{'digest':18} {'fitness':>8} {'params':>10} {'depth':>5} {'born':>4} op")
        for ind in rows:
            print(f"{ind.digest:18} {ind.fitness:8.4f} {ind.params:10d} "
                  f"{len(ind.genome):5d} {ind.born_gen:4d} {ind.op_trace}")
    return 0


def cmd_handpick(args) -> int:
    state = load_run(args.run_dir)
    digests = tuple(d.strip() for d in args.ids.split(",") if d.strip())
    if not digests:
        print("error: --ids is empty", file=sys.stderr)
        return 1
    known = {ind.digest for ind in state.population}
    known.update(ind.digest for ind in state.archive)
    missing = [d for d in digests if d not in known]
    if missing:
        print(f"error: unknown digests: {', '.join(missing)}", file=sys.stderr)
        return 3
    if args.reschedule and state.phase == 2:
        print("error: channel rescheduling is allowed only once, entering phase 2", file=sys.stderr)
        return 3
    write_mailbox(args.run_dir, Intervention(
        type="HandPick", digests=digests, reschedule_channels=args.reschedule,
    ))
    print(f"queued HandPick of {len(digests)} digest(s)"
          f"{' with channel rescheduling' if args.reschedule else ''}")
    return 0


def cmd_export(args) -> int:
    state = load_run(args.run_dir)
    lookup = {ind.digest: ind for ind in state.population}
    lookup.update({ind.digest: ind for ind in state.archive})
    ind = lookup.get(args.digest)
    if ind is None:
        print(f"error: unknown digest {args.digest}", file=sys.stderr)
        return 3
    if args.what == "genome":
        print(genome_dumps(ind.genome, indent=2))
    else:
        net = state.describe(ind.genome)
        doc = net.to_doc()
        doc["macs"] = mac_count(net)
        print(json.dumps(doc, sort_keys=True, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    ui_dir = args.ui
    if ui_dir is None:
        default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = default_ui if default_ui.is_dir() else None
    if args.live:
        state = load_run(args.run_dir)
        worker = threading.Thread(
            target=run_generations,
            args=(state, args.gens, MailboxSource(args.run_dir)),
            kwargs={"poll_wait": 0.5},
            daemon=True,
        )
        worker.start()
    app = create_app(args.run_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _bench_single(seed: int, guided: bool, args) -> tuple[float, int]:
    config = RunConfig(
        population_size=args.pop,
        max_generations=args.gens,
        operators=OperatorConfig(p_torque_guided=0.5 if guided else 0.0),
        surrogate=SurrogateSpec(pair_weight=args.pair_weight, noise_sigma=args.noise, seed=seed),
        seed=seed,
    )
    state = init_run(config)
    run_generations(state, args.gens)
    best = state.best()
    planted = config.surrogate.planted_pair
    pairs = sum(1 for key in genome_sets(best.genome) if key == planted)
    return best.fitness, pairs


def cmd_bench(args) -> int:
    rows = []
    for i in range(args.seeds):
        seed = 1000 + i
        g_fit, g_pairs = _bench_single(seed, True, args)
        r_fit, r_pairs = _bench_single(seed, False, args)
        rows.append({
            "seed": seed,
            "guided_best": g_fit, "guided_pairs": g_pairs,
            "random_best": r_fit, "random_pairs": r_pairs,
        })
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    guided_mean = statistics.mean(r["guided_best"] for r in rows)
    random_mean = statistics.mean(r["random_best"] for r in rows)
    print(f"seeds: {args.seeds}  generations: {args.gens}  population: {args.pop}")
    print(f"guided crossover mean best:  {guided_mean:.4f}")
    print(f"random crossover mean best:  {random_mean:.4f}")
    print(f"difference (guided - random): {guided_mean - random_mean:+.4f}")
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (CorruptCheckpoint, FormatVersionMismatch, FileNotFoundError, NotADirectoryError) as exc:
        print(f"run-directory error: {exc}", file=sys.stderr)
        return 2
    except EvoCellError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
