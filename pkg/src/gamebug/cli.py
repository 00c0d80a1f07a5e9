"""Command-line entry point: ``gamebug <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ingest, synth
from .analyzer import FlagConfig, completion_table, flag_pain_points, stats_document
from .clusterer import ClusterConfig
from .fileio import atomic_write_text, write_json
from .gateway import MODES, Gateway, GatewayError, TokenBucket
from .graph import GraphError, GraphSyntaxError, load_graph
from .pipeline import (
    ConfigError,
    PipelineError,
    RunConfig,
    build_report,
    cluster_flags,
    ingest_logs,
    load_clusters,
    load_summaries,
    run_pipeline,
    summarize_all,
    write_report,
)
from .summarizer import SummarizerConfig, bundled_examples, parse_examples

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_GATEWAY = 4
EXIT_VALIDATION = 5

log = logging.getLogger("gamebug")


def _add_graph(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", type=Path, required=True, help="logic graph file")


def _add_gateway(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default="replay", help="gateway backend (default: replay)")
    p.add_argument("--store", type=Path, help="replay store directory (record/replay)")
    p.add_argument("--script", type=Path, help="JSON list of canned replies (script mode)")
    p.add_argument("--rate-limit", type=float, default=None, help="requests per minute (live/record)")
    p.add_argument("--retries", type=int, default=2, help="attempts per section or grouping (k)")


def _add_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau-low", type=float, default=0.20)
    p.add_argument("--drop-ratio", type=float, default=0.5)
    p.add_argument("--tau-high", type=float, default=None)


def _flag_config(args) -> FlagConfig:
    try:
        return FlagConfig(args.tau_low, args.drop_ratio, args.tau_high)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _gateway(args) -> Gateway:
    if args.mode == "script":
        if args.script is None:
            raise ConfigError("--script is required in script mode")
        replies = json.loads(args.script.read_text(encoding="utf-8"))
        if not isinstance(replies, list) or not all(isinstance(r, str) for r in replies):
            raise ConfigError("script file must hold a JSON list of strings")
        return Gateway.scripted(replies)
    try:
        gw = Gateway.from_env(args.mode, store=args.store)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.rate_limit:
        gw.limiter = TokenBucket(args.rate_limit)
    return gw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gamebug", description="Find logic and balance bugs in text-game logs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clean", help="convert raw logs into the cleaned tagged format")
    p.add_argument("logs", type=Path, nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--round-length", type=int, default=ingest.DEFAULT_ROUND_LENGTH)

    p = sub.add_parser("summarize", help="stage 1 summaries for every log in a directory")
    _add_graph(p)
    p.add_argument("--logs", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--window", type=int, default=ingest.DEFAULT_WINDOW)
    p.add_argument("--round-length", type=int, default=ingest.DEFAULT_ROUND_LENGTH)
    p.add_argument("--examples", type=Path)
    _add_gateway(p)

    p = sub.add_parser("analyze", help="completion table and pain-point flags from summaries")
    _add_graph(p)
    p.add_argument("--summaries", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_flags(p)

    p = sub.add_parser("cluster", help="group synopses of flagged scenes")
    _add_graph(p)
    p.add_argument("--summaries", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--no-fallback", action="store_true")
    _add_flags(p)
    _add_gateway(p)

    p = sub.add_parser("report", help="render the report from persisted summaries and clusters")
    _add_graph(p)
    p.add_argument("--out", type=Path, required=True, help="run directory holding summaries/ and clusters/")
    _add_flags(p)

    p = sub.add_parser("run", help="the whole pipeline end to end")
    _add_graph(p)
    p.add_argument("--logs", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--window", type=int, default=ingest.DEFAULT_WINDOW)
    p.add_argument("--round-length", type=int, default=ingest.DEFAULT_ROUND_LENGTH)
    p.add_argument("--examples", type=Path)
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--no-fallback", action="store_true")
    _add_flags(p)
    _add_gateway(p)

    p = sub.add_parser("simulate", help="generate synthetic logs, ground truth and a perfect script")
    _add_graph(p)
    p.add_argument("--cohort", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", type=Path, help="JSON object: scene id -> success probability")
    p.add_argument("--wander", type=float, default=0.1)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--round-length", type=int, default=ingest.DEFAULT_ROUND_LENGTH)
    p.add_argument("--window", type=int, default=ingest.DEFAULT_WINDOW)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _examples(path: Path | None):
    return parse_examples(path.read_text(encoding="utf-8")) if path else bundled_examples()


def _run(args) -> int:
    if args.command == "clean":
        for path in args.logs:
            cleaned = ingest.load_log(path, args.round_length)
            atomic_write_text(args.out / f"{cleaned.session_id}.txt", ingest.render_cleaned(cleaned))
        return EXIT_OK

    if not args.graph.is_file():
        raise ConfigError(f"graph file not found: {args.graph}")
    graph = load_graph(args.graph)

    if args.command == "simulate":
        policy = json.loads(args.policy.read_text(encoding="utf-8")) if args.policy else {}
        cohort = synth.generate_cohort(
            graph, args.cohort, args.seed, args.rounds, args.round_length, policy, args.wander
        )
        for cleaned, truth in cohort:
            atomic_write_text(args.out / "logs" / f"{cleaned.session_id}.log", synth.render_raw(cleaned, args.round_length))
            atomic_write_text(args.out / "truth" / f"{truth.session_id}.json", truth.to_json())
        write_json(args.out / "script.json", synth.perfect_script(graph, cohort, args.window))
        return EXIT_OK

    if args.command == "run":
        config = RunConfig(
            graph_path=args.graph,
            log_dir=args.logs,
            out_dir=args.out,
            window=args.window,
            round_length=args.round_length,
            flags=_flag_config(args),
            examples_path=args.examples,
            max_attempts=args.retries,
            cluster_threshold=args.threshold,
            cluster_fallback=not args.no_fallback,
        )
        config.validate()
        report = run_pipeline(config, _gateway(args))
        print(f"{report.cohort_size} sessions, {len(report.flags)} flagged scenes -> {args.out / 'report.md'}")
        return EXIT_OK

    if args.command == "summarize":
        logs, excluded = ingest_logs(args.logs, args.round_length, args.out)
        sconf = SummarizerConfig(window=args.window, max_attempts=args.retries, examples=_examples(args.examples))
        summaries, skipped = summarize_all(graph, logs, _gateway(args), sconf, args.out)
        for e in excluded + skipped:
            log.warning("excluded %s at %s: %s", e["session"], e["stage"], e["error"])
        if not summaries and skipped:
            raise GatewayError(f"every session failed at the gateway; last error: {skipped[-1]['error']}")
        return EXIT_OK

    summaries = load_summaries(args.out / "summaries" if args.command == "report" else args.summaries)
    if not summaries:
        raise PipelineError("no summaries found")
    flags_cfg = _flag_config(args)
    stats = completion_table(summaries, graph)
    flags = flag_pain_points(stats, graph, flags_cfg)

    if args.command == "analyze":
        write_json(args.out / "stats.json", stats_document(stats, flags, graph))
    elif args.command == "cluster":
        cconf = ClusterConfig(max_attempts=args.retries, fallback=not args.no_fallback, threshold=args.threshold)
        cluster_flags(graph, summaries, flags, _gateway(args), cconf, args.out)
    elif args.command == "report":
        report = build_report(graph, summaries, flags_cfg, load_clusters(args.out / "clusters"))
        write_report(report, args.out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except (GraphSyntaxError, GraphError) as exc:
        log.error("graph: %s", exc)
        return EXIT_CONFIG
    except (ingest.LogFormatError, OSError) as exc:
        log.error("ingestion: %s", exc)
        return EXIT_INGEST
    except GatewayError as exc:
        log.error("gateway: %s", exc)
        return EXIT_GATEWAY
    except PipelineError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except ValueError as exc:
        log.error("validation: %s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
