"""Command-line entry point: ask | plan | bench | record-fixtures."""
import argparse
import asyncio
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from loguru import logger

from backend import __version__
from backend.agents.reporter import write_report
from backend.benchmark import (
    evaluate, evaluate_ablation, format_result, format_results, load_questions, write_results,
)
from backend.config import EngineConfig, load_config, settings
from backend.errors import EngineError
from backend.models import ExecutionOptions, FixturesMode
from backend.pipeline import SearchPipeline, build_services
from backend.utils.dates import parse_iso
from backend.utils.logger import configure_logging

IO_EXIT_CODE = 5


def parse_now(text: str) -> datetime:
    try:
        return parse_iso(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO-8601 timestamp: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help=f"Engine config JSON (default: {settings.CONFIG_PATH})")
    common.add_argument("--now", type=parse_now, default=None,
                        help="Reference time, ISO-8601 UTC (default: wall clock)")
    common.add_argument("--out", type=Path, default=None, help="Output directory")
    common.add_argument("--fixtures-mode", choices=[m.value for m in FixturesMode], default=None,
                        help="Connector fixtures mode (overrides config)")
    common.add_argument("--no-rewriter", action="store_true", help="Disable the query rewriter")
    common.add_argument("--no-temporal", action="store_true", help="Disable temporal weighting")
    common.add_argument("--max-parallel", type=int, default=None,
                        help="Nodes executed concurrently (scripted runs: keep 1)")
    common.add_argument("--log-level", default=None, help="Log level (default: LOG_LEVEL)")

    parser = argparse.ArgumentParser(
        prog="finsearch",
        description="Search-graph financial research engine",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    ask = commands.add_parser("ask", parents=[common], help="Plan, search and write a report")
    ask.add_argument("query", help="Financial question")

    plan = commands.add_parser("plan", parents=[common], help="Print the validated plan only")
    plan.add_argument("query", help="Financial question")

    bench = commands.add_parser("bench", parents=[common], help="Run the four-choice benchmark")
    bench.add_argument("--questions", type=Path, required=True, help="Question JSONL file")
    bench.add_argument("--jobs", type=int, default=1, help="Concurrent questions (live mode)")
    bench.add_argument("--no-search", action="store_true",
                       help="Baseline: answer without planning or retrieval")
    bench.add_argument("--ablation", action="store_true",
                       help="Run the rewriter x temporal-weighting grid")

    record = commands.add_parser("record-fixtures", parents=[common],
                                 help="Run live and persist connector payloads and LLM replies")
    record.add_argument("query", help="Financial question")
    return parser


def load_engine(args: argparse.Namespace, mode: Optional[FixturesMode] = None) -> EngineConfig:
    """Config file plus CLI overrides, checked for startup errors"""
    config = load_config(args.config or settings.CONFIG_PATH)
    if mode is not None:
        config.fixtures.mode = mode
    elif args.fixtures_mode:
        config.fixtures.mode = FixturesMode(args.fixtures_mode)
    if args.out is not None:
        config.output_dir = args.out
    return config.check()


def execution_options(args: argparse.Namespace, config: EngineConfig) -> ExecutionOptions:
    updates = {}
    if args.no_rewriter:
        updates["enable_rewriter"] = False
    if args.no_temporal:
        updates["enable_temporal_weighting"] = False
    if args.max_parallel is not None:
        updates["max_parallel_nodes"] = args.max_parallel
    return ExecutionOptions.model_validate({**config.execution.model_dump(), **updates})


def reference_now(args: argparse.Namespace) -> datetime:
    return args.now or datetime.now(timezone.utc)


def _ask(args: argparse.Namespace, config: EngineConfig) -> Path:
    services = build_services(config)
    pipeline = SearchPipeline(services)
    result = asyncio.run(pipeline.ask(args.query, reference_now(args),
                                      execution_options(args, config)))

    out_dir = Path(config.output_dir)
    path = write_report(result.report, out_dir, result.failures)
    (out_dir / "graph.json").write_text(result.graph.to_json() + "\n", encoding="utf-8")
    services.events.write_jsonl(out_dir / "events.jsonl")
    services.save_recorded_script()
    return path


def cmd_ask(args: argparse.Namespace) -> int:
    config = load_engine(args)
    path = _ask(args, config)
    print(path)
    return 0


def cmd_plan(args: argparse.Namespace) -> int:
    config = load_engine(args)
    pipeline = SearchPipeline(build_services(config))
    ctx = pipeline.prepare(args.query, reference_now(args))
    graph = pipeline.plan(ctx)
    print(graph.to_json())
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_engine(args)
    questions = load_questions(args.questions)
    opts = execution_options(args, config)

    if args.ablation:
        results = asyncio.run(evaluate_ablation(questions, lambda: build_services(config),
                                                opts, args.jobs))
        print(format_results(results))
    else:
        result = asyncio.run(evaluate(questions, build_services(config), opts,
                                      search=not args.no_search, jobs=args.jobs))
        results = [result]
        print(format_result(result))

    out = Path(config.output_dir)
    path = write_results(results, out if out.suffix == ".json" else out / "results.json")
    logger.info("results written to {}", path)
    return 0


def cmd_record_fixtures(args: argparse.Namespace) -> int:
    config = load_engine(args, mode=FixturesMode.RECORD)
    path = _ask(args, config)
    print(path)
    print(f"Recorded payloads in {config.fixtures.directory}. Review the captured LLM replies "
          f"in {config.fixtures.directory / 'llm_script.recorded.json'} and save them as the "
          f"scenario script to replay this run offline.")
    return 0


COMMANDS = {
    "ask": cmd_ask,
    "plan": cmd_plan,
    "bench": cmd_bench,
    "record-fixtures": cmd_record_fixtures,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "record-fixtures" and args.fixtures_mode == FixturesMode.REPLAY.value:
        parser.error("record-fixtures cannot run in replay mode")
    if args.max_parallel is not None and args.max_parallel < 1:
        parser.error("--max-parallel must be at least 1")
    configure_logging(args.log_level)

    try:
        return COMMANDS[args.command](args)
    except EngineError as e:
        logger.error("{}: {}", type(e).__name__, e)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error("I/O error: {}", e)
        print(f"error: {e}", file=sys.stderr)
        return IO_EXIT_CODE


if __name__ == "__main__":
    sys.exit(main())
