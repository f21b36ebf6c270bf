"""Command line entry point: ``hintfuzz run|report|services|serve``."""

from __future__ import annotations

import argparse
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from .corpus import SERVICES, service_dir
from .experiment import ExperimentConfig, ExperimentConfigError, Mode, recompute, run_experiment
from .harness import SpecError, load_manifest, load_service, serve_http
from .llm.backends import BackendConfig, BackendConfigError, BackendMode
from .metrics import MalformedTranscript, emit_report
from .search import SearchConfig, SearchConfigError

log = logging.getLogger("hintfuzz")

EXIT_CONFIG = 2
EXIT_FAILURE = 1

_DURATION_RE = re.compile(r"(\d+(?:\.\d+)?)(s|m|h)")
_UNITS = {"s": 1, "m": 60, "h": 3600}


class ConfigError(ValueError):
    pass


def parse_budget(text: str) -> dict:
    """``2000`` is an iteration count; ``90s``, ``10m`` and ``1h`` are wall-clock."""
    text = text.strip()
    if text.isdigit():
        if int(text) <= 0:
            raise ConfigError("budget must be positive")
        return {"iterations": int(text), "seconds": None}
    m = _DURATION_RE.fullmatch(text)
    if not m or float(m.group(1)) <= 0:
        raise ConfigError(f"bad budget {text!r}: use an iteration count or a duration like 30s, 10m, 1h")
    return {"iterations": None, "seconds": float(m.group(1)) * _UNITS[m.group(2)]}


def _split(values) -> list:
    return [v for item in values for v in item.split(",") if v]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hintfuzz", description="Whitebox REST fuzzing with LLM-assisted mutation hints.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run search experiments")
    run.add_argument("--service", action="append", required=True, help="bundled service name or directory (repeatable, comma separated)")
    run.add_argument("--mode", action="append", default=None, help="baseline, miohint or miohint-no-ve (repeatable, comma separated)")
    run.add_argument("--budget", default="2000", help="iterations (e.g. 2000) or wall-clock (e.g. 10m)")
    run.add_argument("--backend", default="solver", help="solver, scripted:<file> or remote:<url>")
    run.add_argument("--model", default="gpt-4o", help="model name sent to a remote backend")
    run.add_argument("--record", default=None, help="append backend exchanges to this replay file")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--reps", type=int, default=1)
    run.add_argument("--min-llm", type=int, default=2, help="minimum LLM-assisted mutations per iteration (M)")
    run.add_argument("--clock", choices=("auto", "logical", "wall"), default="auto")
    run.add_argument("--harness", choices=("inproc", "http"), default="inproc")
    run.add_argument("--out", default="results")

    rep = sub.add_parser("report", help="recompute reports from saved transcripts")
    rep.add_argument("--out", default="results")
    rep.add_argument("--format", choices=("table-text", "csv"), default="table-text")

    sub.add_parser("services", help="list bundled services")

    srv = sub.add_parser("serve", help="serve one service over HTTP")
    srv.add_argument("--service", required=True)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8080)
    return p


def _configs(args) -> list:
    budget = parse_budget(args.budget)
    if args.seed < 0 or args.seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    try:
        modes = [Mode(m) for m in _split(args.mode or ["miohint"])]
    except ValueError as e:
        raise ConfigError(str(e)) from None
    backend = BackendConfig.from_spec(args.backend, model=args.model, record_path=args.record)
    clock = args.clock
    if clock == "auto":
        clock = "wall" if backend.mode is BackendMode.REMOTE_CHAT else "logical"
    search = SearchConfig(seed=args.seed, min_llm_queries=args.min_llm, clock=clock, **budget)
    out = []
    for name in _split(args.service):
        root = service_dir(name)
        if not (root / "manifest.json").is_file():
            raise ConfigError(f"{root} has no manifest.json")
        for mode in modes:
            out.append(ExperimentConfig(str(root), mode, search, backend, args.reps, args.out, args.harness))
    return out


def cmd_run(args) -> int:
    configs = _configs(args)
    metrics = []
    for cfg in configs:
        result = run_experiment(cfg)
        metrics.append(result.metrics)
    text = emit_report(metrics, "table-text", Path(args.out) / "report.txt")
    emit_report(metrics, "csv", Path(args.out) / "report.csv")
    sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    root = Path(args.out)
    metrics = []
    for svc_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for mode in Mode:
            if any((svc_dir / mode.value).glob("rep-*.jsonl")):
                metrics.append(recompute(root, svc_dir.name, mode))
    if not metrics:
        raise ConfigError(f"no transcripts under {root}")
    sys.stdout.write(emit_report(metrics, args.format))
    return 0


def cmd_services(_args) -> int:
    for name in SERVICES:
        root = service_dir(name)
        si = load_service(root)
        hard = load_manifest(root / "manifest.json", si).hard_targets if (root / "manifest.json").exists() else []
        print(f"{name:10s} endpoints={len(si.spec.endpoints)} targets={len(si.targets)} hard={len(hard)}")
    return 0


def cmd_serve(args) -> int:
    si = load_service(service_dir(args.service))
    handle = serve_http(si, args.host, args.port)
    print(f"serving {si.name} at {handle.url} (Ctrl-C to stop)", flush=True)
    try:
        handle.wait()
    except KeyboardInterrupt:
        pass
    finally:
        handle.close()
    return 0


COMMANDS = {"run": cmd_run, "report": cmd_report, "services": cmd_services, "serve": cmd_serve}

CONFIG_ERRORS = (
    ConfigError,
    SpecError,
    BackendConfigError,
    SearchConfigError,
    ExperimentConfigError,
    FileNotFoundError,
    MalformedTranscript,
)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except CONFIG_ERRORS as e:
        print(f"hintfuzz: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - report, do not dump a traceback
        log.debug("failure", exc_info=True)
        print(f"hintfuzz: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
