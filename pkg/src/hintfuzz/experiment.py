"""Seeded repetitions of one search mode on one service, with reports."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus import service_dir
from .harness import HttpHarness, InProcessHarness, Manifest, load_manifest, load_service, serve_http
from .llm.backends import BackendConfig, make_backend
from .metrics import Metrics, compute_metrics, emit_report
from .search import RunTranscript, Search, SearchConfig

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    BASELINE = "baseline"
    MIOHINT = "miohint"
    MIOHINT_NO_VE = "miohint-no-ve"

    @property
    def label(self) -> str:
        return {"baseline": "Baseline", "miohint": "MioHint", "miohint-no-ve": "MioHintNoVE"}[self.value]


class ExperimentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    service: str  # bundled service name or a directory with service.json
    mode: Mode = Mode.MIOHINT
    search: SearchConfig = field(default_factory=SearchConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    repetitions: int = 1
    out_dir: str | None = None
    harness: str = "inproc"  # or "http"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.repetitions < 1:
            raise ExperimentConfigError("repetitions must be at least 1")
        if self.harness not in ("inproc", "http"):
            raise ExperimentConfigError(f"unknown harness {self.harness!r}")


@dataclass
class ExperimentResult:
    metrics: Metrics
    transcripts: list
    manifest: Manifest
    files: list = field(default_factory=list)


def search_config_for(mode: Mode, base: SearchConfig, seed: int) -> SearchConfig:
    return replace(
        base,
        seed=seed,
        use_llm=mode is not Mode.BASELINE,
        value_expansion=mode is not Mode.MIOHINT_NO_VE,
    )


def run_once(service, manifest: Manifest, mode: Mode, search: SearchConfig, backend_cfg: BackendConfig, harness: str = "inproc"):
    backend = make_backend(backend_cfg) if mode is not Mode.BASELINE else None
    server = None
    try:
        if harness == "http":
            server = serve_http(service)
            h = HttpHarness(server.url)
        else:
            h = InProcessHarness(service)
        return Search(service, search, backend, h).run()
    finally:
        if server is not None:
            h.close()
            server.close()
        if backend is not None:
            backend.close()


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    root = service_dir(cfg.service)
    service = load_service(root)
    manifest = load_manifest(root / "manifest.json", service)
    transcripts, files = [], []
    out = Path(cfg.out_dir) / service.name / cfg.mode.value if cfg.out_dir else None
    for i in range(cfg.repetitions):
        seed = cfg.search.seed + i
        result = run_once(service, manifest, cfg.mode, search_config_for(cfg.mode, cfg.search, seed), cfg.backend, cfg.harness)
        log.info("%s %s rep %d: %d iterations, %d covered", service.name, cfg.mode.value, i, result.iterations, len(result.archive.covered))
        transcripts.append(result.transcript)
        if out is not None:
            path = out / f"rep-{i}.jsonl"
            result.transcript.write(path)
            files.append(path)
    metrics = compute_metrics(transcripts, manifest, cfg.mode.label)
    if out is not None:
        (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        files.append(out / "metrics.json")
        for fmt, name in (("table-text", "report.txt"), ("csv", "report.csv")):
            emit_report(metrics, fmt, out / name)
            files.append(out / name)
    return ExperimentResult(metrics, transcripts, manifest, files)


def recompute(out_dir, service: str, mode: Mode) -> Metrics:
    """Metrics rebuilt from the transcripts a previous run left in ``out_dir``."""
    root = service_dir(service)
    manifest = load_manifest(root / "manifest.json")
    mode = Mode(mode)
    folder = Path(out_dir) / manifest.service / mode.value
    paths = sorted(folder.glob("rep-*.jsonl"), key=lambda p: int(p.stem.split("-")[1]))
    return compute_metrics([RunTranscript.load(p) for p in paths], manifest, mode.label)
