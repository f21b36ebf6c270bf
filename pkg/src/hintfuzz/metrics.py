"""Metrics computed from run transcripts, and the comparison report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import fmean

from .harness import Manifest
from .model import Provenance

MUTATION_PROVENANCES = {Provenance.LLM_MUTATION.value, Provenance.RANDOM_MUTATION.value}
REPORT_COLUMNS = ("SUT", "mode", "LC", "TC", "MHR", "mutations", "avg ms", "TC sel")


class MalformedTranscript(ValueError):
    pass


@dataclass(frozen=True)
class RunMetrics:
    line_coverage: float  # % of executable lines
    target_coverage: float  # % of manifest hard targets
    selected_target_coverage: float  # % of targets selected during the search
    mutation_hit_rate: float  # % of mutation attempts that covered their target
    mutation_count: int
    avg_time_ms: float  # per evaluated test case
    hits: int
    covered_hard: int
    hard_total: int
    selected_total: int


@dataclass(frozen=True)
class Metrics:
    service: str
    mode: str
    runs: tuple = field(default_factory=tuple)

    def mean(self, name: str) -> float:
        return fmean(getattr(r, name) for r in self.runs) if self.runs else 0.0

    @property
    def line_coverage(self) -> float:
        return self.mean("line_coverage")

    @property
    def target_coverage(self) -> float:
        return self.mean("target_coverage")

    @property
    def selected_target_coverage(self) -> float:
        return self.mean("selected_target_coverage")

    @property
    def mutation_hit_rate(self) -> float:
        return self.mean("mutation_hit_rate")

    @property
    def mutation_count(self) -> float:
        return self.mean("mutation_count")

    @property
    def avg_time_ms(self) -> float:
        return self.mean("avg_time_ms")

    def to_dict(self) -> dict:
        keys = ("line_coverage", "target_coverage", "selected_target_coverage", "mutation_hit_rate", "mutation_count", "avg_time_ms")
        return {
            "service": self.service,
            "mode": self.mode,
            "mean": {k: getattr(self, k) for k in keys},
            "runs": [asdict(r) for r in self.runs],
        }


def _records(transcript) -> list:
    if hasattr(transcript, "records"):
        return transcript.records
    if isinstance(transcript, (str, Path)):
        text = Path(transcript).read_text(encoding="utf-8")
        try:
            return [json.loads(line) for line in text.splitlines() if line.strip()]
        except ValueError as e:
            raise MalformedTranscript(f"{transcript}: {e}") from e
    return list(transcript)


def _check(records: list) -> None:
    if not records:
        raise MalformedTranscript("empty transcript")
    for n, r in enumerate(records, 1):
        if not isinstance(r, dict):
            raise MalformedTranscript(f"record {n} is not an object")
        for key, types in (("iteration", int), ("provenance", str), ("new_coverage_count", int), ("elapsed_ms", (int, float))):
            if not isinstance(r.get(key), types) or isinstance(r.get(key), bool):
                raise MalformedTranscript(f"record {n}: bad or missing {key}")
        if r["provenance"] in MUTATION_PROVENANCES:
            if not isinstance(r.get("target_id"), str):
                raise MalformedTranscript(f"record {n}: mutation attempt without target_id")
            if not isinstance(r.get("covered_target", False), bool):
                raise MalformedTranscript(f"record {n}: covered_target must be a boolean")
        elif r["provenance"] != Provenance.RANDOM_INIT.value:
            raise MalformedTranscript(f"record {n}: unknown provenance {r['provenance']!r}")


def _pct(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


def run_metrics(transcript, manifest: Manifest) -> RunMetrics:
    records = _records(transcript)
    _check(records)
    covered, lines, selected = set(), set(), set()
    hits = attempts = 0
    for r in records:
        covered.update(r.get("new_targets", ()))
        lines.update((u, n) for u, n in r.get("new_lines", ()))
        if r["provenance"] in MUTATION_PROVENANCES:
            attempts += 1
            hits += bool(r.get("covered_target", False))
            selected.add(r["target_id"])
    hard = set(manifest.hard_ids)
    executable = set(manifest.executable_lines)
    return RunMetrics(
        line_coverage=_pct(len(lines & executable), len(executable)),
        target_coverage=_pct(len(covered & hard), len(hard)),
        selected_target_coverage=_pct(len(covered & selected), len(selected)),
        mutation_hit_rate=_pct(hits, attempts),
        mutation_count=attempts,
        avg_time_ms=fmean(r["elapsed_ms"] for r in records),
        hits=hits,
        covered_hard=len(covered & hard),
        hard_total=len(hard),
        selected_total=len(selected),
    )


def compute_metrics(transcripts, manifest: Manifest, mode: str = "") -> Metrics:
    """Per-run metrics for every transcript plus their means."""
    transcripts = list(transcripts)
    if not transcripts:
        raise MalformedTranscript("no transcripts")
    return Metrics(manifest.service, mode, tuple(run_metrics(t, manifest) for t in transcripts))


def report_rows(metrics) -> list:
    return [
        [
            m.service,
            m.mode,
            f"{m.line_coverage:.2f}",
            f"{m.target_coverage:.2f}",
            f"{m.mutation_hit_rate:.2f}",
            f"{m.mutation_count:.2f}",
            f"{m.avg_time_ms:.2f}",
            f"{m.selected_target_coverage:.2f}",
        ]
        for m in metrics
    ]


def render_report(metrics, fmt: str = "table-text") -> str:
    metrics = [metrics] if isinstance(metrics, Metrics) else list(metrics)
    rows = report_rows(metrics)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
        return buf.getvalue()
    if fmt != "table-text":
        raise ValueError(f"unknown report format {fmt!r}")
    table = [list(REPORT_COLUMNS), *rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(REPORT_COLUMNS))]
    lines = []
    for n, row in enumerate(table):
        cells = [c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def emit_report(metrics, fmt: str = "table-text", path=None) -> str:
    """Render the comparison table; also write it to ``path`` when given."""
    text = render_report(metrics, fmt)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    return text


def parse_report_csv(text: str) -> list:
    """Rows of a CSV report as dicts keyed by column name."""
    return list(csv.DictReader(io.StringIO(text)))
