"""The MIO search loop with a budget of LLM-assisted mutations per iteration."""

from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

from .analysis import AnalysisConfig, RelatedCode, extract_related_code
from .harness import InProcessHarness, ServiceInstance
from .llm.assist import AssistConfig, llm_assisted
from .llm.backends import Backend
from .llm.feedback import FeedbackLedger, Outcome, record_feedback
from .model import Archive, ArchiveEntry, ExecutionResult, Provenance, Target, TargetKind, TestCase, coverage_not_fewer
from .mutation import MutationConfig, random_mutate, sample_random_test_case

log = logging.getLogger(__name__)

# Deterministic cost model used by the logical clock.
LOGICAL_MS_PER_ACTION = 1.0
LOGICAL_MS_PER_QUERY = 10.0


class NoEligibleTarget(LookupError):
    pass


class EmptyPopulation(LookupError):
    pass


class SearchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    iterations: int | None = 2000
    seconds: float | None = None  # wall-clock budget; used when iterations is None
    min_llm_queries: int = 2  # M
    use_llm: bool = True
    value_expansion: bool = True
    population_cap: int = 10
    initial_tests: int = 10
    mutations_start: int = 1
    mutations_cap: int = 16
    seed: int = 0
    clock: str = "logical"  # "logical" or "wall"
    mutation: MutationConfig = field(default_factory=MutationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def __post_init__(self):
        if self.min_llm_queries < 1:
            raise SearchConfigError("M must be at least 1")
        if self.iterations is None and self.seconds is None:
            raise SearchConfigError("a budget in iterations or seconds is required")
        if self.iterations is not None and self.iterations <= 0:
            raise SearchConfigError("iteration budget must be positive")
        if self.seconds is not None and self.seconds <= 0:
            raise SearchConfigError("time budget must be positive")
        if self.population_cap < 1 or self.initial_tests < 1:
            raise SearchConfigError("population cap and initial tests must be positive")
        if not 1 <= self.mutations_start <= self.mutations_cap:
            raise SearchConfigError("need 1 <= mutations_start <= mutations_cap")
        if self.clock not in ("logical", "wall"):
            raise SearchConfigError(f"unknown clock {self.clock!r}")


def mutation_budget(up_to_n_times: int, has_related_code: bool, m: int) -> tuple:
    """``(llmTimes, totalTimes)`` for one iteration."""
    if up_to_n_times < 0 or m < 1:
        raise ValueError("need up_to_n_times >= 0 and M >= 1")
    llm_times = max(up_to_n_times // 2, m) if has_related_code else 0
    return llm_times, max(up_to_n_times, llm_times)


def number_of_mutations(failures: int, start: int = 1, cap: int = 16) -> int:
    """Starts at ``start`` and doubles per consecutive failure, up to ``cap``."""
    return min(start << min(failures, 32), cap)


def choose_target(archive: Archive, rng: random.Random) -> Target:
    eligible = archive.uncovered_with_population()
    if not eligible:
        raise NoEligibleTarget("no uncovered target has an archived test case")
    return rng.choice(eligible)


def choose_entry(archive: Archive, t: Target, rng: random.Random) -> ArchiveEntry:
    pop = archive.populations.get(t)
    if not pop:
        raise EmptyPopulation(t.id)
    best = max(e.score for e in pop)
    return rng.choice([e for e in pop if e.score == best])


def choose_test_case(archive: Archive, t: Target, rng: random.Random) -> TestCase:
    return choose_entry(archive, t, rng).test_case


def evaluate(tc: TestCase, harness) -> ExecutionResult:
    result = harness.execute(tc)
    if result.failure:
        log.info("evaluation failed, counted as zero coverage: %s", result.failure)
    return result


def update_archive(archive: Archive, tc: TestCase, before: ExecutionResult | None, after: ExecutionResult) -> tuple:
    """Archive ``tc`` when it covers no fewer targets than ``before``.

    A test case that covers fewer targets is kept out of the populations, but
    any target it covers for the first time is still credited to it: an
    early-exit branch always covers fewer targets than the path it cuts short.

    Returns ``(accepted, newly covered targets, newly covered lines)``.
    """
    accepted = before is None or coverage_not_fewer(after.coverage, before.coverage)
    new_targets = sorted((t for t in after.coverage.covered_targets if t not in archive.covered), key=lambda t: t.sort_key)
    if not accepted and not new_targets:
        return False, [], []
    for t in new_targets:
        archive.mark_covered(t, tc)
        archive.populations.pop(t, None)
    new_lines = sorted(after.coverage.covered_lines - archive.covered_lines)
    archive.covered_lines.update(new_lines)
    if not accepted:
        return False, new_targets, new_lines
    entry_for = {}
    for t, score in after.heuristics.items():
        if score > 0 and t not in archive.covered:
            entry = entry_for.get(score)
            if entry is None:
                entry = entry_for[score] = ArchiveEntry(tc, score, after)
            archive.insert(t, entry)
    return True, new_targets, new_lines


class RunTranscript:
    """One JSON record per evaluated test case, in attempt order."""

    def __init__(self, records=None):
        self.records: list = list(records or [])

    def append(self, record: dict) -> None:
        self.records.append(record)

    def mutation_records(self) -> list:
        return [r for r in self.records if r["provenance"] != Provenance.RANDOM_INIT.value]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> RunTranscript:
        text = Path(path).read_text(encoding="utf-8")
        return cls(json.loads(line) for line in text.splitlines() if line.strip())

    def __len__(self):
        return len(self.records)


@dataclass
class SearchResult:
    archive: Archive
    transcript: RunTranscript
    ledger: FeedbackLedger
    iterations: int
    stopped_early: bool = False


class _Clock:
    def __init__(self, kind: str):
        self.kind = kind
        self._start = 0.0

    def start(self) -> None:
        self._start = time.perf_counter()

    def elapsed_ms(self, actions: int, queries: int) -> float:
        if self.kind == "logical":
            return actions * LOGICAL_MS_PER_ACTION + queries * LOGICAL_MS_PER_QUERY
        return round((time.perf_counter() - self._start) * 1000.0, 3)


def _has_related_code(t: Target) -> bool:
    return t.kind in (TargetKind.BRANCH, TargetKind.METHOD_REPLACEMENT)


class Search:
    def __init__(self, service: ServiceInstance, cfg: SearchConfig, backend: Backend | None = None, harness=None):
        if cfg.use_llm and backend is None:
            raise SearchConfigError("LLM-assisted search needs a backend")
        self.service = service
        self.cfg = cfg
        self.harness = harness or InProcessHarness(service)
        self.rng = random.Random(cfg.seed)
        self.apis = service.spec.endpoints
        self.archive = Archive(population_cap=cfg.population_cap)
        self.ledger = FeedbackLedger()
        self.transcript = RunTranscript()
        self.assist = AssistConfig(backend, self.rng, cfg.mutation) if cfg.use_llm else None
        self.failures: dict = {}
        self._related: dict = {}
        self._clock = _Clock(cfg.clock)

    def related_code(self, t: Target) -> RelatedCode | None:
        if t not in self._related:
            rc = None
            if _has_related_code(t):
                try:
                    rc = extract_related_code(self.service.program, t, self.cfg.analysis)
                    if not self.cfg.value_expansion:
                        rc = rc.without_value_expansion()
                except LookupError as e:
                    log.info("no related code for %s: %s", t.id, e)
            self._related[t] = rc
        return self._related[t]

    def _record(self, **fields) -> None:
        self.transcript.append({k: v for k, v in fields.items() if v is not None})

    def seed(self) -> None:
        for _ in range(self.cfg.initial_tests):
            self._clock.start()
            tc = sample_random_test_case(self.apis, self.rng, self.cfg.mutation)
            after = evaluate(tc, self.harness)
            _, new_targets, new_lines = update_archive(self.archive, tc, None, after)
            self._record(
                iteration=0,
                target_id=None,
                provenance=Provenance.RANDOM_INIT.value,
                new_coverage_count=len(self.archive.covered),
                new_targets=[t.id for t in new_targets],
                new_lines=[list(x) for x in new_lines],
                elapsed_ms=self._clock.elapsed_ms(len(tc.actions), 0),
            )

    def iteration(self, n: int) -> None:
        cfg, archive = self.cfg, self.archive
        t = choose_target(archive, self.rng)
        entry = choose_entry(archive, t, self.rng)
        chosen, before = entry.test_case, entry.result
        rc = self.related_code(t) if self.assist is not None else None
        up_to = number_of_mutations(self.failures.get(t, 0), cfg.mutations_start, cfg.mutations_cap)
        llm_times, total_times = mutation_budget(up_to, rc is not None, cfg.min_llm_queries)
        for i in range(1, total_times + 1):
            self._clock.start()
            fallback = None
            hint = None
            if i <= llm_times:
                outcome = llm_assisted(chosen, self.apis, rc, self.assist, self.ledger)
                new, fallback = outcome.test_case, outcome.fallback
                hint = None if fallback else new.hint
                provenance = Provenance.LLM_MUTATION
            else:
                new = random_mutate(chosen, self.apis, self.rng, cfg.mutation)
                provenance = Provenance.RANDOM_MUTATION
            already = t in archive.covered
            after = evaluate(new, self.harness)
            hit = not already and t in after.coverage.covered_targets
            if provenance is Provenance.LLM_MUTATION and not fallback:
                record_feedback(self.ledger, t, hint, Outcome.TARGET_COVERED if t in after.coverage.covered_targets else Outcome.NOT_COVERED)
            archive.record_attempt(t, hit)
            accepted, new_targets, new_lines = update_archive(archive, new, before, after)
            if accepted:
                chosen, before = new, after
            self._record(
                iteration=n,
                attempt=i,
                target_id=t.id,
                provenance=provenance.value,
                fallback=fallback,
                hint=hint.to_dict() if hint is not None else None,
                covered_target=hit,
                accepted=accepted,
                new_coverage_count=len(archive.covered),
                new_targets=[x.id for x in new_targets],
                new_lines=[list(x) for x in new_lines],
                llm_times=llm_times,
                total_times=total_times,
                elapsed_ms=self._clock.elapsed_ms(len(new.actions), 1 if provenance is Provenance.LLM_MUTATION else 0),
            )
        if t in archive.covered:
            self.failures.pop(t, None)
        else:
            self.failures[t] = self.failures.get(t, 0) + 1

    def run(self) -> SearchResult:
        self.seed()
        started = time.monotonic()
        n = 0
        stopped = False
        while True:
            if self.cfg.iterations is not None:
                if n >= self.cfg.iterations:
                    break
            elif time.monotonic() - started >= self.cfg.seconds:
                break
            try:
                self.iteration(n + 1)
            except NoEligibleTarget:
                log.info("every reachable target is covered after %d iterations", n)
                stopped = True
                break
            n += 1
        return SearchResult(self.archive, self.transcript, self.ledger, n, stopped)


def run_search(service: ServiceInstance, cfg: SearchConfig, backend: Backend | None = None, harness=None) -> tuple:
    """Run the search; returns ``(Archive, RunTranscript)``."""
    result = Search(service, cfg, backend, harness).run()
    return result.archive, result.transcript
