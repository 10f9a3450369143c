"""
The fuzzing loop: select seed, ask the oracle for a plan, apply each planned
mutation to the unmutated seed, execute, classify, record.

One mutation per execution; the oracle is queried once per seed selection.
With built-in targets and ``workers == 1`` a campaign is a pure function of
its config, so reruns reproduce the trace and report byte for byte.
"""

from __future__ import annotations

import json
import logging
import random
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from mutafuzz import collector as coll
from mutafuzz import metrics
from mutafuzz.corpus import Corpus, TestCase
from mutafuzz.errors import InvalidConfig, NoRecords, RemoteUnavailable, TargetSpawnFailure
from mutafuzz.harness import TargetSpec, execute
from mutafuzz.metrics import CampaignStats, TraceEntry
from mutafuzz.mutation import apply
from mutafuzz.targets import BUILTIN_TARGETS
from mutafuzz.oracle import CountModel, CountOracle, OracleConfig, RemoteOracle, UniformOracle, train_count_model

log = logging.getLogger(__name__)

ORACLES = ("uniform", "count", "remote")


@dataclass
class CampaignConfig:
    target: TargetSpec
    seed_dir: str
    oracle: str = "uniform"
    model_path: str | None = None
    endpoint: str | None = None
    budget_execs: int | None = None
    budget_seconds: float | None = None
    rng_seed: int = 0
    oracle_config: OracleConfig = field(default_factory=OracleConfig)
    output_dir: str | None = None
    gain_bucket: int = 1000
    workers: int = 1
    remote_timeout: float = 5.0
    prompt_template: str | None = None
    instruction: str = coll.DEFAULT_INSTRUCTION
    max_seed_bytes: int = coll.DEFAULT_MAX_SEED_BYTES
    split_ratio: float = 0.9
    write_trace: bool = False

    def validate(self) -> None:
        if self.oracle not in ORACLES:
            raise InvalidConfig(f"oracle must be one of {ORACLES}, got {self.oracle!r}")
        if self.oracle == "count" and not self.model_path:
            raise InvalidConfig("count oracle needs a model path")
        if self.oracle == "remote" and not self.endpoint:
            raise InvalidConfig("remote oracle needs an endpoint")
        if self.budget_execs is None and self.budget_seconds is None:
            raise InvalidConfig("set an execution budget, a time budget, or both")
        if (self.budget_execs or 0) < 0 or (self.budget_seconds or 0) < 0:
            raise InvalidConfig("budgets cannot be negative")
        if self.workers < 1:
            raise InvalidConfig("workers must be >= 1")
        if self.gain_bucket < 1:
            raise InvalidConfig("gain_bucket must be >= 1")
        if not self.seed_dir or not Path(self.seed_dir).is_dir():
            raise InvalidConfig(f"seed directory {self.seed_dir!r} does not exist")

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": str(self.target),
            "timeout_ms": self.target.timeout_ms,
            "mem_limit": self.target.mem_limit,
            "seed_dir": self.seed_dir,
            "oracle": self.oracle,
            "model_path": self.model_path,
            "endpoint": self.endpoint,
            "budget_execs": self.budget_execs,
            "budget_seconds": self.budget_seconds,
            "rng_seed": self.rng_seed,
            "top_p": self.oracle_config.top_p,
            "k_max": self.oracle_config.k_max,
            "temperature": self.oracle_config.temperature,
            "smoothing": self.oracle_config.smoothing,
            "output_dir": self.output_dir,
            "gain_bucket": self.gain_bucket,
            "workers": self.workers,
        }


@dataclass
class CampaignReport:
    config: CampaignConfig
    stats: CampaignStats
    corpus: Corpus
    collector: coll.Collector
    trace: list[TraceEntry]
    calibration_execs: int = 0
    degradation_windows: list[dict] = field(default_factory=list)
    aborted: str | None = None

    @property
    def records(self) -> list[coll.MutationRecord]:
        return self.collector.records

    def meta(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "program": self.collector.program,
            "calibration_executions": self.calibration_execs,
            "queue": {"initial": self.corpus.initial_count, "total": len(self.corpus.queue)},
            "degradation_windows": self.degradation_windows,
            "aborted": self.aborted,
        }

    def to_json(self) -> str:
        return metrics.render_report(self.stats, "json", self.meta(), self.config.gain_bucket)

    def to_table(self) -> str:
        return metrics.render_report(self.stats, "table")


def load_seeds(seed_dir: str | Path) -> list[tuple[str, bytes]]:
    seeds = []
    for path in sorted(Path(seed_dir).iterdir()):
        if not path.is_file():
            continue
        data = path.read_bytes()
        if not data:
            log.warning("skipping empty seed file %s", path)
            continue
        seeds.append((path.name, data))
    if not seeds:
        raise InvalidConfig(f"no non-empty seed files in {seed_dir}")
    return seeds


def make_oracle(config: CampaignConfig):
    if config.oracle == "uniform":
        return UniformOracle()
    if config.oracle == "count":
        return CountOracle(CountModel.load(config.model_path))
    return RemoteOracle(
        config.endpoint,
        timeout=config.remote_timeout,
        prompt_template=config.prompt_template,
        max_in_flight=config.workers,
    )


def run_campaign(config: CampaignConfig, oracle=None) -> CampaignReport:
    config.validate()
    target = config.target
    oracle = oracle if oracle is not None else make_oracle(config)
    corpus = Corpus()
    collector = coll.Collector(target.program)
    stats = CampaignStats(edges_total=target.edges_total)
    report = CampaignReport(config, stats, corpus, collector, [])

    if config.budget_execs == 0 or config.budget_seconds == 0:
        _finish(report)
        return report

    seeds = load_seeds(config.seed_dir)
    try:
        for name, data in seeds:
            corpus.add_initial(data, execute(target, data), source=name)
        report.calibration_execs = len(seeds)
        _loop(report, oracle)
    except TargetSpawnFailure as e:
        report.aborted = str(e)
        _finish(report)
        raise
    _finish(report)
    return report


def _loop(report: CampaignReport, oracle) -> None:
    config = report.config
    target = config.target
    corpus = report.corpus
    ocfg = config.oracle_config
    rng = random.Random(config.rng_seed)
    fallback = UniformOracle()
    budget = config.budget_execs
    deadline = None if config.budget_seconds is None else time.monotonic() + config.budget_seconds
    start = time.monotonic()
    execs = 0
    empty_streak = 0
    window: dict | None = None
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    def exhausted() -> bool:
        if budget is not None and execs >= budget:
            return True
        return deadline is not None and time.monotonic() >= deadline

    try:
        while not exhausted():
            seed = corpus.select_seed()
            try:
                plan = oracle.predict(seed.data, ocfg, rng)
                if window is not None:
                    window["end_exec"] = execs
                    report.degradation_windows.append(window)
                    window = None
            except RemoteUnavailable as e:
                if window is None:
                    log.warning("oracle unavailable, falling back to uniform: %s", e)
                    window = {"start_exec": execs + 1, "end_exec": None, "reason": str(e)}
                plan = fallback.predict(seed.data, ocfg, rng)
            if plan.k == 0:
                empty_streak += 1
                if empty_streak < len(corpus.queue):
                    continue
                log.warning("oracle returned empty plans for a full queue cycle; using uniform once")
                plan = fallback.predict(seed.data, ocfg, rng)
            empty_streak = 0

            pairs = list(plan)
            if budget is not None:
                pairs = pairs[: budget - execs]
            if pool is None:
                for pos, strategy in pairs:
                    if exhausted():
                        break
                    mutated, detail = apply(seed.data, strategy, pos - 1, rng)
                    execs += 1
                    _commit(report, seed, mutated, detail, execute(target, mutated), execs, start)
            else:
                batch = [apply(seed.data, strategy, pos - 1, rng) for pos, strategy in pairs]
                outcomes = pool.map(lambda m: execute(target, m[0]), batch)
                for (mutated, detail), outcome in zip(batch, outcomes):
                    execs += 1
                    _commit(report, seed, mutated, detail, outcome, execs, start)
    finally:
        if pool is not None:
            pool.shutdown()
        if window is not None:
            window["end_exec"] = execs
            report.degradation_windows.append(window)


def _commit(report: CampaignReport, seed: TestCase, mutated: bytes, detail, outcome, execs: int, start: float) -> None:
    candidate = TestCase(-1, mutated, seed.id, detail, execs)
    verdict = report.corpus.enqueue_if_effective(candidate, outcome)
    report.stats.record(execs, detail.strategy, verdict.kind, verdict.new_crash, time.monotonic() - start)
    if outcome.status == "timeout":
        report.stats.timeouts += 1
    report.trace.append(TraceEntry(execs, seed.id, detail, outcome.status, verdict.kind, verdict.signature))
    if verdict.effective:
        report.collector.record(detail, seed, "new_path" if verdict.kind == "queued" else "crash", execs)


def _update_coverage(report: CampaignReport) -> None:
    target = report.config.target
    seen = report.corpus.seen_slots
    if target.kind == "builtin":
        slots = set(BUILTIN_TARGETS[target.name].slots.values())
        report.stats.edges_covered = len(seen & slots)
    else:
        report.stats.edges_covered = len(seen)


def _finish(report: CampaignReport) -> None:
    _update_coverage(report)
    report.stats.executions = len(report.trace)
    if report.config.output_dir:
        write_outputs(report, report.config.output_dir)


def write_outputs(report: CampaignReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sub in ("queue", "crashes"):
        shutil.rmtree(out / sub, ignore_errors=True)
    report.corpus.write(out)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    (out / "input_gain.csv").write_text(
        metrics.render_gain_csv(report.stats, report.config.gain_bucket), encoding="utf-8"
    )
    report.collector.write_records(out / "records.jsonl")
    if report.records:
        dataset = coll.build_dataset(
            report.records,
            instruction=report.config.instruction,
            max_seed_bytes=report.config.max_seed_bytes,
        )
        coll.write_dataset(out, dataset)
    if report.config.write_trace:
        coll.write_jsonl(out / "trace.jsonl", (t.to_dict() for t in report.trace))


@dataclass
class CollectResult:
    report: CampaignReport
    model: CountModel
    dataset: list[coll.InstructRecord]
    train: list[coll.InstructRecord]
    valid: list[coll.InstructRecord]


def train_from_records(
    records,
    out_dir: str | Path | None,
    *,
    instruction: str = coll.DEFAULT_INSTRUCTION,
    max_seed_bytes: int = coll.DEFAULT_MAX_SEED_BYTES,
    split_ratio: float = 0.9,
    rng_seed: int = 0,
) -> tuple[CountModel, list, list, list]:
    """Train the count model, build and split the dataset, and persist all of it."""
    model = train_count_model(records)
    dataset = coll.build_dataset(records, instruction=instruction, max_seed_bytes=max_seed_bytes)
    train, valid = [], []
    if len(dataset) >= 2:
        train, valid = coll.split(dataset, split_ratio, rng_seed)
    else:
        log.warning("only %d dataset sample(s); skipping train/valid split", len(dataset))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "model.bin")
        coll.write_dataset(out, dataset)
        if train:
            coll.write_jsonl(out / "train.jsonl", (r.to_dict() for r in train))
            coll.write_jsonl(out / "valid.jsonl", (r.to_dict() for r in valid))
    return model, dataset, train, valid


def run_collect_then_train(config: CampaignConfig) -> CollectResult:
    """Uniform collection campaign followed by count-model training on what it found."""
    if config.oracle != "uniform":
        log.info("collect phase forces the uniform oracle (was %s)", config.oracle)
        config = replace(config, oracle="uniform", model_path=None, endpoint=None)
    report = run_campaign(config)
    if not report.records:
        raise NoRecords("collect phase found no effective mutations")
    model, dataset, train, valid = train_from_records(
        report.records,
        config.output_dir,
        instruction=config.instruction,
        max_seed_bytes=config.max_seed_bytes,
        split_ratio=config.split_ratio,
        rng_seed=config.rng_seed,
    )
    return CollectResult(report, model, dataset, train, valid)


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
