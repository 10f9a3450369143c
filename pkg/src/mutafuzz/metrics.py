"""
Campaign statistics: EPM, crash counts, input gain and coverage rate.

``CampaignStats`` is updated incrementally by the campaign loop.
``stats_from_trace`` recomputes the same numbers from the raw per-execution
trace and is used to cross-check the incremental path.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from mutafuzz.errors import NotInstrumented
from mutafuzz.mutation import ALL_STRATEGIES, STRATEGY_LABELS, MutationDetail

N = len(ALL_STRATEGIES)


@dataclass(frozen=True)
class TraceEntry:
    """One execution that followed a mutation."""

    exec_index: int  # 1-based
    seed_id: int
    detail: MutationDetail
    status: str  # harness status
    verdict: str  # "queued" | "crashed" | "discarded"
    signature: str | None = None

    def to_dict(self) -> dict:
        return {
            "exec": self.exec_index,
            "seed": self.seed_id,
            "detail": self.detail.to_dict(),
            "status": self.status,
            "verdict": self.verdict,
            "signature": self.signature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TraceEntry:
        return cls(d["exec"], d["seed"], MutationDetail.from_dict(d["detail"]), d["status"], d["verdict"], d["signature"])


@dataclass
class CampaignStats:
    attempts: list[int] = field(default_factory=lambda: [0] * N)
    effective: list[int] = field(default_factory=lambda: [0] * N)
    crashes_raw: int = 0
    crashes_deduped: int = 0
    # (execution index, seconds since start); only the index is reported
    new_path_events: list[tuple[int, float]] = field(default_factory=list)
    edges_covered: int = 0
    edges_total: int = 0
    executions: int = 0
    timeouts: int = 0
    external_coverage: dict[str, Any] = field(default_factory=dict)

    def record(self, exec_index: int, strategy: int, verdict: str, new_crash: bool, elapsed: float = 0.0) -> None:
        s = int(strategy) - 1
        self.executions = exec_index
        self.attempts[s] += 1
        if verdict == "discarded":
            return
        self.effective[s] += 1
        if verdict == "queued":
            self.new_path_events.append((exec_index, elapsed))
        else:
            self.crashes_raw += 1
            if new_crash:
                self.crashes_deduped += 1


@dataclass(frozen=True)
class EpmResult:
    per_strategy: tuple[float, ...]
    excluded: tuple[bool, ...]
    average: float
    average_attempted: float
    pooled: float


def epm(stats: CampaignStats) -> EpmResult:
    """Per-mille effective mutations per strategy.

    ``average`` is the unweighted mean over all twelve strategies (unattempted
    ones count as 0), ``average_attempted`` the mean over attempted ones and
    ``pooled`` is total effective over total attempts.
    """
    per = tuple(
        1000.0 * e / a if a else 0.0 for e, a in zip(stats.effective, stats.attempts)
    )
    excluded = tuple(a == 0 for a in stats.attempts)
    attempted = [v for v, x in zip(per, excluded) if not x]
    total = sum(stats.attempts)
    return EpmResult(
        per_strategy=per,
        excluded=excluded,
        average=sum(per) / N,
        average_attempted=sum(attempted) / len(attempted) if attempted else 0.0,
        pooled=1000.0 * sum(stats.effective) / total if total else 0.0,
    )


def crash_counts(stats: CampaignStats) -> tuple[int, int]:
    return stats.crashes_raw, stats.crashes_deduped


def input_gain_series(stats: CampaignStats, bucket: int, executions: int | None = None) -> list[int]:
    """Cumulative new-path count sampled every ``bucket`` executions."""
    if bucket < 1:
        raise ValueError("bucket must be >= 1")
    total = stats.executions if executions is None else executions
    events = [e for e, _ in stats.new_path_events]
    if events:
        total = max(total, events[-1])
    points = math.ceil(total / bucket)
    series = []
    j = 0
    for i in range(1, points + 1):
        limit = i * bucket
        while j < len(events) and events[j] <= limit:
            j += 1
        series.append(j)
    return series


def coverage_rate(stats: CampaignStats) -> float:
    if stats.edges_total <= 0:
        raise NotInstrumented("coverage rate needs a target with a known edge total")
    return stats.edges_covered / stats.edges_total


def ingest_coverage_summary(stats: CampaignStats, summary: Mapping[str, Any]) -> None:
    """Attach an externally produced coverage summary (e.g. line/branch rates) as-is."""
    stats.external_coverage.update(summary)


def stats_from_trace(trace: Iterable[TraceEntry]) -> CampaignStats:
    """Brute-force recomputation of the counters from the per-execution trace."""
    stats = CampaignStats()
    signatures: set[str] = set()
    last = 0
    for t in trace:
        last = max(last, t.exec_index)
        s = int(t.detail.strategy) - 1
        stats.attempts[s] += 1
        if t.status == "timeout":
            stats.timeouts += 1
        if t.verdict == "queued":
            stats.effective[s] += 1
            stats.new_path_events.append((t.exec_index, 0.0))
        elif t.verdict == "crashed":
            stats.effective[s] += 1
            stats.crashes_raw += 1
            signatures.add(t.signature)
    stats.crashes_deduped = len(signatures)
    stats.executions = last
    return stats


def _epm_json(stats: CampaignStats) -> dict:
    r = epm(stats)
    return {
        "per_strategy": {
            label: {
                "attempts": a,
                "effective": e,
                "epm": v,
                "excluded": x,
            }
            for label, a, e, v, x in zip(STRATEGY_LABELS, stats.attempts, stats.effective, r.per_strategy, r.excluded)
        },
        "average": r.average,
        "average_attempted": r.average_attempted,
        "pooled": r.pooled,
    }


def stats_to_json(stats: CampaignStats, gain_bucket: int = 1000) -> dict:
    raw, dedup = crash_counts(stats)
    try:
        rate = coverage_rate(stats)
    except NotInstrumented:
        rate = None
    return {
        "executions": stats.executions,
        "epm": _epm_json(stats),
        "crashes": {"raw": raw, "deduped": dedup},
        "new_paths": len(stats.new_path_events),
        "new_path_execs": [e for e, _ in stats.new_path_events],
        "timeouts": stats.timeouts,
        "input_gain": {"bucket": gain_bucket, "series": input_gain_series(stats, gain_bucket)},
        "coverage": {"edges_covered": stats.edges_covered, "edges_total": stats.edges_total, "rate": rate},
        "external_coverage": stats.external_coverage,
    }


def stats_from_json(doc: Mapping[str, Any]) -> CampaignStats:
    per = doc["epm"]["per_strategy"]
    return CampaignStats(
        attempts=[per[label]["attempts"] for label in STRATEGY_LABELS],
        effective=[per[label]["effective"] for label in STRATEGY_LABELS],
        crashes_raw=doc["crashes"]["raw"],
        crashes_deduped=doc["crashes"]["deduped"],
        new_path_events=[(e, 0.0) for e in doc.get("new_path_execs", [])],
        edges_covered=doc["coverage"]["edges_covered"],
        edges_total=doc["coverage"]["edges_total"],
        executions=doc["executions"],
        timeouts=doc.get("timeouts", 0),
        external_coverage=dict(doc.get("external_coverage", {})),
    )


def render_table(stats: CampaignStats) -> str:
    r = epm(stats)
    header = [*STRATEGY_LABELS, "Avg"]
    values = [f"{v:.2f}" for v in r.per_strategy] + [f"{r.average:.2f}"]
    widths = [max(len(h), len(v)) for h, v in zip(header, values)]
    lines = [
        "EPM (per mille)",
        "  ".join(h.rjust(w) for h, w in zip(header, widths)),
        "  ".join(v.rjust(w) for v, w in zip(values, widths)),
        "",
        f"executions        {stats.executions}",
        f"pooled EPM        {r.pooled:.2f}",
        f"new paths         {len(stats.new_path_events)}",
        f"crashes (raw)     {stats.crashes_raw}",
        f"crashes (dedup)   {stats.crashes_deduped}",
        f"timeouts          {stats.timeouts}",
    ]
    if stats.edges_total:
        lines.append(f"edge coverage     {stats.edges_covered}/{stats.edges_total} ({coverage_rate(stats):.2%})")
    for k, v in stats.external_coverage.items():
        lines.append(f"{k:<18}{v}")
    return "\n".join(lines) + "\n"


def render_report(stats: CampaignStats, format: str = "table", meta: Mapping[str, Any] | None = None,
                  gain_bucket: int = 1000) -> str:
    if format == "table":
        return render_table(stats)
    if format == "json":
        doc = dict(meta or {})
        doc.update(stats_to_json(stats, gain_bucket))
        return json.dumps(doc, indent=2) + "\n"
    raise ValueError(f"unknown report format {format!r}")


def render_gain_csv(stats: CampaignStats, bucket: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["execution_index", "cumulative_paths"])
    for i, v in enumerate(input_gain_series(stats, bucket), start=1):
        w.writerow([i * bucket, v])
    return buf.getvalue()
