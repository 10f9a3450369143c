"""
Seed queue, global coverage accounting and the crash store.

A ``CoverageMap`` is logically a 64 KiB array of one-byte edge counters.  It is
stored sparsely (slot -> counter, zero slots omitted) because a single run of a
small parser touches a few dozen slots, and the campaign merges one run map
per execution.
"""

from __future__ import annotations

import hashlib
import logging
import os
import signal
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

from mutafuzz.errors import EmptyQueue, SizeMismatch
from mutafuzz.mutation import MutationDetail

log = logging.getLogger(__name__)

MAP_SIZE = 1 << 16


def _bucket(count: int) -> int:
    if count <= 3:
        return (0, 1, 2, 4)[count]
    if count <= 7:
        return 8
    if count <= 15:
        return 16
    if count <= 31:
        return 32
    if count <= 127:
        return 64
    return 128


# raw hit count -> single-bit bucket, AFL's count_class_lookup8
BUCKETS = bytes(_bucket(c) for c in range(256))


class CoverageMap:
    """Fixed-size edge-hit map.

    Run maps hold raw (saturating) hit counts.  The global map accumulated
    by ``merge`` holds, per slot, the OR of every bucket bit seen so far.
    """

    __slots__ = ("size", "_slots")

    def __init__(self, slots: Mapping[int, int] | None = None, size: int = MAP_SIZE):
        self.size = size
        self._slots: dict[int, int] = {}
        if slots:
            for slot, count in slots.items():
                if not 0 <= slot < size:
                    raise IndexError(f"slot {slot} outside map of size {size}")
                if count:
                    self._slots[slot] = min(int(count), 255)

    @classmethod
    def from_bytes(cls, raw: bytes) -> CoverageMap:
        m = cls(size=len(raw))
        m._slots = {i: c for i, c in enumerate(raw) if c}
        return m

    def to_bytes(self) -> bytes:
        out = bytearray(self.size)
        for slot, count in self._slots.items():
            out[slot] = count
        return bytes(out)

    def __getitem__(self, slot: int) -> int:
        return self._slots.get(slot, 0)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoverageMap):
            return NotImplemented
        return self.size == other.size and self._slots == other._slots

    def __repr__(self) -> str:
        return f"CoverageMap({len(self._slots)} nonzero slots)"

    def copy(self) -> CoverageMap:
        m = CoverageMap(size=self.size)
        m._slots = dict(self._slots)
        return m

    def items(self) -> Iterable[tuple[int, int]]:
        return self._slots.items()

    def nonzero(self) -> int:
        return len(self._slots)

    def is_empty(self) -> bool:
        return not self._slots

    def classified(self) -> CoverageMap:
        m = CoverageMap(size=self.size)
        m._slots = {s: BUCKETS[c] for s, c in self._slots.items()}
        return m

    def bucket_pairs(self) -> set[tuple[int, int]]:
        """Every (slot, bucket bit) pair present, for either kind of map."""
        pairs = set()
        for slot, value in self._slots.items():
            bit = 1
            while bit < 256:
                if value & bit:
                    pairs.add((slot, bit))
                bit <<= 1
        return pairs

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        for slot, c in sorted(self._slots.items()):
            h.update(b"%d:%d;" % (slot, BUCKETS[c]))
        return h.hexdigest()

    def merge(self, run: CoverageMap) -> bool:
        """Fold a run map into this global map in place; True if anything was new."""
        if run.size != self.size:
            raise SizeMismatch(f"map sizes differ: {self.size} vs {run.size}")
        seen = self._slots
        new = False
        for slot, count in run._slots.items():
            b = BUCKETS[count]
            old = seen.get(slot, 0)
            if not old & b:
                seen[slot] = old | b
                new = True
        return new


def merge_coverage(global_map: CoverageMap, run: CoverageMap) -> tuple[CoverageMap, bool]:
    """Pure form of ``CoverageMap.merge``: returns the updated copy and the novelty flag."""
    updated = global_map.copy()
    is_new = updated.merge(run)
    return updated, is_new


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    id: int
    data: bytes
    parent_id: int | None = None
    detail: MutationDetail | None = None
    discovered_at: int = 0
    source: str | None = None

    @property
    def is_initial(self) -> bool:
        return self.detail is None


@dataclass(frozen=True)
class CrashEntry:
    id: int
    test_case: TestCase
    signature: str
    signal_or_code: str
    site: str | None = None


@dataclass(frozen=True)
class Verdict:
    kind: str  # "queued" | "crashed" | "discarded"
    test_case: TestCase | None = None
    signature: str | None = None
    new_crash: bool = False

    @property
    def effective(self) -> bool:
        return self.kind != "discarded"


def crash_signature(signal_or_code: str, site: str | None, coverage: CoverageMap) -> str:
    h = hashlib.sha1(f"{signal_or_code}|{site or ''}|{coverage.fingerprint()}".encode())
    return h.hexdigest()[:16]


class Corpus:
    """Append-only seed queue with round-robin scheduling and a deduplicated crash store."""

    def __init__(self, map_size: int = MAP_SIZE):
        self.coverage = CoverageMap(size=map_size)
        self.queue: list[TestCase] = []
        self.crashes: dict[str, CrashEntry] = {}
        self.crashes_raw = 0
        self.timeouts = 0
        self.initial_count = 0
        # every slot ever hit, crashes included; feeds the coverage rate
        self.seen_slots: set[int] = set()
        self._cursor = 0

    def add_initial(self, data: bytes, outcome, source: str | None = None) -> TestCase:
        """Queue an initial seed unconditionally and fold in its coverage."""
        self.seen_slots.update(s for s, _ in outcome.coverage.items())
        if outcome.status == "crash":
            log.warning("initial seed %s crashes the target (%s)", source, outcome.signal_or_code)
        elif outcome.status == "ok":
            self.coverage.merge(outcome.coverage)
        tc = TestCase(id=len(self.queue), data=bytes(data), source=source)
        self.queue.append(tc)
        self.initial_count += 1
        return tc

    def enqueue_if_effective(self, candidate: TestCase, outcome) -> Verdict:
        """Classify one executed mutation.

        Crashes go to the crash store (deduplicated by signature), new-path
        inputs are appended to the queue, timeouts and everything else are
        discarded.  ``candidate.id`` is ignored; ids are assigned on admission.
        """
        self.seen_slots.update(s for s, _ in outcome.coverage.items())
        if outcome.status == "crash":
            self.crashes_raw += 1
            sig = crash_signature(outcome.signal_or_code, outcome.crash_site, outcome.coverage)
            if sig in self.crashes:
                return Verdict("crashed", signature=sig)
            entry = CrashEntry(
                id=len(self.crashes),
                test_case=candidate,
                signature=sig,
                signal_or_code=outcome.signal_or_code,
                site=outcome.crash_site,
            )
            self.crashes[sig] = entry
            return Verdict("crashed", test_case=candidate, signature=sig, new_crash=True)
        if outcome.status == "timeout":
            self.timeouts += 1
            return Verdict("discarded")
        if self.coverage.merge(outcome.coverage):
            tc = replace(candidate, id=len(self.queue))
            self.queue.append(tc)
            return Verdict("queued", test_case=tc)
        return Verdict("discarded")

    def select_seed(self) -> TestCase:
        if not self.queue:
            raise EmptyQueue("seed queue is empty")
        idx = self._cursor if self._cursor < len(self.queue) else 0
        self._cursor = idx + 1
        return self.queue[idx]

    @property
    def crashes_deduped(self) -> int:
        return len(self.crashes)

    def write(self, out_dir: str | os.PathLike) -> None:
        """Dump the queue and crash store using AFL's directory layout."""
        out = Path(out_dir)
        qdir = out / "queue"
        cdir = out / "crashes"
        qdir.mkdir(parents=True, exist_ok=True)
        cdir.mkdir(parents=True, exist_ok=True)
        for tc in self.queue:
            (qdir / f"id:{tc.id:06d}").write_bytes(tc.data)
        for entry in self.crashes.values():
            name = f"id:{entry.id:06d},sig:{_signal_tag(entry.signal_or_code)}"
            (cdir / name).write_bytes(entry.test_case.data)


def _signal_tag(signal_or_code: str) -> str:
    try:
        return f"{int(getattr(signal, signal_or_code)):02d}"
    except (AttributeError, TypeError, ValueError):
        return signal_or_code.replace("/", "_").replace(",", "_")
