"""
Mutation oracles: given a seed, propose (position, strategy) pairs.

Three implementations share one ``predict`` signature:

* ``UniformOracle`` draws strategies and positions uniformly (AFL baseline).
* ``CountOracle`` scores every cell with a Laplace-smoothed count model
  trained on effective mutations, then samples the top-p nucleus without
  replacement.
* ``RemoteOracle`` asks an HTTP service and validates what comes back.

Plans use 1-based positions, matching the serialized dataset.  On the wire
pairs are written strategy-first, ``[strategy, position]``.
"""

from __future__ import annotations

import gzip
import json
import logging
import random
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mutafuzz.errors import EmptyInput, InvalidConfig, MalformedResponse, NoRecords, RemoteUnavailable
from mutafuzz.mutation import ALL_STRATEGIES, MutationStrategy, is_valid_position, min_width

log = logging.getLogger(__name__)

N_STRATEGIES = len(ALL_STRATEGIES)
POSITION_BUCKETS = 16
BOUNDARY = 256  # context byte outside the input


@dataclass(frozen=True)
class OracleConfig:
    top_p: float = 0.9
    k_max: int = 16
    temperature: float = 1.0
    smoothing: float = 1.0

    def __post_init__(self):
        if not 0 < self.top_p <= 1:
            raise InvalidConfig(f"top_p must be in (0, 1], got {self.top_p}")
        if self.k_max < 1:
            raise InvalidConfig(f"k_max must be >= 1, got {self.k_max}")
        if self.temperature <= 0:
            raise InvalidConfig(f"temperature must be positive, got {self.temperature}")
        if self.smoothing <= 0:
            raise InvalidConfig(f"smoothing must be positive, got {self.smoothing}")


@dataclass(frozen=True)
class MutationPlan:
    """Ordered (1-based position, strategy) pairs for one seed."""

    pairs: tuple[tuple[int, MutationStrategy], ...] = ()

    @property
    def k(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def flip_pair_order(pairs: Iterable[Sequence[int]]) -> list[tuple[int, int]]:
    """Swap the two elements of every pair.

    Converts internal (position, strategy) pairs to the serialized
    (strategy, position) order and back.
    """
    return [(int(b), int(a)) for a, b in pairs]


def validate_pairs(
    pairs: Iterable[tuple[int, int]], length: int, k_max: int | None = None
) -> MutationPlan:
    """Keep the (1-based position, strategy) pairs that fit an input of ``length`` bytes."""
    kept = []
    for pos, strat in pairs:
        if isinstance(pos, bool) or isinstance(strat, bool):
            log.warning("dropping non-integer pair (%r, %r)", pos, strat)
            continue
        if not isinstance(pos, int) or not isinstance(strat, int) or not 1 <= strat <= N_STRATEGIES:
            log.warning("dropping invalid pair (position=%r, strategy=%r)", pos, strat)
            continue
        if not is_valid_position(strat, pos - 1, length):
            log.warning(
                "dropping pair (position=%d, strategy=%d): needs %d byte(s), input has %d",
                pos, strat, min_width(strat), length,
            )
            continue
        kept.append((pos, MutationStrategy(strat)))
        if k_max is not None and len(kept) == k_max:
            break
    return MutationPlan(tuple(kept))


def nucleus(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Indices of the smallest highest-probability prefix whose mass reaches ``top_p``.

    Ties are broken by index so the result is deterministic.
    """
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    cut = int(np.searchsorted(cum, top_p * cum[-1] - 1e-12, side="left")) + 1
    return order[: min(cut, len(order))]


def apply_temperature(probs: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 1.0:
        return probs
    logp = np.log(probs) / temperature
    logp -= logp.max()
    out = np.exp(logp)
    return out / out.sum()


class UniformOracle:
    """AFL-style baseline: uniform strategy, then uniform valid position."""

    name = "uniform"

    def predict(self, data: bytes, config: OracleConfig, rng: random.Random) -> MutationPlan:
        n = len(data)
        if n == 0:
            raise EmptyInput("cannot plan mutations for an empty input")
        strategies = [s for s in ALL_STRATEGIES if min_width(s) <= n]
        pairs = []
        for _ in range(config.k_max):
            s = strategies[rng.randrange(len(strategies))]
            pos = rng.randrange(n - min_width(s) + 1)
            pairs.append((pos + 1, s))
        return MutationPlan(tuple(pairs))


def context_of(data: bytes, position: int) -> tuple[int, int, int]:
    prev = data[position - 1] if position > 0 else BOUNDARY
    nxt = data[position + 1] if position + 1 < len(data) else BOUNDARY
    return prev, data[position], nxt


def position_bucket(position: int, length: int) -> int:
    return min(POSITION_BUCKETS - 1, position * POSITION_BUCKETS // length)


@dataclass
class CountModel:
    """Tallies of effective mutations.

    ``context`` maps a (previous, current, next) byte triple to per-strategy
    counts; ``positions`` is a 16 x 12 histogram of relative position bucket
    by strategy; ``strategy_totals`` are the strategy marginals.
    """

    context: dict[tuple[int, int, int], np.ndarray] = field(default_factory=dict)
    positions: np.ndarray = field(default_factory=lambda: np.zeros((POSITION_BUCKETS, N_STRATEGIES), np.int64))
    strategy_totals: np.ndarray = field(default_factory=lambda: np.zeros(N_STRATEGIES, np.int64))
    total: int = 0

    def add(self, data: bytes, position: int, strategy: int) -> None:
        s = int(strategy) - 1
        ctx = context_of(data, position)
        row = self.context.get(ctx)
        if row is None:
            row = self.context[ctx] = np.zeros(N_STRATEGIES, np.int64)
        row[s] += 1
        self.positions[position_bucket(position, len(data)), s] += 1
        self.strategy_totals[s] += 1
        self.total += 1

    def count(self, ctx: tuple[int, int, int], strategy: int) -> int:
        row = self.context.get(ctx)
        return 0 if row is None else int(row[int(strategy) - 1])

    def to_json(self) -> dict:
        return {
            "format": "mutafuzz-count-model/1",
            "total": self.total,
            "strategy_totals": self.strategy_totals.tolist(),
            "positions": self.positions.tolist(),
            "context": [[list(k), v.tolist()] for k, v in sorted(self.context.items())],
        }

    @classmethod
    def from_json(cls, d: dict) -> CountModel:
        if d.get("format") != "mutafuzz-count-model/1":
            raise ValueError("not a mutafuzz count model")
        return cls(
            context={tuple(k): np.array(v, np.int64) for k, v in d["context"]},
            positions=np.array(d["positions"], np.int64),
            strategy_totals=np.array(d["strategy_totals"], np.int64),
            total=int(d["total"]),
        )

    def save(self, path: str | Path) -> None:
        # fixed mtime and no embedded name keep the file byte-identical
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as f:
            f.write(json.dumps(self.to_json(), separators=(",", ":")).encode())

    @classmethod
    def load(cls, path: str | Path) -> CountModel:
        with gzip.open(path, "rb") as f:
            return cls.from_json(json.loads(f.read()))


def train_count_model(records) -> CountModel:
    """Closed-form count estimate over effective mutation records."""
    model = CountModel()
    for r in records:
        if r.outcome not in ("new_path", "crash"):
            continue
        model.add(r.seed_bytes, r.detail.position, r.detail.strategy)
    if model.total == 0:
        raise NoRecords("no effective mutations to train on")
    return model


class CountOracle:
    name = "count"

    def __init__(self, model: CountModel, cache_size: int = 256):
        self.model = model
        self._cache: dict[tuple[bytes, float, float], tuple[np.ndarray, np.ndarray]] = {}
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def score_cells(self, data: bytes, smoothing: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """Normalized score over every valid cell.

        Returns ``(cells, probs)`` where ``cells`` is an (n, 2) array of
        0-based position and strategy id.  A cell scores
        ``(c(context, s) + a) * (h(bucket, s) + a) / (N(s) + 16 a)``: a smoothed
        joint context count times a smoothed position-bucket likelihood.
        """
        n = len(data)
        if n == 0:
            raise EmptyInput("cannot score an empty input")
        a = smoothing
        m = self.model
        ctx_counts = np.zeros((n, N_STRATEGIES), np.float64)
        for p in range(n):
            row = m.context.get(context_of(data, p))
            if row is not None:
                ctx_counts[p] = row
        buckets = np.minimum(POSITION_BUCKETS - 1, np.arange(n) * POSITION_BUCKETS // n)
        pos_lik = (m.positions[buckets] + a) / (m.strategy_totals + POSITION_BUCKETS * a)
        scores = (ctx_counts + a) * pos_lik

        widths = np.array([min_width(s) for s in ALL_STRATEGIES])
        valid = np.arange(n)[:, None] + widths[None, :] <= n
        pos_idx, strat_idx = np.nonzero(valid)
        cell_scores = scores[pos_idx, strat_idx]
        cells = np.stack([pos_idx, strat_idx + 1], axis=1)
        return cells, cell_scores / cell_scores.sum()

    def _scored(self, data: bytes, config: OracleConfig) -> tuple[np.ndarray, np.ndarray]:
        key = (data, config.smoothing, config.temperature)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        cells, probs = self.score_cells(data, config.smoothing)
        probs = apply_temperature(probs, config.temperature)
        with self._lock:
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = (cells, probs)
        return cells, probs

    def predict(self, data: bytes, config: OracleConfig, rng: random.Random) -> MutationPlan:
        if len(data) == 0:
            raise EmptyInput("cannot plan mutations for an empty input")
        cells, probs = self._scored(data, config)
        cand = nucleus(probs, config.top_p)
        k = min(config.k_max, len(cand))
        # weighted sampling without replacement via exponential keys
        gen = np.random.default_rng(rng.getrandbits(64))
        keys = gen.exponential(size=len(cand)) / probs[cand]
        chosen = cand[np.argsort(keys, kind="stable")[:k]]
        return MutationPlan(tuple((int(p) + 1, MutationStrategy(int(s))) for p, s in cells[chosen]))


class RemoteOracle:
    """Delegates planning to an HTTP endpoint.

    Request body: ``{"bytes_hex": "3c 21 ...", "k_max": K, "top_p": P}``
    (plus ``"prompt"`` when a template is configured).  The response must be
    ``{"pairs": [[strategy, position], ...]}`` or ``{"text": "[(s, p), ...]"}``.
    """

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        timeout: float = 5.0,
        prompt_template: str | None = None,
        max_in_flight: int = 4,
    ):
        self.endpoint = endpoint
        self.timeout = timeout
        self.prompt_template = prompt_template
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def request_body(self, data: bytes, config: OracleConfig) -> dict:
        body = {"bytes_hex": data.hex(" "), "k_max": config.k_max, "top_p": config.top_p}
        if self.prompt_template:
            body["prompt"] = self.prompt_template.format(
                bytes_hex=body["bytes_hex"], k_max=config.k_max, top_p=config.top_p
            )
        return body

    def predict(self, data: bytes, config: OracleConfig, rng: random.Random | None = None) -> MutationPlan:
        return remote_predict(self, data, config)

    def _post(self, body: dict) -> bytes:
        req = urllib.request.Request(
            self.endpoint,
            data=json.dumps(body).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return resp.read()
            except (urllib.error.URLError, OSError, TimeoutError) as e:
                raise RemoteUnavailable(f"{self.endpoint}: {e}") from e


def parse_pair_text(text: str) -> list[list[int]]:
    """Parse ``"[(1, 2), (1, 3)]"`` into ``[[1, 2], [1, 3]]``."""
    from mutafuzz.collector import parse_pairs

    try:
        return [list(p) for p in parse_pairs(text)]
    except ValueError as e:
        raise MalformedResponse(str(e)) from e


def remote_predict(oracle: RemoteOracle, data: bytes, config: OracleConfig) -> MutationPlan:
    if len(data) == 0:
        raise EmptyInput("cannot plan mutations for an empty input")
    raw = oracle._post(oracle.request_body(data, config))
    try:
        doc = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as e:
        raise MalformedResponse(f"response is not JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedResponse("response must be a JSON object")
    if "pairs" in doc:
        wire = doc["pairs"]
    elif isinstance(doc.get("text"), str):
        wire = parse_pair_text(doc["text"])
    else:
        raise MalformedResponse("response has neither 'pairs' nor 'text'")
    if not isinstance(wire, list):
        raise MalformedResponse("'pairs' must be a list")
    pairs = []
    for item in wire:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            log.warning("dropping malformed pair %r", item)
            continue
        strat, pos = item
        pairs.append((pos, strat))
    return validate_pairs(pairs, len(data), config.k_max)


def predict(oracle, data: bytes, config: OracleConfig, rng: random.Random) -> MutationPlan:
    return oracle.predict(data, config, rng)
