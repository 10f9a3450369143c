"""
Effective-mutation log and the instruction dataset built from it.

Two serializations are produced from the same grouped records:

    Byte Input: 0x3c 0x21 0x44 0x4f 0x43
    Mutation strategies: [(1, 2), (1, 3)]

and one JSON object per line with ``instruction``/``input``/``output`` keys.
Pairs are written strategy first, with 1-based positions.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from mutafuzz.errors import NoRecords, TooFewSamples
from mutafuzz.mutation import MutationDetail, is_valid_position

DEFAULT_INSTRUCTION = (
    "The following bytes are an input file for the program {program}. "
    "Predict the mutation strategies and positions that make the program crash "
    "or reach new code, as a list of (strategy, position) pairs."
)
DEFAULT_MAX_SEED_BYTES = 2048
EFFECTIVE = ("new_path", "crash")


@dataclass(frozen=True)
class MutationRecord:
    seed_bytes: bytes
    detail: MutationDetail
    outcome: str  # "new_path" | "crash"
    program: str
    timestamp: int

    @property
    def pair(self) -> tuple[int, int]:
        """(strategy id, 1-based position)."""
        return int(self.detail.strategy), self.detail.position + 1

    def to_dict(self) -> dict:
        return {
            "seed_hex": self.seed_bytes.hex(),
            "pair": list(self.pair),
            "detail": self.detail.to_dict(),
            "outcome": self.outcome,
            "program": self.program,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MutationRecord:
        return cls(
            bytes.fromhex(d["seed_hex"]),
            MutationDetail.from_dict(d["detail"]),
            d["outcome"],
            d["program"],
            int(d["timestamp"]),
        )


class Collector:
    """Append-only log of effective mutations for one campaign."""

    def __init__(self, program: str):
        self.program = program
        self.records: list[MutationRecord] = []

    def record(self, detail: MutationDetail, seed, outcome: str, timestamp: int) -> bool:
        if outcome not in EFFECTIVE:
            return False
        data = seed.data if hasattr(seed, "data") else bytes(seed)
        self.records.append(MutationRecord(data, detail, outcome, self.program, timestamp))
        return True

    def __len__(self) -> int:
        return len(self.records)

    def write_records(self, path: str | Path) -> None:
        write_jsonl(path, (r.to_dict() for r in self.records))


def read_records(path: str | Path) -> list[MutationRecord]:
    return [MutationRecord.from_dict(d) for d in read_jsonl(path)]


@dataclass(frozen=True)
class InstructRecord:
    instruction: str
    input: str
    output: str
    truncated: bool = False
    original_length: int | None = None

    def to_dict(self) -> dict:
        d = {"instruction": self.instruction, "input": self.input, "output": self.output}
        if self.truncated:
            d["truncated"] = True
            d["original_length"] = self.original_length
        return d

    @classmethod
    def from_dict(cls, d: dict) -> InstructRecord:
        return cls(
            d["instruction"],
            d["input"],
            d["output"],
            bool(d.get("truncated", False)),
            d.get("original_length"),
        )

    @property
    def seed_bytes(self) -> bytes:
        return parse_hex(self.input)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return parse_pairs(self.output)

    def to_text(self) -> str:
        return f"Byte Input: {self.input}\nMutation strategies: {self.output}\n"


def format_hex(data: bytes) -> str:
    return " ".join(f"0x{b:02x}" for b in data)


def parse_hex(text: str) -> bytes:
    out = bytearray()
    for tok in text.split():
        if not tok.lower().startswith("0x") or len(tok) != 4:
            raise ValueError(f"bad hex byte token {tok!r}")
        out.append(int(tok[2:], 16))
    return bytes(out)


def format_pairs(pairs: Iterable[Sequence[int]]) -> str:
    return "[" + ", ".join(f"({int(a)}, {int(b)})" for a, b in pairs) + "]"


_PAIR_RE = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)")


def parse_pairs(text: str) -> list[tuple[int, int]]:
    """Inverse of ``format_pairs``; tolerant of whitespace, e.g. ``[(1, 2), (1,3)]``."""
    body = text.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise ValueError(f"pair list must be bracketed: {text!r}")
    inner = body[1:-1]
    pairs = [(int(a), int(b)) for a, b in _PAIR_RE.findall(inner)]
    if _PAIR_RE.sub("", inner).replace(",", "").strip():
        raise ValueError(f"unparseable pair list: {text!r}")
    return pairs


def build_dataset(
    records: Sequence[MutationRecord],
    group_by_seed: bool = True,
    instruction: str = DEFAULT_INSTRUCTION,
    max_seed_bytes: int = DEFAULT_MAX_SEED_BYTES,
) -> list[InstructRecord]:
    """Turn effective-mutation records into instruction samples.

    With ``group_by_seed`` all pairs found on identical seed bytes become one
    sample, in recording order.  Seeds longer than ``max_seed_bytes`` are cut,
    marked truncated, and lose the pairs that fall past the cut.
    """
    if not records:
        raise NoRecords("no effective mutations recorded")
    groups: dict[tuple[str, bytes], list[tuple[int, int]]] = {}
    if group_by_seed:
        for r in records:
            groups.setdefault((r.program, r.seed_bytes), []).append(r.pair)
        items = list(groups.items())
    else:
        items = [((r.program, r.seed_bytes), [r.pair]) for r in records]

    out = []
    for (program, seed), pairs in items:
        shown = seed[:max_seed_bytes]
        kept = [(s, p) for s, p in pairs if is_valid_position(s, p - 1, len(shown))]
        if not kept:
            continue
        truncated = len(shown) < len(seed)
        out.append(
            InstructRecord(
                instruction.format(program=program),
                format_hex(shown),
                format_pairs(kept),
                truncated,
                len(seed) if truncated else None,
            )
        )
    return out


def train_size(n: int, ratio: float) -> int:
    # exact rational arithmetic: 0.9 * 5038 must floor to 4534, not drift
    return math.floor(Fraction(str(ratio)) * n)


def split(dataset: Sequence, ratio: float = 0.9, seed: int = 0) -> tuple[list, list]:
    """Deterministic shuffled train/valid split, ``|train| = floor(ratio * N)``."""
    n = len(dataset)
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples to split, got {n}")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    idx = list(range(n))
    random.Random(seed).shuffle(idx)
    cut = train_size(n, ratio)
    return [dataset[i] for i in idx[:cut]], [dataset[i] for i in idx[cut:]]


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_text(path: str | Path, dataset: Iterable[InstructRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(r.to_text() for r in dataset))


def read_text(path: str | Path, instruction: str = "") -> list[InstructRecord]:
    text = Path(path).read_text(encoding="utf-8")
    out = []
    for block in text.split("\n\n"):
        lines = [line for line in block.splitlines() if line.strip()]
        if not lines:
            continue
        if not (lines[0].startswith("Byte Input: ") and lines[1].startswith("Mutation strategies: ")):
            raise ValueError(f"malformed dataset block: {block!r}")
        out.append(
            InstructRecord(
                instruction,
                lines[0][len("Byte Input: "):],
                lines[1][len("Mutation strategies: "):],
            )
        )
    return out


def write_dataset(out_dir: str | Path, dataset: Sequence[InstructRecord]) -> None:
    out = Path(out_dir)
    write_jsonl(out / "fuzz-instruct.jsonl", (r.to_dict() for r in dataset))
    write_text(out / "fuzz-instruct.txt", dataset)


def write_split(out_dir: str | Path, dataset: Sequence[InstructRecord], ratio: float = 0.9, seed: int = 0):
    train, valid = split(dataset, ratio, seed)
    out = Path(out_dir)
    write_jsonl(out / "train.jsonl", (r.to_dict() for r in train))
    write_jsonl(out / "valid.jsonl", (r.to_dict() for r in valid))
    return train, valid
