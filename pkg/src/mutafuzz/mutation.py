"""
The twelve single-site byte mutations used by the fuzzer.

Every mutation exists in two forms: ``apply`` draws the free parameters
from a seeded random source, and ``apply_with_params`` replays a recorded
``MutationDetail`` bit-exactly.  Both preserve input length and touch only
the bytes inside the strategy's footprint.

Bit numbering follows AFL: bit ``b`` of the file lives in byte ``b >> 3``
under mask ``0x80 >> (b & 7)``, so bit offset 0 is the most significant bit
of a byte and runs of 2 or 4 bits may continue into the next byte.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Any

from mutafuzz.errors import EmptyInput, InvalidParams, PositionOutOfRange

ARITH_MIN = 1
ARITH_MAX = 35


class MutationStrategy(enum.IntEnum):
    BITFLIP_1_1 = 1
    BITFLIP_2_1 = 2
    BITFLIP_4_1 = 3
    BITFLIP_8_8 = 4
    BITFLIP_16_8 = 5
    BITFLIP_32_8 = 6
    ARITH_8_8 = 7
    ARITH_16_8 = 8
    ARITH_32_8 = 9
    INTEREST_8_8 = 10
    INTEREST_16_8 = 11
    INTEREST_32_8 = 12

    @property
    def label(self) -> str:
        family, a, b = self.name.lower().split("_")
        return f"{family} {a}/{b}"

    @classmethod
    def from_label(cls, label: str) -> MutationStrategy:
        for s in cls:
            if s.label == label:
                return s
        raise ValueError(f"unknown strategy label {label!r}")


ALL_STRATEGIES = tuple(MutationStrategy)
STRATEGY_LABELS = tuple(s.label for s in ALL_STRATEGIES)

_BIT_RUN = {1: 1, 2: 2, 3: 4}
_BYTE_WIDTH = {4: 1, 5: 2, 6: 4, 7: 1, 8: 2, 9: 4, 10: 1, 11: 2, 12: 4}
# bit runs of 2 or 4 may straddle one byte boundary
_MAX_WIDTH = {1: 1, 2: 2, 3: 2, **_BYTE_WIDTH}


def _is_bitflip_bits(s: int) -> bool:
    return s <= 3


def _is_byteflip(s: int) -> bool:
    return 4 <= s <= 6


def _is_arith(s: int) -> bool:
    return 7 <= s <= 9


def _is_interest(s: int) -> bool:
    return s >= 10


def strategy_width(strategy: int) -> int:
    """Maximum number of bytes a strategy can touch, starting at its position."""
    return _MAX_WIDTH[MutationStrategy(strategy)]


def min_width(strategy: int) -> int:
    """Bytes that must exist from the position onward for the strategy to apply."""
    s = MutationStrategy(strategy)
    return 1 if _is_bitflip_bits(s) else _BYTE_WIDTH[s]


def is_valid_position(strategy: int, position: int, length: int) -> bool:
    """True when a 0-based ``position`` admits ``strategy`` on an input of ``length`` bytes."""
    return 0 <= position and position + min_width(strategy) <= length


def valid_strategies(length: int) -> tuple[MutationStrategy, ...]:
    return tuple(s for s in ALL_STRATEGIES if min_width(s) <= length)


@dataclass(frozen=True)
class MutationParams:
    bit_offset: int | None = None
    operand: int | None = None
    sign: str | None = None
    swap: bool | None = None
    replacement: bytes | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.bit_offset is not None:
            out["bit_offset"] = self.bit_offset
        if self.operand is not None:
            out["operand"] = self.operand
        if self.sign is not None:
            out["sign"] = self.sign
        if self.swap is not None:
            out["swap"] = self.swap
        if self.replacement is not None:
            out["replacement"] = self.replacement.hex()
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MutationParams:
        rep = d.get("replacement")
        return cls(
            bit_offset=d.get("bit_offset"),
            operand=d.get("operand"),
            sign=d.get("sign"),
            swap=d.get("swap"),
            replacement=bytes.fromhex(rep) if rep is not None else None,
        )


@dataclass(frozen=True)
class MutationDetail:
    """One fully specified mutation: strategy, 0-based position and parameters."""

    strategy: MutationStrategy
    position: int
    params: MutationParams

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": int(self.strategy),
            "position": self.position,
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MutationDetail:
        return cls(
            MutationStrategy(d["strategy"]),
            int(d["position"]),
            MutationParams.from_dict(d.get("params", {})),
        )


def _check_input(data: bytes) -> None:
    if len(data) == 0:
        raise EmptyInput("cannot mutate an empty input")


def _check_position(strategy: MutationStrategy, position: int, length: int) -> None:
    if not is_valid_position(strategy, position, length):
        raise PositionOutOfRange(
            f"{strategy.label} needs {min_width(strategy)} byte(s) at position "
            f"{position}, input has {length}"
        )


def _check_params(s: MutationStrategy, prm: MutationParams, position: int, length: int) -> None:
    fields = {
        "bit_offset": prm.bit_offset is not None,
        "operand": prm.operand is not None,
        "sign": prm.sign is not None,
        "swap": prm.swap is not None,
        "replacement": prm.replacement is not None,
    }
    if _is_bitflip_bits(s):
        required = {"bit_offset"}
    elif _is_byteflip(s):
        required = set()
    elif s == MutationStrategy.ARITH_8_8:
        required = {"operand", "sign"}
    elif _is_arith(s):
        required = {"operand", "sign", "swap"}
    else:
        required = {"replacement"}
    present = {k for k, v in fields.items() if v}
    if present != required:
        raise InvalidParams(
            f"{s.label} takes params {sorted(required)}, got {sorted(present)}"
        )

    if _is_bitflip_bits(s):
        off = prm.bit_offset
        if not isinstance(off, int) or not 0 <= off <= 7:
            raise InvalidParams(f"bit_offset must be in 0..7, got {off!r}")
        if position * 8 + off + _BIT_RUN[s] > length * 8:
            raise PositionOutOfRange(
                f"{s.label} at byte {position} bit {off} runs past the end of the input"
            )
    elif _is_arith(s):
        if not isinstance(prm.operand, int) or not ARITH_MIN <= prm.operand <= ARITH_MAX:
            raise InvalidParams(f"operand must be in {ARITH_MIN}..{ARITH_MAX}, got {prm.operand!r}")
        if prm.sign not in ("add", "sub"):
            raise InvalidParams(f"sign must be 'add' or 'sub', got {prm.sign!r}")
    elif _is_interest(s):
        if len(prm.replacement) != _BYTE_WIDTH[s]:
            raise InvalidParams(
                f"{s.label} needs a {_BYTE_WIDTH[s]}-byte replacement, got {len(prm.replacement)}"
            )


def apply_with_params(data: bytes, detail: MutationDetail) -> bytes:
    """Replay a recorded mutation.  Pure: the same inputs always give the same bytes."""
    _check_input(data)
    s = MutationStrategy(detail.strategy)
    p = detail.position
    n = len(data)
    _check_position(s, p, n)
    prm = detail.params
    _check_params(s, prm, p, n)

    buf = bytearray(data)
    if _is_bitflip_bits(s):
        start = p * 8 + prm.bit_offset
        for b in range(start, start + _BIT_RUN[s]):
            buf[b >> 3] ^= 0x80 >> (b & 7)
    elif _is_byteflip(s):
        for i in range(p, p + _BYTE_WIDTH[s]):
            buf[i] ^= 0xFF
    elif _is_arith(s):
        w = _BYTE_WIDTH[s]
        # swap=True reads and writes big-endian, so the operation stays invertible
        order = "big" if prm.swap else "little"
        value = int.from_bytes(buf[p:p + w], order)
        delta = prm.operand if prm.sign == "add" else -prm.operand
        value = (value + delta) & ((1 << (8 * w)) - 1)
        buf[p:p + w] = value.to_bytes(w, order)
    else:
        buf[p:p + len(prm.replacement)] = prm.replacement
    return bytes(buf)


def random_params(
    strategy: int, position: int, length: int, rng: random.Random
) -> MutationParams:
    """Draw the free parameters of ``strategy`` so that the result fits the input."""
    s = MutationStrategy(strategy)
    if _is_bitflip_bits(s):
        # keep the bit run inside the file
        last_bit = length * 8 - _BIT_RUN[s]
        max_off = min(7, last_bit - position * 8)
        return MutationParams(bit_offset=rng.randint(0, max_off))
    if _is_byteflip(s):
        return MutationParams()
    if _is_arith(s):
        operand = rng.randint(ARITH_MIN, ARITH_MAX)
        sign = "add" if rng.random() < 0.5 else "sub"
        if s == MutationStrategy.ARITH_8_8:
            return MutationParams(operand=operand, sign=sign)
        return MutationParams(operand=operand, sign=sign, swap=rng.random() < 0.5)
    return MutationParams(replacement=rng.randbytes(_BYTE_WIDTH[s]))


def apply(
    data: bytes, strategy: int, position: int, rng: random.Random
) -> tuple[bytes, MutationDetail]:
    """Mutate ``data`` at 0-based ``position`` with randomly drawn parameters.

    Returns the mutated bytes and the detail needed to replay them.
    """
    _check_input(data)
    s = MutationStrategy(strategy)
    _check_position(s, position, len(data))
    detail = MutationDetail(s, position, random_params(s, position, len(data), rng))
    return apply_with_params(data, detail), detail
