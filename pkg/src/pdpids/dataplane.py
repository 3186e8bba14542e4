"""Primitive capabilities of a constrained programmable forwarding device.

Everything here works on Python ints only. Reals appear on the device solely as
:class:`FixedPoint` values (signed 32-bit raw, 4 fractional bits), and every
primitive can charge an :class:`OpBudget` so that a pipeline can prove it stays
within a fixed number of operations per packet.

Hash lanes use FNV-1a (64-bit) over the input bytes, started from the FNV
offset basis xor a MurmurHash3 ``fmix64``-scrambled seed, and finished with
``fmix64``. Both are published non-cryptographic mixers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import ClassVar, Iterable, Union

import numpy as np

from .errors import ArithmeticOverflowError, BudgetViolation

FRAC_BITS = 4
RAW_MIN = -(1 << 31)
RAW_MAX = (1 << 31) - 1

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_FMIX_C1 = 0xFF51AFD7ED558CCD
_FMIX_C2 = 0xC4CEB9FE1A85EC53


class OpBudget:
    """Counts primitive operations spent on the current packet."""

    def __init__(self, limit: int = 32):
        if limit < 0:
            raise ValueError(f"limit must be non-negative, got {limit}")
        self.limit = limit
        self.used = 0
        self.peak = 0

    def charge(self, n: int = 1) -> None:
        self.used += n

    def guard(self) -> int:
        """End-of-packet check. Returns the op count and resets it.

        Raises :class:`BudgetViolation` carrying the observed count when the
        pass exceeded the limit.
        """
        used = self.used
        self.used = 0
        self.peak = max(self.peak, used)
        if used > self.limit:
            raise BudgetViolation(used, self.limit)
        return used


def budget_guard(budget: OpBudget) -> int:
    return budget.guard()


def _charge(ops: OpBudget | None, n: int = 1) -> None:
    if ops is not None:
        ops.used += n


def _check_raw(raw: int) -> int:
    if raw < RAW_MIN or raw > RAW_MAX:
        raise ArithmeticOverflowError(f"fixed-point raw value {raw} outside signed 32-bit range")
    return raw


@dataclass(frozen=True)
class FixedPoint:
    """Signed 28.4 fixed-point number; ``raw / 16`` is the represented value."""

    raw: int
    F: ClassVar[int] = FRAC_BITS

    def __post_init__(self):
        if isinstance(self.raw, bool) or not isinstance(self.raw, (int, np.integer)):
            raise TypeError(f"FixedPoint raw must be an integer, got {type(self.raw).__name__}")
        object.__setattr__(self, "raw", _check_raw(int(self.raw)))

    @classmethod
    def from_int(cls, n: int) -> "FixedPoint":
        return cls(_check_raw(n << FRAC_BITS))

    @classmethod
    def from_real(cls, x: float) -> "FixedPoint":
        # Off-device helper for loading externally computed constants.
        return cls(int(round(x * (1 << FRAC_BITS))))

    def to_float(self) -> float:
        return self.raw / (1 << FRAC_BITS)

    def __add__(self, other: "FixedPoint") -> "FixedPoint":
        return FixedPoint(_check_raw(self.raw + other.raw))

    def __sub__(self, other: "FixedPoint") -> "FixedPoint":
        return FixedPoint(_check_raw(self.raw - other.raw))

    def __neg__(self) -> "FixedPoint":
        return FixedPoint(_check_raw(-self.raw))

    def shift(self, n: int) -> "FixedPoint":
        """Arithmetic shift: right by ``n`` when positive, left by ``-n`` otherwise."""
        if n >= 0:
            return FixedPoint(self.raw >> n)
        return FixedPoint(_check_raw(self.raw << -n))

    def compare(self, other: "FixedPoint") -> int:
        return (self.raw > other.raw) - (self.raw < other.raw)

    def __lt__(self, other: "FixedPoint") -> bool:
        return self.raw < other.raw

    def __le__(self, other: "FixedPoint") -> bool:
        return self.raw <= other.raw

    def __gt__(self, other: "FixedPoint") -> bool:
        return self.raw > other.raw

    def __ge__(self, other: "FixedPoint") -> bool:
        return self.raw >= other.raw

    def __repr__(self) -> str:
        return f"FixedPoint({self.to_float()!r}, raw={self.raw})"


ZERO = FixedPoint(0)


def fxp_arith(a: FixedPoint, b, op: str, ops: OpBudget | None = None):
    """Single fixed-point primitive.

    ``op`` is one of ``add``, ``sub``, ``cmp`` (returns -1/0/1) or ``shift``
    (``b`` is then an integer shift amount, positive meaning right).
    """
    _charge(ops)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "cmp":
        return a.compare(b)
    if op == "shift":
        return a.shift(b)
    raise ValueError(f"unknown fixed-point op {op!r}")


class RegisterArray:
    """Fixed-length array of fixed-width integer slots, zero-initialised."""

    def __init__(self, length: int, width_bits: int = 32, signed: bool = True):
        if length < 1:
            raise ValueError(f"register length must be >= 1, got {length}")
        if width_bits not in (8, 16, 32, 64):
            raise ValueError(f"unsupported register width {width_bits}")
        self.length = length
        self.width_bits = width_bits
        self.signed = signed
        if signed:
            self.lo, self.hi = -(1 << (width_bits - 1)), (1 << (width_bits - 1)) - 1
        else:
            self.lo, self.hi = 0, (1 << width_bits) - 1
        self.slots = [0] * length

    def _index(self, idx: int) -> int:
        if not 0 <= idx < self.length:
            raise IndexError(f"register index {idx} out of range [0, {self.length})")
        return idx

    def _fit(self, v: int) -> int:
        if v < self.lo or v > self.hi:
            raise ArithmeticOverflowError(
                f"value {v} does not fit {'signed' if self.signed else 'unsigned'} {self.width_bits}-bit register"
            )
        return v

    def read(self, idx: int, ops: OpBudget | None = None) -> int:
        _charge(ops)
        return self.slots[self._index(idx)]

    def add(self, idx: int, delta: int, ops: OpBudget | None = None) -> int:
        _charge(ops)
        i = self._index(idx)
        v = self._fit(self.slots[i] + delta)
        self.slots[i] = v
        return v

    def write(self, idx: int, value: int, ops: OpBudget | None = None) -> int:
        _charge(ops)
        self.slots[self._index(idx)] = self._fit(value)
        return value

    def reset(self) -> None:
        self.slots = [0] * self.length


def register_access(arr: RegisterArray, idx: int, mode: str, value: int = 0,
                    ops: OpBudget | None = None) -> int:
    if mode == "read":
        return arr.read(idx, ops)
    if mode == "add":
        return arr.add(idx, value, ops)
    if mode == "write":
        return arr.write(idx, value, ops)
    raise ValueError(f"unknown register mode {mode!r}")


# -- match-action tables ----------------------------------------------------


class MatchKind(enum.Enum):
    EXACT = "exact"
    LPM = "lpm"
    RANGE = "range"


@dataclass(frozen=True)
class Exact:
    key: int


@dataclass(frozen=True)
class Lpm:
    prefix: int
    length: int


@dataclass(frozen=True)
class Range:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"range lo {self.lo} > hi {self.hi}")


Match = Union[Exact, Lpm, Range]
_KIND_OF = {Exact: MatchKind.EXACT, Lpm: MatchKind.LPM, Range: MatchKind.RANGE}


@dataclass(frozen=True)
class TableEntry:
    match: Match
    action: int
    priority: int = 0


class MatchActionTable:
    """Immutable match-action table. :meth:`lookup` returns ``None`` on a miss."""

    def __init__(self, kind: MatchKind, key_width: int, entries: Iterable[TableEntry] = (),
                 default: int | None = None):
        if key_width < 1:
            raise ValueError("key_width must be >= 1")
        self.kind = kind
        self.key_width = key_width
        self.default = default
        self.entries: tuple[TableEntry, ...] = tuple(entries)
        full = (1 << key_width) - 1
        for e in self.entries:
            if _KIND_OF[type(e.match)] is not kind:
                raise ValueError(f"{type(e.match).__name__} entry in {kind.value} table")

        if kind is MatchKind.EXACT:
            self._exact: dict[int, int] = {}
            for e in self.entries:
                if not 0 <= e.match.key <= full:
                    raise ValueError(f"key {e.match.key} wider than {key_width} bits")
                if e.match.key in self._exact:
                    raise ValueError(f"duplicate exact key {e.match.key}")
                self._exact[e.match.key] = e.action
        elif kind is MatchKind.LPM:
            by_len: dict[int, dict[int, int]] = {}
            for e in self.entries:
                p, n = e.match.prefix, e.match.length
                if not 0 <= n <= key_width:
                    raise ValueError(f"prefix length {n} outside [0, {key_width}]")
                if not 0 <= p <= full or p & ((1 << (key_width - n)) - 1):
                    raise ValueError(f"prefix {p:#x}/{n} has bits set below its length")
                bucket = by_len.setdefault(n, {})
                top = p >> (key_width - n)
                if top in bucket:
                    raise ValueError(f"duplicate prefix {p:#x}/{n}")
                bucket[top] = e.action
            self._lpm = sorted(by_len.items(), reverse=True)
        else:
            for e in self.entries:
                if e.match.lo < 0 or e.match.hi > full:
                    raise ValueError(f"range [{e.match.lo}, {e.match.hi}] wider than {key_width} bits")
            # highest priority first; ties keep insertion order
            self._ranges = sorted(self.entries, key=lambda e: -e.priority)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, key: int, ops: OpBudget | None = None) -> int | None:
        _charge(ops)
        if not 0 <= key < (1 << self.key_width):
            raise ValueError(f"key {key} does not fit {self.key_width} bits")
        if self.kind is MatchKind.EXACT:
            return self._exact.get(key, self.default)
        if self.kind is MatchKind.LPM:
            w = self.key_width
            for n, bucket in self._lpm:
                hit = bucket.get(key >> (w - n))
                if hit is not None:
                    return hit
            return self.default
        for e in self._ranges:
            if e.match.lo <= key <= e.match.hi:
                return e.action
        return self.default


def table_lookup(table: MatchActionTable, key: int, ops: OpBudget | None = None) -> int | None:
    return table.lookup(key, ops)


# -- hashing ----------------------------------------------------------------


def fmix64(h: int) -> int:
    h ^= h >> 33
    h = (h * _FMIX_C1) & _MASK64
    h ^= h >> 33
    h = (h * _FMIX_C2) & _MASK64
    h ^= h >> 33
    return h


def hash64(data: bytes, seed: int) -> int:
    h = _FNV_OFFSET ^ fmix64(seed & _MASK64)
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return fmix64(h)


def hash_lane(data: bytes, seed: int, modulus: int, ops: OpBudget | None = None) -> int:
    """Seeded hash of ``data`` reduced to ``[0, modulus)``."""
    if modulus < 1:
        raise ValueError(f"modulus must be >= 1, got {modulus}")
    _charge(ops)
    return hash64(data, seed) % modulus


def ip_bytes(ip: int) -> bytes:
    return ip.to_bytes(4, "big")


def _fmix64_np(h: np.ndarray) -> np.ndarray:
    h = h ^ (h >> np.uint64(33))
    h = h * np.uint64(_FMIX_C1)
    h = h ^ (h >> np.uint64(33))
    h = h * np.uint64(_FMIX_C2)
    return h ^ (h >> np.uint64(33))


def hash_lane_u32(keys: np.ndarray, seed: int, modulus: int) -> np.ndarray:
    """Vectorised :func:`hash_lane` over 32-bit keys hashed as 4 big-endian bytes."""
    if modulus < 1:
        raise ValueError(f"modulus must be >= 1, got {modulus}")
    k = np.asarray(keys, dtype=np.uint64)
    h = np.full(k.shape, _FNV_OFFSET ^ fmix64(seed & _MASK64), dtype=np.uint64)
    prime = np.uint64(_FNV_PRIME)
    for shift in (24, 16, 8, 0):
        h = (h ^ ((k >> np.uint64(shift)) & np.uint64(0xFF))) * prime
    return (_fmix64_np(h) % np.uint64(modulus)).astype(np.int64)


def derive_seeds(base: int, n: int) -> list[int]:
    """``n`` distinct 64-bit lane seeds from one base seed."""
    return [fmix64((base + 0x9E3779B97F4A7C15 * (i + 1)) & _MASK64) for i in range(n)]

