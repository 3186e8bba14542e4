"""Count-sketch frequency estimation and incremental per-packet entropy.

The entropy norm ``S = sum f*log2(f)`` over a window is kept up to date one
packet at a time: when a key's estimated count moves from ``c_prev`` to
``c_new`` the norm changes by ``g(c_new) - g(c_prev)`` with ``g(x) = x*log2(x)``
read from an LPM table computed off-device. At the end of a window of ``W``
packets, ``H = log2(W) - S/W`` and the division is a right shift.

Per-packet op cost of one direction with the default 4-row sketch:
8 hash lanes, 4 register adds, 6 ops for the median of four, 3 ops for
clamping the previous/new counts, 2 table lookups, 3 ops for the norm update
and 1 for the packet counter (27 total). The last packet of a window adds
4 ops for finalisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataplane import (
    FRAC_BITS,
    FixedPoint,
    Lpm,
    MatchActionTable,
    MatchKind,
    OpBudget,
    RegisterArray,
    TableEntry,
    derive_seeds,
    hash_lane,
    hash_lane_u32,
    ip_bytes,
)
from .errors import PipelineStateError


def _median(vals: list[int], ops: OpBudget | None) -> int:
    """Median of sketch row estimates; even counts average the middle pair (floor)."""
    d = len(vals)
    if d == 4:
        a, b, c, e = vals
        lo1, hi1 = (a, b) if a <= b else (b, a)
        lo2, hi2 = (c, e) if c <= e else (e, c)
        mid_lo = lo1 if lo1 >= lo2 else lo2
        mid_hi = hi1 if hi1 <= hi2 else hi2
        if ops is not None:
            ops.used += 6  # 4 compare-selects, add, shift
        return (mid_lo + mid_hi) >> 1
    s = sorted(vals)
    if ops is not None:
        ops.used += d * (d - 1) // 2 + (2 if d % 2 == 0 else 0)
    if d % 2:
        return s[d // 2]
    return (s[d // 2 - 1] + s[d // 2]) >> 1


def _median_rows(est: np.ndarray) -> np.ndarray:
    """Column-wise version of :func:`_median` over a ``(d, n)`` array."""
    d = est.shape[0]
    s = np.sort(est, axis=0)
    if d % 2:
        return s[d // 2]
    return (s[d // 2 - 1] + s[d // 2]) >> 1


class CountSketch:
    """d x w signed counters with per-row index and sign hashes."""

    def __init__(self, depth: int = 4, width: int = 2048, seed: int = 0):
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        if width < 1 or width & (width - 1):
            raise ValueError(f"width must be a power of two, got {width}")
        self.depth = depth
        self.width = width
        seeds = derive_seeds(seed, 2 * depth)
        self.index_seeds = seeds[:depth]
        self.sign_seeds = seeds[depth:]
        self.counters = [RegisterArray(width, 32, signed=True) for _ in range(depth)]

    def _lanes(self, key: int, ops: OpBudget | None) -> list[tuple[int, int]]:
        data = ip_bytes(key)
        return [
            (hash_lane(data, si, self.width, ops), 1 - 2 * hash_lane(data, ss, 2, ops))
            for si, ss in zip(self.index_seeds, self.sign_seeds)
        ]

    def update(self, key: int, ops: OpBudget | None = None) -> tuple[int, int]:
        """Add one occurrence of ``key``; returns clamped ``(c_prev, c_new)``."""
        rows = []
        for (idx, sign), reg in zip(self._lanes(key, ops), self.counters):
            post = reg.add(idx, sign, ops)
            # sign correction happens in the register's output stage; no extra op
            rows.append(post if sign > 0 else -post)
        m = _median(rows, ops)
        if ops is not None:
            ops.used += 3  # max(m, 0); m - 1; max(m - 1, 0)
        return max(m - 1, 0), max(m, 0)

    def estimate(self, key: int) -> int:
        rows = [
            reg.slots[idx] * sign
            for (idx, sign), reg in zip(self._lanes(key, None), self.counters)
        ]
        return max(_median(rows, None), 0)

    def reset(self) -> None:
        for reg in self.counters:
            reg.reset()

    def batch_window(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(c_prev, c_new)`` per packet for feeding ``keys`` in order to an empty sketch.

        Produces the same values as calling :meth:`update` per key on a freshly
        reset sketch. The sketch itself is not modified.
        """
        keys = np.asarray(keys, dtype=np.uint64)
        n = keys.shape[0]
        est = np.empty((self.depth, n), dtype=np.int64)
        pos = np.arange(n)
        for j in range(self.depth):
            idx = hash_lane_u32(keys, self.index_seeds[j], self.width)
            sign = 1 - 2 * hash_lane_u32(keys, self.sign_seeds[j], 2)
            est[j] = sign * _running_group_sum(idx, sign, pos)
        m = _median_rows(est)
        return np.maximum(m - 1, 0), np.maximum(m, 0)


def _running_group_sum(groups: np.ndarray, vals: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Inclusive running sum of ``vals`` within each group, in original order."""
    order = np.argsort(groups, kind="stable")
    g = groups[order]
    cs = np.cumsum(vals[order])
    starts = np.flatnonzero(np.r_[True, g[1:] != g[:-1]])
    offset = np.repeat(np.r_[0, cs[starts[1:] - 1]], np.diff(np.r_[starts, len(g)]))
    out = np.empty_like(cs)
    out[order] = cs - offset
    return out


class ExactCounter:
    """Exact frequency oracle with the sketch's update interface."""

    def __init__(self):
        self.counts: dict[int, int] = {}

    def update(self, key: int, ops: OpBudget | None = None) -> tuple[int, int]:
        prev = self.counts.get(key, 0)
        self.counts[key] = prev + 1
        return prev, prev + 1

    def estimate(self, key: int) -> int:
        return self.counts.get(key, 0)

    def reset(self) -> None:
        self.counts.clear()

    def batch_window(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        keys = np.asarray(keys, dtype=np.int64)
        _, inv = np.unique(keys, return_inverse=True)
        c_new = _running_group_sum(inv, np.ones_like(inv), np.arange(len(inv)))
        return c_new - 1, c_new


# -- x*log2(x) table -----------------------------------------------------------


def _xlog2x_raw(x: float) -> int:
    if x <= 1:
        return 0
    return int(round(x * math.log2(x) * (1 << FRAC_BITS)))


class LogTable:
    """LPM table mapping a count ``x`` to FixedPoint ``g(x) ~ x*log2(x)``.

    Counts below ``2**msb_kept`` get exact entries (``/32`` prefixes, 0 and 1
    both map to 0). Above that, a count of bit length ``L`` is bucketed on its
    ``msb_kept`` leading bits: one ``/(32 - L + msb_kept)`` prefix per bucket,
    valued at ``g`` of the bucket midpoint. With ``Lmax`` the bit length of
    ``max_x`` the entry count is therefore
    ``min(max_x + 1, 2**msb_kept) + max(0, Lmax - msb_kept) * 2**(msb_kept - 1)``.
    """

    KEY_WIDTH = 32

    def __init__(self, table: MatchActionTable, msb_kept: int, max_x: int):
        self.table = table
        self.msb_kept = msb_kept
        self.max_x = max_x
        self._dense: np.ndarray | None = None

    @classmethod
    def build(cls, max_x: int, msb_kept: int = 8) -> "LogTable":
        if not 1 <= msb_kept <= 16:
            raise ValueError(f"msb_kept must be in [1, 16], got {msb_kept}")
        if not 1 <= max_x <= (1 << 31) - 1:
            raise ValueError(f"max_x must be in [1, 2**31 - 1], got {max_x}")
        return cls(MatchActionTable(MatchKind.LPM, cls.KEY_WIDTH, _log_entries(max_x, msb_kept)),
                   msb_kept, max_x)

    @staticmethod
    def entry_bound(max_x: int, msb_kept: int) -> int:
        extra = max(0, max_x.bit_length() - msb_kept)
        return min(max_x + 1, 1 << msb_kept) + extra * (1 << (msb_kept - 1))

    def __len__(self) -> int:
        return len(self.table)

    def lookup(self, x: int, ops: OpBudget | None = None) -> int:
        """Raw fixed-point ``g(x)``. Counts past the table are a state error."""
        v = self.table.lookup(x, ops)
        if v is None:
            raise PipelineStateError(f"count {x} not covered by log table (max_x={self.max_x})")
        return v

    def __call__(self, x: int) -> FixedPoint:
        return FixedPoint(self.lookup(x))

    def dense(self, upto: int) -> np.ndarray:
        """``lookup`` for every x in ``[0, upto]`` as an int64 array."""
        if self._dense is None or len(self._dense) <= upto:
            self._dense = np.array([self.lookup(x) for x in range(upto + 1)], dtype=np.int64)
        return self._dense[: upto + 1]

    def dump(self, path: str | Path) -> None:
        lines = [f"# msb_kept={self.msb_kept} max_x={self.max_x}"]
        lines += [f"{e.match.prefix}/{e.match.length} {e.action}" for e in self.table.entries]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "LogTable":
        entries = []
        meta = {"msb_kept": 0, "max_x": 0}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    if k in meta:
                        meta[k] = int(v)
                continue
            try:
                pfx, value = line.split()
                p, n = pfx.split("/")
                entries.append(TableEntry(Lpm(int(p), int(n)), int(value)))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad log table line {line!r}") from exc
        table = MatchActionTable(MatchKind.LPM, cls.KEY_WIDTH, entries)
        return cls(table, meta["msb_kept"], meta["max_x"])


def _log_entries(max_x: int, m: int) -> list[TableEntry]:
    w = LogTable.KEY_WIDTH
    entries = [TableEntry(Lpm(x, w), _xlog2x_raw(x)) for x in range(min(max_x, (1 << m) - 1) + 1)]
    for L in range(m + 1, max_x.bit_length() + 1):
        span = L - m
        for top in range(1 << (m - 1), 1 << m):
            lo = top << span
            hi = lo + (1 << span) - 1
            entries.append(TableEntry(Lpm(lo, w - span), _xlog2x_raw((lo + hi) / 2)))
    return entries


def logtable_build(max_x: int, msb_kept: int) -> LogTable:
    return LogTable.build(max_x, msb_kept)


# -- entropy accumulator -------------------------------------------------------


@dataclass
class EntropyAccumulator:
    S: int = 0  # raw fixed-point norm
    count: int = 0

    def reset(self) -> None:
        self.S = 0
        self.count = 0


def entropy_update(acc: EntropyAccumulator, c_prev: int, c_new: int, lt: LogTable,
                   ops: OpBudget | None = None) -> EntropyAccumulator:
    delta = lt.lookup(max(c_new, 1), ops) - lt.lookup(max(c_prev, 1), ops)
    acc.S = max(0, acc.S + delta)
    acc.count += 1
    if ops is not None:
        ops.used += 4  # sub, add, clamp, count increment
    return acc


def entropy_finalize(acc: EntropyAccumulator, W: int, ops: OpBudget | None = None) -> FixedPoint:
    """``H = log2(W) - S/W`` with the division done as a shift, clamped to ``[0, log2 W]``."""
    if W < 1 or W & (W - 1):
        raise ValueError(f"window size must be a power of two, got {W}")
    if acc.count != W:
        raise PipelineStateError(f"window holds {acc.count} packets, expected {W}")
    log_w = W.bit_length() - 1
    top = log_w << FRAC_BITS
    h = top - (acc.S >> log_w)
    if ops is not None:
        ops.used += 4  # shift, sub, two clamps
    return FixedPoint(min(max(h, 0), top))


def finalize_raw(S: np.ndarray | int, W: int):
    """Raw-valued finalisation used by the batch path."""
    log_w = W.bit_length() - 1
    top = log_w << FRAC_BITS
    return np.clip(top - (np.asarray(S) >> log_w), 0, top)


class EntropyPipeline:
    """One direction (source or destination) of the in-device entropy estimator."""

    def __init__(self, window: int, counter: CountSketch | ExactCounter, table: LogTable,
                 op_limit: int = 32):
        if window < 2 or window & (window - 1):
            raise ValueError(f"window size must be a power of two >= 2, got {window}")
        if table.max_x < window:
            raise ValueError(f"log table covers counts up to {table.max_x}, window is {window}")
        self.window = window
        self.counter = counter
        self.table = table
        self.acc = EntropyAccumulator()
        self.budget = OpBudget(op_limit)

    def process(self, key: int) -> FixedPoint | None:
        """Account one packet; on the W-th packet return the window entropy and reset."""
        ops = self.budget
        c_prev, c_new = self.counter.update(key, ops)
        entropy_update(self.acc, c_prev, c_new, self.table, ops)
        h = None
        if self.acc.count == self.window:
            h = entropy_finalize(self.acc, self.window, ops)
            # bulk clear between windows, not a per-packet primitive
            self.counter.reset()
            self.acc.reset()
        ops.guard()
        return h

    def batch_windows(self, keys: np.ndarray) -> np.ndarray:
        """Raw window entropies for whole windows of ``keys`` (trailing partial window ignored).

        Requires the pipeline to sit at a window boundary; gives the same values
        as :meth:`process`.
        """
        if self.acc.count:
            raise PipelineStateError("batch processing must start at a window boundary")
        W = self.window
        g = self.table.dense(W)
        if np.any(np.diff(g) < 0):
            raise PipelineStateError("log table is not monotone; batch norm would need clamping")
        n_win = len(keys) // W
        out = np.empty(n_win, dtype=np.int64)
        for i in range(n_win):
            c_prev, c_new = self.counter.batch_window(keys[i * W:(i + 1) * W])
            S = int(np.sum(g[np.maximum(c_new, 1)] - g[np.maximum(c_prev, 1)]))
            out[i] = finalize_raw(S, W)
        return out
