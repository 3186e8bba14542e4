"""In-device DDoS detector driven by per-window source/destination entropies.

Each observation window of ``W`` packets yields a source and a destination
entropy. A legitimate-traffic model (EWMA mean and EWMA mean absolute deviation
per direction, smoothing by right shift) turns those into thresholds:

    src_upper = mean_src + k * dev_src
    dst_lower = mean_dst - k * dev_dst

A spoofed-source flood onto one victim pushes source entropy up and
destination entropy down, so by default a window is anomalous only when both
limits are crossed. Windows where either limit is crossed never update the
model (``freeze="excursion"``); with ``freeze="alarm"`` only alarmed windows
are held back, which lets a missed attack window drag the thresholds along.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .dataplane import FRAC_BITS, FixedPoint, OpBudget
from .sketch import CountSketch, EntropyPipeline, ExactCounter, LogTable


@dataclass(frozen=True)
class WindowConfig:
    W: int = 1 << 13
    warmup_windows: int = 10

    def __post_init__(self):
        if self.W < 2 or self.W & (self.W - 1):
            raise ValueError(f"W must be a power of two >= 2, got {self.W}")
        if self.warmup_windows < 1:
            raise ValueError(f"warmup_windows must be >= 1, got {self.warmup_windows}")


@dataclass(frozen=True)
class DetectorConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    alpha_shift: int = 3
    k: FixedPoint = FixedPoint.from_int(3)
    policy: str = "and"
    freeze: str = "excursion"  # or "alarm"
    counting: str = "sketch"  # or "exact"
    sketch_depth: int = 4
    sketch_width: int = 2048
    msb_kept: int = 8
    seed: int = 0
    op_limit: int = 32

    def __post_init__(self):
        if self.policy not in ("and", "or"):
            raise ValueError(f"policy must be 'and' or 'or', got {self.policy!r}")
        if self.freeze not in ("excursion", "alarm"):
            raise ValueError(f"freeze must be 'excursion' or 'alarm', got {self.freeze!r}")
        if self.counting not in ("sketch", "exact"):
            raise ValueError(f"counting must be 'sketch' or 'exact', got {self.counting!r}")
        if not 0 <= self.alpha_shift <= 16:
            raise ValueError(f"alpha_shift must be in [0, 16], got {self.alpha_shift}")
        if self.k.raw < 0:
            raise ValueError("k must be non-negative")


MODEL_EXTRA_BITS = 8


@dataclass
class TrafficModel:
    """EWMA mean and mean-absolute-deviation of window entropies.

    The four model registers carry ``MODEL_EXTRA_BITS`` fractional bits beyond
    the 28.4 format. Smoothing by ``>> alpha_shift`` on plain raw entropies
    cannot move by less than one raw unit (1/16 bit), which leaves the mean
    stuck up to ``2**alpha_shift - 1`` units off and the deviation pinned at 0.
    """

    alpha_shift: int = 3
    k: FixedPoint = FixedPoint.from_int(3)
    mean_src_acc: int = 0
    dev_src_acc: int = 0
    mean_dst_acc: int = 0
    dev_dst_acc: int = 0
    initialized: bool = False

    @classmethod
    def seeded(cls, mean_src: FixedPoint, dev_src: FixedPoint, mean_dst: FixedPoint, dev_dst: FixedPoint,
               alpha_shift: int = 3, k: FixedPoint = FixedPoint.from_int(3)) -> "TrafficModel":
        x = MODEL_EXTRA_BITS
        return cls(alpha_shift, k, mean_src.raw << x, dev_src.raw << x, mean_dst.raw << x,
                   dev_dst.raw << x, initialized=True)

    @property
    def mean_src(self) -> FixedPoint:
        return _round_acc(self.mean_src_acc)

    @property
    def dev_src(self) -> FixedPoint:
        return _round_acc(self.dev_src_acc)

    @property
    def mean_dst(self) -> FixedPoint:
        return _round_acc(self.mean_dst_acc)

    @property
    def dev_dst(self) -> FixedPoint:
        return _round_acc(self.dev_dst_acc)

    def snapshot(self) -> tuple:
        return (self.mean_src_acc, self.dev_src_acc, self.mean_dst_acc, self.dev_dst_acc, self.initialized)


def _round_acc(acc: int) -> FixedPoint:
    """Register value at 28.4 precision, rounded to nearest."""
    return FixedPoint((acc + (1 << (MODEL_EXTRA_BITS - 1))) >> MODEL_EXTRA_BITS)


def _scale_by_k(dev_acc: int, k_raw: int, ops: OpBudget | None) -> int:
    """``k * dev`` using only shifts and adds over the set bits of ``k``."""
    acc = 0
    bit = 0
    n_terms = 0
    while k_raw >> bit:
        if (k_raw >> bit) & 1:
            acc += dev_acc << bit
            n_terms += 1
        bit += 1
    if ops is not None:
        ops.used += 2 * n_terms
    return acc >> FRAC_BITS


def compute_thresholds(model: TrafficModel, ops: OpBudget | None = None) -> tuple[FixedPoint, FixedPoint]:
    """``(src_upper, dst_lower)``.

    Computed at model-register precision, then rounded to whole raw units:
    floor for the upper limit, ceiling for the lower one. For integer raw
    entropies ``h > floor(u)`` iff ``h > u`` (and likewise for the lower
    limit), so the strict comparisons lose nothing to the rounding.
    """
    x = MODEL_EXTRA_BITS
    k = model.k.raw
    up_acc = model.mean_src_acc + _scale_by_k(model.dev_src_acc, k, ops)
    lo_acc = model.mean_dst_acc - _scale_by_k(model.dev_dst_acc, k, ops)
    if ops is not None:
        ops.used += 6  # two k shifts, add, sub, two rounding shifts
    return FixedPoint(up_acc >> x), FixedPoint(-((-lo_acc) >> x))


def excursions(h_src: FixedPoint, h_dst: FixedPoint,
               thresholds: tuple[FixedPoint, FixedPoint]) -> tuple[bool, bool]:
    """Which directions left their normal band (strict inequalities)."""
    src_upper, dst_lower = thresholds
    return h_src.raw > src_upper.raw, h_dst.raw < dst_lower.raw


def evaluate_window(h_src: FixedPoint, h_dst: FixedPoint, thresholds: tuple[FixedPoint, FixedPoint],
                    policy: str = "and", ops: OpBudget | None = None) -> bool:
    if ops is not None:
        ops.used += 3
    src_hit, dst_hit = excursions(h_src, h_dst, thresholds)
    if policy == "and":
        return src_hit and dst_hit
    if policy == "or":
        return src_hit or dst_hit
    raise ValueError(f"unknown policy {policy!r}")


def _ewma(mean_acc: int, dev_acc: int, h: int, a: int) -> tuple[int, int]:
    err = (h << MODEL_EXTRA_BITS) - mean_acc
    return mean_acc + (err >> a), dev_acc + ((abs(err) - dev_acc) >> a)


def model_update(model: TrafficModel, h_src: FixedPoint, h_dst: FixedPoint, anomalous: bool,
                 ops: OpBudget | None = None) -> TrafficModel:
    """Fold one window into the model unless ``anomalous``; the first window seeds it."""
    x = MODEL_EXTRA_BITS
    if not model.initialized:
        model.mean_src_acc, model.dev_src_acc = h_src.raw << x, 0
        model.mean_dst_acc, model.dev_dst_acc = h_dst.raw << x, 0
        model.initialized = True
        if ops is not None:
            ops.used += 4
        return model
    if anomalous:
        return model
    a = model.alpha_shift
    model.mean_src_acc, model.dev_src_acc = _ewma(model.mean_src_acc, model.dev_src_acc, h_src.raw, a)
    model.mean_dst_acc, model.dev_dst_acc = _ewma(model.mean_dst_acc, model.dev_dst_acc, h_dst.raw, a)
    if ops is not None:
        ops.used += 14  # per direction: shift, sub, shift, add, abs, sub, shift-add
    return model


@dataclass(frozen=True)
class WindowResult:
    window_id: int
    h_src: FixedPoint
    h_dst: FixedPoint
    anomalous: bool
    src_upper: FixedPoint | None = None
    dst_lower: FixedPoint | None = None

    def log_record(self) -> dict:
        return {
            "window_id": self.window_id,
            "h_src_raw": self.h_src.raw,
            "h_dst_raw": self.h_dst.raw,
            "src_upper_raw": None if self.src_upper is None else self.src_upper.raw,
            "dst_lower_raw": None if self.dst_lower is None else self.dst_lower.raw,
            "anomalous": self.anomalous,
        }


@dataclass(frozen=True)
class AlarmEvent:
    window_id: int
    h_src: FixedPoint
    h_dst: FixedPoint
    src_upper: FixedPoint
    dst_lower: FixedPoint
    onset: bool


class EntropyDetector:
    """Per-packet model of the detector; :meth:`run` is a vectorised equivalent."""

    def __init__(self, config: DetectorConfig | None = None, table: LogTable | None = None):
        self.config = cfg = config or DetectorConfig()
        W = cfg.window.W
        self.table = table or LogTable.build(W, cfg.msb_kept)

        def counter(salt: int):
            if cfg.counting == "exact":
                return ExactCounter()
            return CountSketch(cfg.sketch_depth, cfg.sketch_width, cfg.seed * 2 + salt)

        self.src = EntropyPipeline(W, counter(0), self.table, cfg.op_limit)
        self.dst = EntropyPipeline(W, counter(1), self.table, cfg.op_limit)
        self.control_budget = OpBudget(cfg.op_limit)
        self.model = TrafficModel(cfg.alpha_shift, cfg.k)
        self.window_id = 0
        self.alarms: list[AlarmEvent] = []
        self._last_alarmed = False

    @property
    def budgets(self) -> dict[str, OpBudget]:
        return {"src": self.src.budget, "dst": self.dst.budget, "control": self.control_budget}

    def process_packet(self, src_ip: int, dst_ip: int) -> WindowResult | None:
        h_src = self.src.process(src_ip)
        h_dst = self.dst.process(dst_ip)
        ops = self.control_budget
        ops.used += 1  # window boundary test
        result = None
        if h_src is not None:
            result = self._close_window(h_src, h_dst, ops)
        ops.guard()
        return result

    def _close_window(self, h_src: FixedPoint, h_dst: FixedPoint, ops: OpBudget | None) -> WindowResult:
        cfg = self.config
        wid = self.window_id
        self.window_id += 1
        if wid < cfg.window.warmup_windows:
            model_update(self.model, h_src, h_dst, False, ops)
            return WindowResult(wid, h_src, h_dst, False)
        thresholds = compute_thresholds(self.model, ops)
        anomalous = evaluate_window(h_src, h_dst, thresholds, cfg.policy, ops)
        if cfg.freeze == "excursion":
            # a window outside either band never trains the model, alarm or not
            frozen = any(excursions(h_src, h_dst, thresholds))
        else:
            frozen = anomalous
        model_update(self.model, h_src, h_dst, frozen, ops)
        if anomalous:
            self.alarms.append(AlarmEvent(wid, h_src, h_dst, *thresholds, onset=not self._last_alarmed))
        self._last_alarmed = anomalous
        return WindowResult(wid, h_src, h_dst, anomalous, *thresholds)

    def feed(self, packets: Iterable[tuple[int, int]]) -> Iterator[WindowResult]:
        for s, d in packets:
            r = self.process_packet(s, d)
            if r is not None:
                yield r

    def run(self, src: np.ndarray, dst: np.ndarray) -> list[WindowResult]:
        """Process whole windows of a packet stream at once.

        Same results and final state as calling :meth:`process_packet` per
        packet; a trailing partial window is ignored. Op budgets are not
        charged on this path.
        """
        hs = self.src.batch_windows(np.asarray(src))
        hd = self.dst.batch_windows(np.asarray(dst))
        return [self._close_window(FixedPoint(int(a)), FixedPoint(int(b)), None) for a, b in zip(hs, hd)]


def write_alarm_log(results: Iterable[WindowResult], path: str | Path, warmup_windows: int = 0) -> None:
    """One JSON object per evaluated window."""
    with open(path, "w") as fh:
        for r in results:
            if r.window_id >= warmup_windows:
                fh.write(json.dumps(r.log_record()) + "\n")
