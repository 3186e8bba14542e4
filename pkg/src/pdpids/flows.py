"""Per-flow statistics collection and the data-plane -> control-plane report format.

A :class:`FlowTable` is a fixed array of ``2**16`` hash-addressed slots. A
packet either starts a descriptor in an empty slot, updates the resident
descriptor of its own flow, or evicts a different resident flow. Evicted
descriptors are queued and travel with the next report, so no packet count
is ever lost.

Report wire format (all fields big-endian)::

    header  magic u32 = 0x50344944 | version u8 = 1 | window_id u32 | flow_count u16
    record  src_ip u32 | dst_ip u32 | src_port u16 | dst_port u16 | proto u8
            pkt_count u32 | byte_count u64 | payload_bytes u64
            sum_iat_us u64 | sum_iat_sq_us u64 | min_iat_us u32 | max_iat_us u32
            min_payload u16 | max_payload u16 | flags u16

11 header bytes plus 63 per record. ``flags`` bit 0 marks a flow that changed
in the window, bit 1 a descriptor that was evicted (its counters are final and
the controller must reset its baseline for the key). First/last timestamps stay
on the device; their difference is ``sum_iat_us``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .dataplane import hash_lane
from .errors import ReportFormatError, ReportLengthError, ReportVersionError, TraceOrderError

MAGIC = 0x50344944
VERSION = 1
TABLE_SLOTS = 1 << 16
IAT_UNSET = 0xFFFFFFFF
U64_MAX = (1 << 64) - 1

FLAG_CHANGED = 0x1
FLAG_EVICTED = 0x2

_HEADER = struct.Struct(">IBIH")
_RECORD = struct.Struct(">IIHHBIQQQQIIHHH")
HEADER_BYTES = _HEADER.size
RECORD_BYTES = _RECORD.size


@dataclass(frozen=True)
class FlowKey:
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: int

    _FMT = struct.Struct(">IIHHB")

    def pack(self) -> bytes:
        return self._FMT.pack(self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.proto)

    @classmethod
    def unpack(cls, data: bytes) -> "FlowKey":
        return cls(*cls._FMT.unpack(data))


@dataclass
class FlowDescriptor:
    key: FlowKey
    pkt_count: int = 0
    byte_count: int = 0
    payload_bytes: int = 0
    sum_iat_us: int = 0
    sum_iat_sq_us: int = 0
    min_iat_us: int = IAT_UNSET
    max_iat_us: int = IAT_UNSET
    min_payload: int = 0
    max_payload: int = 0
    first_ts_us: int = 0
    last_ts_us: int = 0
    dirty: bool = False

    @classmethod
    def start(cls, key: FlowKey, payload_len: int, wire_len: int, ts_us: int) -> "FlowDescriptor":
        return cls(key, 1, wire_len, payload_len, min_payload=payload_len, max_payload=payload_len,
                   first_ts_us=ts_us, last_ts_us=ts_us, dirty=True)

    def accumulate(self, payload_len: int, wire_len: int, ts_us: int) -> None:
        iat = ts_us - self.last_ts_us
        self.pkt_count += 1
        self.byte_count += wire_len
        self.payload_bytes += payload_len
        self.sum_iat_us += iat
        self.sum_iat_sq_us = min(self.sum_iat_sq_us + iat * iat, U64_MAX)
        iat32 = min(iat, IAT_UNSET - 1)
        if self.max_iat_us == IAT_UNSET:
            self.min_iat_us = self.max_iat_us = iat32
        else:
            self.min_iat_us = min(self.min_iat_us, iat32)
            self.max_iat_us = max(self.max_iat_us, iat32)
        self.min_payload = min(self.min_payload, payload_len)
        self.max_payload = max(self.max_payload, payload_len)
        self.last_ts_us = ts_us
        self.dirty = True

    def record(self, flags: int) -> "FlowRecord":
        return FlowRecord(self.key, self.pkt_count, self.byte_count, self.payload_bytes, self.sum_iat_us,
                          self.sum_iat_sq_us, self.min_iat_us, self.max_iat_us, self.min_payload,
                          self.max_payload, flags)


@dataclass(frozen=True)
class FlowRecord:
    """One flow as carried in a report."""

    key: FlowKey
    pkt_count: int
    byte_count: int
    payload_bytes: int
    sum_iat_us: int
    sum_iat_sq_us: int
    min_iat_us: int
    max_iat_us: int
    min_payload: int
    max_payload: int
    flags: int = FLAG_CHANGED

    @property
    def evicted(self) -> bool:
        return bool(self.flags & FLAG_EVICTED)


@dataclass(frozen=True)
class ReportPacket:
    window_id: int
    flows: tuple[FlowRecord, ...]
    magic: int = MAGIC
    version: int = VERSION

    @property
    def flow_count(self) -> int:
        return len(self.flows)


class FlowTable:
    def __init__(self, size: int = TABLE_SLOTS, seed: int = 0):
        if size < 1:
            raise ValueError(f"table size must be >= 1, got {size}")
        self.size = size
        self.seed = seed
        self.slots: list[FlowDescriptor | None] = [None] * size
        self.pending: list[FlowRecord] = []
        self.last_ts: int | None = None

    def slot_of(self, key: FlowKey) -> int:
        return hash_lane(key.pack(), self.seed, self.size)

    def collect_packet(self, key: FlowKey, payload_len: int, ts_us: int,
                       wire_len: int | None = None) -> FlowDescriptor | None:
        """Account one packet. Returns the descriptor it evicted, if any."""
        if self.last_ts is not None and ts_us < self.last_ts:
            raise TraceOrderError(f"timestamp {ts_us} after {self.last_ts}")
        self.last_ts = ts_us
        if wire_len is None:
            wire_len = payload_len
        i = self.slot_of(key)
        resident = self.slots[i]
        if resident is not None and resident.key == key:
            resident.accumulate(payload_len, wire_len, ts_us)
            return None
        self.slots[i] = FlowDescriptor.start(key, payload_len, wire_len, ts_us)
        if resident is not None:
            flags = FLAG_EVICTED | (FLAG_CHANGED if resident.dirty else 0)
            self.pending.append(resident.record(flags))
        return resident

    def rotate_window(self, window_id: int) -> ReportPacket | None:
        """Gather pending evictions and changed flows; ``None`` when nothing changed."""
        records = self.pending
        self.pending = []
        for d in self.slots:
            if d is not None and d.dirty:
                records.append(d.record(FLAG_CHANGED))
                d.dirty = False
        if not records:
            return None
        return ReportPacket(window_id, tuple(records))

    def descriptors(self) -> Iterator[FlowDescriptor]:
        return (d for d in self.slots if d is not None)


def collect_packet(tbl: FlowTable, key: FlowKey, payload_len: int, ts_us: int) -> FlowDescriptor | None:
    return tbl.collect_packet(key, payload_len, ts_us)


def rotate_window(tbl: FlowTable, window_id: int) -> ReportPacket | None:
    return tbl.rotate_window(window_id)


def collect_trace(records: Iterable, window_us: int = 1_000_000, table_size: int = TABLE_SLOTS,
                  seed: int = 0) -> list[ReportPacket]:
    """Run a whole trace through a fresh table with time-based window rotation.

    Window ``i`` covers ``[t0 + i*window_us, t0 + (i+1)*window_us)`` where
    ``t0`` is the first timestamp; the last window is flushed at the end.
    """
    if window_us < 1:
        raise ValueError("window_us must be >= 1")
    tbl = FlowTable(table_size, seed)
    reports = []
    wid = 0
    boundary = None
    for r in records:
        if boundary is None:
            boundary = r.ts_us + window_us
        while r.ts_us >= boundary:
            rep = tbl.rotate_window(wid)
            if rep is not None:
                reports.append(rep)
            wid += 1
            boundary += window_us
        tbl.collect_packet(r.key, r.payload_len, r.ts_us)
    rep = tbl.rotate_window(wid)
    if rep is not None:
        reports.append(rep)
    return reports


# -- wire format -----------------------------------------------------------------


def serialize_report(r: ReportPacket) -> bytes:
    if not r.flows:
        raise ValueError("refusing to serialize an empty report")
    if len(r.flows) > 0xFFFF:
        raise ValueError(f"too many flows for one report: {len(r.flows)}")
    out = [_HEADER.pack(r.magic, r.version, r.window_id, len(r.flows))]
    for f in r.flows:
        k = f.key
        out.append(_RECORD.pack(k.src_ip, k.dst_ip, k.src_port, k.dst_port, k.proto,
                                f.pkt_count, f.byte_count, f.payload_bytes, f.sum_iat_us, f.sum_iat_sq_us,
                                f.min_iat_us, f.max_iat_us, f.min_payload, f.max_payload, f.flags))
    return b"".join(out)


def parse_report(data: bytes) -> ReportPacket:
    if len(data) >= 4 and int.from_bytes(data[:4], "big") != MAGIC:
        raise ReportFormatError(f"bad magic {data[:4].hex()}")
    if len(data) < HEADER_BYTES:
        raise ReportLengthError(f"report of {len(data)} bytes is shorter than its header")
    magic, version, window_id, count = _HEADER.unpack_from(data)
    if version != VERSION:
        raise ReportVersionError(f"unsupported report version {version}")
    if count == 0:
        raise ReportFormatError("report announces zero flows")
    expected = HEADER_BYTES + RECORD_BYTES * count
    if len(data) != expected:
        raise ReportLengthError(f"report is {len(data)} bytes, header announces {expected}")
    flows = []
    for i in range(count):
        v = _RECORD.unpack_from(data, HEADER_BYTES + i * RECORD_BYTES)
        flows.append(FlowRecord(FlowKey(*v[:5]), *v[5:]))
    return ReportPacket(window_id, tuple(flows), magic, version)


def write_report_stream(reports: Iterable[ReportPacket], path: str | Path) -> int:
    """Dump reports as ``u32 length`` + report bytes records. Returns the count written."""
    n = 0
    with open(path, "wb") as fh:
        for r in reports:
            b = serialize_report(r)
            fh.write(len(b).to_bytes(4, "big"))
            fh.write(b)
            n += 1
    return n


def read_report_stream(path: str | Path) -> Iterator[ReportPacket]:
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                return
            if len(head) < 4:
                raise ReportLengthError("truncated length prefix")
            n = int.from_bytes(head, "big")
            body = fh.read(n)
            if len(body) != n:
                raise ReportLengthError(f"record announces {n} bytes, {len(body)} available")
            yield parse_report(body)

