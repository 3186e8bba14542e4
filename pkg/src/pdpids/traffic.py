"""Trace ingestion and seed-deterministic synthetic traffic.

Traces are held column-wise in a :class:`Trace` (one numpy array per field)
and iterate as :class:`TraceRecord` values. CSV header contract::

    ts_us,src_ip,dst_ip,src_port,dst_port,proto,payload_len[,label]

Benign traffic: source hosts and destination servers are drawn from finite
Zipf distributions; each source uses a small pool of ephemeral ports so flows
carry several packets. Attack traffic: spoofed uniformly random sources and
ports, one fixed victim, short payloads.
"""

from __future__ import annotations

import csv
import ipaddress
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import TraceOrderError, TraceParseError
from .flows import FlowKey

HEADER = ["ts_us", "src_ip", "dst_ip", "src_port", "dst_port", "proto", "payload_len"]
HOST_BASE = 0x0A000000  # 10.0.0.0/8
SERVER_BASE = 0xAC100000  # 172.16.0.0/12
SERVICE_PORTS = (80, 443, 53, 22)
DEFAULT_TARGET = 0xC0A80001  # 192.168.0.1


@dataclass(frozen=True)
class TraceRecord:
    ts_us: int
    key: FlowKey
    payload_len: int
    label: int | None = None


@dataclass
class Trace:
    ts: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    sport: np.ndarray
    dport: np.ndarray
    proto: np.ndarray
    payload: np.ndarray
    label: np.ndarray  # -1 where unlabeled

    FIELDS = ("ts", "src", "dst", "sport", "dport", "proto", "payload", "label")

    def __len__(self) -> int:
        return len(self.ts)

    def __iter__(self) -> Iterator[TraceRecord]:
        cols = [getattr(self, f).tolist() for f in self.FIELDS]
        for ts, s, d, sp, dp, pr, pl, lab in zip(*cols):
            yield TraceRecord(ts, FlowKey(s, d, sp, dp, pr), pl, None if lab < 0 else lab)

    def __getitem__(self, sl: slice) -> "Trace":
        return Trace(*(getattr(self, f)[sl] for f in self.FIELDS))

    @property
    def labeled(self) -> bool:
        return bool(len(self)) and bool(np.all(self.label >= 0))

    @classmethod
    def from_records(cls, records) -> "Trace":
        rows = [(r.ts_us, r.key.src_ip, r.key.dst_ip, r.key.src_port, r.key.dst_port,
                 r.key.proto, r.payload_len, -1 if r.label is None else r.label) for r in records]
        cols = np.array(rows, dtype=np.int64).reshape(-1, 8).T
        return cls(*cols)

    def equals(self, other: "Trace") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self.FIELDS)


@dataclass(frozen=True)
class SyntheticConfig:
    n_benign_hosts: int = 1000
    n_servers: int = 1000
    zipf_s: float = 1.0
    pkts_per_second: int = 10_000
    duration_s: float = 10.0
    seed: int = 0
    ports_per_host: int = 8

    def __post_init__(self):
        for name in ("n_benign_hosts", "n_servers", "pkts_per_second", "ports_per_host"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")

    @property
    def n_packets(self) -> int:
        return int(round(self.pkts_per_second * self.duration_s))


def zipf_probs(n: int, s: float) -> np.ndarray:
    p = np.arange(1, n + 1, dtype=np.float64) ** -s
    return p / p.sum()


def generate_benign(cfg: SyntheticConfig) -> Trace:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_packets
    host = rng.choice(cfg.n_benign_hosts, n, p=zipf_probs(cfg.n_benign_hosts, cfg.zipf_s))
    server = rng.choice(cfg.n_servers, n, p=zipf_probs(cfg.n_servers, cfg.zipf_s))
    # host/server indices are shuffled onto addresses so popularity is not address-ordered
    host_ip = HOST_BASE + 1 + rng.permutation(cfg.n_benign_hosts)
    server_ip = SERVER_BASE + 1 + rng.permutation(cfg.n_servers)
    dport = np.asarray(SERVICE_PORTS)[server % len(SERVICE_PORTS)]
    gaps = rng.exponential(1e6 / cfg.pkts_per_second, n)
    return Trace(
        ts=np.floor(np.cumsum(gaps)).astype(np.int64),
        src=host_ip[host].astype(np.int64),
        dst=server_ip[server].astype(np.int64),
        sport=(49152 + rng.integers(0, cfg.ports_per_host, n)).astype(np.int64),
        dport=dport.astype(np.int64),
        proto=np.where(dport == 53, 17, 6).astype(np.int64),
        payload=rng.integers(64, 1401, n).astype(np.int64),
        label=np.zeros(n, dtype=np.int64),
    )


def attack_count(n_benign: int, fraction: float) -> int:
    """Attack packets needed so they make up ``fraction`` of the merged region."""
    return int(round(fraction * n_benign / (1.0 - fraction)))


def inject_attack(benign: Trace, fraction: float, target_ip: int = DEFAULT_TARGET, seed: int = 0,
                  target_port: int = 80, proto: int = 6, start_ts: int | None = None,
                  end_ts: int | None = None, payload_range: tuple[int, int] = (0, 40)) -> Trace:
    """Interleave spoofed-source packets aimed at ``target_ip`` into ``benign``.

    Attack packets are placed uniformly in ``[start_ts, end_ts]`` (default: the
    whole trace) and make up ``fraction`` of the merged packets in that span.
    On equal timestamps benign packets come first.
    """
    if not 0 <= fraction < 1:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    if len(benign) == 0 or fraction == 0:
        return benign[:]
    lo = int(benign.ts[0]) if start_ts is None else int(start_ts)
    hi = int(benign.ts[-1]) if end_ts is None else int(end_ts)
    if lo > hi:
        raise ValueError(f"start_ts {lo} after end_ts {hi}")
    n_region = int(np.count_nonzero((benign.ts >= lo) & (benign.ts <= hi)))
    n_att = attack_count(n_region, fraction)
    rng = np.random.default_rng(seed)
    attack = Trace(
        ts=np.sort(rng.integers(lo, hi + 1, n_att)).astype(np.int64),
        src=rng.integers(1, 1 << 32, n_att, dtype=np.int64),
        dst=np.full(n_att, target_ip, dtype=np.int64),
        sport=rng.integers(1024, 1 << 16, n_att, dtype=np.int64),
        dport=np.full(n_att, target_port, dtype=np.int64),
        proto=np.full(n_att, proto, dtype=np.int64),
        payload=rng.integers(payload_range[0], payload_range[1] + 1, n_att).astype(np.int64),
        label=np.ones(n_att, dtype=np.int64),
    )
    merged = Trace(*(np.concatenate([getattr(benign, f), getattr(attack, f)]) for f in Trace.FIELDS))
    order = np.argsort(merged.ts, kind="stable")
    return merged[order]


def window_labels(labels: np.ndarray, W: int, fraction: float) -> np.ndarray:
    """Ground truth per complete window: attack share above half the attack's own fraction."""
    n_win = len(labels) // W
    share = (np.asarray(labels[: n_win * W]) == 1).reshape(n_win, W).mean(axis=1)
    return share > 0.5 * fraction


# -- CSV -----------------------------------------------------------------------


def _ip(text: str) -> int:
    return int(ipaddress.IPv4Address(text))


def _ranged(text: str, hi: int, name: str) -> int:
    v = int(text)
    if not 0 <= v <= hi:
        raise ValueError(f"{name} {v} out of range [0, {hi}]")
    return v


def iter_trace_csv(path: str | Path) -> Iterator[TraceRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header not in (HEADER, HEADER + ["label"]):
            raise TraceParseError(1, f"bad header {header!r}")
        has_label = len(header) == 8
        last_ts = None
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise TraceParseError(lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                ts = _ranged(row[0], (1 << 64) - 1, "ts_us")
                key = FlowKey(_ip(row[1]), _ip(row[2]), _ranged(row[3], 0xFFFF, "src_port"),
                              _ranged(row[4], 0xFFFF, "dst_port"), _ranged(row[5], 0xFF, "proto"))
                payload = _ranged(row[6], 0xFFFF, "payload_len")
                label = None
                if has_label and row[7] != "":
                    label = int(row[7])
                    if label not in (0, 1):
                        raise ValueError(f"label must be 0 or 1, got {label}")
            except ValueError as exc:
                raise TraceParseError(lineno, str(exc)) from None
            if last_ts is not None and ts < last_ts:
                raise TraceOrderError(f"line {lineno}: timestamp {ts} after {last_ts}")
            last_ts = ts
            yield TraceRecord(ts, key, payload, label)


def load_trace(path: str | Path) -> Trace:
    return Trace.from_records(iter_trace_csv(path))


def write_trace_csv(trace: Trace, path: str | Path, with_labels: bool | None = None) -> None:
    if with_labels is None:
        with_labels = trace.labeled
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER + (["label"] if with_labels else []))
        for r in trace:
            row = [r.ts_us, str(ipaddress.IPv4Address(r.key.src_ip)), str(ipaddress.IPv4Address(r.key.dst_ip)),
                   r.key.src_port, r.key.dst_port, r.key.proto, r.payload_len]
            if with_labels:
                row.append("" if r.label is None else r.label)
            w.writerow(row)
