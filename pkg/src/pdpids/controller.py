"""Control-plane side: report replay, per-flow feature composition and KNN.

Floating point is fine here; nothing in this module runs on the device.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .flows import FlowRecord, ReportPacket

BENIGN = 0
DDOS = 1

FEATURE_NAMES = ("duration_us", "pkt_rate", "byte_rate", "mean_payload", "payload_span",
                 "mean_iat_us", "iat_var_us2", "pkt_count")


@dataclass(frozen=True)
class FeatureVector:
    duration_us: float
    pkt_rate: float
    byte_rate: float
    mean_payload: float
    payload_span: float
    mean_iat_us: float
    iat_var_us2: float
    pkt_count: float

    def as_array(self) -> np.ndarray:
        return np.array([self.duration_us, self.pkt_rate, self.byte_rate, self.mean_payload, self.payload_span,
                         self.mean_iat_us, self.iat_var_us2, self.pkt_count], dtype=np.float64)


def compose_features(d) -> FeatureVector:
    """Feature tuple for one flow descriptor or report record.

    Duration is the flow's elapsed time, which equals the sum of its
    inter-arrival times, floored at 1 us.
    """
    n = d.pkt_count
    if n < 1:
        raise ValueError("descriptor has no packets")
    duration = max(d.sum_iat_us, 1)
    secs = duration / 1e6
    if n >= 2:
        mean_iat = d.sum_iat_us / (n - 1)
        iat_var = max(d.sum_iat_sq_us / (n - 1) - mean_iat * mean_iat, 0.0)
    else:
        mean_iat = iat_var = 0.0
    return FeatureVector(
        duration_us=float(duration),
        pkt_rate=n / secs,
        byte_rate=d.byte_count / secs,
        mean_payload=d.payload_bytes / n,
        payload_span=float(d.max_payload - d.min_payload),
        mean_iat_us=float(mean_iat),
        iat_var_us2=float(iat_var),
        pkt_count=float(n),
    )


class DeltaTracker:
    """Turns cumulative per-flow report records into per-report packet deltas."""

    def __init__(self):
        self.baseline: dict = {}

    def delta(self, rec: FlowRecord) -> int:
        d = rec.pkt_count - self.baseline.get(rec.key, 0)
        if rec.evicted:
            self.baseline.pop(rec.key, None)
        else:
            self.baseline[rec.key] = rec.pkt_count
        return d

    def total(self, reports: Iterable[ReportPacket]) -> int:
        return sum(self.delta(rec) for r in reports for rec in r.flows)


# -- KNN -----------------------------------------------------------------------


def _as_matrix(rows) -> np.ndarray:
    return np.array([r.as_array() if isinstance(r, FeatureVector) else np.asarray(r, dtype=np.float64)
                     for r in rows], dtype=np.float64).reshape(len(rows), -1)


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def normalize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.mins) / safe, 0.0)

    def quantize(self, X, bits: int = 8) -> np.ndarray:
        """Map features onto ``[0, 2**bits)`` using the training min/max."""
        top = (1 << bits) - 1
        q = np.floor(self.normalize(X) * (1 << bits))
        return np.clip(q, 0, top).astype(np.int64)


def knn_train(rows: Sequence[tuple], labels: Sequence[int] | None = None) -> LabeledDataset:
    """Store labelled rows and fit a per-feature min/max normaliser.

    ``rows`` is either a sequence of ``(features, label)`` pairs or, when
    ``labels`` is given, a sequence (or matrix) of features.
    """
    if labels is None:
        rows = list(rows)
        if not rows:
            raise ValueError("cannot train on zero rows")
        feats, labels = [r[0] for r in rows], [r[1] for r in rows]
    else:
        feats = rows
    if len(feats) == 0:
        raise ValueError("cannot train on zero rows")
    X = _as_matrix(feats)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) != len(X):
        raise ValueError(f"{len(X)} rows but {len(y)} labels")
    return LabeledDataset(X, y, X.min(axis=0), X.max(axis=0))


def _sq_distances(Xn_train: np.ndarray, Xq: np.ndarray) -> np.ndarray:
    """Squared distances, one row per query.

    Summed feature by feature, so each entry is bit-identical to the plain
    per-pair loop regardless of how queries are batched.
    """
    cols = np.ascontiguousarray(Xn_train.T)
    d2 = np.zeros((len(Xq), len(Xn_train)))
    diff = np.empty_like(d2)
    for j in range(len(cols)):
        np.subtract(cols[j][None, :], Xq[:, j, None], out=diff)
        diff *= diff
        d2 += diff
    return d2


def knn_classify(ds: LabeledDataset, x, k: int = 5) -> int:
    """Majority label of the ``k`` nearest training rows; vote ties go to DDoS.

    Euclidean distance in normalised space; equal distances prefer the lower
    row index.
    """
    return int(knn_classify_many(ds, [x], k)[0])


def knn_classify_many(ds: LabeledDataset, X, k: int = 5) -> np.ndarray:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(ds):
        raise ValueError(f"k={k} exceeds the {len(ds)} training rows")
    Xq = ds.normalize(_as_matrix(list(X)) if not isinstance(X, np.ndarray) else X)
    Xn = ds.normalize(ds.X)
    out = np.empty(len(Xq), dtype=np.int64)
    block = max(1, (1 << 17) // max(len(Xn), 1))
    for b in range(0, len(Xq), block):
        for i, d2 in enumerate(_sq_distances(Xn, Xq[b:b + block]), b):
            out[i] = _vote(ds.y, d2, k)
    return out


def _vote(y: np.ndarray, d2: np.ndarray, k: int) -> int:
    if k < len(d2):
        # stable argsort on the partitioned candidates keeps the index tie-break
        cut = np.partition(d2, k - 1)[k - 1]
        cand = np.flatnonzero(d2 <= cut)
        nearest = cand[np.argsort(d2[cand], kind="stable")[:k]]
    else:
        nearest = np.argsort(d2, kind="stable")[:k]
    votes = int(y[nearest].sum())
    return DDOS if 2 * votes >= k else BENIGN
