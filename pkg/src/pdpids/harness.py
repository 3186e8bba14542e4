"""Experiment configuration, orchestration and metrics output.

Config files are flat ``key = value`` text; ``#`` starts a comment. Keys left
out take the per-pipeline defaults in :data:`ENTROPY_DEFAULTS` and
:data:`CLASSIFIER_DEFAULTS`.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import ipaddress
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import BENIGN, DDOS, compose_features, knn_classify_many, knn_train
from .dataplane import FixedPoint
from .detector import DetectorConfig, EntropyDetector, WindowConfig
from .errors import ConfigError
from .flows import FlowKey, collect_trace
from .traffic import (DEFAULT_TARGET, SyntheticConfig, Trace, generate_benign, inject_attack, load_trace,
                      window_labels)
from .trees import DecisionTree, forest_classify_many, tree_compile

ENTROPY_DEFAULTS = {
    "n_benign_hosts": 1000,
    "n_servers": 1 << 18,
    "pkts_per_second": 9800,
    "duration_s": 100.0,
    "attack_fraction": 0.04,
    "attack_start": 0.5,
    "attack_end": 1.0,
}

CLASSIFIER_DEFAULTS = {
    "n_benign_hosts": 200,
    "n_servers": 64,
    "pkts_per_second": 1500,
    "duration_s": 20.0,
    "attack_fraction": 0.1,
    "attack_start": 0.0,
    "attack_end": 1.0,
}


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: str = "entropy"
    seed: int = 0
    # trace source: a CSV file, or the synthetic generator
    trace: str | None = None
    n_benign_hosts: int | None = None
    n_servers: int | None = None
    zipf_s: float = 1.0
    pkts_per_second: int | None = None
    duration_s: float | None = None
    ports_per_host: int = 8
    attack_fraction: float | None = None
    attack_start: float | None = None  # position in the trace's time span, 0..1
    attack_end: float | None = None
    target_ip: int = DEFAULT_TARGET
    # entropy detector
    W: int = 1 << 13
    warmup_windows: int = 10
    alpha_shift: int = 3
    k: float = 3.0
    policy: str = "and"
    freeze: str = "excursion"
    counting: str = "sketch"
    sketch_depth: int = 4
    sketch_width: int = 2048
    msb_kept: int = 8
    op_limit: int = 32
    # classifier
    classifier: str = "knn"
    knn_k: int = 5
    tree_files: tuple[str, ...] = ()
    quant_bits: int = 8
    flow_window_us: int = 1_000_000
    train_seed: int | None = None
    train_trace: str | None = None
    # output
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        if self.pipeline not in ("entropy", "classifier"):
            raise ConfigError(f"pipeline must be 'entropy' or 'classifier', got {self.pipeline!r}")
        defaults = ENTROPY_DEFAULTS if self.pipeline == "entropy" else CLASSIFIER_DEFAULTS
        for key, value in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        if self.train_seed is None:
            object.__setattr__(self, "train_seed", self.seed + 1_000_003)
        self.validate()

    def validate(self) -> None:
        def need(ok: bool, msg: str):
            if not ok:
                raise ConfigError(msg)

        need(0 <= self.seed < 1 << 64, f"seed must be a u64, got {self.seed}")
        need(0 <= self.attack_fraction < 1, f"attack_fraction must be in [0, 1), got {self.attack_fraction}")
        need(0 <= self.attack_start <= self.attack_end <= 1,
             f"need 0 <= attack_start <= attack_end <= 1, got {self.attack_start}, {self.attack_end}")
        need(self.format in ("json", "csv"), f"format must be json or csv, got {self.format!r}")
        need(self.classifier in ("knn", "tree"), f"classifier must be knn or tree, got {self.classifier!r}")
        need(self.knn_k >= 1, f"knn_k must be >= 1, got {self.knn_k}")
        need(1 <= self.quant_bits <= 16, f"quant_bits must be in [1, 16], got {self.quant_bits}")
        need(self.flow_window_us >= 1, "flow_window_us must be >= 1")
        need(self.k >= 0, f"k must be >= 0, got {self.k}")
        for p in [self.trace, self.train_trace, *self.tree_files]:
            need(p is None or Path(p).is_file(), f"file not found: {p}")
        if self.pipeline == "classifier" and self.classifier == "tree":
            need(bool(self.tree_files), "classifier=tree needs tree_files")
        try:
            self.synthetic(self.seed)
            self.detector_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def synthetic(self, seed: int) -> SyntheticConfig:
        return SyntheticConfig(self.n_benign_hosts, self.n_servers, self.zipf_s, self.pkts_per_second,
                               self.duration_s, seed, self.ports_per_host)

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(WindowConfig(self.W, self.warmup_windows), self.alpha_shift,
                              FixedPoint.from_real(self.k), self.policy, self.freeze, self.counting,
                              self.sketch_depth, self.sketch_width, self.msb_kept, self.seed, self.op_limit)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tree_files"] = list(self.tree_files)
        return d

    # -- key=value files ---------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        types = {f.name for f in dataclasses.fields(cls)}
        values: dict = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = _parse_value(key, raw)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {key}: {exc}") from None
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, **overrides)


_INT_KEYS = {"seed", "n_benign_hosts", "n_servers", "pkts_per_second", "ports_per_host", "W", "warmup_windows",
             "alpha_shift", "sketch_depth", "sketch_width", "msb_kept", "op_limit", "knn_k", "quant_bits",
             "flow_window_us", "train_seed"}
_FLOAT_KEYS = {"zipf_s", "duration_s", "attack_fraction", "attack_start", "attack_end", "k"}


def _parse_value(key: str, raw: str):
    if key in _INT_KEYS:
        return int(raw, 0)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key == "target_ip":
        return int(ipaddress.IPv4Address(raw))
    if key == "tree_files":
        return tuple(p.strip() for p in raw.split(",") if p.strip())
    return raw or None


# -- metrics ---------------------------------------------------------------------

METRIC_FIELDS = ("pipeline", "seed", "units", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "fpr",
                 "detection_delay_windows", "detection_delay_packets", "wall_clock_s", "config")
CSV_HEADER = ",".join(METRIC_FIELDS)


@dataclass(frozen=True)
class MetricsReport:
    pipeline: str
    seed: int
    tp: int
    fp: int
    tn: int
    fn: int
    detection_delay_windows: int | None = None
    detection_delay_packets: int | None = None
    wall_clock_s: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def units(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.units if self.units else None

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def fpr(self) -> float | None:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else None

    @classmethod
    def from_confusion(cls, pipeline: str, seed: int, truth, predicted, **kw) -> "MetricsReport":
        t = np.asarray(truth, dtype=bool)
        p = np.asarray(predicted, dtype=bool)
        return cls(pipeline, seed, int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)),
                   int(np.sum(t & ~p)), **kw)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_FIELDS}

    def deterministic_part(self) -> dict:
        d = self.as_dict()
        d.pop("wall_clock_s")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["pipeline"], d["seed"], d["tp"], d["fp"], d["tn"], d["fn"], d["detection_delay_windows"],
                   d["detection_delay_packets"], d["wall_clock_s"], d["config"])


def emit_metrics(r: MetricsReport, path: str | Path, format: str = "json") -> None:
    if format == "json":
        text = json.dumps(r.as_dict(), indent=2, sort_keys=False) + "\n"
    elif format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        row = r.as_dict()
        row["config"] = json.dumps(row["config"], sort_keys=True, separators=(",", ":"))
        w.writerow("" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                   for k in METRIC_FIELDS)
        text = buf.getvalue()
    else:
        raise ValueError(f"format must be json or csv, got {format!r}")
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write metrics to {path}: {exc.strerror}", str(path)) from None


def load_metrics(path: str | Path) -> MetricsReport:
    """Read back a JSON or CSV metrics file written by :func:`emit_metrics`."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return MetricsReport.from_dict(json.loads(text))
    row = next(csv.DictReader(io.StringIO(text)))
    ints = {"seed", "tp", "fp", "tn", "fn", "detection_delay_windows", "detection_delay_packets"}
    d: dict = {}
    for k, v in row.items():
        if v == "":
            d[k] = None
        elif k in ints:
            d[k] = int(v)
        elif k == "config":
            d[k] = json.loads(v)
        elif k == "pipeline":
            d[k] = v
        else:
            d[k] = float(v)
    return MetricsReport.from_dict(d)


# -- pipelines -------------------------------------------------------------------


def build_trace(cfg: ExperimentConfig, seed: int, path: str | None = None) -> Trace:
    """Load ``path`` or synthesise benign traffic plus the configured attack."""
    if path is not None:
        return load_trace(path)
    benign = generate_benign(cfg.synthetic(seed))
    if cfg.attack_fraction == 0 or len(benign) == 0:
        return benign
    t0, t1 = int(benign.ts[0]), int(benign.ts[-1])
    span = t1 - t0
    return inject_attack(benign, cfg.attack_fraction, cfg.target_ip, seed=seed ^ 0x5EED,
                         start_ts=t0 + int(cfg.attack_start * span), end_ts=t0 + int(cfg.attack_end * span))


def run_entropy(cfg: ExperimentConfig) -> MetricsReport:
    start = time.perf_counter()
    trace = build_trace(cfg, cfg.seed, cfg.trace)
    if not trace.labeled:
        raise ConfigError("entropy experiment needs a labelled trace")
    det = EntropyDetector(cfg.detector_config())
    results = det.run(trace.src, trace.dst)
    W = cfg.W
    truth = window_labels(trace.label, W, cfg.attack_fraction)
    evaluated = [r for r in results if r.window_id >= cfg.warmup_windows]
    wids = np.array([r.window_id for r in evaluated], dtype=np.int64)
    alarms = np.array([r.anomalous for r in evaluated], dtype=bool)
    t = truth[wids] if len(wids) else np.zeros(0, dtype=bool)

    delay_w = delay_p = None
    attack_idx = np.flatnonzero(trace.label == DDOS)
    if len(attack_idx):
        first = int(attack_idx[0])
        onset = first // W
        hits = [r.window_id for r in evaluated if r.anomalous and truth[r.window_id] and r.window_id >= onset]
        if hits:
            delay_w = hits[0] - onset
            delay_p = (hits[0] + 1) * W - first
    return MetricsReport.from_confusion("entropy", cfg.seed, t, alarms, detection_delay_windows=delay_w,
                                        detection_delay_packets=delay_p,
                                        wall_clock_s=time.perf_counter() - start, config=cfg.to_dict())


def flow_dataset(trace: Trace, window_us: int) -> tuple[np.ndarray, np.ndarray]:
    """Replay a trace through the flow collector and return per-flow features and labels.

    Each flow instance (a key's life between insertion and eviction, or the
    end of the trace) yields one row from its final cumulative record. Its
    label is the majority label of the trace packets with that key; ties
    count as DDoS.
    """
    reports = collect_trace(trace, window_us)
    final: dict = {}
    done = []
    for rep in reports:
        for rec in rep.flows:
            if rec.evicted:
                done.append(rec)
                final.pop(rec.key, None)
            else:
                final[rec.key] = rec
    done.extend(final.values())

    votes: dict = {}
    cols = [trace.src.tolist(), trace.dst.tolist(), trace.sport.tolist(), trace.dport.tolist(),
            trace.proto.tolist(), trace.label.tolist()]
    for s, d, sp, dp, pr, lab in zip(*cols):
        k = FlowKey(s, d, sp, dp, pr)
        a, n = votes.get(k, (0, 0))
        votes[k] = (a + (lab == DDOS), n + 1)
    X = np.array([compose_features(r).as_array() for r in done]).reshape(len(done), -1)
    y = np.array([DDOS if 2 * votes[r.key][0] >= votes[r.key][1] else BENIGN for r in done], dtype=np.int64)
    return X, y


def run_classifier(cfg: ExperimentConfig) -> MetricsReport:
    start = time.perf_counter()
    train = build_trace(cfg, cfg.train_seed, cfg.train_trace)
    test = build_trace(cfg, cfg.seed, cfg.trace)
    for name, tr in (("training", train), ("test", test)):
        if not tr.labeled:
            raise ConfigError(f"classifier experiment needs a labelled {name} trace")
    X_train, y_train = flow_dataset(train, cfg.flow_window_us)
    X_test, y_test = flow_dataset(test, cfg.flow_window_us)
    ds = knn_train(X_train, y_train)
    if cfg.classifier == "knn":
        pred = knn_classify_many(ds, X_test, cfg.knn_k)
    else:
        programs = [tree_compile(DecisionTree.load(p)) for p in cfg.tree_files]
        pred = forest_classify_many(programs, ds.quantize(X_test, cfg.quant_bits))
    return MetricsReport.from_confusion("classifier", cfg.seed, y_test == DDOS, pred == DDOS,
                                        wall_clock_s=time.perf_counter() - start, config=cfg.to_dict())


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    if cfg.pipeline == "entropy":
        return run_entropy(cfg)
    return run_classifier(cfg)
