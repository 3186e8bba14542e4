"""Software model of in-network DDoS detection on a programmable data plane.

Two pipelines share one set of data-plane primitives (fixed-point arithmetic,
registers, match-action tables, hash lanes under a per-packet op budget):

* an entropy detector: count sketches and a log lookup table estimate source
  and destination entropy per window, and adaptive EWMA thresholds flag floods;
* a flow classifier: the data plane keeps per-flow statistics and ships them
  in compact reports; the control plane turns them into features and
  classifies with KNN or with decision trees compiled into table programs.
"""

from .controller import BENIGN, DDOS, FEATURE_NAMES, DeltaTracker, compose_features, knn_classify, knn_classify_many, knn_train
from .dataplane import FixedPoint, MatchActionTable, OpBudget, RegisterArray, hash_lane
from .detector import DetectorConfig, EntropyDetector, WindowConfig
from .flows import FlowKey, FlowTable, ReportPacket, collect_trace, parse_report, serialize_report
from .harness import ExperimentConfig, MetricsReport, build_trace, emit_metrics, load_metrics, run_experiment
from .sketch import CountSketch, EntropyPipeline, LogTable
from .traffic import SyntheticConfig, Trace, generate_benign, inject_attack, load_trace, window_labels
from .trees import DecisionTree, Leaf, Split, expand_range_to_prefixes, forest_classify, tree_compile

__version__ = "0.1.0"
