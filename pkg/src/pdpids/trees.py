"""Decision trees lowered to match-action table programs.

Trees come in as JSON over quantised integer features::

    {"n_features": 2, "bits": 8,
     "root": {"feature": 0, "threshold": 5,
              "left": {"leaf": 0},        # taken when x[feature] <= threshold
              "right": {"leaf": 1}}}

Each leaf becomes one rule: the per-feature ranges accumulated on its path.
Rules partition the feature space, so exactly one matches any input; they are
still kept in leaf preorder with descending priority, as a table would need.
For LPM-only targets every range is expanded into prefixes and each rule
becomes the cross product of its per-feature prefixes.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .controller import BENIGN, DDOS
from .errors import CompileError, InvariantViolation


@dataclass(frozen=True)
class Leaf:
    label: int


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: int
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


@dataclass(frozen=True)
class DecisionTree:
    root: Node
    n_features: int
    bits: int = 8

    def predict(self, x: Sequence[int]) -> int:
        node = self.root
        while isinstance(node, Split):
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.label

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        out = np.empty(len(X), dtype=np.int64)

        def walk(node: Node, idx: np.ndarray):
            if isinstance(node, Leaf):
                out[idx] = node.label
                return
            go_left = X[idx, node.feature] <= node.threshold
            walk(node.left, idx[go_left])
            walk(node.right, idx[~go_left])

        walk(self.root, np.arange(len(X)))
        return out

    # -- JSON ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        def node(n: dict) -> Node:
            if "leaf" in n:
                return Leaf(int(n["leaf"]))
            try:
                return Split(int(n["feature"]), int(n["threshold"]), node(n["left"]), node(n["right"]))
            except KeyError as exc:
                raise ValueError(f"tree node missing {exc.args[0]!r}: {n!r}") from None

        return cls(node(d["root"]), int(d["n_features"]), int(d.get("bits", 8)))

    def to_dict(self) -> dict:
        def node(n: Node) -> dict:
            if isinstance(n, Leaf):
                return {"leaf": n.label}
            return {"feature": n.feature, "threshold": n.threshold, "left": node(n.left), "right": node(n.right)}

        return {"n_features": self.n_features, "bits": self.bits, "root": node(self.root)}

    @classmethod
    def load(cls, path: str | Path) -> "DecisionTree":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


# -- range -> prefix -------------------------------------------------------------


def expand_range_to_prefixes(lo: int, hi: int, width: int) -> list[tuple[int, int]]:
    """Minimal ``(prefix, length)`` cover of ``[lo, hi]``, sorted by prefix value."""
    if lo > hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if lo < 0 or hi >= 1 << width:
        raise ValueError(f"range [{lo}, {hi}] does not fit {width} bits")
    out = []
    while lo <= hi:
        # largest aligned block starting at lo that stays inside the range
        size = lo & -lo if lo else 1 << width
        while size > hi - lo + 1:
            size >>= 1
        out.append((lo, width - (size.bit_length() - 1)))
        lo += size
    return out


# -- compilation ---------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    ranges: tuple[tuple[int, int], ...]
    label: int
    priority: int

    def matches(self, x: Sequence[int]) -> bool:
        return all(lo <= v <= hi for v, (lo, hi) in zip(x, self.ranges))


@dataclass(frozen=True)
class PrefixRule:
    prefixes: tuple[tuple[int, int], ...]
    label: int
    priority: int


@dataclass(frozen=True)
class CompiledTableProgram:
    rules: tuple[Rule, ...]
    n_features: int
    bits: int

    def classify(self, x: Sequence[int]) -> int:
        top = (1 << self.bits) - 1
        if len(x) != self.n_features or any(not 0 <= v <= top for v in x):
            raise ValueError(f"input {tuple(x)} outside the {self.n_features}-feature {self.bits}-bit space")
        for r in self.rules:
            if r.matches(x):
                return r.label
        raise InvariantViolation(f"no rule matched {tuple(x)}")

    def classify_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        out = np.full(len(X), -1, dtype=np.int64)
        open_ = np.ones(len(X), dtype=bool)
        for r in self.rules:
            hit = open_.copy()
            for j, (lo, hi) in enumerate(r.ranges):
                hit &= (X[:, j] >= lo) & (X[:, j] <= hi)
            out[hit] = r.label
            open_ &= ~hit
        if open_.any():
            raise InvariantViolation(f"{int(open_.sum())} inputs matched no rule, e.g. {X[open_][0].tolist()}")
        return out

    def to_lpm(self) -> "LpmTableProgram":
        rows = [(combo, r.label) for r in self.rules
                for combo in itertools.product(*(expand_range_to_prefixes(lo, hi, self.bits)
                                                 for lo, hi in r.ranges))]
        n = len(rows)
        rules = tuple(PrefixRule(tuple(c), label, n - i) for i, (c, label) in enumerate(rows))
        return LpmTableProgram(rules, self.n_features, self.bits)

    def dump(self) -> str:
        lines = []
        for r in self.rules:
            rng = " ".join(f"f{j}=[{lo},{hi}]" for j, (lo, hi) in enumerate(r.ranges))
            lines.append(f"{rng} priority={r.priority} label={r.label}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LpmTableProgram:
    rules: tuple[PrefixRule, ...]
    n_features: int
    bits: int

    def classify_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        w = self.bits
        out = np.full(len(X), -1, dtype=np.int64)
        open_ = np.ones(len(X), dtype=bool)
        for r in self.rules:
            hit = open_.copy()
            for j, (p, n) in enumerate(r.prefixes):
                hit &= (X[:, j] >> (w - n)) == (p >> (w - n))
            out[hit] = r.label
            open_ &= ~hit
        if open_.any():
            raise InvariantViolation(f"{int(open_.sum())} inputs matched no prefix rule")
        return out

    def classify(self, x: Sequence[int]) -> int:
        return int(self.classify_many(np.asarray([x]))[0])

    def dump(self) -> str:
        w = self.bits
        lines = []
        for r in self.rules:
            pf = " ".join(f"f{j}={p:0{w}b}/{n}" for j, (p, n) in enumerate(r.prefixes))
            lines.append(f"{pf} priority={r.priority} label={r.label}")
        return "\n".join(lines) + "\n"


def tree_compile(t: DecisionTree) -> CompiledTableProgram:
    """One range rule per leaf; raises :class:`CompileError` on an unreachable path."""
    top = (1 << t.bits) - 1
    leaves: list[tuple[tuple[tuple[int, int], ...], int]] = []

    def walk(node: Node, ranges: list[tuple[int, int]], path: str):
        if isinstance(node, Leaf):
            leaves.append((tuple(ranges), node.label))
            return
        f = node.feature
        if not 0 <= f < t.n_features:
            raise CompileError(f"{path}: feature {f} outside [0, {t.n_features})")
        lo, hi = ranges[f]
        left = (lo, min(hi, node.threshold))
        right = (max(lo, node.threshold + 1), hi)
        for side, (a, b), child in (("L", left, node.left), ("R", right, node.right)):
            if a > b:
                raise CompileError(f"{path}{side}: feature {f} range [{a}, {b}] is empty")
            sub = list(ranges)
            sub[f] = (a, b)
            walk(child, sub, path + side)

    walk(t.root, [(0, top)] * t.n_features, "")
    n = len(leaves)
    rules = tuple(Rule(r, label, n - i) for i, (r, label) in enumerate(leaves))
    return CompiledTableProgram(rules, t.n_features, t.bits)


def table_classify(p: CompiledTableProgram, x: Sequence[int]) -> int:
    return p.classify(x)


def _vote(labels: np.ndarray) -> np.ndarray:
    ddos = (labels == DDOS).sum(axis=0)
    return np.where(2 * ddos >= labels.shape[0], DDOS, BENIGN)


def forest_classify(programs: Sequence[CompiledTableProgram], x: Sequence[int]) -> int:
    """Majority over compiled trees; a tied vote is DDoS."""
    if not programs:
        raise ValueError("empty forest")
    return int(_vote(np.array([[p.classify(x)] for p in programs]))[0])


def forest_classify_many(programs: Sequence[CompiledTableProgram], X: np.ndarray) -> np.ndarray:
    if not programs:
        raise ValueError("empty forest")
    return _vote(np.stack([p.classify_many(X) for p in programs]))
