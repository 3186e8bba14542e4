"""Compiling a decision tree into match-action tables.

Every root-to-leaf path becomes one range rule. Range rules are then expanded
into prefixes so they fit a longest-prefix-match (or ternary) table.

Run with:  python3 walkthroughs/tree_to_tables.py
"""

from __future__ import annotations

import itertools

import numpy as np

from pdpids import DecisionTree, Leaf, Split, expand_range_to_prefixes, tree_compile

# A small tree over two 4-bit features: packet rate (f0) and mean payload (f1).
tree = DecisionTree(
    Split(0, 9,
          Leaf(0),
          Split(1, 2, Leaf(1), Leaf(0))),
    n_features=2, bits=4)

program = tree_compile(tree)
print("range rules (highest priority first):")
print(program.dump())

# [0, 5] on 4 bits is not one prefix: it splits into 00** and 010*.
for lo, hi in [(0, 5), (8, 15), (3, 12)]:
    prefixes = expand_range_to_prefixes(lo, hi, 4)
    print(f"[{lo:2d},{hi:2d}] -> " + ", ".join(f"{p:04b}/{n}" for p, n in prefixes))

lpm = program.to_lpm()
print("\nprefix rules:")
print(lpm.dump())

# The compiled forms agree with the tree on every input.
X = np.array(list(itertools.product(range(16), repeat=2)))
assert (program.classify_many(X) == tree.predict_many(X)).all()
assert (lpm.classify_many(X) == tree.predict_many(X)).all()
print("all 256 inputs agree")
