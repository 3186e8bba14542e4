from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_lpm
from pdpids.dataplane import (
    RAW_MAX,
    RAW_MIN,
    Exact,
    FixedPoint,
    Lpm,
    MatchActionTable,
    MatchKind,
    OpBudget,
    Range,
    RegisterArray,
    TableEntry,
    budget_guard,
    derive_seeds,
    fxp_arith,
    hash_lane,
    hash_lane_u32,
    ip_bytes,
    register_access,
    table_lookup,
)
from pdpids.errors import ArithmeticOverflowError, BudgetViolation

raws = st.integers(RAW_MIN, RAW_MAX)


# -- fixed point ---------------------------------------------------------------


def test_add_example():
    assert fxp_arith(FixedPoint(24), FixedPoint(8), "add").raw == 32
    assert FixedPoint(32).to_float() == 2.0


def test_sub_self_is_zero():
    x = FixedPoint(12345)
    assert fxp_arith(x, x, "sub").raw == 0


def test_add_overflow():
    with pytest.raises(ArithmeticOverflowError):
        fxp_arith(FixedPoint(RAW_MAX), FixedPoint(1), "add")


def test_sub_overflow():
    with pytest.raises(ArithmeticOverflowError):
        FixedPoint(RAW_MIN) - FixedPoint(1)


def test_cmp_and_shift():
    a, b = FixedPoint(5), FixedPoint(9)
    assert fxp_arith(a, b, "cmp") == -1
    assert fxp_arith(b, a, "cmp") == 1
    assert fxp_arith(a, a, "cmp") == 0
    assert fxp_arith(FixedPoint(-17), 2, "shift").raw == -5  # arithmetic shift floors
    assert FixedPoint(3).shift(-2).raw == 12
    with pytest.raises(ArithmeticOverflowError):
        FixedPoint(1 << 30).shift(-1)


def test_fxp_arith_charges_one_op():
    ops = OpBudget()
    fxp_arith(FixedPoint(1), FixedPoint(2), "add", ops)
    assert ops.used == 1
    with pytest.raises(ValueError):
        fxp_arith(FixedPoint(1), FixedPoint(2), "mul")


def test_fixedpoint_rejects_non_integers():
    with pytest.raises(TypeError):
        FixedPoint(1.5)
    with pytest.raises(ArithmeticOverflowError):
        FixedPoint(RAW_MAX + 1)
    assert FixedPoint.from_int(3).raw == 48
    assert FixedPoint.from_real(1.5).raw == 24


@given(raws, raws)
def test_add_commutes_with_raw_arithmetic(a, b):
    s = a + b
    if RAW_MIN <= s <= RAW_MAX:
        assert (FixedPoint(a) + FixedPoint(b)).raw == s
    else:
        with pytest.raises(ArithmeticOverflowError):
            FixedPoint(a) + FixedPoint(b)


@given(raws, raws)
def test_sub_and_compare_follow_raw(a, b):
    d = a - b
    if RAW_MIN <= d <= RAW_MAX:
        assert (FixedPoint(a) - FixedPoint(b)).raw == d
    assert FixedPoint(a).compare(FixedPoint(b)) == (a > b) - (a < b)
    assert (FixedPoint(a) < FixedPoint(b)) == (a < b)


# -- tables --------------------------------------------------------------------


def test_empty_table_misses():
    t = MatchActionTable(MatchKind.LPM, 8)
    assert t.lookup(0x5A) is None
    assert MatchActionTable(MatchKind.EXACT, 8).lookup(3) is None


def test_lpm_longest_prefix_example():
    A, B = 1, 2
    t = MatchActionTable(MatchKind.LPM, 4, [TableEntry(Lpm(0b1000, 2), A), TableEntry(Lpm(0b1010, 3), B)])
    assert table_lookup(t, 0b1011) == B
    # oracle: enumerate the masked comparison for every key
    expected = brute_force_lpm([(0b1000, 2, A), (0b1010, 3, B)], 4, np.arange(16))
    assert [t.lookup(k) for k in range(16)] == [None if e < 0 else e for e in expected]


def test_zero_length_prefix_matches_everything():
    t = MatchActionTable(MatchKind.LPM, 16, [TableEntry(Lpm(0, 0), 7)])
    assert all(t.lookup(k) == 7 for k in (0, 1, 0x8000, 0xFFFF))


def test_exact_and_default():
    t = MatchActionTable(MatchKind.EXACT, 8, [TableEntry(Exact(4), 40)], default=-1)
    assert t.lookup(4) == 40
    assert t.lookup(5) == -1
    with pytest.raises(ValueError):
        MatchActionTable(MatchKind.EXACT, 8, [TableEntry(Exact(4), 1), TableEntry(Exact(4), 2)])


def test_range_highest_priority_wins():
    t = MatchActionTable(MatchKind.RANGE, 8, [TableEntry(Range(0, 100), 1, priority=1),
                                              TableEntry(Range(50, 60), 2, priority=5)])
    assert t.lookup(55) == 2
    assert t.lookup(10) == 1
    assert t.lookup(200) is None
    with pytest.raises(ValueError):
        Range(5, 4)


def test_table_validation():
    with pytest.raises(ValueError):
        MatchActionTable(MatchKind.LPM, 4, [TableEntry(Lpm(0b1001, 2), 1)])  # bits below the length
    with pytest.raises(ValueError):
        MatchActionTable(MatchKind.LPM, 4, [TableEntry(Exact(1), 1)])
    with pytest.raises(ValueError):
        MatchActionTable(MatchKind.LPM, 4, [TableEntry(Lpm(0b1000, 1), 1), TableEntry(Lpm(0b1000, 1), 2)])
    t = MatchActionTable(MatchKind.LPM, 4)
    with pytest.raises(ValueError):
        t.lookup(16)


@st.composite
def lpm_tables(draw, width=16):
    n = draw(st.integers(0, 64))
    seen = set()
    entries = []
    for i in range(n):
        length = draw(st.integers(0, width))
        value = draw(st.integers(0, (1 << width) - 1))
        prefix = value & (((1 << length) - 1) << (width - length))
        if (prefix, length) in seen:
            continue
        seen.add((prefix, length))
        entries.append((prefix, length, i))
    return entries


@settings(max_examples=15, deadline=None)
@given(lpm_tables())
def test_lpm_matches_brute_force_on_all_keys(entries):
    t = MatchActionTable(MatchKind.LPM, 16, [TableEntry(Lpm(p, n), a) for p, n, a in entries])
    keys = np.arange(1 << 16, dtype=np.int64)
    expected = brute_force_lpm(entries, 16, keys)
    got = np.array([-1 if (v := t.lookup(int(k))) is None else v for k in keys])
    assert np.array_equal(got, expected)


# -- registers -----------------------------------------------------------------


def test_register_examples():
    r = RegisterArray(8, 32)
    assert register_access(r, 3, "read") == 0
    register_access(r, 3, "add", 3)
    assert register_access(r, 3, "add", 4) == 7
    assert register_access(r, 2, "write", 9) == 9
    with pytest.raises(IndexError):
        register_access(r, 8, "read")
    with pytest.raises(IndexError):
        r.add(-1, 1)


def test_register_overflow_is_an_error():
    r = RegisterArray(1, 8, signed=False)
    r.write(0, 255)
    with pytest.raises(ArithmeticOverflowError):
        r.add(0, 1)
    s = RegisterArray(1, 32, signed=True)
    with pytest.raises(ArithmeticOverflowError):
        s.write(0, 1 << 31)


def test_register_reset_and_width():
    r = RegisterArray(4, 64, signed=False)
    r.add(1, 5)
    r.reset()
    assert r.slots == [0, 0, 0, 0]
    with pytest.raises(ValueError):
        RegisterArray(4, 12)


# -- hashing -------------------------------------------------------------------


def test_hash_deterministic():
    assert hash_lane(b"\x01\x02\x03\x04", 7, 1000) == hash_lane(b"\x01\x02\x03\x04", 7, 1000)
    assert hash_lane(b"abc", 1, 1 << 32) != hash_lane(b"abc", 2, 1 << 32)


@given(st.binary(max_size=16), st.integers(0, (1 << 64) - 1), st.integers(1, 1 << 40))
def test_hash_in_range(data, seed, modulus):
    assert 0 <= hash_lane(data, seed, modulus) < modulus


def test_hash_modulus_zero():
    with pytest.raises(ValueError):
        hash_lane(b"x", 0, 0)


def test_hash_bucket_load():
    keys = np.random.default_rng(0).integers(0, 1 << 32, 100_000)
    buckets = np.bincount([hash_lane(ip_bytes(int(k)), 11, 2048) for k in keys], minlength=2048)
    assert buckets.max() <= 3 * buckets.mean()


@given(st.lists(st.integers(0, (1 << 32) - 1), min_size=1, max_size=50), st.integers(0, (1 << 64) - 1),
       st.integers(1, 1 << 20))
def test_vectorised_hash_matches_scalar(keys, seed, modulus):
    got = hash_lane_u32(np.array(keys, dtype=np.uint64), seed, modulus)
    assert got.tolist() == [hash_lane(ip_bytes(k), seed, modulus) for k in keys]


def test_derived_seeds_distinct():
    seeds = derive_seeds(0, 16)
    assert len(set(seeds)) == 16


# -- op budget -----------------------------------------------------------------


def test_budget_ok_and_reset():
    b = OpBudget(32)
    b.charge(30)
    assert budget_guard(b) == 30
    assert b.used == 0


def test_budget_violation_carries_count():
    b = OpBudget(32)
    b.charge(33)
    with pytest.raises(BudgetViolation) as info:
        budget_guard(b)
    assert info.value.used == 33
    assert b.used == 0
