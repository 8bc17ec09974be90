"""Tests for the MIQP container, model builder and integer fixing."""
from __future__ import annotations

import numpy as np
import pytest

from hybrid_mpc.miqp import (
    Affine,
    DimensionMismatch,
    InconsistentAssignment,
    IntegerAssignment,
    LinearConstraintSet,
    MixedIntegerQP,
    ModelBuilder,
    SelectorSpec,
    fix_integers,
)


def _toy() -> MixedIntegerQP:
    """min (x - 0.7)^2 with x <= b, x in [0, 1], b binary."""
    mb = ModelBuilder()
    x = mb.var("x", 0.0, 1.0)
    b = mb.binary_var("b")
    mb.add_square(Affine(-0.7, {x: 1.0}), 1.0)
    mb.row(Affine(0.0, {x: 1.0, b: -1.0}), -np.inf, 0.0, "link")
    return mb.build()


# ── Affine ────────────────────────────────────────────

def test_affine_arithmetic():
    e = Affine.column(0, 2.0) + Affine.column(1) - 3.0
    assert e.evaluate(np.array([1.0, 4.0])) == pytest.approx(3.0)
    cancelled = e - Affine.column(0, 2.0)
    assert 0 not in cancelled.terms


# ── SelectorSpec ──────────────────────────────────────

@pytest.mark.parametrize("encoding", ["binary", "onehot"])
def test_selector_encode_decode(encoding):
    n = SelectorSpec.bit_count(5, encoding)
    sel = SelectorSpec("s", tuple(f"s{j}" for j in range(n)), 5, encoding)
    for region in range(5):
        assert sel.decode(sel.encode(region)) == region


def test_selector_rejects_unused_code():
    sel = SelectorSpec("s", ("s0", "s1"), 3)
    assert sel.decode({"s0": 1, "s1": 1}) is None


def test_selector_deactivation_zero_only_when_selected():
    sel = SelectorSpec("s", ("s0", "s1"), 4)
    index = {"s0": 0, "s1": 1}
    for region in range(4):
        d = sel.deactivation(region, index)
        for other in range(4):
            bits = sel.encode(other)
            value = d.evaluate(np.array([bits["s0"], bits["s1"]], dtype=float))
            assert (value == 0.0) == (other == region)
            assert value >= 0.0


# ── containers ────────────────────────────────────────

def test_constraint_set_shape_check():
    with pytest.raises(DimensionMismatch):
        LinearConstraintSet(np.eye(2), np.zeros(3), np.zeros(3))


def test_summary_counts():
    toy = _toy()
    assert toy.summary()["binaries"] == 1
    assert toy.summary()["rows_by_tag"] == {"link": 1}


def test_json_roundtrip(tmp_path):
    toy = _toy()
    path = tmp_path / "toy.json"
    toy.save(path)
    loaded = MixedIntegerQP.load(path)
    assert loaded.names == toy.names
    np.testing.assert_allclose(loaded.P.toarray(), toy.P.toarray())
    np.testing.assert_array_equal(loaded.constraints.l, toy.constraints.l)
    assert loaded.c0 == pytest.approx(toy.c0)


# ── assignments ───────────────────────────────────────

def test_assignment_rejects_nonbinary():
    with pytest.raises(InconsistentAssignment):
        IntegerAssignment({"b": 2})


def test_assignment_missing_and_unknown():
    toy = _toy()
    assert IntegerAssignment({}).problems(toy)
    assert IntegerAssignment({}).problems(toy, partial=True) == []
    with pytest.raises(InconsistentAssignment, match="unknown"):
        IntegerAssignment({"nope": 1}).validate(toy, partial=True)


def test_fix_integers_substitutes():
    toy = _toy()
    on = fix_integers(toy, IntegerAssignment({"b": 1}))
    assert on.binary_idx.size == 0
    assert on.m == 0
    off = fix_integers(toy, IntegerAssignment({"b": 0}))
    assert off.m == 1
    assert off.constraints.u[0] == pytest.approx(0.0)
    assert off.fixed == {"b": 0}


def test_fixed_objective_matches():
    toy = _toy()
    fixed = fix_integers(toy, IntegerAssignment({"b": 1}))
    x_full = np.array([0.7, 1.0])
    assert fixed.objective(np.array([0.7])) == pytest.approx(toy.objective(x_full))
    np.testing.assert_allclose(fixed.expand(np.array([0.7]), toy.n), [0.7, 0.0])
