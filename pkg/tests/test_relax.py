"""Tests for McCormick envelopes, segmentation and trigonometric bands."""
from __future__ import annotations

import math

import numpy as np
import pytest

from hybrid_mpc.relax import (
    DegenerateInterval,
    Interval,
    SegmentationSpec,
    SegmentClass,
    approx_error,
    mccormick,
    mccormick_bounds,
    piecewise_trig,
    segmented_envelope,
    trig_band,
    trilinear_envelope,
)

UNIT = SegmentClass(Interval(-1.0, 1.0), 1)


def _point(miqp, **values):
    x = np.zeros(miqp.n)
    for name, v in values.items():
        x[miqp.col(name)] = v
    return miqp.complete_primal(x)


# ── intervals ─────────────────────────────────────────

def test_degenerate_interval():
    with pytest.raises(DegenerateInterval):
        Interval(1.0, 1.0)
    with pytest.raises(DegenerateInterval):
        Interval(0.0, math.inf)


def test_interval_split_and_product():
    parts = Interval(-1.0, 1.0).split(4)
    assert [p.astuple() for p in parts] == [(-1.0, -0.5), (-0.5, 0.0), (0.0, 0.5), (0.5, 1.0)]
    assert (Interval(-1.0, 2.0) * Interval(3.0, 4.0)).astuple() == (-4.0, 8.0)


def test_segmentation_presets():
    ref = SegmentationSpec.reference()
    assert ref.angle.regions == 4
    assert ref.force.regions == 16
    assert SegmentationSpec.desk().omega.regions == 1
    assert ref.doubled().toe.regions == 8
    assert SegmentationSpec.from_dict(ref.to_dict()) == ref


# ── McCormick ─────────────────────────────────────────

def test_mccormick_four_rows():
    rows = mccormick(Interval(0.0, 2.0), Interval(0.0, 3.0))
    assert rows.n_rows == 4


def test_mccormick_corner_tight():
    lo, hi = mccormick_bounds(2.0, 3.0, (0.0, 2.0), (0.0, 3.0))
    assert lo == pytest.approx(6.0)
    assert hi == pytest.approx(6.0)


def test_mccormick_midpoint_band():
    lo, hi = mccormick_bounds(0.0, 0.0, (-1.0, 1.0), (-1.0, 1.0))
    assert (lo, hi) == pytest.approx((-1.0, 1.0))


def test_mccormick_sound(rng):
    rows = mccormick(Interval(-1.0, 2.0), Interval(-3.0, 0.5))
    xy = rng.uniform((-1.0, -3.0), (2.0, 0.5), size=(100_000, 2))
    pts = np.column_stack([xy, xy[:, 0] * xy[:, 1]])
    ax = np.asarray(rows.A @ pts.T).T
    assert np.all(ax <= rows.u + 1e-9)


# ── segmented envelopes ───────────────────────────────

def test_single_region_is_plain_mccormick():
    env = segmented_envelope(UNIT, UNIT)
    assert env.binary_idx.size == 0
    assert env.m == 4
    np.testing.assert_allclose(env.constraints.u, mccormick(Interval(-1, 1), Interval(-1, 1)).u)


def test_segmented_envelope_selector_count():
    four = SegmentClass(Interval(-1.0, 1.0), 4)
    env = segmented_envelope(four, four)
    assert env.binary_idx.size == 16
    assert len(env.exactly_one) == 1


def test_segmented_envelope_sound(rng):
    four = SegmentClass(Interval(-1.0, 1.0), 4)
    env = segmented_envelope(four, four)
    for x, y in rng.uniform(-1.0, 1.0, size=(2000, 2)):
        assert env.max_violation(_point(env, x=x, y=y)) <= 1e-9


def test_segmented_gap_bound(rng):
    """Within one 0.5 x 0.5 cell the envelope admits at most (0.5*0.5)/4 above or below xy."""
    regions = Interval(-1.0, 1.0).split(4)
    worst = 0.0
    for x, y in rng.uniform(-1.0, 1.0, size=(20_000, 2)):
        xr = next(r for r in regions if r.contains(x)).astuple()
        yr = next(r for r in regions if r.contains(y)).astuple()
        lo, hi = mccormick_bounds(x, y, xr, yr)
        worst = max(worst, x * y - lo, hi - x * y)
    assert worst <= 0.0625 + 1e-12


@pytest.mark.parametrize("encoding", ["binary", "onehot"])
def test_factor_encodings_sound(encoding, rng):
    four = SegmentClass(Interval(-1.0, 1.0), 4)
    env = segmented_envelope(four, four, encoding=encoding)
    expected = 4 if encoding == "binary" else 8
    assert env.binary_idx.size == expected
    for x, y in rng.uniform(-1.0, 1.0, size=(500, 2)):
        assert env.max_violation(_point(env, x=x, y=y)) <= 1e-9


def test_trilinear_corner_tight():
    pos = SegmentClass(Interval(0.5, 2.0), 1)
    env = trilinear_envelope(pos, pos, pos)
    x = _point(env, x=2.0, y=2.0, w=2.0)
    assert x[env.col("a")] == pytest.approx(8.0)
    assert env.max_violation(x) <= 1e-9
    x[env.col("a")] = 7.9
    assert env.max_violation(x) > 1e-6


def test_trilinear_sound(rng):
    cls = SegmentClass(Interval(-1.0, 1.0), 2)
    env = trilinear_envelope(cls, cls, cls)
    for x, y, w in rng.uniform(-1.0, 1.0, size=(1000, 3)):
        assert env.max_violation(_point(env, x=x, y=y, w=w)) <= 1e-9


# ── trigonometric bands ───────────────────────────────

def test_trig_band_contains_origin():
    for lo, hi in [(-math.pi / 4, 0.0), (0.0, math.pi / 4)]:
        s = trig_band("sin", lo, hi)
        c = trig_band("cos", lo, hi)
        assert s.lower - 1e-12 <= 0.0 <= s.upper + 1e-12
        assert c.lower - 1e-12 <= 1.0 <= c.upper + 1e-12


def test_trig_band_width():
    regions = Interval(-math.pi / 2, math.pi / 2).split(4)
    widest = max(trig_band(fn, r.lo, r.hi).width for fn in ("sin", "cos") for r in regions)
    assert widest <= 1.0 - math.cos(math.pi / 8) + 1e-12


def test_piecewise_trig_sound():
    env = piecewise_trig(SegmentClass(Interval(-math.pi / 2, math.pi / 2), 4))
    for theta in np.linspace(-math.pi / 2, math.pi / 2, 2001):
        assert env.max_violation(_point(env, theta=theta)) <= 1e-9


def test_piecewise_trig_rejects_wide_range():
    with pytest.raises(ValueError):
        piecewise_trig(SegmentClass(Interval(-2.0, 2.0), 4))


# ── approx_error ──────────────────────────────────────

def test_approx_error_cases(rng):
    assert approx_error(0.9, 1.0) == pytest.approx(0.1)
    assert approx_error(0.3, 0.3) == 0.0
    assert approx_error(0.0, 0.0) == 0.0
    for a, b in rng.normal(size=(100, 2)):
        assert approx_error(a, b) == approx_error(b, a)
