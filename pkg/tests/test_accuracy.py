"""Tests for the envelope accuracy report."""
from __future__ import annotations

import math

import pytest

from hybrid_mpc.accuracy import (
    TERM_CLASSES,
    RolloutSampler,
    envelope_midpoint,
    envelope_report,
    term_values,
)
from hybrid_mpc.relax import SegmentationSpec
from hybrid_mpc.types import FootState, SrbState


def _at_rest(params):
    state = SrbState.from_arrays((0.0, 0.0, params.stance_height), (0, 0, 0), (0, 0, 0), (0, 0, 0))
    share = params.mass * params.g[2] / params.n_legs
    feet = FootState.from_arrays([(0.0, 0.0, 0.0)] * params.n_legs,
                                 [(0.0, 0.0, share)] * params.n_legs, [1] * params.n_legs)
    return state, feet


# ── midpoints ─────────────────────────────────────────

def test_midpoint_exact_on_region_edge():
    assert envelope_midpoint(1.0, 0.3, [(-1.0, 1.0)], [(0.0, 1.0)]) == pytest.approx(0.3)


def test_midpoint_centre_of_square():
    # at the centre of [-1, 1]^2 the envelope leaves [-1, 1]
    assert envelope_midpoint(0.0, 0.0, [(-1.0, 1.0)], [(-1.0, 1.0)]) == pytest.approx(0.0)


def test_midpoint_outside_regions():
    assert envelope_midpoint(2.0, 0.0, [(-1.0, 1.0)], [(-1.0, 1.0)]) is None


# ── term values ───────────────────────────────────────

def test_zero_motion_is_exact(quad):
    state, feet = _at_rest(quad)
    values = term_values(state, feet, SegmentationSpec.reference())
    assert set(values) == set(TERM_CLASSES)
    for true, approx in values.values():
        assert true == 0.0
        assert approx == pytest.approx(0.0, abs=1e-12)


def test_out_of_range_angle_skips(quad):
    _, feet = _at_rest(quad)
    tilted = SrbState.from_arrays((0.0, 0.0, 0.06), (0, 0, 0), (2.0, 0.0, 0.0), (0, 0, 0))
    assert term_values(tilted, feet, SegmentationSpec.reference()) is None


# ── report ────────────────────────────────────────────

def test_bilinear_error_is_small():
    report = envelope_report(sampler=RolloutSampler(n_rollouts=10, seed=1))
    assert report.samples > 0
    assert report.mean("bilinear_trig") <= 0.15


@pytest.mark.slow
def test_reference_errors_within_ceilings():
    report = envelope_report(SegmentationSpec.reference())
    assert report.samples >= 20
    assert report.mean("bilinear_trig") <= 0.15
    assert report.mean("trilinear_trig") <= 0.18
    assert report.mean("moment") <= 0.12


def test_lateral_forces_follow_friction_coefficient(quad):
    knots = RolloutSampler(n_rollouts=3, steps=2).rollouts(quad)
    for _, feet in (k for rollout in knots for k in rollout):
        for f_x, f_y, f_z in feet.f:
            assert abs(f_x) <= quad.mu * f_z and abs(f_y) <= quad.mu * f_z
    narrow = RolloutSampler(n_rollouts=3, steps=2, lateral=0.0).rollouts(quad)
    assert all(f[0] == 0.0 and f[1] == 0.0 for r in narrow for _, feet in r for f in feet.f)


def test_doubling_regions_does_not_hurt():
    sampler = RolloutSampler(n_rollouts=10, attitude=0.3, lateral=0.2, seed=2)
    seg = SegmentationSpec.reference()
    coarse = envelope_report(seg, sampler=sampler)
    fine = envelope_report(seg.doubled(), sampler=sampler)
    for cls in ("bilinear_trig", "gyroscopic"):
        assert fine.mean(cls) <= coarse.mean(cls) + 1e-9


def test_report_is_seeded():
    a = envelope_report(sampler=RolloutSampler(n_rollouts=3, seed=5))
    b = envelope_report(sampler=RolloutSampler(n_rollouts=3, seed=5))
    assert a.errors == b.errors


def test_summary_and_csv(tmp_path):
    report = envelope_report(sampler=RolloutSampler(n_rollouts=2, steps=3, attitude=0.3, lateral=0.2))
    summary = report.summary()
    assert summary["samples"] + summary["skipped"] == 6
    assert set(summary["classes"]) == set(TERM_CLASSES)
    report.write_csv(tmp_path / "acc.csv")
    rows = (tmp_path / "acc.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "class,term,samples,mean_error,max_error"
    assert len(rows) == 1 + len(TERM_CLASSES)


def test_empty_class_reports_nan():
    report = envelope_report(sampler=RolloutSampler(n_rollouts=0))
    assert report.samples == 0
    assert math.isnan(report.mean("moment"))
