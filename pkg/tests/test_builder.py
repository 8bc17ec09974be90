"""Tests for the relaxed locomotion MIQP builder."""
from __future__ import annotations

import pytest

from hybrid_mpc.builder import (
    InfeasibleBounds,
    binary_count,
    build_miqp,
    knot_count,
    lift_trajectory,
    read_trajectory,
)
from hybrid_mpc.miqp import IntegerAssignment, fix_integers
from hybrid_mpc.relax import SegmentationSpec, SegmentClass
from hybrid_mpc.types import FootState, SrbState, TerrainRegion, standing_instance, standing_state

DESK = SegmentationSpec.desk()


def _two_region_seg() -> SegmentationSpec:
    ref = SegmentationSpec.reference()
    return SegmentationSpec(**{name: SegmentClass(getattr(ref, name).range, 2)
                               for name in ("angle", "trig_product", "euler_rate", "omega",
                                            "toe", "force")})


# ── structure ─────────────────────────────────────────

def test_desk_binaries_are_contacts_and_regions(quad):
    miqp = build_miqp(standing_instance(quad, horizon_n=3), DESK)
    assert miqp.binary_idx.size == 3 * 4 * 2
    assert binary_count(quad, 3, 1, DESK) == miqp.binary_idx.size
    assert all(name.startswith(("c[", "z[")) for name in miqp.binary_names)


@pytest.mark.parametrize("encoding", ["pair", "binary", "onehot"])
def test_binary_count_formula_two_regions(quad, encoding):
    seg = _two_region_seg()
    miqp = build_miqp(standing_instance(quad, horizon_n=3), seg, encoding=encoding)
    assert miqp.binary_idx.size == binary_count(quad, 3, 1, seg, encoding=encoding)


@pytest.mark.parametrize("encoding", ["pair", "binary"])
def test_binary_count_formula_planar(planar, encoding):
    seg = _two_region_seg()
    miqp = build_miqp(standing_instance(planar, horizon_n=3), seg, encoding=encoding)
    assert miqp.binary_idx.size == binary_count(planar, 3, 1, seg, encoding=encoding)


def test_default_selectors_are_one_binary_per_region_pair(quad):
    seg = _two_region_seg()
    miqp = build_miqp(standing_instance(quad, horizon_n=3), seg)
    groups = {g.name: g for g in miqp.selector_groups}
    assert groups and all(g.encoding == "onehot" for g in groups.values())
    exactly_one = {e.name for e in miqp.exactly_one}
    assert set(groups) <= exactly_one
    pairs = [s for s in miqp.segmented if len(s.cols) == 2]
    assert pairs
    for s in pairs:
        assert groups[s.selector].n_regions == len(s.regions[0]) * len(s.regions[1]) == 4
    # the angles select their own trig bands
    assert "sel[theta[1].phi]" in groups
    assert groups["sel[prod[1].sphi*stheta]"].n_regions == 4


def test_pair_count_at_reference(quad, planar):
    assert binary_count(quad, 5, 1) == 40 + 4 * 1132 + 3 * 2304
    assert binary_count(planar, 5, 1) == 20 + 4 * (4 + 4 * 2 * 16) + 3 * (2 * 2 * 64)


def test_reference_size_near_published_scale(quad):
    """Horizon 5 at full segmentation with compact selectors lands within 20% of 488 binaries."""
    count = binary_count(quad, 5, 1, encoding="binary")
    assert count == 452
    assert 0.8 * 488 <= count <= 1.2 * 488


def test_column_names(quad):
    miqp = build_miqp(standing_instance(quad, horizon_n=3), DESK)
    for name in ("p[0].x", "theta[2].psi", "p_w[1].RL.z", "f[2].FR.x", "c[0].FL", "z[2].RR.s0"):
        assert name in miqp.var_names
    assert knot_count(miqp) == 3


def test_knot_zero_pinned(quad):
    inst = standing_instance(quad, horizon_n=3)
    miqp = build_miqp(inst, DESK)
    for name in ("p[0].z", "v[0].x", "p_w[0].FL.x"):
        j = miqp.col(name)
        assert miqp.lb[j] == miqp.ub[j]
    assert miqp.lb[miqp.col("p[0].z")] == pytest.approx(quad.stance_height)


def test_planar_lateral_pinned(planar):
    miqp = build_miqp(standing_instance(planar, horizon_n=3), DESK)
    for name in ("v[1].y", "theta[2].phi", "f[1].F.y"):
        j = miqp.col(name)
        assert miqp.lb[j] == miqp.ub[j] == 0.0


def test_region_binaries_per_region(quad):
    regions = (TerrainRegion.box(-1.0, 0.2, -1.0, 1.0), TerrainRegion.box(0.3, 2.0, -1.0, 1.0, 0.02))
    miqp = build_miqp(standing_instance(quad, horizon_n=3, regions=regions), DESK)
    assert "z[1].FL.s1" in miqp.var_names
    assert miqp.binary_idx.size == binary_count(quad, 3, 2, DESK)


# ── initial condition checks ──────────────────────────

def test_spinning_start_rejected(quad, standing):
    state, feet = standing
    spinning = SrbState(state.p, state.v, state.theta, (0.0, 20.0, 0.0))
    with pytest.raises(InfeasibleBounds, match="theta_dot"):
        build_miqp(standing_instance(quad, horizon_n=3, x0=spinning, feet0=feet), DESK)


def test_planar_lateral_start_rejected(planar):
    inst = standing_instance(planar, horizon_n=3)
    drifting = SrbState(inst.x0.p, (0.0, 0.1, 0.0), inst.x0.theta, inst.x0.theta_dot)
    with pytest.raises(InfeasibleBounds, match="planar"):
        build_miqp(standing_instance(planar, horizon_n=3, x0=drifting, feet0=inst.feet0), DESK)


# ── equilibrium ───────────────────────────────────────

@pytest.mark.parametrize("seg", [DESK, _two_region_seg()], ids=["desk", "two-region"])
def test_equilibrium_lifts_feasible(quad, standing, seg):
    """A standing robot tracking zero velocity is feasible and costs nothing."""
    state, feet = standing
    miqp = build_miqp(standing_instance(quad, horizon_n=3), seg)
    x = lift_trajectory(miqp, [state] * 3, [feet] * 3)
    assert miqp.max_violation(x) <= 1e-9, miqp.violations_by_tag(x)
    assert miqp.objective(x) == pytest.approx(0.0, abs=1e-9)


def test_smoothness_penalises_body_motion(quad, standing):
    state, feet = standing
    quiet = dict(w_v=(0.0, 0.0, 0.0), w_theta=(0.0, 0.0, 0.0), w_h=0.0, w_force=0.0)
    body = build_miqp(standing_instance(quad, horizon_n=3, w_smooth=1.0, w_toe_smooth=0.0, **quiet),
                      DESK)
    states = [state, standing_state(quad, x=0.01), standing_state(quad, x=0.03)]
    x = lift_trajectory(body, states, [feet] * 3)
    assert body.objective(x) == pytest.approx(0.01 ** 2 + 0.02 ** 2, abs=1e-12)

    moved = FootState.from_arrays(feet.toe_array() + [0.02, 0.0, 0.0], feet.f, feet.c)
    x = lift_trajectory(body, [state] * 3, [feet, feet, moved])
    assert body.objective(x) == pytest.approx(0.0, abs=1e-12)

    toes = build_miqp(standing_instance(quad, horizon_n=3, w_smooth=0.0, w_toe_smooth=1.0, **quiet),
                      DESK)
    x = lift_trajectory(toes, [state] * 3, [feet, feet, moved])
    assert toes.objective(x) == pytest.approx(4 * 0.02 ** 2, abs=1e-12)


def test_lift_then_read(quad, standing):
    state, feet = standing
    miqp = build_miqp(standing_instance(quad, horizon_n=3), DESK)
    states, feet_seq = read_trajectory(miqp, lift_trajectory(miqp, [state] * 3, [feet] * 3), 4)
    assert states[2] == state
    assert feet_seq[1].c == (1, 1, 1, 1)


def test_fixed_equilibrium_keeps_lifted_point(quad, standing):
    state, feet = standing
    miqp = build_miqp(standing_instance(quad, horizon_n=3), DESK)
    x = lift_trajectory(miqp, [state] * 3, [feet] * 3)
    fixed = fix_integers(miqp, IntegerAssignment.from_solution(miqp, x))
    x_cont = x[fixed.source_columns]
    assert fixed.max_violation(x_cont) <= 1e-9
    assert fixed.objective(x_cont) == pytest.approx(0.0, abs=1e-9)


def test_lift_rejects_short_trajectory(quad, standing):
    state, feet = standing
    miqp = build_miqp(standing_instance(quad, horizon_n=3), DESK)
    with pytest.raises(ValueError, match="knots"):
        lift_trajectory(miqp, [state], [feet])


@pytest.mark.slow
def test_reference_build_matches_formula(quad):
    miqp = build_miqp(standing_instance(quad, horizon_n=5))
    assert miqp.binary_idx.size == binary_count(quad, 5, 1)


@pytest.mark.slow
def test_reference_compact_build_near_published_rows(quad):
    """Compact selectors at full segmentation: 452 binaries and rows within 30% of 44478."""
    miqp = build_miqp(standing_instance(quad, horizon_n=5), encoding="binary")
    assert miqp.binary_idx.size == binary_count(quad, 5, 1, encoding="binary") == 452
    assert 0.7 * 44478 <= miqp.m <= 1.3 * 44478
    assert miqp.summary()["constraints"] == miqp.m
