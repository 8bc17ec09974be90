"""Tests for branch-and-bound, enumeration and gait seeds."""
from __future__ import annotations

import json
import math

import numpy as np
import pytest

from hybrid_mpc.bnb import (
    BnbOptions,
    BranchRule,
    GaitStyle,
    InvalidWarmStart,
    MiqpStatus,
    TooManyBinaries,
    choose_branch,
    enumerate_miqp,
    gait_seed,
    gap_ratio,
    propagate,
    solve_fixed,
    solve_miqp,
)
from hybrid_mpc.builder import build_miqp
from hybrid_mpc.miqp import Affine, IntegerAssignment, ModelBuilder
from hybrid_mpc.relax import SegmentationSpec
from hybrid_mpc.types import standing_instance

INF = math.inf


def _toy(targets=(1.3, -0.4), switch=(-0.5, 0.5), costs=(0.5, 0.3), max_on=1):
    """Two switched boxes: b1 lifts the cap on x1, b2 lowers the floor on x2."""
    mb = ModelBuilder()
    x1, x2 = mb.var("x1", -2.0, 2.0), mb.var("x2", -2.0, 2.0)
    b1, b2 = mb.binary_var("b1"), mb.binary_var("b2")
    mb.add_square(Affine(-targets[0], {x1: 1.0}), 1.0)
    mb.add_square(Affine(-targets[1], {x2: 1.0}), 1.0)
    mb.add_linear_cost(b1, costs[0])
    mb.add_linear_cost(b2, costs[1])
    mb.row(Affine(0.0, {x1: 1.0, b1: -2.0}), -INF, switch[0], "cap")
    mb.row(Affine(0.0, {x2: 1.0, b2: 2.0}), switch[1], INF, "floor")
    mb.row(Affine(0.0, {b1: 1.0, b2: 1.0}), -INF, float(max_on), "budget")
    return mb.build()


def _random_toy(rng):
    mb = ModelBuilder()
    xs = [mb.var(f"x{i}", -2.0, 2.0) for i in range(3)]
    bs = [mb.binary_var(f"b{i}") for i in range(3)]
    for x, b in zip(xs, bs):
        mb.add_square(Affine(-float(rng.uniform(-1.5, 1.5)), {x: 1.0}), float(rng.uniform(0.5, 2)))
        mb.add_linear_cost(b, float(rng.uniform(0.0, 1.0)))
        mb.row(Affine(0.0, {x: 1.0, b: -2.0}), -INF, float(rng.uniform(-1.0, 0.0)), "cap")
    mb.row(Affine(0.0, {b: 1.0 for b in bs}), -INF, 2.0, "budget")
    return mb.build()


# ── gap ───────────────────────────────────────────────

def test_gap_ratio():
    assert gap_ratio(100.0, 85.0) == pytest.approx(0.15)
    assert gap_ratio(None, 0.0) == INF
    assert gap_ratio(0.0, 0.0) == 0.0


def test_options_validation():
    with pytest.raises(ValueError, match="gap_target"):
        BnbOptions(gap_target=1.0)
    with pytest.raises(ValueError, match="time_limit"):
        BnbOptions(time_limit=0.0)


# ── toy problems ──────────────────────────────────────

def test_toy_matches_enumeration():
    toy = _toy()
    exact = enumerate_miqp(toy)
    found = solve_miqp(toy)
    assert exact.status is MiqpStatus.OPTIMAL
    assert found.status is MiqpStatus.OPTIMAL
    assert exact.assignment.values == {"b1": 1, "b2": 0}
    assert found.assignment == exact.assignment
    assert found.z_p == pytest.approx(exact.z_p, abs=1e-6)
    assert exact.z_p == pytest.approx(0.5 + 0.81, abs=1e-6)
    assert found.gap == 0.0


def test_random_toys_match_enumeration(rng):
    for _ in range(50):
        toy = _random_toy(rng)
        exact = enumerate_miqp(toy)
        found = solve_miqp(toy, BnbOptions(branch_rule=BranchRule.MOST_FRACTIONAL))
        assert found.status is MiqpStatus.OPTIMAL
        assert found.z_p == pytest.approx(exact.z_p, abs=1e-5)


def test_gap_target_keeps_dual_bound_below_optimum(rng):
    """Nodes dropped on the gap target still count toward z_d."""
    statuses = set()
    for _ in range(120):
        toy = _random_toy(rng)
        exact = enumerate_miqp(toy)
        found = solve_miqp(toy, BnbOptions(gap_target=0.6))
        statuses.add(found.status)
        assert found.z_d <= exact.z_p + 1e-3
        assert found.z_p >= exact.z_p - 1e-3
        assert found.gap <= 0.6 + 1e-9
        for entry in found.log:
            if entry["z_d"] is not None:
                assert entry["z_d"] <= exact.z_p + 1e-3
        if found.status is MiqpStatus.OPTIMAL:
            assert found.z_p == pytest.approx(exact.z_p, abs=1e-4)
        else:
            assert found.status is MiqpStatus.GAP_REACHED
    assert MiqpStatus.GAP_REACHED in statuses


def test_gap_pruned_tree_reports_gap_reached():
    toy = _toy()
    exact = enumerate_miqp(toy)
    found = solve_miqp(toy, BnbOptions(gap_target=0.9, warm=IntegerAssignment({"b1": 0, "b2": 0})))
    # the root relaxation lies within 90% of the warm cost 3.24 + 0.81, so it is dropped
    assert found.z_p == pytest.approx(4.05, abs=1e-3)
    assert found.status is MiqpStatus.GAP_REACHED
    assert found.z_d <= exact.z_p + 1e-3
    assert 0.0 < found.gap <= 0.9
    assert found.log[-1]["event"] == "pruned"


def test_warm_start_with_optimum():
    toy = _toy()
    warm = IntegerAssignment({"b1": 1, "b2": 0})
    result = solve_miqp(toy, BnbOptions(warm=warm))
    assert result.first_incumbent_node == 0
    assert result.log[0]["event"] == "warm"
    assert result.assignment == warm
    assert result.status is MiqpStatus.OPTIMAL


def test_partial_warm_start():
    result = solve_miqp(_toy(), BnbOptions(warm=IntegerAssignment({"b1": 1})))
    assert result.status is MiqpStatus.OPTIMAL
    assert result.assignment.values == {"b1": 1, "b2": 0}


def test_invalid_warm_start():
    with pytest.raises(InvalidWarmStart, match="unknown"):
        solve_miqp(_toy(), BnbOptions(warm=IntegerAssignment({"b9": 1})))


def test_infeasible_toy():
    mb = ModelBuilder()
    x = mb.var("x", -1.0, 1.0)
    b = mb.binary_var("b")
    mb.add_square(Affine.column(x), 1.0)
    mb.row(Affine(0.0, {b: 1.0}), 2.0, INF, "impossible")
    miqp = mb.build()
    assert enumerate_miqp(miqp).status is MiqpStatus.INFEASIBLE
    assert solve_miqp(miqp).status is MiqpStatus.INFEASIBLE


def test_single_feasible_assignment():
    mb = ModelBuilder()
    x = mb.var("x", -1.0, 1.0)
    b1, b2 = mb.binary_var("b1"), mb.binary_var("b2")
    mb.add_square(Affine(-0.2, {x: 1.0}), 1.0)
    mb.row(Affine(0.0, {b1: 1.0, b2: 1.0}), 2.0, INF, "both")
    result = enumerate_miqp(mb.build())
    assert result.status is MiqpStatus.OPTIMAL
    assert result.assignment.values == {"b1": 1, "b2": 1}
    assert result.z_p == pytest.approx(0.0, abs=1e-9)


def test_enumeration_limit():
    mb = ModelBuilder()
    for j in range(17):
        mb.binary_var(f"b{j}")
    with pytest.raises(TooManyBinaries):
        enumerate_miqp(mb.build())


def test_search_log_jsonl(tmp_path):
    path = tmp_path / "search.jsonl"
    result = solve_miqp(_toy(), BnbOptions(log_path=path))
    lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert len(lines) == len(result.log) == result.nodes
    assert [e["node"] for e in lines] == list(range(result.nodes))
    assert {"node", "depth", "bound", "incumbent", "z_d", "event"} <= set(lines[0])


# ── branching helpers ─────────────────────────────────

def test_choose_branch_rules():
    names = ["sel[theta[1].phi].b0", "c[1].FL"]
    values = np.array([0.5, 0.3])
    assert choose_branch(names, values, BranchRule.MOST_FRACTIONAL) == 0
    assert choose_branch(names, values, BranchRule.CONTACT_FIRST) == 1
    assert choose_branch(names, np.array([0.0, 1.0]), BranchRule.CONTACT_FIRST) is None


def test_branch_rule_alias():
    assert BranchRule("PaperOrder") is BranchRule.CONTACT_FIRST
    assert BranchRule("ContactFirst") is BranchRule.CONTACT_FIRST
    with pytest.raises(ValueError):
        BranchRule("Random")


def test_propagate_contact_groups(quad):
    miqp = build_miqp(standing_instance(quad, horizon_n=2), SegmentationSpec.desk())
    closed = propagate(miqp, {"c[1].FL": 0})
    assert closed["z[1].FL.s0"] == 0
    closed = propagate(miqp, {"z[1].FR.s0": 1})
    assert closed["c[1].FR"] == 1
    assert propagate(miqp, {"c[1].RL": 0, "z[1].RL.s0": 1}) is None


# ── gait seeds ────────────────────────────────────────

def test_trot_seed():
    seed = gait_seed(2, GaitStyle.TROT)
    legs = ("FL", "FR", "RL", "RR")
    assert tuple(seed.values[f"c[0].{leg}"] for leg in legs) == (1, 0, 0, 1)
    assert tuple(seed.values[f"c[1].{leg}"] for leg in legs) == (0, 1, 1, 0)
    assert len(seed) == 8


def test_all_stance_seed():
    seed = gait_seed(3, GaitStyle.ALL_STANCE)
    assert set(seed.values.values()) == {1}


def test_planar_trot_alternates():
    seed = gait_seed(2, "Trot", n_legs=2)
    assert (seed.values["c[0].F"], seed.values["c[0].R"]) == (1, 0)
    assert (seed.values["c[1].F"], seed.values["c[1].R"]) == (0, 1)


def test_gait_seed_short_horizon():
    with pytest.raises(ValueError):
        gait_seed(1)


# ── locomotion problems ───────────────────────────────

@pytest.mark.slow
def test_planar_stance_problem_matches_enumeration(small_planar_instance):
    miqp = build_miqp(small_planar_instance, SegmentationSpec.desk())
    exact = enumerate_miqp(miqp)
    found = solve_miqp(miqp)
    assert exact.status is MiqpStatus.OPTIMAL
    assert found.z_p == pytest.approx(exact.z_p, rel=1e-3, abs=1e-6)


@pytest.mark.slow
def test_equilibrium_fixed_qp_costs_nothing(quad):
    miqp = build_miqp(standing_instance(quad, horizon_n=3), SegmentationSpec.desk())
    stance = {name: 1 for name in miqp.binary_names}
    fixed = solve_fixed(miqp, IntegerAssignment(stance))
    assert fixed.feasible
    assert fixed.cost == pytest.approx(0.0, abs=1e-3)


@pytest.mark.slow
def test_planar_gap_target(planar):
    """A desk-scale planar instance stops at the requested relative gap."""
    miqp = build_miqp(standing_instance(planar, horizon_n=5, vx_ref=0.3), SegmentationSpec.desk())
    seed = gait_seed(5, GaitStyle.TROT, n_legs=2)
    result = solve_miqp(miqp, BnbOptions(gap_target=0.15, time_limit=60.0, warm=seed))
    assert result.status in (MiqpStatus.GAP_REACHED, MiqpStatus.OPTIMAL)
    assert result.gap <= 0.15
    for entry in result.log:
        if entry["incumbent"] is not None and entry["z_d"] is not None:
            assert entry["z_d"] <= entry["incumbent"] + 1e-12


@pytest.mark.slow
def test_trot_seed_finds_incumbent_sooner(planar):
    miqp = build_miqp(standing_instance(planar, horizon_n=5, vx_ref=0.3), SegmentationSpec.desk())
    cold = solve_miqp(miqp, BnbOptions(node_limit=500))
    warm = solve_miqp(miqp, BnbOptions(node_limit=500, warm=gait_seed(5, GaitStyle.TROT, n_legs=2)))
    assert warm.first_incumbent_node is not None
    assert cold.first_incumbent_node is None or warm.first_incumbent_node <= cold.first_incumbent_node
    if cold.status is MiqpStatus.OPTIMAL and warm.status is MiqpStatus.OPTIMAL:
        assert warm.z_p == pytest.approx(cold.z_p, rel=1e-3, abs=1e-6)
