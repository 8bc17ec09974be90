"""Tests for features, the KNN dataset and dataset persistence."""
from __future__ import annotations

import json

import numpy as np
import pytest

from hybrid_mpc.bnb import BnbOptions
from hybrid_mpc.builder import build_miqp
from hybrid_mpc.learn import (
    CorruptLine,
    DataPoint,
    Dataset,
    DatasetConfig,
    EmptyDataset,
    FeatureVector,
    InsufficientHistory,
    export_csv,
    extract_features,
    feature_length,
    feature_names,
    generate_dataset,
    knn_neighbours,
    knn_query,
    load_dataset,
    save_dataset,
    shift_name,
    window_assignment,
)
from hybrid_mpc.miqp import InconsistentAssignment, IntegerAssignment
from hybrid_mpc.relax import SegmentationSpec
from hybrid_mpc.schema_check import SchemaMismatch
from hybrid_mpc.types import SrbState, standing_instance


def _point(vx, ax, bits, n_legs=2, **meta):
    values = (vx, ax) + (0.0,) * (feature_length(n_legs) - 2)
    assignment = IntegerAssignment({f"c[0].{leg}": b for leg, b in zip(("F", "R"), bits)})
    return DataPoint(FeatureVector(values), assignment, 1.0 + vx, meta)


def _small_dataset():
    return Dataset.build([
        _point(0.0, 0.0, (1, 1), trajectory=0),
        _point(1.0, 5.0, (1, 0), trajectory=1),
        _point(-1.0, -5.0, (0, 1), trajectory=2),
    ], info={"seed": 7})


# ── features ──────────────────────────────────────────

def test_feature_layout():
    assert feature_length(4) == 26
    names = feature_names(2)
    assert names[:2] == ["vx", "ax"]
    assert names[2] == "toe_prev.F.x"
    assert len(names) == feature_length(2)


def test_stationary_features(quad, standing):
    state, feet = standing
    f = extract_features([(state, feet), (state, feet)], quad.dt)
    assert f.vx == 0.0 and f.ax == 0.0
    rel = (feet.toe_array() - np.asarray(state.p)).ravel()
    np.testing.assert_allclose(f.toe_hist, np.concatenate([rel, rel]))
    assert f.n_legs == 4


def test_acceleration_finite_difference(quad, standing):
    state, feet = standing
    moving = SrbState(state.p, (0.8, 0.0, 0.0), state.theta, state.theta_dot)
    f = extract_features([(state, feet), (moving, feet)], 0.08)
    assert f.vx == 0.8
    assert f.ax == pytest.approx(10.0)


def test_short_history(standing):
    with pytest.raises(InsufficientHistory):
        extract_features([standing], 0.08)


def test_feature_vector_validation():
    with pytest.raises(ValueError):
        FeatureVector((0.0, 0.0, 1.0))
    with pytest.raises(ValueError, match="finite"):
        FeatureVector((float("nan"),) + (0.0,) * 13)


# ── KNN ───────────────────────────────────────────────

def test_exact_match_ranks_first():
    ds = _small_dataset()
    ranked = knn_query(ds, ds.points[1].features, k=1)
    assert ranked == [ds.points[1].assignment]


def test_k_larger_than_dataset():
    ds = _small_dataset()
    neighbours = knn_neighbours(ds, ds.points[0].features, k=10)
    assert len(neighbours) == 3
    dists = [d for d, _ in neighbours]
    assert dists == sorted(dists)
    assert neighbours[0] == (0.0, 0)


def test_duplicate_assignments_collapse():
    ds = Dataset.build([_point(0.0, 0.0, (1, 1)), _point(0.1, 0.0, (1, 1)),
                        _point(1.0, 0.0, (1, 0))])
    assert len(knn_query(ds, ds.points[0].features, k=5)) == 2


def test_ties_keep_insertion_order():
    ds = Dataset.build([_point(0.0, 0.0, (1, 0)), _point(0.0, 0.0, (0, 1)),
                        _point(1.0, 1.0, (1, 1))])
    ranked = knn_query(ds, ds.points[0].features, k=2)
    assert ranked == [ds.points[0].assignment, ds.points[1].assignment]


def test_scaling_makes_units_irrelevant(rng):
    """Rescaling one feature in data and query leaves the ranking unchanged."""
    pts = []
    for i, (v, a) in enumerate(rng.uniform(-1, 1, size=(20, 2))):
        bits = IntegerAssignment({f"b{j}": (i >> j) & 1 for j in range(5)})
        pts.append(DataPoint(_point(float(v), float(a), (1, 1)).features, bits, 0.0))
    query = FeatureVector((0.1, 0.2) + (0.0,) * 12)

    def stretched(f):
        return FeatureVector((f.values[0] * 1000.0,) + f.values[1:])

    plain = Dataset.build(pts)
    scaled = Dataset.build([DataPoint(stretched(p.features), p.assignment, p.cost) for p in pts])
    assert [i for _, i in knn_neighbours(plain, query, 5)] == \
        [i for _, i in knn_neighbours(scaled, stretched(query), 5)]


def test_constant_feature_span_is_one():
    ds = _small_dataset()
    assert ds.scale_span[2] == 1.0
    assert ds.scale_span[0] == pytest.approx(2.0)


def test_empty_dataset_query():
    ds = Dataset.build([], n_features=14)
    with pytest.raises(EmptyDataset):
        knn_query(ds, FeatureVector((0.0,) * 14))


def test_query_width_mismatch():
    with pytest.raises(ValueError, match="features"):
        knn_query(_small_dataset(), FeatureVector((0.0,) * 26))


# ── persistence ───────────────────────────────────────

def test_save_load_roundtrip(tmp_path):
    ds = _small_dataset()
    path = tmp_path / "ds.jsonl"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.points == ds.points
    assert loaded.scale_lo == ds.scale_lo
    assert loaded.info == {"seed": 7}
    again = tmp_path / "again.jsonl"
    save_dataset(loaded, again)
    assert again.read_bytes() == path.read_bytes()


def test_future_schema_version(tmp_path):
    path = tmp_path / "ds.jsonl"
    save_dataset(_small_dataset(), path)
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    header = json.loads(lines[0])
    header["schema_version"] = 2
    path.write_text(json.dumps(header) + "\n" + "".join(lines[1:]), encoding="utf-8")
    with pytest.raises(SchemaMismatch, match="schema_version"):
        load_dataset(path)


def test_truncated_last_line(tmp_path):
    path = tmp_path / "ds.jsonl"
    save_dataset(_small_dataset(), path)
    text = path.read_text(encoding="utf-8")
    path.write_text(text[:-10], encoding="utf-8")
    with pytest.raises(CorruptLine) as info:
        load_dataset(path)
    assert info.value.line == 4


def test_point_count_mismatch(tmp_path):
    path = tmp_path / "ds.jsonl"
    save_dataset(_small_dataset(), path)
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    path.write_text("".join(lines[:-1]), encoding="utf-8")
    with pytest.raises(CorruptLine, match="announces 3"):
        load_dataset(path)


def test_empty_file(tmp_path):
    path = tmp_path / "ds.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(SchemaMismatch, match="empty"):
        load_dataset(path)


def test_export_csv(tmp_path):
    path = tmp_path / "ds.csv"
    export_csv(_small_dataset(), path)
    rows = path.read_text(encoding="utf-8").splitlines()
    assert rows[0].startswith("trajectory,offset,vx,ax,")
    assert rows[0].endswith(",cost,gap")
    assert len(rows) == 4


# ── windows ───────────────────────────────────────────

def test_shift_name():
    assert shift_name("c[3].FL", 2, 5) == "c[1].FL"
    assert shift_name("c[1].FL", 2, 5) is None
    assert shift_name("c[7].FL", 2, 5) is None
    assert shift_name("sel[theta[3].phi].b0", 2, 5) == "sel[theta[1].phi].b0"


def test_window_assignment_matches_target(quad):
    target = build_miqp(standing_instance(quad, horizon_n=3), SegmentationSpec.desk())
    legs = ("FL", "FR", "RL", "RR")
    full = {}
    for n in range(5):
        for leg in legs:
            full[f"c[{n}].{leg}"] = 1
            full[f"z[{n}].{leg}.s0"] = 1
    window = window_assignment(IntegerAssignment(full), 2, 3, target)
    assert set(window.values) == set(target.binary_names)


def test_window_assignment_incomplete(quad):
    target = build_miqp(standing_instance(quad, horizon_n=3), SegmentationSpec.desk())
    with pytest.raises(InconsistentAssignment):
        window_assignment(IntegerAssignment({"c[2].FL": 1}), 2, 3, target)


def test_dataset_config_validation():
    with pytest.raises(ValueError, match="offsets"):
        DatasetConfig(horizon_n=6, window_offsets=(0, 2))
    with pytest.raises(ValueError, match="weight"):
        DatasetConfig(weights="sprint")


def test_dataset_rejects_ragged_points():
    with pytest.raises(ValueError, match="features"):
        Dataset((_point(0.0, 0.0, (1, 1)),), (0.0,) * 26, (1.0,) * 26)


# ── generation ────────────────────────────────────────

@pytest.mark.slow
def test_desk_scale_generation():
    """Ten planar trajectories at desk scale give at least eight feasible solves."""
    config = DatasetConfig(n_trajectories=10, horizon_n=7, planar=True, seed=3)
    ds, report = generate_dataset(config, BnbOptions(gap_target=0.15, time_limit=30.0))
    assert report.feasible >= 8
    assert len(ds) == report.summary()["points"]
    assert ds.info["planar"] is True
    assert len(ds.scale_lo) == feature_length(2)


@pytest.mark.slow
def test_generation_reproducible(tmp_path):
    config = DatasetConfig(n_trajectories=2, horizon_n=7, planar=True, seed=11)
    opts = BnbOptions(node_limit=40)
    for name in ("a.jsonl", "b.jsonl"):
        ds, _ = generate_dataset(config, opts)
        save_dataset(ds, tmp_path / name)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
