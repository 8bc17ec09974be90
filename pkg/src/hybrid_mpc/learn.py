"""Problem-solution dataset and the nearest-neighbour map from features to integer assignments.

A :class:`FeatureVector` summarises the last two knots the controller has
seen: forward velocity, forward acceleration and the toe positions of
both knots relative to the current body position, legs in the documented
order, previous knot first. A :class:`DataPoint` pairs such a vector with
the binaries of a 5-knot window cut from an offline branch-and-bound
trajectory. Knot indices inside stored binary names are relative to the
window, so ``c[0].FL`` is the first knot the online problem plans.

Dataset file (JSONL): one header line validated against
``dataset_header.schema.json`` followed by one line per point::

    {"features": [...], "assignment": {"c[0].FL": 1, ...}, "cost": 12.5,
     "meta": {"trajectory": 3, "offset": 2, "gap": 0.04}}
"""

from __future__ import annotations

import csv
import json
import logging
import math
import pathlib
import re
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from hybrid_mpc.bnb import BnbOptions, GaitStyle, gait_seed, solve_miqp
from hybrid_mpc.builder import InfeasibleBounds, build_miqp, read_trajectory
from hybrid_mpc.miqp import IntegerAssignment, MixedIntegerQP
from hybrid_mpc.relax import SegmentationSpec
from hybrid_mpc.schema_check import SchemaMismatch, validate_document
from hybrid_mpc.types import (
    WEIGHT_PRESETS,
    FootState,
    SrbParams,
    SrbState,
    leg_names,
    standing_instance,
    standing_state,
)

logger = logging.getLogger(__name__)

DATASET_SCHEMA_VERSION = 1
DEFAULT_K = 5
WINDOW_KNOTS = 5
HISTORY_KNOTS = 2

History = Sequence[Tuple[SrbState, FootState]]

_KNOT_INDEX = re.compile(r"\[(\d+)\]")


class InsufficientHistory(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class CorruptLine(ValueError):
    """A dataset line does not parse; ``line`` is 1-based and counts the header."""

    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"line {line}: {reason}")
        self.line = line


def feature_length(n_legs: int) -> int:
    return 2 + 3 * n_legs * HISTORY_KNOTS


def feature_names(n_legs: int) -> List[str]:
    names = ["vx", "ax"]
    for when in ("prev", "now"):
        names += [f"toe_{when}.{leg}.{a}" for leg in leg_names(n_legs) for a in "xyz"]
    return names


@dataclass(frozen=True)
class FeatureVector:
    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        if (len(self.values) - 2) % (3 * HISTORY_KNOTS) or len(self.values) < 2 + 3 * HISTORY_KNOTS:
            raise ValueError(f"feature vector of length {len(self.values)} has no leg layout")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("features must be finite")

    @property
    def vx(self) -> float:
        return self.values[0]

    @property
    def ax(self) -> float:
        return self.values[1]

    @property
    def toe_hist(self) -> Tuple[float, ...]:
        return self.values[2:]

    @property
    def n_legs(self) -> int:
        return (len(self.values) - 2) // (3 * HISTORY_KNOTS)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def extract_features(history: History, dt: float) -> FeatureVector:
    """Features of the last two knots of ``history`` (``(state, feet)`` pairs, oldest first)."""
    if len(history) < HISTORY_KNOTS:
        raise InsufficientHistory(f"need {HISTORY_KNOTS} knots of history, got {len(history)}")
    (s_prev, f_prev), (s_now, f_now) = history[-2], history[-1]
    body = np.asarray(s_now.p, dtype=float)
    vx = float(s_now.v[0])
    ax = (vx - float(s_prev.v[0])) / dt
    toes = np.concatenate([(f_prev.toe_array() - body).ravel(), (f_now.toe_array() - body).ravel()])
    return FeatureVector((vx, ax) + tuple(float(v) for v in toes))


@dataclass(frozen=True)
class DataPoint:
    features: FeatureVector
    assignment: IntegerAssignment
    cost: float
    meta: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "features": list(self.features.values),
            "assignment": self.assignment.to_dict(),
            "cost": self.cost,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "DataPoint":
        return cls(
            FeatureVector(tuple(float(v) for v in doc["features"])),
            IntegerAssignment({str(k): int(v) for k, v in doc["assignment"].items()}),
            float(doc["cost"]),
            dict(doc.get("meta", {})),
        )


@dataclass(frozen=True)
class Dataset:
    """Immutable point list plus the min-max scaling used for distances."""

    points: Tuple[DataPoint, ...]
    scale_lo: Tuple[float, ...]
    scale_span: Tuple[float, ...]
    window_knots: int = WINDOW_KNOTS
    info: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.scale_lo) != len(self.scale_span):
            raise ValueError("scale_lo and scale_span differ in length")
        if not all(math.isfinite(s) and s > 0.0 for s in self.scale_span):
            raise ValueError("scale_span entries must be finite and > 0")
        width = len(self.scale_lo)
        for k, p in enumerate(self.points):
            if len(p.features.values) != width:
                raise ValueError(f"point {k} has {len(p.features.values)} features, expected {width}")

    @classmethod
    def build(cls, points: Sequence[DataPoint], window_knots: int = WINDOW_KNOTS,
              info: Optional[Mapping[str, Any]] = None, n_features: Optional[int] = None) -> "Dataset":
        """Dataset with min-max scaling computed over ``points`` (constant features get span 1)."""
        if points:
            feats = np.array([p.features.values for p in points], dtype=float)
            lo = feats.min(axis=0)
            span = feats.max(axis=0) - lo
            span[span <= 1e-12] = 1.0
        else:
            width = n_features if n_features is not None else feature_length(4)
            lo, span = np.zeros(width), np.ones(width)
        return cls(tuple(points), tuple(float(v) for v in lo), tuple(float(v) for v in span),
                   window_knots, dict(info or {}))

    def __len__(self) -> int:
        return len(self.points)

    def scaled(self, f: FeatureVector) -> np.ndarray:
        return (f.array() - np.asarray(self.scale_lo)) / np.asarray(self.scale_span)

    def header(self) -> Dict[str, Any]:
        return {
            "schema_version": DATASET_SCHEMA_VERSION,
            "n_points": len(self.points),
            "n_features": len(self.scale_lo),
            "window_knots": self.window_knots,
            "scale_lo": list(self.scale_lo),
            "scale_span": list(self.scale_span),
            "info": dict(self.info),
        }


def knn_neighbours(ds: Dataset, f: FeatureVector, k: int = DEFAULT_K) -> List[Tuple[float, int]]:
    """``(distance, index)`` of the ``k`` nearest distinct assignments, nearest first."""
    if not ds.points:
        raise EmptyDataset("dataset has no points")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(f.values) != len(ds.scale_lo):
        raise ValueError(f"query has {len(f.values)} features, dataset {len(ds.scale_lo)}")
    feats = np.array([p.features.values for p in ds.points], dtype=float)
    lo, span = np.asarray(ds.scale_lo), np.asarray(ds.scale_span)
    dist = np.linalg.norm((feats - lo) / span - ds.scaled(f), axis=1)
    order = np.argsort(dist, kind="stable")
    out: List[Tuple[float, int]] = []
    seen = set()
    for idx in order:
        assignment = ds.points[idx].assignment
        if assignment in seen:
            continue
        seen.add(assignment)
        out.append((float(dist[idx]), int(idx)))
        if len(out) == k:
            break
    return out


def knn_query(ds: Dataset, f: FeatureVector, k: int = DEFAULT_K) -> List[IntegerAssignment]:
    """Ranked candidate assignments: ascending scaled distance, ties by insertion order."""
    return [ds.points[idx].assignment for _, idx in knn_neighbours(ds, f, k)]


# ---------------------------------------------------------------------------
# persistence


def save_dataset(ds: Dataset, path: pathlib.Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(ds.header(), sort_keys=True) + "\n")
        for p in ds.points:
            fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")


def _lines(path: pathlib.Path) -> Iterator[Tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            yield no, line


def load_dataset(path: pathlib.Path) -> Dataset:
    """Read a dataset file; header errors raise ``SchemaMismatch``, broken point lines ``CorruptLine``."""
    lines = _lines(pathlib.Path(path))
    try:
        _, first = next(lines)
    except StopIteration:
        raise SchemaMismatch(f"{path}: empty file, expected a dataset header") from None
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: header is not valid JSON ({exc})") from exc
    validate_document(header, "dataset_header.schema.json")

    points: List[DataPoint] = []
    for no, line in lines:
        if not line.strip():
            continue
        if not line.endswith("\n"):
            raise CorruptLine(no, "truncated line (no newline)")
        try:
            points.append(DataPoint.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptLine(no, str(exc)) from exc
    if len(points) != header["n_points"]:
        raise CorruptLine(len(points) + 2, f"header announces {header['n_points']} points, "
                                           f"file holds {len(points)}")
    return Dataset(tuple(points), tuple(header["scale_lo"]), tuple(header["scale_span"]),
                   int(header["window_knots"]), dict(header.get("info", {})))


def export_csv(ds: Dataset, path: pathlib.Path) -> None:
    """Features, cost and gap per point, for analysis plots."""
    n_legs = ds.points[0].features.n_legs if ds.points else 4
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trajectory", "offset", *feature_names(n_legs), "cost", "gap"])
        for p in ds.points:
            writer.writerow([p.meta.get("trajectory", ""), p.meta.get("offset", ""),
                             *(repr(v) for v in p.features.values), repr(p.cost),
                             p.meta.get("gap", "")])


# ---------------------------------------------------------------------------
# generation


def shift_name(name: str, offset: int, window: int) -> Optional[str]:
    """Rename a binary from trajectory knots to window knots; None when it falls outside."""
    indices = [int(m) for m in _KNOT_INDEX.findall(name)]
    if any(not offset <= k < offset + window for k in indices):
        return None
    return _KNOT_INDEX.sub(lambda m: f"[{int(m.group(1)) - offset}]", name)


def window_assignment(assignment: IntegerAssignment, offset: int, window: int,
                      target: Optional[MixedIntegerQP] = None) -> IntegerAssignment:
    """Binaries of knots ``offset .. offset + window - 1`` renamed to window knots.

    With ``target`` the result is restricted to ``target``'s binaries and
    must assign every one of them.
    """
    out: Dict[str, int] = {}
    for name, v in assignment.values.items():
        new = shift_name(name, offset, window)
        if new is not None:
            out[new] = v
    shifted = IntegerAssignment(out)
    if target is not None:
        shifted = shifted.restricted(target.binary_names)
        shifted.validate(target)
    return shifted


@dataclass(frozen=True)
class DatasetConfig:
    """Sampler and horizon settings of :func:`generate_dataset`.

    The default ranges and counts are the full-scale collection protocol;
    ``window_offsets`` at stride 2 yield two points per trajectory.
    """

    n_trajectories: int = 110
    horizon_n: int = 9
    window_knots: int = WINDOW_KNOTS
    window_offsets: Tuple[int, ...] = (0, 2)
    vx_range: Tuple[float, float] = (-1.5, 1.5)
    ax_range: Tuple[float, float] = (-15.0, 15.0)
    seed: int = 0
    planar: bool = False
    weights: str = "forward"
    seg: SegmentationSpec = field(default_factory=SegmentationSpec.desk)
    params: Optional[SrbParams] = None

    def __post_init__(self) -> None:
        problems = self.problems()
        if problems:
            raise ValueError("invalid DatasetConfig: " + "; ".join(problems))

    def problems(self) -> List[str]:
        out = []
        if self.n_trajectories < 0:
            out.append("n_trajectories must be >= 0")
        if self.window_knots < 2:
            out.append("window_knots must be >= 2")
        if any(o < 0 or o + self.window_knots > self.horizon_n for o in self.window_offsets):
            out.append(f"window offsets {list(self.window_offsets)} do not fit a "
                       f"{self.horizon_n}-knot horizon")
        if self.vx_range[0] > self.vx_range[1] or self.ax_range[0] > self.ax_range[1]:
            out.append("sample ranges must be ordered (lo, hi)")
        if self.weights not in WEIGHT_PRESETS:
            out.append(f"unknown weight preset {self.weights!r}")
        return out

    def robot(self) -> SrbParams:
        if self.params is not None:
            return self.params
        return SrbParams.placeholder_planar() if self.planar else SrbParams.placeholder_quadruped()


@dataclass
class TrajectoryRecord:
    index: int
    vx: float
    ax: float
    status: str
    gap: Optional[float] = None
    cost: Optional[float] = None
    nodes: int = 0
    windows: int = 0
    reason: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in
                ("index", "vx", "ax", "status", "gap", "cost", "nodes", "windows", "reason")}


@dataclass
class GenerationReport:
    records: List[TrajectoryRecord] = field(default_factory=list)

    @property
    def feasible(self) -> int:
        return sum(1 for r in self.records if r.cost is not None)

    @property
    def skipped(self) -> List[Tuple[int, str]]:
        return [(r.index, r.reason) for r in self.records if r.reason]

    def _mean(self, attr: str) -> Optional[float]:
        values = [getattr(r, attr) for r in self.records if getattr(r, attr) is not None]
        return float(np.mean(values)) if values else None

    def summary(self) -> Dict[str, Any]:
        return {
            "trajectories": len(self.records),
            "feasible": self.feasible,
            "points": sum(r.windows for r in self.records),
            "mean_gap": self._mean("gap"),
            "mean_cost": self._mean("cost"),
            "skipped": [{"index": i, "reason": why} for i, why in self.skipped],
        }


def _synthetic_previous(state: SrbState, ax: float, dt: float) -> SrbState:
    """The knot before ``state`` for a robot that has been accelerating at ``ax``."""
    v = np.asarray(state.v, dtype=float)
    p = np.asarray(state.p, dtype=float)
    v_prev = v - np.array([ax * dt, 0.0, 0.0])
    return SrbState.from_arrays(p - v_prev * dt, v_prev, state.theta, state.theta_dot)


def generate_dataset(config: DatasetConfig, opts: Optional[BnbOptions] = None
                     ) -> Tuple[Dataset, GenerationReport]:
    """Solve ``config.n_trajectories`` sampled instances offline and cut windows from each.

    Each instance starts standing with forward velocity ``vx`` and asks for
    ``vx + ax * dt`` one knot later; the knot before the start is
    synthesised so the features see acceleration ``ax``. Branch-and-bound
    is seeded with a trot gait. Instances without an incumbent are recorded
    in the report and skipped.
    """
    opts = opts or BnbOptions()
    params = config.robot()
    rng = np.random.default_rng(config.seed)
    samples = [(float(rng.uniform(*config.vx_range)), float(rng.uniform(*config.ax_range)))
               for _ in range(config.n_trajectories)]
    weights = WEIGHT_PRESETS[config.weights]
    seed = gait_seed(config.horizon_n, GaitStyle.TROT, params.n_legs)
    report = GenerationReport()
    points: List[DataPoint] = []
    # window binaries do not depend on the start state, so one shape serves every trajectory
    target = build_miqp(standing_instance(params, config.window_knots, **weights), config.seg)

    for index, (vx, ax) in enumerate(samples):
        record = TrajectoryRecord(index, vx, ax, status="Skipped")
        report.records.append(record)
        v_ref = float(np.clip(vx + ax * params.dt, -params.v_max, params.v_max))
        x0 = standing_state(params, vx=vx)
        try:
            inst = standing_instance(params, config.horizon_n, vx_ref=v_ref, x0=x0, **weights)
            miqp = build_miqp(inst, config.seg)
        except (InfeasibleBounds, ValueError) as exc:
            record.reason = f"instance rejected: {exc}"
            logger.warning("trajectory %d skipped: %s", index, record.reason)
            continue
        result = solve_miqp(miqp, replace(opts, warm=seed, log_path=None))
        record.status, record.nodes = result.status.value, result.nodes
        if result.x is None or result.assignment is None or result.z_p is None:
            record.reason = f"no incumbent ({result.status.value})"
            logger.warning("trajectory %d skipped: %s", index, record.reason)
            continue
        record.cost = result.z_p
        record.gap = result.gap if math.isfinite(result.gap) else None

        states, feet = read_trajectory(miqp, result.x, params.n_legs)
        knots = [(_synthetic_previous(states[0], ax, params.dt), feet[0])] + list(zip(states, feet))
        for offset in config.window_offsets:
            # knots[offset + 1] is trajectory knot ``offset``
            history = knots[offset:offset + 2]
            try:
                window = window_assignment(result.assignment, offset, config.window_knots, target)
            except ValueError as exc:
                logger.warning("trajectory %d window %d dropped: %s", index, offset, exc)
                continue
            points.append(DataPoint(
                extract_features(history, params.dt),
                window,
                result.z_p,
                {"trajectory": index, "offset": offset, "gap": record.gap},
            ))
            record.windows += 1
        logger.info("trajectory %d: %s cost=%.4g gap=%s windows=%d", index, record.status,
                    result.z_p, record.gap, record.windows)

    info = {"seed": config.seed, "planar": params.planar, "placeholder": params.placeholder,
            "horizon_n": config.horizon_n, "window_offsets": list(config.window_offsets),
            "segmentation": config.seg.to_dict()}
    ds = Dataset.build(points, config.window_knots, info, n_features=feature_length(params.n_legs))
    return ds, report


__all__ = [
    "CorruptLine",
    "DataPoint",
    "Dataset",
    "DatasetConfig",
    "EmptyDataset",
    "FeatureVector",
    "GenerationReport",
    "InsufficientHistory",
    "TrajectoryRecord",
    "export_csv",
    "extract_features",
    "feature_length",
    "feature_names",
    "generate_dataset",
    "knn_neighbours",
    "knn_query",
    "load_dataset",
    "save_dataset",
    "shift_name",
    "window_assignment",
]
