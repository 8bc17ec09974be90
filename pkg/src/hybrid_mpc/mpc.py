"""Receding-horizon control against the single-rigid-body simulator.

Each tick: features of the last two knots, nearest-neighbour candidates
from the dataset, one fixed-integer QP per candidate in rank order until
one solves, then the first knot of that plan drives
:func:`~hybrid_mpc.srb_model.simulate_step`. The plant advances exactly
one knot per solve.

Contact flags of the planned first knot are not taken from the candidate:
they are the measured contact state, which is what the previous plan
scheduled for this knot. Candidates only decide knots 1 onwards.
"""

from __future__ import annotations

import csv
import logging
import math
import pathlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from hybrid_mpc.bnb import FixedSolution, solve_fixed
from hybrid_mpc.builder import InfeasibleBounds, build_miqp, read_trajectory
from hybrid_mpc.learn import Dataset, History, extract_features, knn_query
from hybrid_mpc.miqp import IntegerAssignment, MixedIntegerQP
from hybrid_mpc.qp_solver import NumericalBreakdown, QpSettings
from hybrid_mpc.relax import SegmentationSpec
from hybrid_mpc.srb_model import SingularKinematics, simulate_step
from hybrid_mpc.types import (
    WEIGHT_PRESETS,
    FootState,
    ProblemInstance,
    SrbParams,
    SrbState,
    TerrainRegion,
    Vec3,
    settle_feet,
)

logger = logging.getLogger(__name__)


class AllCandidatesFailed(ValueError):
    """No candidate assignment produced a solved QP; ``statuses`` lists one reason per rank."""

    def __init__(self, statuses: Sequence[str]) -> None:
        super().__init__("all candidates failed: " + "; ".join(
            f"#{rank}: {why}" for rank, why in enumerate(statuses, start=1)))
        self.statuses = list(statuses)


@dataclass(frozen=True)
class AdmittanceGains:
    """Diagonal task-space gains. Defaults are illustrative, not hardware values."""

    m_d: Vec3 = (1.0, 1.0, 1.0)
    d_d: Vec3 = (20.0, 20.0, 20.0)
    k_d: Vec3 = (100.0, 100.0, 100.0)
    k_f: Vec3 = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if any(m <= 0.0 for m in self.m_d):
            raise ValueError("m_d entries must be > 0")
        if any(v < 0.0 for v in (*self.d_d, *self.k_d, *self.k_f)):
            raise ValueError("d_d, k_d and k_f entries must be >= 0")


@dataclass(frozen=True)
class Disturbance:
    """Velocity impulse added to the body after the plant step of ``tick``."""

    tick: int
    dv: Vec3


@dataclass(frozen=True)
class MpcConfig:
    horizon_n: int = 5
    candidate_k: int = 5
    v_ref: Vec3 = (0.0, 0.0, 0.0)
    weights: str = "forward"
    qp: QpSettings = field(default_factory=QpSettings)
    disturbances: Tuple[Disturbance, ...] = ()
    seg: SegmentationSpec = field(default_factory=SegmentationSpec.desk)
    regions: Tuple[TerrainRegion, ...] = field(
        default_factory=lambda: (TerrainRegion.box(-10.0, 10.0, -10.0, 10.0),)
    )
    workers: int = 1
    admittance: Optional[AdmittanceGains] = field(default_factory=AdmittanceGains)

    def __post_init__(self) -> None:
        if self.horizon_n < 2:
            raise ValueError("horizon_n must be >= 2")
        if self.candidate_k < 1:
            raise ValueError("candidate_k must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.weights not in WEIGHT_PRESETS:
            raise ValueError(f"unknown weight preset {self.weights!r}")

    def instance(self, params: SrbParams, state: SrbState, feet: FootState,
                 v_ref: Optional[Vec3] = None, z_ref: Optional[float] = None) -> ProblemInstance:
        """Problem at ``state``; ``v_ref`` and ``z_ref`` override the configured references."""
        return ProblemInstance(
            params=params,
            horizon_n=self.horizon_n,
            x0=state,
            feet0=feet,
            v_ref=self.v_ref if v_ref is None else v_ref,
            theta_ref=(0.0, 0.0, 0.0),
            z_ref=params.stance_height if z_ref is None else z_ref,
            regions=self.regions,
            **WEIGHT_PRESETS[self.weights],
        )


@dataclass(frozen=True)
class MpcCommand:
    """First planned knot (applied now) and second knot (where the toes go next)."""

    feet_now: FootState
    feet_next: FootState
    cost: float


@dataclass
class StepLog:
    tick: int
    features: Tuple[float, ...] = ()
    candidate_tried: Optional[int] = None
    statuses: List[str] = field(default_factory=list)
    qp_status: str = ""
    qp_iters: int = 0
    solve_time: float = 0.0
    forces: Tuple[Vec3, ...] = ()
    contacts: Tuple[int, ...] = ()
    state: Optional[SrbState] = None
    v_cmd: Vec3 = (0.0, 0.0, 0.0)
    z_cmd: float = 0.0
    failure: str = ""

    @property
    def all_stance(self) -> bool:
        return bool(self.contacts) and all(self.contacts)


def admittance_update(x, x_dot, x0, f_meas, f_ref, gains: AdmittanceGains,
                      dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """One forward-Euler step of the admittance law; returns ``(position command, velocity)``.

    ``M_d x'' = -D_d x' - K_d (x - x0) + K_f (f_meas - f_ref)``; the position
    advances with the velocity held at the start of the step.
    """
    if not dt > 0.0:
        raise ValueError("dt must be > 0")
    x = np.asarray(x, dtype=float)
    x_dot = np.asarray(x_dot, dtype=float)
    x_ddot = (-np.asarray(gains.d_d) * x_dot
              - np.asarray(gains.k_d) * (x - np.asarray(x0, dtype=float))
              + np.asarray(gains.k_f) * (np.asarray(f_meas, dtype=float) - np.asarray(f_ref, dtype=float))
              ) / np.asarray(gains.m_d)
    return x + dt * x_dot, x_dot + dt * x_ddot


# ---------------------------------------------------------------------------
# one tick


def adapt_candidate(miqp: MixedIntegerQP, candidate: IntegerAssignment, feet: FootState,
                    regions: Sequence[TerrainRegion], legs: Sequence[str]) -> IntegerAssignment:
    """Restrict ``candidate`` to ``miqp``'s binaries and overwrite knot 0 with the measured contacts."""
    values = dict(candidate.restricted(miqp.binary_names).values)
    for i, leg in enumerate(legs):
        c = int(feet.c[i])
        values[f"c[0].{leg}"] = c
        hit = next((s for s, r in enumerate(regions) if r.contains(feet.p_w[i])), 0)
        for s in range(len(regions)):
            values[f"z[0].{leg}.s{s}"] = int(c == 1 and s == hit)
    return IntegerAssignment(values)


def _try(miqp: MixedIntegerQP, assignment: IntegerAssignment,
         settings: QpSettings) -> Tuple[Optional[FixedSolution], str]:
    problems = assignment.problems(miqp)
    if problems:
        return None, "Inconsistent: " + "; ".join(problems)
    try:
        fixed = solve_fixed(miqp, assignment, settings)
    except NumericalBreakdown as exc:
        return None, f"NumericalBreakdown: {exc}"
    return fixed, fixed.qp.status.value


def mpc_step(history: History, dataset: Dataset, config: MpcConfig, params: SrbParams,
             tick: int = 0, v_ref: Optional[Vec3] = None,
             z_ref: Optional[float] = None) -> Tuple[MpcCommand, StepLog]:
    """Plan from the last knot of ``history`` with the dataset's nearest assignments.

    ``v_ref`` and ``z_ref`` replace the configured references for this tick.

    Raises :class:`AllCandidatesFailed` when no candidate solves; the
    statuses it carries are in rank order.
    """
    feats = extract_features(history, params.dt)
    log = StepLog(tick, feats.values)
    candidates = knn_query(dataset, feats, config.candidate_k)
    state, feet = history[-1]
    instance = config.instance(params, state, feet, v_ref, z_ref)
    log.v_cmd, log.z_cmd = instance.v_ref, instance.z_ref
    miqp = build_miqp(instance, config.seg)
    legs = params.leg_names
    adapted = [adapt_candidate(miqp, c, feet, config.regions, legs) for c in candidates]

    winner: Optional[Tuple[int, FixedSolution]] = None
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            outcomes = list(pool.map(lambda a: _try(miqp, a, config.qp), adapted))
        for rank, (fixed, status) in enumerate(outcomes, start=1):
            log.statuses.append(status)
            if winner is None and fixed is not None and fixed.feasible:
                winner = (rank, fixed)
    else:
        for rank, assignment in enumerate(adapted, start=1):
            fixed, status = _try(miqp, assignment, config.qp)
            log.statuses.append(status)
            if fixed is not None and fixed.feasible:
                winner = (rank, fixed)
                break

    if winner is None:
        log.failure = "all candidates failed"
        raise AllCandidatesFailed(log.statuses)
    rank, fixed = winner
    states, feet_plan = read_trajectory(miqp, fixed.x, params.n_legs)
    log.candidate_tried = rank
    log.qp_status = fixed.qp.status.value
    log.qp_iters = fixed.qp.iters
    log.solve_time = fixed.qp.solve_time
    now = FootState.from_arrays(feet.p_w, feet_plan[0].f, feet.c)
    log.forces, log.contacts = now.f, now.c
    logger.debug("tick %d: candidate %d solved in %d iterations", tick, rank, fixed.qp.iters)
    return MpcCommand(now, feet_plan[1], fixed.cost), log


# ---------------------------------------------------------------------------
# closed loop


@dataclass
class ClosedLoopResult:
    states: List[SrbState]
    logs: List[StepLog]
    halted: str = ""

    def braking_events(self, disturbances: Sequence[Disturbance]) -> List[Dict[str, Any]]:
        """For each impulse, the first later tick whose applied contacts are all stance."""
        out = []
        for d in disturbances:
            hit = next((log.tick for log in self.logs if log.tick > d.tick and log.all_stance), None)
            out.append({"impulse_tick": d.tick, "braking_tick": hit,
                        "delay": None if hit is None else hit - d.tick})
        return out

    def first_candidate_rate(self) -> float:
        solved = [log for log in self.logs if log.candidate_tried is not None]
        if not solved:
            return 0.0
        return sum(1 for log in solved if log.candidate_tried == 1) / len(solved)

    def median_iterations(self) -> Optional[float]:
        iters = [log.qp_iters for log in self.logs if log.candidate_tried is not None]
        return float(np.median(iters)) if iters else None

    def median_solve_time(self) -> Optional[float]:
        times = [log.solve_time for log in self.logs if log.candidate_tried is not None]
        return float(np.median(times)) if times else None

    def mean_forward_velocity(self) -> float:
        return float(np.mean([s.v[0] for s in self.states[1:]])) if len(self.states) > 1 else 0.0

    def summary(self, disturbances: Sequence[Disturbance] = ()) -> Dict[str, Any]:
        return {
            "ticks": len(self.logs),
            "halted": self.halted or None,
            "first_candidate_rate": self.first_candidate_rate(),
            "median_qp_iterations": self.median_iterations(),
            "mean_forward_velocity": self.mean_forward_velocity(),
            "braking_events": self.braking_events(disturbances),
        }

    def write_csv(self, path: pathlib.Path, legs: Sequence[str]) -> None:
        """One row per tick: resulting state, applied forces and contacts, QP iterations, candidate rank, QP time."""
        header = ["tick"]
        for key in ("p", "v"):
            header += [f"{key}.{a}" for a in "xyz"]
        for key in ("theta", "theta_dot"):
            header += [f"{key}.{a}" for a in ("phi", "theta", "psi")]
        for leg in legs:
            header += [f"f.{leg}.{a}" for a in "xyz"] + [f"c.{leg}"]
        header += ["qp_iters", "candidate", "solve_ms"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for log in self.logs:
                if log.state is None:
                    continue
                s = log.state
                row: List[Any] = [log.tick, *s.p, *s.v, *s.theta, *s.theta_dot]
                for f, c in zip(log.forces, log.contacts):
                    row += [*f, c]
                row += [log.qp_iters, log.candidate_tried, 1e3 * log.solve_time]
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def run_closed_loop(state: SrbState, feet: FootState, dataset: Dataset, config: MpcConfig,
                    params: SrbParams, ticks: int) -> ClosedLoopResult:
    """Synchronous MPC loop; stops early, with ``halted`` set, when a tick cannot be planned.

    With ``config.admittance`` set, the difference between the measured and
    planned toe forces of each tick drives :func:`admittance_update`, whose
    output offsets the velocity and height references of the next tick.
    """
    feet = settle_feet(feet, params, config.regions)
    history: List[Tuple[SrbState, FootState]] = [(state, feet), (state, feet)]
    result = ClosedLoopResult([state], [])
    impulses: Dict[int, np.ndarray] = {}
    for d in config.disturbances:
        impulses[d.tick] = impulses.get(d.tick, np.zeros(3)) + np.asarray(d.dv, dtype=float)
    offset, offset_dot = np.zeros(3), np.zeros(3)

    for tick in range(ticks):
        t0 = time.perf_counter()
        vx, vy, vz = (np.asarray(config.v_ref, dtype=float) + offset_dot).tolist()
        v_ref: Vec3 = (vx, vy, vz)
        z_ref = params.stance_height + float(offset[2])
        try:
            cmd, log = mpc_step(history, dataset, config, params, tick, v_ref, z_ref)
            nxt = simulate_step(state, cmd.feet_now, params)
        except AllCandidatesFailed as exc:
            result.logs.append(StepLog(tick, statuses=exc.statuses, failure=str(exc)))
            result.halted = f"tick {tick}: {exc}"
            break
        except (InfeasibleBounds, SingularKinematics) as exc:
            result.logs.append(StepLog(tick, failure=str(exc)))
            result.halted = f"tick {tick}: {exc}"
            break
        planned = np.sum(np.asarray(cmd.feet_now.f, dtype=float), axis=0)
        measured = planned.copy()
        if tick in impulses:
            p, v, th, thd = nxt.arrays()
            nxt = SrbState.from_arrays(p, v + impulses[tick], th, thd)
            measured += params.mass * impulses[tick] / params.dt
            logger.info("tick %d: velocity impulse %s", tick, impulses[tick].tolist())
        if config.admittance is not None:
            offset, offset_dot = admittance_update(offset, offset_dot, np.zeros(3), measured, planned,
                                                   config.admittance, params.dt)
        state = nxt
        feet = settle_feet(cmd.feet_next, params, config.regions)
        log.state = state
        result.logs.append(log)
        result.states.append(state)
        history = [history[-1], (state, feet)]
        logger.debug("tick %d done in %.1f ms", tick, 1e3 * (time.perf_counter() - t0))
        if not state.is_finite() or not math.isfinite(cmd.cost):
            result.halted = f"tick {tick}: non-finite state"
            break
    return result
