"""Envelope accuracy on simulated stance rollouts.

For each sampled knot the exact value of a representative term of every
nonconvex class is compared with its envelope approximation: the midpoint
of the feasible interval the segmented McCormick rows leave at the true
factor values. Chained (trilinear) terms feed the approximated
intermediate into the second envelope, so errors compound the way they
do in the relaxed problem.
"""

from __future__ import annotations

import csv
import logging
import math
import pathlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hybrid_mpc.relax import (
    SegmentationSpec,
    SegmentClass,
    approx_error,
    mccormick_bounds,
    trig_range,
)
from hybrid_mpc.srb_model import SingularKinematics, angular_velocity, moment_arms, simulate_step
from hybrid_mpc.types import FootState, SrbParams, SrbState

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-12

TERM_CLASSES: Dict[str, str] = {
    "bilinear_trig": "sin(phi)*cos(theta)",
    "trilinear_trig": "sin(phi)*sin(theta)*cos(psi)",
    "trig_rate": "sin(psi)*cos(theta)*phi_dot",
    "gyroscopic": "omega_x*omega_y",
    "moment": "r_x*f_y",
}


def _region(value: float, regions: Sequence[Tuple[float, float]], tol: float = 1e-12) -> Optional[int]:
    for k, (lo, hi) in enumerate(regions):
        if lo - tol <= value <= hi + tol:
            return k
    return None


def envelope_midpoint(x: float, y: float, x_regions: Sequence[Tuple[float, float]],
                      y_regions: Sequence[Tuple[float, float]]) -> Optional[float]:
    """Midpoint of the envelope's ``z`` interval at ``(x, y)``; None outside every region."""
    a, b = _region(x, x_regions), _region(y, y_regions)
    if a is None or b is None:
        return None
    lo, hi = mccormick_bounds(x, y, x_regions[a], y_regions[b])
    return 0.5 * (lo + hi)


def _trig_regions(fn: str, cls: SegmentClass, angle: float) -> Optional[Tuple[Tuple[float, float], ...]]:
    """Value ranges of ``fn`` over the angle regions, or None when the angle is out of range."""
    regions = cls.intervals()
    if _region(angle, regions) is None:
        return None
    return tuple(trig_range(fn, lo, hi) for lo, hi in regions)


def term_values(state: SrbState, feet: FootState, seg: SegmentationSpec,
                leg: int = 0) -> Optional[Dict[str, Tuple[float, float]]]:
    """``{class: (true, approx)}`` at one knot, or None when a factor leaves its range."""
    phi, theta, psi = state.theta
    angle = seg.angle
    sin_phi_r = _trig_regions("sin", angle, phi)
    sin_theta_r = _trig_regions("sin", angle, theta)
    sin_psi_r = _trig_regions("sin", angle, psi)
    cos_theta_r = _trig_regions("cos", angle, theta)
    cos_psi_r = _trig_regions("cos", angle, psi)
    if None in (sin_phi_r, sin_theta_r, sin_psi_r, cos_theta_r, cos_psi_r):
        return None
    trig = seg.trig_product.intervals()
    sf, st, sp = math.sin(phi), math.sin(theta), math.sin(psi)
    ct, cp = math.cos(theta), math.cos(psi)

    out: Dict[str, Tuple[float, float]] = {}
    approx = envelope_midpoint(sf, ct, sin_phi_r, cos_theta_r)  # type: ignore[arg-type]
    if approx is None:
        return None
    out["bilinear_trig"] = (sf * ct, approx)

    a12 = envelope_midpoint(sf, st, sin_phi_r, sin_theta_r)  # type: ignore[arg-type]
    approx = None if a12 is None else envelope_midpoint(a12, cp, trig, cos_psi_r)  # type: ignore[arg-type]
    if approx is None:
        return None
    out["trilinear_trig"] = (sf * st * cp, approx)

    phi_dot = state.theta_dot[0]
    r10 = envelope_midpoint(sp, ct, sin_psi_r, cos_theta_r)  # type: ignore[arg-type]
    approx = None if r10 is None else envelope_midpoint(r10, phi_dot, trig, seg.euler_rate.intervals())
    if approx is None:
        return None
    out["trig_rate"] = (sp * ct * phi_dot, approx)

    w = angular_velocity(state)
    omega = seg.omega.intervals()
    approx = envelope_midpoint(float(w[0]), float(w[1]), omega, omega)
    if approx is None:
        return None
    out["gyroscopic"] = (float(w[0] * w[1]), approx)

    r_x = float(moment_arms(state, feet)[leg][0])
    f_y = float(feet.force_array()[leg][1])
    approx = envelope_midpoint(r_x, f_y, seg.toe.intervals(), seg.force.intervals())
    if approx is None:
        return None
    out["moment"] = (r_x * f_y, approx)
    return out


def _error(true: float, approx: float) -> float:
    if abs(true) < ZERO_TOL and abs(approx) < ZERO_TOL:
        return 0.0
    return approx_error(approx, true)


@dataclass(frozen=True)
class RolloutSampler:
    """Seeded stance rollouts: random attitude and rates, toes replanted under the shoulders.

    ``attitude`` and ``rate`` bound the initial Euler angles and rates;
    ``force_noise`` is the relative spread of each vertical toe force around
    the static share ``m g / n_legs``. Lateral components lie within
    ``lateral`` times the vertical force, the friction coefficient when unset.
    Defaults cover the tilted postures and shear loads of climbing.
    """

    n_rollouts: int = 20
    steps: int = 8
    attitude: float = 1.2
    rate: float = 1.0
    speed: float = 0.1
    force_noise: float = 0.2
    lateral: Optional[float] = None
    seed: int = 0

    def rollouts(self, params: SrbParams) -> List[List[Tuple[SrbState, FootState]]]:
        rng = np.random.default_rng(self.seed)
        share = params.mass * params.g[2] / params.n_legs
        shear = params.mu if self.lateral is None else self.lateral
        out = []
        for _ in range(self.n_rollouts):
            state = SrbState.from_arrays(
                (0.0, 0.0, params.stance_height),
                (rng.uniform(-self.speed, self.speed), 0.0, 0.0),
                rng.uniform(-self.attitude, self.attitude, 3),
                rng.uniform(-self.rate, self.rate, 3),
            )
            knots: List[Tuple[SrbState, FootState]] = []
            for _ in range(self.steps):
                p = np.asarray(state.p)
                toes = [(p[0] + h[0], p[1] + h[1], 0.0) for h in params.shoulder_offsets]
                f_z = share * (1.0 + rng.uniform(-self.force_noise, self.force_noise, params.n_legs))
                lateral = rng.uniform(-shear, shear, (params.n_legs, 2))
                forces = [(lateral[i, 0] * f_z[i], lateral[i, 1] * f_z[i], f_z[i])
                          for i in range(params.n_legs)]
                feet = FootState.from_arrays(toes, forces, [1] * params.n_legs)
                knots.append((state, feet))
                try:
                    state = simulate_step(state, feet, params)
                except SingularKinematics:
                    break
            out.append(knots)
        return out


@dataclass
class AccuracyReport:
    seg: SegmentationSpec
    errors: Dict[str, List[float]] = field(default_factory=lambda: {k: [] for k in TERM_CLASSES})
    samples: int = 0
    skipped: int = 0

    def mean(self, cls: str) -> float:
        values = self.errors[cls]
        return float(np.mean(values)) if values else float("nan")

    def max(self, cls: str) -> float:
        values = self.errors[cls]
        return float(np.max(values)) if values else float("nan")

    def summary(self) -> Dict[str, object]:
        return {
            "samples": self.samples,
            "skipped": self.skipped,
            "classes": {
                cls: {"term": TERM_CLASSES[cls], "mean": self.mean(cls), "max": self.max(cls)}
                for cls in TERM_CLASSES
            },
        }

    def write_csv(self, path: pathlib.Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["class", "term", "samples", "mean_error", "max_error"])
            for cls, term in TERM_CLASSES.items():
                writer.writerow([cls, term, len(self.errors[cls]),
                                 f"{self.mean(cls):.6f}", f"{self.max(cls):.6f}"])


def envelope_report(seg: Optional[SegmentationSpec] = None,
                    params: Optional[SrbParams] = None,
                    sampler: Optional[RolloutSampler] = None) -> AccuracyReport:
    """Mean and max relative envelope error per term class over sampled rollouts."""
    seg = seg or SegmentationSpec.reference()
    params = params or SrbParams.placeholder_quadruped()
    sampler = sampler or RolloutSampler()
    report = AccuracyReport(seg)
    for knots in sampler.rollouts(params):
        for state, feet in knots:
            values = term_values(state, feet, seg)
            if values is None:
                report.skipped += 1
                continue
            report.samples += 1
            for cls, (true, approx) in values.items():
                report.errors[cls].append(_error(true, approx))
    if report.skipped:
        logger.info("envelope report skipped %d knots outside the segmentation ranges",
                    report.skipped)
    return report
