"""Domain types for the single-rigid-body locomotion model.

All types are frozen dataclasses holding plain tuples so instances are
hashable, comparable and safe to share between threads. Array views are
exposed through small accessors; callers never mutate stored values.

Units are SI throughout, angles in radians. Legs are ordered
front-left, front-right, rear-left, rear-right for the four-legged
robot and front, rear for the planar (sagittal) variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

Vec3 = Tuple[float, float, float]

SCHEMA_VERSION = 1

LEG_NAMES = ("FL", "FR", "RL", "RR")
PLANAR_LEG_NAMES = ("F", "R")


def _vec3(values: Sequence[float]) -> Vec3:
    if len(values) != 3:
        raise ValueError(f"expected 3 components, got {len(values)}")
    return (float(values[0]), float(values[1]), float(values[2]))


def leg_names(n_legs: int) -> Tuple[str, ...]:
    if n_legs == 4:
        return LEG_NAMES
    if n_legs == 2:
        return PLANAR_LEG_NAMES
    return tuple(f"L{i}" for i in range(n_legs))


def _vec3s(rows: Sequence[Sequence[float]]) -> Tuple[Vec3, ...]:
    return tuple(_vec3(r) for r in rows)


@dataclass(frozen=True)
class SrbParams:
    """Robot constants. ``placeholder`` marks values not taken from hardware."""

    mass: float
    inertia: Tuple[Vec3, Vec3, Vec3]
    mu: float
    g: Vec3
    shoulder_offsets: Tuple[Vec3, ...]
    hip_offsets: Tuple[Vec3, ...]
    box_half_extents: Vec3
    f_max: float
    lift_height: float
    big_m: float
    dt: float
    min_contacts: int
    v_max: float = 3.0
    stance_height: float = 0.06
    planar: bool = False
    placeholder: bool = False

    def __post_init__(self) -> None:
        errors = self.problems()
        if errors:
            raise ValueError("invalid SrbParams: " + "; ".join(errors))

    def problems(self) -> List[str]:
        out: List[str] = []
        if not self.mass > 0:
            out.append("mass must be > 0")
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T, atol=1e-12):
            out.append("inertia must be a symmetric 3x3 matrix")
        elif np.linalg.eigvalsh(inertia).min() <= 0:
            out.append("inertia must be positive definite")
        if self.mu < 0:
            out.append("mu must be >= 0")
        if not self.dt > 0:
            out.append("dt must be > 0")
        if len(self.shoulder_offsets) != len(self.hip_offsets) or not self.shoulder_offsets:
            out.append("shoulder_offsets and hip_offsets must be non-empty and equally long")
        if not 0 <= self.min_contacts <= len(self.shoulder_offsets):
            out.append(f"min_contacts must lie in [0, {len(self.shoulder_offsets)}]")
        if any(b <= 0 for b in self.box_half_extents):
            out.append("box_half_extents must be positive")
        if not self.f_max > 0:
            out.append("f_max must be > 0")
        if not self.v_max > 0:
            out.append("v_max must be > 0")
        if self.shoulder_offsets and not self.big_m > self.reachable_step():
            out.append(
                f"big_m={self.big_m} must exceed the reachable toe step {self.reachable_step():.4f}"
            )
        return out

    @property
    def n_legs(self) -> int:
        return len(self.shoulder_offsets)

    @property
    def leg_names(self) -> Tuple[str, ...]:
        return leg_names(self.n_legs)

    def inertia_matrix(self) -> np.ndarray:
        return np.asarray(self.inertia, dtype=float)

    def gravity(self) -> np.ndarray:
        return np.asarray(self.g, dtype=float)

    def reachable_step(self) -> float:
        """Largest per-axis toe displacement between two knots the kinematics allow."""
        reach = max(
            float(np.max(np.abs(np.add(h, o)))) for h, o in zip(self.shoulder_offsets, self.hip_offsets)
        ) + max(self.box_half_extents)
        return 2.0 * reach + self.v_max * self.dt

    @classmethod
    def placeholder_quadruped(cls, **overrides: Any) -> "SrbParams":
        """A small climbing-scale quadruped. Mass and inertia are not measured values."""
        base = dict(
            mass=1.5,
            inertia=((0.004, 0.0, 0.0), (0.0, 0.006, 0.0), (0.0, 0.0, 0.008)),
            mu=0.7,
            g=(0.0, 0.0, 9.81),
            shoulder_offsets=((0.05, 0.04, 0.0), (0.05, -0.04, 0.0),
                              (-0.05, 0.04, 0.0), (-0.05, -0.04, 0.0)),
            hip_offsets=((0.0, 0.0, -0.035),) * 4,
            box_half_extents=(0.03, 0.03, 0.035),
            f_max=15.0,
            lift_height=0.05,
            big_m=1.0,
            dt=0.08,
            min_contacts=2,
            placeholder=True,
        )
        base.update(overrides)
        return cls(**base)  # type: ignore[arg-type]

    @classmethod
    def placeholder_planar(cls, **overrides: Any) -> "SrbParams":
        """Sagittal reduction: two effective legs, lateral motion pinned."""
        base = dict(
            mass=1.5,
            inertia=((0.004, 0.0, 0.0), (0.0, 0.006, 0.0), (0.0, 0.0, 0.008)),
            mu=0.7,
            g=(0.0, 0.0, 9.81),
            shoulder_offsets=((0.05, 0.0, 0.0), (-0.05, 0.0, 0.0)),
            hip_offsets=((0.0, 0.0, -0.035),) * 2,
            box_half_extents=(0.03, 0.03, 0.035),
            f_max=15.0,
            lift_height=0.05,
            big_m=1.0,
            dt=0.08,
            min_contacts=1,
            planar=True,
            placeholder=True,
        )
        base.update(overrides)
        return cls(**base)  # type: ignore[arg-type]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mass": self.mass,
            "inertia": [list(r) for r in self.inertia],
            "mu": self.mu,
            "g": list(self.g),
            "shoulder_offsets": [list(r) for r in self.shoulder_offsets],
            "hip_offsets": [list(r) for r in self.hip_offsets],
            "box_half_extents": list(self.box_half_extents),
            "f_max": self.f_max,
            "lift_height": self.lift_height,
            "big_m": self.big_m,
            "dt": self.dt,
            "min_contacts": self.min_contacts,
            "v_max": self.v_max,
            "stance_height": self.stance_height,
            "planar": self.planar,
            "placeholder": self.placeholder,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "SrbParams":
        return cls(
            mass=float(doc["mass"]),
            inertia=_vec3s(doc["inertia"]),  # type: ignore[arg-type]
            mu=float(doc["mu"]),
            g=_vec3(doc["g"]),
            shoulder_offsets=_vec3s(doc["shoulder_offsets"]),
            hip_offsets=_vec3s(doc["hip_offsets"]),
            box_half_extents=_vec3(doc["box_half_extents"]),
            f_max=float(doc["f_max"]),
            lift_height=float(doc["lift_height"]),
            big_m=float(doc["big_m"]),
            dt=float(doc["dt"]),
            min_contacts=int(doc["min_contacts"]),
            v_max=float(doc.get("v_max", 3.0)),
            stance_height=float(doc.get("stance_height", 0.06)),
            planar=bool(doc.get("planar", False)),
            placeholder=bool(doc.get("placeholder", False)),
        )


@dataclass(frozen=True)
class SrbState:
    """Body state at one knot: position, velocity, Z-Y-X Euler angles and their rates."""

    p: Vec3
    v: Vec3
    theta: Vec3
    theta_dot: Vec3

    @classmethod
    def from_arrays(cls, p, v, theta, theta_dot) -> "SrbState":
        return cls(_vec3(p), _vec3(v), _vec3(theta), _vec3(theta_dot))

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (np.asarray(self.p, dtype=float), np.asarray(self.v, dtype=float),
                np.asarray(self.theta, dtype=float), np.asarray(self.theta_dot, dtype=float))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(np.concatenate(self.arrays()))))

    def to_dict(self) -> Dict[str, Any]:
        return {"p": list(self.p), "v": list(self.v), "theta": list(self.theta),
                "theta_dot": list(self.theta_dot)}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "SrbState":
        return cls.from_arrays(doc["p"], doc["v"], doc["theta"], doc["theta_dot"])


@dataclass(frozen=True)
class FootState:
    """Toe positions (world), contact forces and contact flags for every leg."""

    p_w: Tuple[Vec3, ...]
    f: Tuple[Vec3, ...]
    c: Tuple[int, ...]

    def __post_init__(self) -> None:
        if not len(self.p_w) == len(self.f) == len(self.c):
            raise ValueError("p_w, f and c must have one entry per leg")
        if any(ci not in (0, 1) for ci in self.c):
            raise ValueError("contact flags must be 0 or 1")

    @classmethod
    def from_arrays(cls, p_w, f, c) -> "FootState":
        return cls(_vec3s(p_w), _vec3s(f), tuple(int(ci) for ci in c))

    @property
    def n_legs(self) -> int:
        return len(self.c)

    def toe_array(self) -> np.ndarray:
        return np.asarray(self.p_w, dtype=float).reshape(-1, 3)

    def force_array(self) -> np.ndarray:
        return np.asarray(self.f, dtype=float).reshape(-1, 3)

    def with_forces(self, f, c=None) -> "FootState":
        return FootState.from_arrays(self.p_w, f, self.c if c is None else c)

    def to_dict(self) -> Dict[str, Any]:
        return {"p_w": [list(r) for r in self.p_w], "f": [list(r) for r in self.f],
                "c": list(self.c)}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "FootState":
        return cls.from_arrays(doc["p_w"], doc["f"], doc["c"])


def _chebyshev_radius(normals: np.ndarray, offsets: np.ndarray, bound: float = 1e3) -> float:
    """Radius of the largest disc inside {x : n·x <= d}, capped at ``bound``."""
    norms = np.linalg.norm(normals, axis=1)
    a_ub = np.hstack([normals, norms[:, None]])
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=a_ub,
        b_ub=offsets,
        bounds=[(-bound, bound), (-bound, bound), (0.0, bound)],
        method="highs",
    )
    if res.status != 0:
        return -1.0
    return float(res.x[2])


@dataclass(frozen=True)
class TerrainRegion:
    """Convex polygon ``{(x, y) : n·(x, y) <= d}`` on the plane ``z = height``."""

    halfspaces: Tuple[Tuple[Tuple[float, float], float], ...]
    height: float = 0.0

    def __post_init__(self) -> None:
        if not self.halfspaces:
            raise ValueError("terrain region needs at least one halfspace")
        normals, offsets = self.arrays()
        if np.any(np.abs(np.linalg.norm(normals, axis=1) - 1.0) > 1e-9):
            raise ValueError("halfspace normals must be unit vectors")
        if _chebyshev_radius(normals, offsets) < 0.0:
            raise ValueError("terrain region is empty")

    @classmethod
    def box(cls, x_lo: float, x_hi: float, y_lo: float, y_hi: float,
            height: float = 0.0) -> "TerrainRegion":
        return cls(
            halfspaces=(((1.0, 0.0), x_hi), ((-1.0, 0.0), -x_lo),
                        ((0.0, 1.0), y_hi), ((0.0, -1.0), -y_lo)),
            height=height,
        )

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        normals = np.array([n for n, _ in self.halfspaces], dtype=float).reshape(-1, 2)
        offsets = np.array([d for _, d in self.halfspaces], dtype=float)
        return normals, offsets

    def contains(self, point, tol: float = 1e-9) -> bool:
        normals, offsets = self.arrays()
        xy = np.asarray(point, dtype=float)[:2]
        return bool(np.all(normals @ xy <= offsets + tol))

    def to_dict(self) -> Dict[str, Any]:
        return {"halfspaces": [{"normal": list(n), "offset": d} for n, d in self.halfspaces],
                "height": self.height}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "TerrainRegion":
        hs = tuple(((float(h["normal"][0]), float(h["normal"][1])), float(h["offset"]))
                   for h in doc["halfspaces"])
        return cls(halfspaces=hs, height=float(doc.get("height", 0.0)))


WEIGHT_PRESETS: Dict[str, Dict[str, Any]] = {
    "forward": {"w_v": (100.0, 100.0, 10.0), "w_theta": (10.0, 10.0, 10.0), "w_h": 10.0},
    "smooth": {"w_v": (100.0, 100.0, 1000.0), "w_theta": (10.0, 10.0, 10.0), "w_h": 1000.0},
}


@dataclass(frozen=True)
class ProblemInstance:
    """Everything ``build_miqp`` needs: the parameter vector of the problem-solution map."""

    params: SrbParams
    horizon_n: int
    x0: SrbState
    feet0: FootState
    v_ref: Vec3
    theta_ref: Vec3
    z_ref: float
    w_v: Vec3 = WEIGHT_PRESETS["forward"]["w_v"]
    w_theta: Vec3 = WEIGHT_PRESETS["forward"]["w_theta"]
    w_h: float = 10.0
    regions: Tuple[TerrainRegion, ...] = field(
        default_factory=lambda: (TerrainRegion.box(-10.0, 10.0, -10.0, 10.0),)
    )
    w_smooth: float = 1.0
    w_force: float = 1.0
    w_toe_smooth: float = 0.1

    def __post_init__(self) -> None:
        errors = self.problems()
        if errors:
            raise ValueError("invalid ProblemInstance: " + "; ".join(errors))

    def problems(self) -> List[str]:
        out: List[str] = []
        if self.horizon_n < 2:
            out.append("horizon_n must be >= 2")
        weights = list(self.w_v) + list(self.w_theta) + [self.w_h, self.w_smooth, self.w_force,
                                                           self.w_toe_smooth]
        if any(w < 0 for w in weights):
            out.append("weights must be >= 0")
        refs = list(self.v_ref) + list(self.theta_ref) + [self.z_ref]
        if not all(math.isfinite(r) for r in refs):
            out.append("references must be finite")
        if self.feet0.n_legs != self.params.n_legs:
            out.append(f"feet0 has {self.feet0.n_legs} legs, params declare {self.params.n_legs}")
        if not self.regions:
            out.append("at least one terrain region is required")
        if not self.x0.is_finite():
            out.append("x0 must be finite")
        return out

    def with_weights(self, preset: str) -> "ProblemInstance":
        return replace(self, **WEIGHT_PRESETS[preset])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "params": self.params.to_dict(),
            "horizon_n": self.horizon_n,
            "x0": self.x0.to_dict(),
            "feet0": self.feet0.to_dict(),
            "v_ref": list(self.v_ref),
            "theta_ref": list(self.theta_ref),
            "z_ref": self.z_ref,
            "w_v": list(self.w_v),
            "w_theta": list(self.w_theta),
            "w_h": self.w_h,
            "w_smooth": self.w_smooth,
            "w_force": self.w_force,
            "w_toe_smooth": self.w_toe_smooth,
            "regions": [r.to_dict() for r in self.regions],
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ProblemInstance":
        return cls(
            params=SrbParams.from_dict(doc["params"]),
            horizon_n=int(doc["horizon_n"]),
            x0=SrbState.from_dict(doc["x0"]),
            feet0=FootState.from_dict(doc["feet0"]),
            v_ref=_vec3(doc["v_ref"]),
            theta_ref=_vec3(doc["theta_ref"]),
            z_ref=float(doc["z_ref"]),
            w_v=_vec3(doc["w_v"]),
            w_theta=_vec3(doc["w_theta"]),
            w_h=float(doc["w_h"]),
            w_smooth=float(doc.get("w_smooth", 1.0)),
            w_force=float(doc.get("w_force", 1.0)),
            w_toe_smooth=float(doc.get("w_toe_smooth", 0.1)),
            regions=tuple(TerrainRegion.from_dict(r) for r in doc["regions"]),
        )


def standing_state(params: SrbParams, x: float = 0.0, vx: float = 0.0,
                   height: Optional[float] = None) -> SrbState:
    z = params.stance_height if height is None else height
    return SrbState((x, 0.0, z), (vx, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))


def nominal_feet(params: SrbParams, state: SrbState, ground: float = 0.0) -> FootState:
    """All legs in stance, toes on the ground below their shoulders, weight shared evenly."""
    p = np.asarray(state.p, dtype=float)
    share = params.mass * params.g[2] / params.n_legs
    toes = [(p[0] + h[0], p[1] + h[1], ground) for h in params.shoulder_offsets]
    return FootState.from_arrays(toes, [(0.0, 0.0, share)] * params.n_legs, [1] * params.n_legs)


def standing_instance(params: SrbParams, horizon_n: int, vx_ref: float = 0.0,
                      **overrides: Any) -> ProblemInstance:
    """A standing start tracking ``vx_ref`` at the nominal height."""
    x0 = overrides.pop("x0", None) or standing_state(params)
    feet0 = overrides.pop("feet0", None) or nominal_feet(params, x0)
    return ProblemInstance(
        params=params,
        horizon_n=horizon_n,
        x0=x0,
        feet0=feet0,
        v_ref=(vx_ref, 0.0, 0.0),
        theta_ref=(0.0, 0.0, 0.0),
        z_ref=params.stance_height,
        **overrides,
    )


def settle_feet(feet: FootState, params: SrbParams,
                regions: Sequence[TerrainRegion] = ()) -> FootState:
    """Stance toes at the height of the region under them, swing toes at the lift height."""
    toes = feet.toe_array().copy()
    for i, c in enumerate(feet.c):
        if not c:
            toes[i, 2] = params.lift_height
            continue
        under = next((r for r in regions if r.contains(toes[i])), regions[0] if regions else None)
        toes[i, 2] = under.height if under is not None else 0.0
    return FootState.from_arrays(toes, feet.f, feet.c)
