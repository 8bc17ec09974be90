"""Compile a :class:`~hybrid_mpc.types.ProblemInstance` into a mixed-integer QP.

Column naming (``n`` is the knot, ``L`` a leg name, ``a`` an axis)::

    p[n].a  v[n].a  theta[n].{phi,theta,psi}  theta_dot[n].*  omega[n].a
    p_w[n].L.a  f[n].L.a  c[n].L  z[n].L.s<k>  r[n].L.a  R[n].jk
    sin[n].*  cos[n].*  prod[n].<x>*<y>  g[n].L-L.a  sel[<column>].b<j>

Knot 0 state and toe positions are pinned to the instance (``lb == ub``),
so every product touching them is linear. The dynamics rows are the same
discrete equations :func:`hybrid_mpc.srb_model.simulate_step` integrates,
with ``omega x I omega``, ``r x f``, the rotation entries and the
Euler-rate map expressed through envelope columns.

With the default ``pair`` encoding every envelope product owns one binary
per region pair and each angle owns one binary per region (for its trig
bands). For four legs, ``S`` terrain regions and ``N`` knots the count is::

    N*L*(1+S) + (N-1)*(3*o(A) + 10*q(A,A) + 4*q(T,A) + 2*q(T,E) + 3*q(A,E)
                       + L*(8*q(T,P) + q(A,P)))
              + (N-2)*(6*L*q(P,F) + 3*q(W,W))

with region counts ``A`` angle, ``T`` trig product, ``E`` Euler rate,
``W`` omega, ``P`` toe and ``F`` force, ``q(a,b) = a*b`` when ``a*b > 1``
(else 0) and ``o(R) = R`` when ``R > 1`` (else 0). The ``binary`` and
``onehot`` encodings give each segmented factor one group instead::

    N*L*(1+S) + (N-1)*(3*b(A) + 2*b(E) + 10*b(T) + 3*L*b(P))
              + (N-2)*(3*b(W) + 3*L*b(F))

with ``b(R) = ceil(log2 R)`` or ``R`` and ``b(1) = 0``. Only pitch and roll
rates enter products; ``R[n].20`` is ``-sin(theta)`` and shares the angle's
selectors. The omega terms assume distinct principal moments of inertia.
:func:`binary_count` evaluates both.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hybrid_mpc.miqp import Affine, ExactlyOne, MixedIntegerQP, ModelBuilder, SelectorSpec
from hybrid_mpc.relax import EnvelopeBuilder, SegmentationSpec, SegmentClass, SegVar
from hybrid_mpc.srb_model import angular_velocity, friction_pyramid_rows
from hybrid_mpc.types import FootState, ProblemInstance, SrbParams, SrbState, TerrainRegion, leg_names

logger = logging.getLogger(__name__)

AXES = ("x", "y", "z")
ANGLES = ("phi", "theta", "psi")
FORCE_BALANCE_M = 4.0  # times f_max; |g - (f_s - f_t)| never exceeds 4 f_max


class InfeasibleBounds(ValueError):
    """The initial condition lies outside the segmentation or kinematic ranges."""


@dataclass
class _Knot:
    p: List[int]
    v: List[int]
    th: List[int]
    thd: List[int]
    om: List[int]
    pw: List[List[int]]
    f: List[List[int]]
    c: List[int]
    z: List[List[int]]


def _pin(v: float) -> Tuple[float, float]:
    return (float(v), float(v))


def _levi_civita(i: int, j: int, k: int) -> float:
    return float((i - j) * (j - k) * (k - i)) / 2.0


def _gyroscopic_pairs(inertia: np.ndarray) -> Dict[Tuple[int, int], np.ndarray]:
    """``(omega x I omega)_k = sum over a <= c of coef[(a, c)][k] * omega_a * omega_c``."""
    t = np.zeros((3, 3, 3))
    for k in range(3):
        for a in range(3):
            for c in range(3):
                t[k, a, c] = sum(_levi_civita(k, a, b) * inertia[b, c] for b in range(3))
    pairs: Dict[Tuple[int, int], np.ndarray] = {}
    for a in range(3):
        for c in range(a, 3):
            coef = t[:, a, c] + t[:, c, a] if a != c else t[:, a, a]
            if np.any(np.abs(coef) > 1e-15):
                pairs[(a, c)] = coef
    return pairs


def _initial_problems(inst: ProblemInstance, seg: SegmentationSpec) -> List[str]:
    params, x0 = inst.params, inst.x0
    out: List[str] = []

    def check(label: str, values: Sequence[float], cls: SegmentClass) -> None:
        labels = ANGLES if label in ("theta", "theta_dot") else AXES
        for name, v in zip(labels, values):
            if not cls.range.contains(v, 1e-12):
                out.append(f"x0 {label}.{name}={v:.6g} outside [{cls.range.lo:.6g}, {cls.range.hi:.6g}]")

    check("theta", x0.theta, seg.angle)
    check("theta_dot", x0.theta_dot, seg.euler_rate)
    check("omega", angular_velocity(x0).tolist(), seg.omega)
    if np.any(np.abs(x0.v) > params.v_max + 1e-12):
        out.append(f"x0 velocity {x0.v} exceeds v_max={params.v_max}")
    arms = inst.feet0.toe_array() - np.asarray(x0.p)
    for leg, arm in zip(params.leg_names, arms):
        check(f"r.{leg}", arm.tolist(), seg.toe)
    if params.planar:
        lateral = [x0.v[1], x0.theta[0], x0.theta[2], x0.theta_dot[0], x0.theta_dot[2]]
        if any(abs(v) > 1e-12 for v in lateral):
            out.append("planar instance needs zero lateral velocity, roll, yaw and their rates")
    return out


class _Compiler:
    def __init__(self, inst: ProblemInstance, seg: SegmentationSpec, encoding: str) -> None:
        self.inst = inst
        self.params = inst.params
        self.seg = seg
        self.mb = ModelBuilder()
        self.env = EnvelopeBuilder(self.mb, encoding)
        self.legs = self.params.leg_names
        self.knots: List[_Knot] = []

    # -- columns -------------------------------------------------------------

    def _vec(self, name: str, labels: Sequence[str], bounds: Sequence[Tuple[float, float]]) -> List[int]:
        return [self.mb.var(f"{name}.{lab}", lo, hi) for lab, (lo, hi) in zip(labels, bounds)]

    def add_knot(self, n: int) -> _Knot:
        params, inst, seg = self.params, self.inst, self.seg
        x0, feet0 = inst.x0, inst.feet0
        planar = params.planar

        drift = params.v_max * params.dt * n
        if n == 0:
            p_b = [_pin(v) for v in x0.p]
            v_b = [_pin(v) for v in x0.v]
            th_b = [_pin(v) for v in x0.theta]
            thd_b = [_pin(v) for v in x0.theta_dot]
            om_b = [_pin(v) for v in angular_velocity(x0)]
        else:
            p_b = [(x0.p[k] - drift, x0.p[k] + drift) for k in range(3)]
            v_b = [(-params.v_max, params.v_max)] * 3
            th_b = [seg.angle.range.astuple()] * 3
            thd_b = [seg.euler_rate.range.astuple()] * 3
            om_b = [seg.omega.range.astuple()] * 3
            if planar:
                p_b[1], v_b[1] = _pin(x0.p[1]), _pin(0.0)
                th_b[0] = th_b[2] = thd_b[0] = thd_b[2] = _pin(0.0)
                om_b[0] = om_b[2] = _pin(0.0)

        heights = [r.height for r in inst.regions] + [params.lift_height]
        reach = max(float(np.max(np.abs(np.add(h, o))))
                    for h, o in zip(params.shoulder_offsets, params.hip_offsets))
        reach += max(params.box_half_extents)
        f_lo = max(-params.f_max, seg.force.range.lo)
        f_hi = min(params.f_max, seg.force.range.hi)

        mb = self.mb
        knot = _Knot(
            p=self._vec(f"p[{n}]", AXES, p_b),
            v=self._vec(f"v[{n}]", AXES, v_b),
            th=self._vec(f"theta[{n}]", ANGLES, th_b),
            thd=self._vec(f"theta_dot[{n}]", ANGLES, thd_b),
            om=self._vec(f"omega[{n}]", AXES, om_b),
            pw=[], f=[], c=[], z=[],
        )
        for i, leg in enumerate(self.legs):
            if n == 0:
                pw_b = [_pin(v) for v in feet0.p_w[i]]
            else:
                pw_b = [(x0.p[k] - drift - reach, x0.p[k] + drift + reach) for k in range(2)]
                pw_b.append((min(heights), max(heights)))
                if planar:
                    pw_b[1] = _pin(feet0.p_w[i][1])
            f_b = [(f_lo, f_hi)] * 3
            if planar:
                f_b[1] = _pin(0.0)
            knot.pw.append(self._vec(f"p_w[{n}].{leg}", AXES, pw_b))
            knot.f.append(self._vec(f"f[{n}].{leg}", AXES, f_b))
            knot.c.append(mb.binary_var(f"c[{n}].{leg}"))
            knot.z.append([mb.binary_var(f"z[{n}].{leg}.s{s}") for s in range(len(inst.regions))])
        return knot

    # -- envelope helpers --------------------------------------------------------

    def _times(self, x: SegVar, col: int, cls: SegmentClass, name: str) -> Affine:
        """``x * column``; the column is segmented only when ``x`` is not constant."""
        if x.is_constant:
            return self.mb.expr(col).scale(x.value)
        return self.env.product(x, self.env.segment(col, cls), name)

    def _column_product(self, col_a: int, col_b: int, cls: SegmentClass, name: str) -> Affine:
        """Product of two columns; neither is segmented when the other is pinned."""
        mb = self.mb
        if mb.pinned(col_a):
            return mb.expr(col_b).scale(mb.lb[col_a])
        if mb.pinned(col_b):
            return mb.expr(col_a).scale(mb.lb[col_b])
        return self.env.product(self.env.segment(col_a, cls), self.env.segment(col_b, cls), name)

    def rotation(self, n: int) -> Tuple[List[List[SegVar]], List[SegVar], List[SegVar]]:
        env, seg = self.env, self.seg
        knot = self.knots[n]
        angles = [env.segment(col, seg.angle) for col in knot.th]
        s = [env.trig(a, "sin", f"sin[{n}].{ANGLES[k]}") for k, a in enumerate(angles)]
        c = [env.trig(a, "cos", f"cos[{n}].{ANGLES[k]}") for k, a in enumerate(angles)]
        sf, st, sp = s
        cf, ct, cp = c

        def prod(x: SegVar, y: SegVar, label: str) -> Affine:
            return env.product(x, y, f"prod[{n}].{label}")

        i1 = env.as_factor(f"sphi_stheta[{n}]", prod(sf, st, "sphi*stheta"), seg.trig_product)
        i2 = env.as_factor(f"stheta_cphi[{n}]", prod(st, cf, "stheta*cphi"), seg.trig_product)
        entries = {
            (0, 0): prod(ct, cp, "ctheta*cpsi"),
            (0, 1): prod(i1, cp, "sphi_stheta*cpsi") - prod(sp, cf, "spsi*cphi"),
            (0, 2): prod(sf, sp, "sphi*spsi") + prod(i2, cp, "stheta_cphi*cpsi"),
            (1, 0): prod(sp, ct, "spsi*ctheta"),
            (1, 1): prod(cf, cp, "cphi*cpsi") + prod(i1, sp, "sphi_stheta*spsi"),
            (1, 2): prod(i2, sp, "stheta_cphi*spsi") - prod(sf, cp, "sphi*cpsi"),
            (2, 0): st.expr.scale(-1.0),
            (2, 1): prod(sf, ct, "sphi*ctheta"),
            (2, 2): prod(cf, ct, "cphi*ctheta"),
        }
        rot = [[env.as_factor(f"R[{n}].{j}{k}", entries[(j, k)], seg.trig_product, "rot_def")
                for k in range(3)] for j in range(3)]
        return rot, s, c

    # -- rows ----------------------------------------------------------------------

    def euler_rate_rows(self, n: int, rot: List[List[SegVar]], s: List[SegVar],
                        c: List[SegVar]) -> None:
        knot, seg, mb = self.knots[n], self.seg, self.mb
        phid, thd, psid = knot.thd
        rate = seg.euler_rate
        omega = [
            self._times(rot[0][0], phid, rate, f"prod[{n}].R00*phi_dot")
            - self._times(s[2], thd, rate, f"prod[{n}].spsi*theta_dot"),
            self._times(rot[1][0], phid, rate, f"prod[{n}].R10*phi_dot")
            + self._times(c[2], thd, rate, f"prod[{n}].cpsi*theta_dot"),
            mb.expr(psid) - self._times(s[1], phid, rate, f"prod[{n}].stheta*phi_dot"),
        ]
        for k in range(3):
            mb.equal(mb.expr(knot.om[k]), omega[k], "omega_map")

    def workspace_rows(self, n: int, rot: List[List[SegVar]], arms: List[List[SegVar]]) -> None:
        params, env, mb = self.params, self.env, self.mb
        for i, leg in enumerate(self.legs):
            for k in range(3):
                body = Affine()
                for j in range(3):
                    body = body + env.product(rot[j][k], arms[i][j],
                                              f"prod[{n}].R{j}{k}*r.{leg}.{AXES[j]}")
                centre = params.shoulder_offsets[i][k] + params.hip_offsets[i][k]
                half = params.box_half_extents[k]
                mb.row(body, centre - half, centre + half, "workspace")

    def moment_arms(self, n: int) -> List[List[SegVar]]:
        knot = self.knots[n]
        return [
            [self.env.as_factor(f"r[{n}].{leg}.{AXES[k]}",
                                self.mb.expr(knot.pw[i][k]) - self.mb.expr(knot.p[k]),
                                self.seg.toe, "r_def")
             for k in range(3)]
            for i, leg in enumerate(self.legs)
        ]

    def dynamics_rows(self, n: int, arms: List[List[SegVar]]) -> None:
        params, mb, seg = self.params, self.mb, self.seg
        now, nxt = self.knots[n], self.knots[n + 1]
        dt, m = params.dt, params.mass
        g = params.gravity()
        inertia = params.inertia_matrix()

        for k in range(3):
            e = mb.expr(nxt.v[k]).scale(m) - mb.expr(now.v[k]).scale(m)
            for i in range(len(self.legs)):
                e = e - mb.expr(now.f[i][k]).scale(dt)
            mb.row(e, -dt * m * g[k], -dt * m * g[k], "newton")
            mb.equal(mb.expr(nxt.p[k]), mb.expr(now.p[k]) + mb.expr(now.v[k]).scale(dt),
                     "integrate_p")
            mb.equal(mb.expr(nxt.th[k]), mb.expr(now.th[k]) + mb.expr(now.thd[k]).scale(dt),
                     "integrate_theta")

        torque = [Affine(), Affine(), Affine()]
        for i, leg in enumerate(self.legs):
            for k in range(3):
                a, b = (k + 1) % 3, (k + 2) % 3
                # (r x f)_k = r_a f_b - r_b f_a
                torque[k] = (
                    torque[k]
                    + self._times(arms[i][a], now.f[i][b], seg.force,
                                  f"prod[{n}].r.{leg}.{AXES[a]}*f.{AXES[b]}")
                    - self._times(arms[i][b], now.f[i][a], seg.force,
                                  f"prod[{n}].r.{leg}.{AXES[b]}*f.{AXES[a]}")
                )

        gyro = [Affine(), Affine(), Affine()]
        for (a, c), coef in _gyroscopic_pairs(inertia).items():
            term = self._column_product(now.om[a], now.om[c], seg.omega,
                                        f"prod[{n}].omega.{AXES[a]}*omega.{AXES[c]}")
            for k in range(3):
                if coef[k] != 0.0:
                    gyro[k] = gyro[k] + term.scale(float(coef[k]))

        for k in range(3):
            e = Affine()
            for cidx in range(3):
                if inertia[k, cidx] != 0.0:
                    e = e + (mb.expr(nxt.om[cidx]) - mb.expr(now.om[cidx])).scale(inertia[k, cidx])
            e = e - (torque[k] - gyro[k]).scale(dt)
            mb.row(e, 0.0, 0.0, "angular")

    def contact_rows(self, n: int) -> None:
        params, mb, inst = self.params, self.mb, self.inst
        knot = self.knots[n]
        pyramid, p_lo, p_hi = friction_pyramid_rows(params.mu)
        for i, leg in enumerate(self.legs):
            f = [mb.expr(col) for col in knot.f[i]]
            c = Affine.column(knot.c[i])
            for row, lo, hi in zip(pyramid, p_lo, p_hi):
                e = Affine()
                for j in range(3):
                    e = e + f[j].scale(float(row[j]))
                mb.row(e, lo, hi, "friction")
            for k in range(3):
                if mb.pinned(knot.f[i][k]):
                    continue
                mb.row(f[k] - c.scale(params.f_max), -np.inf, 0.0, "force_bound")
                mb.row(-f[k] - c.scale(params.f_max), -np.inf, 0.0, "force_bound")

            toe = [mb.expr(col) for col in knot.pw[i]]
            if n > 0:
                # a toe grounded at knot 0 may start its swing there
                mb.upper_unless(toe[2], params.lift_height, c, "lift")
                mb.lower_unless(toe[2], params.lift_height, c, "lift")
            z_total = Affine()
            for s, region in enumerate(inst.regions):
                z_s = Affine.column(knot.z[i][s])
                off = Affine(1.0, {knot.z[i][s]: -1.0})
                mb.upper_unless(toe[2], region.height, off, "stance_height")
                mb.lower_unless(toe[2], region.height, off, "stance_height")
                normals, offsets = region.arrays()
                for (nx, ny), d in zip(normals, offsets):
                    mb.upper_unless(toe[0].scale(nx) + toe[1].scale(ny), float(d), off, "region")
                z_total = z_total + z_s
            mb.equal(z_total, c, "contact_sum")
            mb.exactly_one.append(ExactlyOne(
                f"contact[{n}].{leg}",
                tuple((mb.names[col], True) for col in knot.z[i]) + ((mb.names[knot.c[i]], False),),
            ))
        if params.min_contacts > 0:
            mb.row(Affine(0.0, {col: 1.0 for col in knot.c}), float(params.min_contacts), np.inf,
                   "min_contacts")

    def no_slip_rows(self, n: int) -> None:
        mb, big_m = self.mb, self.params.big_m
        now, nxt = self.knots[n], self.knots[n + 1]
        for i in range(len(self.legs)):
            both = Affine(0.0, {now.c[i]: big_m, nxt.c[i]: big_m})
            for k in range(3):
                step = mb.expr(nxt.pw[i][k]) - mb.expr(now.pw[i][k])
                if step.is_constant and step.const == 0.0:
                    continue
                mb.row(step + both, -np.inf, 2.0 * big_m, "no_slip")
                mb.row(-step + both, -np.inf, 2.0 * big_m, "no_slip")

    def force_balance(self, n: int) -> None:
        params, mb = self.params, self.mb
        knot = self.knots[n]
        big_m = FORCE_BALANCE_M * params.f_max
        for s in range(len(self.legs)):
            for t in range(s + 1, len(self.legs)):
                cs, ct = Affine.column(knot.c[s]), Affine.column(knot.c[t])
                gate = Affine(0.0, {knot.c[s]: big_m, knot.c[t]: big_m})
                for k in range(3):
                    diff = mb.expr(knot.f[s][k]) - mb.expr(knot.f[t][k])
                    if diff.is_constant:
                        continue
                    col = mb.var(f"g[{n}].{self.legs[s]}-{self.legs[t]}.{AXES[k]}",
                                 -2.0 * params.f_max, 2.0 * params.f_max)
                    mb.derive(col, "gated", diff, cs, ct)
                    gap = Affine.column(col) - diff
                    mb.row(gap + gate, -np.inf, 2.0 * big_m, "force_balance")
                    mb.row(-gap + gate, -np.inf, 2.0 * big_m, "force_balance")
                    mb.add_square(Affine.column(col), self.inst.w_force)

    def objective(self) -> None:
        inst, mb = self.inst, self.mb
        for n, knot in enumerate(self.knots):
            if n == 0:
                continue
            for k in range(3):
                mb.add_square(mb.expr(knot.v[k]) - inst.v_ref[k], inst.w_v[k])
                mb.add_square(mb.expr(knot.th[k]) - inst.theta_ref[k], inst.w_theta[k])
            mb.add_square(mb.expr(knot.p[2]) - inst.z_ref, inst.w_h)
        for now, nxt in zip(self.knots[:-1], self.knots[1:]):
            for k in range(3):
                mb.add_square(mb.expr(nxt.p[k]) - mb.expr(now.p[k]), inst.w_smooth)
                for i in range(len(self.legs)):
                    mb.add_square(mb.expr(nxt.pw[i][k]) - mb.expr(now.pw[i][k]), inst.w_toe_smooth)

    def compile(self) -> MixedIntegerQP:
        n_knots = self.inst.horizon_n
        for n in range(n_knots):
            self.knots.append(self.add_knot(n))
        arms: List[List[List[SegVar]]] = []
        for n in range(n_knots):
            if n == 0:
                arm0 = self.inst.feet0.toe_array() - np.asarray(self.inst.x0.p)
                arms.append([[SegVar.constant(float(v)) for v in row] for row in arm0])
                continue
            arms.append(self.moment_arms(n))
            rot, s, c = self.rotation(n)
            self.euler_rate_rows(n, rot, s, c)
            self.workspace_rows(n, rot, arms[n])
        for n in range(n_knots - 1):
            self.dynamics_rows(n, arms[n])
            self.no_slip_rows(n)
        for n in range(n_knots):
            self.contact_rows(n)
            self.force_balance(n)
        self.objective()
        return self.mb.build()


def build_miqp(inst: ProblemInstance, seg: Optional[SegmentationSpec] = None,
               encoding: str = "pair") -> MixedIntegerQP:
    """Relaxed mixed-integer QP of ``inst`` under segmentation ``seg`` (full-scale table by default)."""
    seg = seg or SegmentationSpec.reference()
    problems = _initial_problems(inst, seg)
    if problems:
        raise InfeasibleBounds("; ".join(problems))
    miqp = _Compiler(inst, seg, encoding).compile()
    logger.info("built MIQP: %s", miqp.summary())
    return miqp


def binary_count(params: SrbParams, horizon_n: int, n_regions: int,
                 seg: Optional[SegmentationSpec] = None, encoding: str = "pair") -> int:
    """Closed-form binary count of :func:`build_miqp` (see the module docstring)."""
    seg = seg or SegmentationSpec.reference()
    legs, n = params.n_legs, horizon_n
    total = n * legs * (1 + n_regions)
    A, T, E = seg.angle.regions, seg.trig_product.regions, seg.euler_rate.regions
    W, P, F = seg.omega.regions, seg.toe.regions, seg.force.regions

    if encoding == "pair":
        def q(a: int, b: int) -> int:
            return a * b if a * b > 1 else 0

        def o(r: int) -> int:
            return r if r > 1 else 0

        if params.planar:
            total += (n - 1) * (o(A) + 4 * legs * q(A, P))
            total += (n - 2) * (2 * legs * q(P, F))
        else:
            total += (n - 1) * (3 * o(A) + 10 * q(A, A) + 4 * q(T, A) + 2 * q(T, E) + 3 * q(A, E)
                                + legs * (8 * q(T, P) + q(A, P)))
            total += (n - 2) * (6 * legs * q(P, F) + 3 * q(W, W))
        return total

    def b(r: int) -> int:
        return SelectorSpec.bit_count(r, encoding)

    if params.planar:
        total += (n - 1) * (b(A) + 2 * legs * b(P))
        total += (n - 2) * (2 * legs * b(F))
    else:
        total += (n - 1) * (3 * b(A) + 2 * b(E) + 10 * b(T) + 3 * legs * b(P))
        total += (n - 2) * (3 * b(W) + 3 * legs * b(F))
    return total


def lift_trajectory(miqp: MixedIntegerQP, states: Sequence[SrbState], feet: Sequence[FootState],
                    regions: Sequence[TerrainRegion] = ()) -> np.ndarray:
    """Primal vector of ``miqp`` matching a known trajectory.

    Envelope columns take their exact products, trig columns the exact
    sine/cosine, selectors the regions the true values lie in and region
    binaries the first region containing each stance toe.
    """
    idx = miqp.var_names
    n_knots = knot_count(miqp)
    if len(states) < n_knots or len(feet) < n_knots:
        raise ValueError(f"trajectory has {min(len(states), len(feet))} knots, model needs {n_knots}")
    legs = leg_names(feet[0].n_legs)
    x = np.zeros(miqp.n)
    for n in range(n_knots):
        st, ft = states[n], feet[n]
        values = {
            "p": st.p, "v": st.v, "omega": tuple(angular_velocity(st)),
        }
        for key, vec in values.items():
            for k, ax in enumerate(AXES):
                x[idx[f"{key}[{n}].{ax}"]] = vec[k]
        for k, ang in enumerate(ANGLES):
            x[idx[f"theta[{n}].{ang}"]] = st.theta[k]
            x[idx[f"theta_dot[{n}].{ang}"]] = st.theta_dot[k]
        for i, leg in enumerate(legs):
            for k, ax in enumerate(AXES):
                x[idx[f"p_w[{n}].{leg}.{ax}"]] = ft.p_w[i][k]
                x[idx[f"f[{n}].{leg}.{ax}"]] = ft.f[i][k]
            x[idx[f"c[{n}].{leg}"]] = ft.c[i]
            if ft.c[i]:
                hit = next((s for s, r in enumerate(regions) if r.contains(ft.p_w[i])), 0)
                x[idx[f"z[{n}].{leg}.s{hit}"]] = 1.0
    return miqp.complete_primal(x)


def knot_count(miqp: MixedIntegerQP) -> int:
    n_knots = 0
    while f"p[{n_knots}].x" in miqp.var_names:
        n_knots += 1
    return n_knots


def read_trajectory(miqp: MixedIntegerQP, x: np.ndarray,
                    n_legs: int) -> Tuple[List[SrbState], List[FootState]]:
    """Knot states and feet stored in a primal vector of ``miqp`` (inverse of :func:`lift_trajectory`)."""
    idx = miqp.var_names
    legs = leg_names(n_legs)

    def vec(key: str, labels: Sequence[str]) -> Tuple[float, float, float]:
        return tuple(float(x[idx[f"{key}.{lab}"]]) for lab in labels)  # type: ignore[return-value]

    states: List[SrbState] = []
    feet: List[FootState] = []
    for n in range(knot_count(miqp)):
        states.append(SrbState(vec(f"p[{n}]", AXES), vec(f"v[{n}]", AXES),
                               vec(f"theta[{n}]", ANGLES), vec(f"theta_dot[{n}]", ANGLES)))
        feet.append(FootState.from_arrays(
            [vec(f"p_w[{n}].{leg}", AXES) for leg in legs],
            [vec(f"f[{n}].{leg}", AXES) for leg in legs],
            [int(round(float(x[idx[f"c[{n}].{leg}"]]))) for leg in legs],
        ))
    return states, feet
