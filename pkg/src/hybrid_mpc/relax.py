"""Segmented McCormick envelopes and piecewise-linear trigonometry.

Every nonconvex quantity in the model is a product of two factors or a
sine/cosine of an angle. A factor is described by a :class:`SegVar`: its
affine expression, the list of regions it may lie in and the selector
group that picks one of them. Pinned factors are constants and never
produce envelope rows.

With the default ``pair`` encoding every product of two segmented factors
owns one binary per (x-region, y-region) pair, exactly one of which is set;
the pair binary switches on the McCormick rows of its cell and the rows
holding ``x`` and ``y`` inside it. A factor that needs a selection on its
own (an angle feeding trig bands) gets a one-hot group over its regions.
With the ``binary`` and ``onehot`` encodings each factor owns one selector
group instead, and the rows of the pair ``(a, b)`` are switched off through
``M * (d_x(a) + d_y(b))``. In every encoding ``d`` is the group's
deactivation expression and ``M`` is computed per row from the column
bounds (see :meth:`hybrid_mpc.miqp.ModelBuilder.upper_unless`).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from hybrid_mpc.miqp import (
    Affine,
    ExactlyOne,
    LinearConstraintSet,
    MixedIntegerQP,
    ModelBuilder,
    SegmentedColumn,
    SelectorSpec,
)

logger = logging.getLogger(__name__)

DEGENERATE_WIDTH = 1e-12
ENCODINGS = ("pair", "binary", "onehot")

Region = Tuple[float, float]


class DegenerateInterval(ValueError):
    """An interval is empty, inverted, infinite or narrower than 1e-12."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise DegenerateInterval(f"interval [{self.lo}, {self.hi}] is not finite")
        if self.hi - self.lo < DEGENERATE_WIDTH:
            raise DegenerateInterval(f"interval [{self.lo}, {self.hi}] has width < {DEGENERATE_WIDTH}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= v <= self.hi + tol

    def split(self, n: int) -> Tuple["Interval", ...]:
        if n < 1:
            raise ValueError("region count must be >= 1")
        edges = np.linspace(self.lo, self.hi, n + 1)
        return tuple(Interval(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:]))

    def __mul__(self, other: "Interval") -> "Interval":
        corners = [self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi]
        return Interval(min(corners), max(corners))

    def astuple(self) -> Region:
        return (self.lo, self.hi)


@dataclass(frozen=True)
class SegmentClass:
    """Range and region count of one class of segmented quantities."""

    range: Interval
    regions: int

    def __post_init__(self) -> None:
        if self.regions < 1:
            raise ValueError("region count must be >= 1")

    def intervals(self) -> Tuple[Region, ...]:
        return tuple(iv.astuple() for iv in self.range.split(self.regions))

    def doubled(self) -> "SegmentClass":
        return replace(self, regions=2 * self.regions)

    def to_dict(self) -> Dict[str, Any]:
        return {"lo": self.range.lo, "hi": self.range.hi, "regions": self.regions}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "SegmentClass":
        return cls(Interval(float(doc["lo"]), float(doc["hi"])), int(doc["regions"]))


def _cls(lo: float, hi: float, regions: int) -> SegmentClass:
    return SegmentClass(Interval(lo, hi), regions)


SEGMENT_CLASSES = ("angle", "trig_product", "euler_rate", "omega", "toe", "force")


@dataclass(frozen=True)
class SegmentationSpec:
    """Segmentation of every nonconvex variable class.

    Defaults are the full-scale table: angles [-pi/2, pi/2] x 4, bilinear
    trig terms [-1, 1] x 4, Euler rates and angular velocity [-10, 10] x 16,
    toe moment arms [-0.08, 0.08] m x 4 and forces [-15, 15] N x 16.
    """

    angle: SegmentClass = field(default_factory=lambda: _cls(-math.pi / 2, math.pi / 2, 4))
    trig_product: SegmentClass = field(default_factory=lambda: _cls(-1.0, 1.0, 4))
    euler_rate: SegmentClass = field(default_factory=lambda: _cls(-10.0, 10.0, 16))
    omega: SegmentClass = field(default_factory=lambda: _cls(-10.0, 10.0, 16))
    toe: SegmentClass = field(default_factory=lambda: _cls(-0.08, 0.08, 4))
    force: SegmentClass = field(default_factory=lambda: _cls(-15.0, 15.0, 16))

    @classmethod
    def reference(cls) -> "SegmentationSpec":
        return cls()

    @classmethod
    def desk(cls) -> "SegmentationSpec":
        """Single region everywhere: no selector binaries, gait and terrain binaries only."""
        base = cls()
        return cls(**{name: replace(getattr(base, name), regions=1) for name in SEGMENT_CLASSES})

    def doubled(self) -> "SegmentationSpec":
        return SegmentationSpec(**{name: getattr(self, name).doubled() for name in SEGMENT_CLASSES})

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name).to_dict() for name in SEGMENT_CLASSES}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "SegmentationSpec":
        base = cls()
        return cls(**{
            name: SegmentClass.from_dict(doc[name]) if name in doc else getattr(base, name)
            for name in SEGMENT_CLASSES
        })


# ---------------------------------------------------------------------------
# trigonometric bands


@dataclass(frozen=True)
class TrigBand:
    """``lower <= fn(t) - slope * t <= upper`` on one angle region."""

    slope: float
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _trig(fn: str):
    if fn == "sin":
        return math.sin
    if fn == "cos":
        return math.cos
    raise ValueError(f"unknown trigonometric function {fn!r}")


def trig_band(fn: str, lo: float, hi: float) -> TrigBand:
    """Secant-slope band enclosing ``fn`` on ``[lo, hi]``.

    The band's offsets are the extreme deviations of ``fn`` from its secant;
    they occur at the endpoints or where ``fn'`` equals the secant slope.
    """
    f = _trig(fn)
    slope = (f(hi) - f(lo)) / (hi - lo)
    base = f(lo) - slope * lo
    candidates = [lo, hi]
    if abs(slope) <= 1.0:
        if fn == "sin":
            roots = [math.acos(slope), -math.acos(slope)]
        else:
            roots = [-math.asin(slope), math.pi + math.asin(slope)]
        for root in roots:
            for k in (-1, 0, 1):
                t = root + 2.0 * math.pi * k
                if lo <= t <= hi:
                    candidates.append(t)
    dev = [f(t) - base - slope * t for t in candidates]
    return TrigBand(slope, base + min(dev), base + max(dev))


def trig_range(fn: str, lo: float, hi: float) -> Region:
    """Exact range of ``fn`` over ``[lo, hi]``."""
    f = _trig(fn)
    values = [f(lo), f(hi)]
    offset = math.pi / 2 if fn == "sin" else 0.0
    k = math.ceil((lo - offset) / math.pi)
    while offset + k * math.pi <= hi:
        values.append(f(offset + k * math.pi))
        k += 1
    return (min(values), max(values))


# ---------------------------------------------------------------------------
# McCormick rows


def _mccormick_table(xr: Region, yr: Region) -> List[Tuple[float, float, float, float]]:
    """Rows ``cx*x + cy*y + cz*z <= rhs`` of the four-inequality envelope of ``z = x*y``."""
    xl, xu = xr
    yl, yu = yr
    return [
        (yl, xl, -1.0, xl * yl),
        (yu, xu, -1.0, xu * yu),
        (-yl, -xu, 1.0, -xu * yl),
        (-yu, -xl, 1.0, -xl * yu),
    ]


def mccormick(x: Interval, y: Interval) -> LinearConstraintSet:
    """The four envelope rows of ``z = x*y`` over columns ``(x, y, z)``."""
    table = _mccormick_table(x.astuple(), y.astuple())
    a = np.array([[cx, cy, cz] for cx, cy, cz, _ in table])
    u = np.array([rhs for *_, rhs in table])
    return LinearConstraintSet(a, np.full(4, -np.inf), u)


def mccormick_bounds(x: float, y: float, xr: Region, yr: Region) -> Region:
    """Feasible ``z`` interval of the envelope at the point ``(x, y)``."""
    xl, xu = xr
    yl, yu = yr
    lo = max(xl * y + x * yl - xl * yl, xu * y + x * yu - xu * yu)
    hi = min(xu * y + x * yl - xu * yl, xl * y + x * yu - xl * yu)
    return lo, hi


def _hull(regions: Sequence[Region]) -> Region:
    return (min(r[0] for r in regions), max(r[1] for r in regions))


def _region_product(xr: Region, yr: Region) -> Region:
    corners = [xr[0] * yr[0], xr[0] * yr[1], xr[1] * yr[0], xr[1] * yr[1]]
    return (min(corners), max(corners))


@dataclass(frozen=True)
class SegVar:
    """A factor of a nonconvex term: expression, regions and selector group."""

    name: str
    expr: Affine
    regions: Tuple[Region, ...]
    group: Optional[SelectorSpec] = None

    @classmethod
    def constant(cls, value: float) -> "SegVar":
        return cls("", Affine.constant(value), ((value, value),))

    @property
    def is_constant(self) -> bool:
        return self.expr.is_constant

    @property
    def value(self) -> float:
        return self.expr.const

    @property
    def full(self) -> Region:
        return _hull(self.regions)

    def deact(self, k: int, index: Dict[str, int]) -> Affine:
        if self.group is None:
            return Affine()
        return self.group.deactivation(k, index)

    def affine_map(self, k: float, c: float) -> "SegVar":
        """The factor ``k * self + c``, sharing the selector group."""
        regions = tuple(
            (k * lo + c, k * hi + c) if k >= 0 else (k * hi + c, k * lo + c)
            for lo, hi in self.regions
        )
        return SegVar(self.name, self.expr.scale(k) + c, regions, self.group)


class EnvelopeBuilder:
    """Adds segmented factors, products and trig values to a :class:`ModelBuilder`.

    Factor groups (``binary``/``onehot``) are created the first time a column
    is used as a factor and cached per column. Pair groups are created per
    product.
    """

    def __init__(self, mb: ModelBuilder, encoding: str = "pair") -> None:
        if encoding not in ENCODINGS:
            raise ValueError(f"unknown selector encoding {encoding!r}")
        self.mb = mb
        self.encoding = encoding
        self._vars: Dict[int, SegVar] = {}

    def _selector(self, name: str, n_regions: int) -> SelectorSpec:
        mb = self.mb
        encoding = "binary" if self.encoding == "binary" else "onehot"
        n_bits = SelectorSpec.bit_count(n_regions, encoding)
        tag = "l" if encoding == "onehot" else "b"
        bits = tuple(f"sel[{name}].{tag}{j}" for j in range(n_bits))
        cols = [mb.binary_var(b) for b in bits]
        group = SelectorSpec(f"sel[{name}]", bits, n_regions, encoding)
        if encoding == "onehot":
            mb.row(Affine(0.0, {c: 1.0 for c in cols}), 1.0, 1.0, "onehot")
            mb.exactly_one.append(ExactlyOne(group.name, tuple((b, True) for b in bits)))
        elif n_regions < 2 ** n_bits:
            mb.row(Affine(0.0, {c: float(2 ** j) for j, c in enumerate(cols)}),
                   -np.inf, float(n_regions - 1), "selector_valid")
        mb.selector_groups.append(group)
        return group

    def _select(self, sv: SegVar) -> SegVar:
        """``sv`` with a selector group of its own; a no-op for grouped or single-region factors."""
        if sv.group is not None or len(sv.regions) < 2:
            return sv
        col, regions = _column_regions(sv)
        plain = sv.expr.const == 0.0 and dict(sv.expr.terms) == {col: 1.0}
        cached = self._vars.get(col)
        if plain and cached is not None and cached.group is not None:
            return cached
        mb = self.mb
        group = self._selector(sv.name, len(sv.regions))
        for k, (lo, hi) in enumerate(sv.regions):
            d = group.deactivation(k, mb.index)
            mb.lower_unless(sv.expr, lo, d, "membership")
            mb.upper_unless(sv.expr, hi, d, "membership")
        mb.segmented.append(SegmentedColumn((col,), (regions,), group.name))
        selected = replace(sv, group=group)
        if plain:
            self._vars[col] = selected
        return selected

    def segment(self, col: int, cls: SegmentClass, name: Optional[str] = None) -> SegVar:
        if col in self._vars:
            return self._vars[col]
        mb = self.mb
        if mb.pinned(col):
            sv = SegVar.constant(mb.lb[col])
            self._vars[col] = sv
            return sv
        name = name or mb.names[col]
        regions = []
        for lo, hi in cls.intervals():
            c_lo, c_hi = max(lo, mb.lb[col]), min(hi, mb.ub[col])
            regions.append((c_lo, c_hi) if c_hi - c_lo >= DEGENERATE_WIDTH else (lo, hi))
        if len(regions) == 1:
            mb.tighten(col, *regions[0])
        else:
            mb.tighten(col, *_hull(regions))
        sv = SegVar(name, Affine.column(col), tuple(regions))
        if self.encoding != "pair":
            sv = self._select(sv)
        self._vars[col] = sv
        return sv

    def as_factor(self, name: str, e: Affine, cls: SegmentClass, tag: str = "aux_def") -> SegVar:
        """Segment an affine expression, introducing a defining column when needed."""
        if e.is_constant:
            return SegVar.constant(e.const)
        if len(e.terms) == 1:
            ((col, coef),) = e.terms.items()
            if col in self._vars:
                return self._vars[col].affine_map(coef, e.const)
            if coef == 1.0 and e.const == 0.0:
                return self.segment(col, cls, name)
        lo, hi = self.mb.bounds(e)
        col = self.mb.var(name, lo, hi)
        self.mb.derive(col, "affine", e)
        self.mb.equal(Affine.column(col), e, tag)
        return self.segment(col, cls, name)

    def trig(self, angle: SegVar, fn: str, name: str) -> SegVar:
        """``fn(angle)`` as a column bounded by one secant band per angle region."""
        if angle.is_constant:
            return SegVar.constant(_trig(fn)(angle.value))
        angle = self._select(angle)
        mb = self.mb
        ranges = tuple(trig_range(fn, lo, hi) for lo, hi in angle.regions)
        lo, hi = _hull(ranges)
        col = mb.var(name, lo, hi)
        mb.derive(col, fn, angle.expr)
        t = Affine.column(col)
        for k, (a, b) in enumerate(angle.regions):
            band = trig_band(fn, a, b)
            d = angle.deact(k, mb.index)
            e = t - angle.expr.scale(band.slope)
            mb.upper_unless(e, band.upper, d, "trig_band")
            mb.lower_unless(e, band.lower, d, "trig_band")
        sv = SegVar(name, t, ranges, angle.group)
        self._vars[col] = sv
        return sv

    def product(self, x: SegVar, y: SegVar, name: str, tag: str = "mccormick") -> Affine:
        """Expression for ``x*y``: scaled factor when either is constant, else an envelope column."""
        if x.is_constant:
            return y.expr.scale(x.value)
        if y.is_constant:
            return x.expr.scale(y.value)
        mb = self.mb
        lo, hi = _region_product(x.full, y.full)
        col = mb.var(name, lo, hi)
        mb.derive(col, "product", x.expr, y.expr)
        z = Affine.column(col)
        shared = x.group is not None and y.group is not None and x.group.name == y.group.name
        if shared:
            for a in range(len(x.regions)):
                _add_mccormick(mb, x.expr, y.expr, z, x.regions[a], y.regions[a],
                               x.deact(a, mb.index), tag)
        elif self.encoding == "pair" and len(x.regions) * len(y.regions) > 1:
            self._pair_rows(x, y, z, name, tag)
        else:
            for a, b in itertools.product(range(len(x.regions)), range(len(y.regions))):
                d = x.deact(a, mb.index) + y.deact(b, mb.index)
                _add_mccormick(mb, x.expr, y.expr, z, x.regions[a], y.regions[b], d, tag)
        return z

    def _pair_rows(self, x: SegVar, y: SegVar, z: Affine, name: str, tag: str) -> None:
        """One binary per region pair: membership and McCormick rows for each cell."""
        mb = self.mb
        n_y = len(y.regions)
        group = self._selector(name, len(x.regions) * n_y)
        for a, b in itertools.product(range(len(x.regions)), range(n_y)):
            d = group.deactivation(a * n_y + b, mb.index)
            for sv, (lo, hi) in ((x, x.regions[a]), (y, y.regions[b])):
                if len(sv.regions) > 1:
                    mb.lower_unless(sv.expr, lo, d, "membership")
                    mb.upper_unless(sv.expr, hi, d, "membership")
            _add_mccormick(mb, x.expr, y.expr, z, x.regions[a], y.regions[b], d, tag)
        (cx, rx), (cy, ry) = _column_regions(x), _column_regions(y)
        mb.segmented.append(SegmentedColumn((cx, cy), (rx, ry), group.name))


def _column_regions(sv: SegVar) -> Tuple[int, Tuple[Region, ...]]:
    """The column behind a single-column factor and its regions mapped back onto it."""
    ((col, k),) = sv.expr.terms.items()
    c = sv.expr.const
    regions = tuple((min((lo - c) / k, (hi - c) / k), max((lo - c) / k, (hi - c) / k))
                    for lo, hi in sv.regions)
    return col, regions


def _add_mccormick(mb: ModelBuilder, x: Affine, y: Affine, z: Affine,
                   xr: Region, yr: Region, deact: Affine, tag: str) -> None:
    for cx, cy, cz, rhs in _mccormick_table(xr, yr):
        mb.upper_unless(x.scale(cx) + y.scale(cy) + z.scale(cz), rhs, deact, tag)


# ---------------------------------------------------------------------------
# standalone envelopes


def segmented_envelope(x_class: SegmentClass, y_class: SegmentClass,
                       encoding: str = "pair") -> MixedIntegerQP:
    """Envelope of ``z = x*y`` over columns ``x, y, z`` with region selectors.

    ``pair`` uses one selector per (x-region, y-region) pair with an
    exactly-one row and four membership rows per pair; ``binary`` and
    ``onehot`` select each factor's region independently.
    """
    mb = ModelBuilder()
    xc = mb.var("x", x_class.range.lo, x_class.range.hi)
    yc = mb.var("y", y_class.range.lo, y_class.range.hi)
    env = EnvelopeBuilder(mb, encoding)
    env.product(env.segment(xc, x_class, "x"), env.segment(yc, y_class, "y"), "z")
    return mb.build()


def trilinear_envelope(x_class: SegmentClass, y_class: SegmentClass, w_class: SegmentClass,
                       encoding: str = "pair",
                       a12_regions: Optional[int] = None) -> MixedIntegerQP:
    """Chained envelopes for ``a = x*y*w`` through the auxiliary ``a12 = x*y``.

    ``a12`` spans the interval product of the x and y ranges and is split
    into ``a12_regions`` regions (default: the larger of the two counts).
    """
    mb = ModelBuilder()
    env = EnvelopeBuilder(mb, encoding)
    sx = env.segment(mb.var("x", x_class.range.lo, x_class.range.hi), x_class, "x")
    sy = env.segment(mb.var("y", y_class.range.lo, y_class.range.hi), y_class, "y")
    sw = env.segment(mb.var("w", w_class.range.lo, w_class.range.hi), w_class, "w")
    a12 = env.product(sx, sy, "a12")
    span = x_class.range * y_class.range
    n12 = a12_regions or max(x_class.regions, y_class.regions)
    s12 = env.as_factor("a12", a12, SegmentClass(span, n12))
    env.product(s12, sw, "a")
    return mb.build()


def piecewise_trig(angle_class: SegmentClass, encoding: str = "pair") -> MixedIntegerQP:
    """Columns ``theta, sin, cos`` with one secant band per angle region."""
    if angle_class.range.lo < -math.pi / 2 - 1e-12 or angle_class.range.hi > math.pi / 2 + 1e-12:
        raise ValueError("angle segmentation range must lie within [-pi/2, pi/2]")
    mb = ModelBuilder()
    env = EnvelopeBuilder(mb, encoding)
    theta = env.segment(mb.var("theta", angle_class.range.lo, angle_class.range.hi),
                        angle_class, "theta")
    env.trig(theta, "sin", "sin")
    env.trig(theta, "cos", "cos")
    return mb.build()


def approx_error(x_approx: float, x_true: float) -> float:
    """Symmetric relative error ``|a - t| / max(|a|, |t|)``; 0 when both are 0."""
    scale = max(abs(x_approx), abs(x_true))
    if scale == 0.0:
        return 0.0
    return abs(x_approx - x_true) / scale
