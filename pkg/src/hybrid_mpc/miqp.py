"""Standard-form mixed-integer QP container, builder and integer fixing.

A :class:`MixedIntegerQP` is::

    minimise    1/2 x'Px + q'x + c0
    subject to  l <= A x <= u,    lb <= x <= ub,    x_j in {0, 1} for j in binary_idx

Variable bounds are kept apart from the rows of ``A`` so branching only
touches ``lb``/``ub``. :meth:`MixedIntegerQP.qp_data` stacks them into the
single two-sided form the QP solver consumes.

Selector groups, exactly-one structures and derived columns are carried
as metadata so assignments can be validated, propagated and lifted
without re-running the builder.
"""

from __future__ import annotations

import json
import logging
import math
import pathlib
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

MIQP_SCHEMA_VERSION = 1
BIG_M_SLACK = 1.1
INTEGRALITY_TOL = 1e-6


class InconsistentAssignment(ValueError):
    """An integer assignment is incomplete or violates an exactly-one structure."""


class DimensionMismatch(ValueError):
    """Problem data have inconsistent shapes."""


# ---------------------------------------------------------------------------
# affine expressions


@dataclass(frozen=True)
class Affine:
    """``const + sum(coef * x[col])``; columns are builder indices."""

    const: float = 0.0
    terms: Mapping[int, float] = field(default_factory=dict)

    @classmethod
    def constant(cls, value: float) -> "Affine":
        return cls(float(value), {})

    @classmethod
    def column(cls, col: int, coef: float = 1.0) -> "Affine":
        return cls(0.0, {col: float(coef)})

    @property
    def is_constant(self) -> bool:
        return not self.terms

    def scale(self, k: float) -> "Affine":
        if k == 0.0:
            return Affine()
        return Affine(self.const * k, {c: v * k for c, v in self.terms.items()})

    def __add__(self, other: "Affine | float") -> "Affine":
        if not isinstance(other, Affine):
            return Affine(self.const + float(other), dict(self.terms))
        terms = dict(self.terms)
        for c, v in other.terms.items():
            total = terms.get(c, 0.0) + v
            if total == 0.0:
                terms.pop(c, None)
            else:
                terms[c] = total
        return Affine(self.const + other.const, terms)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return self.scale(-1.0)

    def __sub__(self, other: "Affine | float") -> "Affine":
        if not isinstance(other, Affine):
            return self + (-float(other))
        return self + other.scale(-1.0)

    def evaluate(self, x: np.ndarray) -> float:
        return self.const + sum(v * float(x[c]) for c, v in self.terms.items())


def affine_sum(items: Iterable[Affine]) -> Affine:
    total = Affine()
    for item in items:
        total = total + item
    return total


# ---------------------------------------------------------------------------
# metadata


@dataclass(frozen=True)
class SelectorSpec:
    """Binaries choosing one region of a segmented quantity.

    ``binary`` encoding uses ceil(log2 R) bits with region ``k`` coded as
    the binary digits of ``k``; ``onehot`` uses one bit per region. A group
    of one region has no bits and always selects region 0.
    """

    name: str
    bits: Tuple[str, ...]
    n_regions: int
    encoding: str = "binary"

    @staticmethod
    def bit_count(n_regions: int, encoding: str = "binary") -> int:
        if n_regions <= 1:
            return 0
        if encoding == "onehot":
            return n_regions
        return int(math.ceil(math.log2(n_regions)))

    def encode(self, region: int) -> Dict[str, int]:
        if not 0 <= region < self.n_regions:
            raise ValueError(f"{self.name}: region {region} outside [0, {self.n_regions})")
        if self.encoding == "onehot":
            return {b: int(j == region) for j, b in enumerate(self.bits)}
        return {b: (region >> j) & 1 for j, b in enumerate(self.bits)}

    def decode(self, values: Mapping[str, int]) -> Optional[int]:
        """Selected region, or None when the bits do not name a valid region."""
        if not self.bits:
            return 0
        bits = [int(values[b]) for b in self.bits]
        if self.encoding == "onehot":
            return bits.index(1) if sum(bits) == 1 else None
        region = sum(b << j for j, b in enumerate(bits))
        return region if region < self.n_regions else None

    def deactivation(self, region: int, index: Mapping[str, int]) -> Affine:
        """Affine expression that is 0 when ``region`` is selected and >= 1 otherwise."""
        if not self.bits:
            return Affine()
        if self.encoding == "onehot":
            return Affine(1.0, {index[self.bits[region]]: -1.0})
        const = 0.0
        terms: Dict[int, float] = {}
        for j, b in enumerate(self.bits):
            if (region >> j) & 1:
                const += 1.0
                terms[index[b]] = -1.0
            else:
                terms[index[b]] = 1.0
        return Affine(const, terms)


@dataclass(frozen=True)
class ExactlyOne:
    """Exactly one literal is true; a literal is ``(binary name, positive)``.

    The contact structure ``sum_s z_s + (1 - c) = 1`` is the literal set
    ``[(z_1, True), ..., (z_S, True), (c, False)]``.
    """

    name: str
    literals: Tuple[Tuple[str, bool], ...]

    def truth(self, values: Mapping[str, int]) -> List[Optional[bool]]:
        out: List[Optional[bool]] = []
        for bit, positive in self.literals:
            v = values.get(bit)
            out.append(None if v is None else (bool(v) if positive else not bool(v)))
        return out


@dataclass(frozen=True)
class Derived:
    """Column whose exact value is a function of earlier columns.

    ``kind`` is ``"product"`` (``x * y`` of the two factor expressions),
    ``"affine"`` (value of ``factors[0]``), ``"sin"``/``"cos"`` of
    ``factors[0]``, or ``"gated"`` (``factors[0]`` when both contact flags
    ``factors[1]`` and ``factors[2]`` are set, else 0).
    """

    col: int
    kind: str
    factors: Tuple[Affine, ...]

    def value(self, x: np.ndarray) -> float:
        vals = [f.evaluate(x) for f in self.factors]
        if self.kind == "product":
            return vals[0] * vals[1]
        if self.kind == "affine":
            return vals[0]
        if self.kind == "sin":
            return math.sin(vals[0])
        if self.kind == "cos":
            return math.cos(vals[0])
        if self.kind == "gated":
            return vals[0] if vals[1] > 0.5 and vals[2] > 0.5 else 0.0
        raise ValueError(f"unknown derived kind {self.kind!r}")


@dataclass(frozen=True)
class SegmentedColumn:
    """Columns whose joint region is chosen by one selector group.

    A single column uses its own region list; a pair group (one selector
    per region pair) lists both columns and numbers pair ``(a, b)`` as
    ``a * len(regions[1]) + b``.
    """

    cols: Tuple[int, ...]
    regions: Tuple[Tuple[Tuple[float, float], ...], ...]
    selector: str

    def region_of(self, x: np.ndarray, tol: float = 1e-9) -> int:
        index = 0
        for col, regs in zip(self.cols, self.regions):
            v = float(x[col])
            hit = next((k for k, (lo, hi) in enumerate(regs) if lo - tol <= v <= hi + tol), None)
            if hit is None:
                hit = int(np.argmin([min(abs(v - lo), abs(v - hi)) for lo, hi in regs]))
            index = index * len(regs) + hit
        return index


# ---------------------------------------------------------------------------
# constraint containers


@dataclass
class LinearConstraintSet:
    """Two-sided rows ``l <= A x <= u``; equality rows have ``l == u``."""

    A: sp.csr_matrix
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self) -> None:
        self.A = sp.csr_matrix(self.A)
        self.l = np.asarray(self.l, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.A.shape[0] != self.l.size or self.l.size != self.u.size:
            raise DimensionMismatch(
                f"A has {self.A.shape[0]} rows, l has {self.l.size}, u has {self.u.size}"
            )
        if self.A.nnz and not np.all(np.isfinite(self.A.data)):
            raise ValueError("constraint matrix has non-finite entries")

    @property
    def n_rows(self) -> int:
        return int(self.A.shape[0])

    def violation(self, x: np.ndarray) -> np.ndarray:
        ax = self.A @ x
        return np.maximum(self.l - ax, 0.0) + np.maximum(ax - self.u, 0.0)

    def equality_mask(self) -> np.ndarray:
        return self.l == self.u


@dataclass
class MixedIntegerQP:
    P: sp.csc_matrix
    q: np.ndarray
    constraints: LinearConstraintSet
    lb: np.ndarray
    ub: np.ndarray
    binary_idx: np.ndarray
    var_names: Dict[str, int]
    c0: float = 0.0
    row_tags: Tuple[str, ...] = ()
    selector_groups: Tuple[SelectorSpec, ...] = ()
    exactly_one: Tuple[ExactlyOne, ...] = ()
    derived: Tuple[Derived, ...] = ()
    segmented: Tuple[SegmentedColumn, ...] = ()
    fixed: Dict[str, int] = field(default_factory=dict)
    source_columns: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        n = self.q.size
        if self.P.shape != (n, n) or self.constraints.A.shape[1] != n:
            raise DimensionMismatch(
                f"P {self.P.shape}, A {self.constraints.A.shape} and q ({n}) disagree"
            )
        if self.lb.size != n or self.ub.size != n:
            raise DimensionMismatch("variable bounds must have one entry per column")
        for j in self.binary_idx:
            if self.lb[j] < 0.0 or self.ub[j] > 1.0:
                raise ValueError(f"binary column {self.names[j]} has bounds outside [0, 1]")

    @property
    def n(self) -> int:
        return int(self.q.size)

    @property
    def m(self) -> int:
        return self.constraints.n_rows

    @property
    def names(self) -> List[str]:
        out = [""] * self.n
        for name, j in self.var_names.items():
            out[j] = name
        return out

    @property
    def binary_names(self) -> List[str]:
        names = self.names
        return [names[j] for j in self.binary_idx]

    def col(self, name: str) -> int:
        return self.var_names[name]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.c0)

    def max_violation(self, x: np.ndarray, equality_only: bool = False) -> float:
        viol = self.constraints.violation(x)
        if equality_only:
            viol = viol[self.constraints.equality_mask()]
        bounds = np.maximum(self.lb - x, 0.0) + np.maximum(x - self.ub, 0.0)
        if equality_only:
            bounds = bounds[self.lb == self.ub]
        return float(max(viol.max(initial=0.0), bounds.max(initial=0.0)))

    def violations_by_tag(self, x: np.ndarray, tol: float = 1e-9) -> Dict[str, int]:
        viol = self.constraints.violation(x)
        out: Dict[str, int] = {}
        for i in np.flatnonzero(viol > tol):
            tag = self.row_tags[i] if self.row_tags else "row"
            out[tag] = out.get(tag, 0) + 1
        return out

    def complete_primal(self, x: np.ndarray) -> np.ndarray:
        """Fill derived columns and selector bits from the model columns already set in ``x``."""
        out = np.array(x, dtype=float)
        for d in self.derived:
            out[d.col] = d.value(out)
        for name, bit in self.select_regions(out).items():
            out[self.var_names[name]] = bit
        return out

    def select_regions(self, x: np.ndarray) -> Dict[str, int]:
        """Selector bits naming the region each segmented column of ``x`` lies in."""
        groups = {g.name: g for g in self.selector_groups}
        bits: Dict[str, int] = {}
        for seg in self.segmented:
            bits.update(groups[seg.selector].encode(seg.region_of(x)))
        return bits

    def bounded_columns(self) -> np.ndarray:
        """Columns that get an explicit bound row in :meth:`qp_data`."""
        is_bin = np.zeros(self.n, dtype=bool)
        is_bin[self.binary_idx] = True
        return np.flatnonzero(np.isfinite(self.lb) | np.isfinite(self.ub) | is_bin)

    def qp_data(
        self,
        lb: Optional[np.ndarray] = None,
        ub: Optional[np.ndarray] = None,
    ) -> Tuple[sp.csc_matrix, np.ndarray, sp.csc_matrix, np.ndarray, np.ndarray]:
        """``(P, q, A, l, u)`` with variable bounds appended as identity rows."""
        lb = self.lb if lb is None else lb
        ub = self.ub if ub is None else ub
        cols = self.bounded_columns()
        eye = sp.csr_matrix(
            (np.ones(cols.size), (np.arange(cols.size), cols)), shape=(cols.size, self.n)
        )
        a = sp.vstack([self.constraints.A, eye], format="csc")
        l_full = np.concatenate([self.constraints.l, lb[cols]])
        u_full = np.concatenate([self.constraints.u, ub[cols]])
        return self.P, self.q, a, l_full, u_full

    def expand(self, x: np.ndarray, n_full: int) -> np.ndarray:
        """Map a fixed-integer solution back onto the columns of the source problem."""
        if self.source_columns is None:
            return np.asarray(x, dtype=float)
        out = np.zeros(n_full)
        out[self.source_columns] = x
        return out

    def summary(self) -> Dict[str, Any]:
        tags: Dict[str, int] = {}
        for t in self.row_tags:
            tags[t] = tags.get(t, 0) + 1
        return {
            "binaries": int(self.binary_idx.size),
            "continuous": int(self.n - self.binary_idx.size),
            "constraints": self.m,
            "rows_by_tag": dict(sorted(tags.items())),
        }

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> Dict[str, Any]:
        p = sp.coo_matrix(self.P)
        a = sp.coo_matrix(self.constraints.A)
        return {
            "schema_version": MIQP_SCHEMA_VERSION,
            "n": self.n,
            "m": self.m,
            "P": {"i": p.row.tolist(), "j": p.col.tolist(), "v": p.data.tolist()},
            "q": self.q.tolist(),
            "c0": self.c0,
            "A": {"i": a.row.tolist(), "j": a.col.tolist(), "v": a.data.tolist()},
            "l": [_finite_or_none(v) for v in self.constraints.l],
            "u": [_finite_or_none(v) for v in self.constraints.u],
            "lb": [_finite_or_none(v) for v in self.lb],
            "ub": [_finite_or_none(v) for v in self.ub],
            "binary_idx": [int(j) for j in self.binary_idx],
            "var_names": self.names,
            "row_tags": list(self.row_tags),
            "selector_groups": [
                {"name": g.name, "bits": list(g.bits), "n_regions": g.n_regions,
                 "encoding": g.encoding}
                for g in self.selector_groups
            ],
            "exactly_one": [
                {"name": e.name, "literals": [[b, pos] for b, pos in e.literals]}
                for e in self.exactly_one
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: Dict[str, Any]) -> "MixedIntegerQP":
        n, m = int(doc["n"]), int(doc["m"])
        p = sp.coo_matrix((doc["P"]["v"], (doc["P"]["i"], doc["P"]["j"])), shape=(n, n))
        a = sp.coo_matrix((doc["A"]["v"], (doc["A"]["i"], doc["A"]["j"])), shape=(m, n))
        return cls(
            P=p.tocsc(),
            q=np.asarray(doc["q"], dtype=float),
            constraints=LinearConstraintSet(
                a.tocsr(), _none_to_inf(doc["l"], -1.0), _none_to_inf(doc["u"], 1.0)
            ),
            lb=_none_to_inf(doc["lb"], -1.0),
            ub=_none_to_inf(doc["ub"], 1.0),
            binary_idx=np.asarray(doc["binary_idx"], dtype=int),
            var_names={name: j for j, name in enumerate(doc["var_names"])},
            c0=float(doc.get("c0", 0.0)),
            row_tags=tuple(doc.get("row_tags", ())),
            selector_groups=tuple(
                SelectorSpec(g["name"], tuple(g["bits"]), int(g["n_regions"]), g["encoding"])
                for g in doc.get("selector_groups", ())
            ),
            exactly_one=tuple(
                ExactlyOne(e["name"], tuple((b, bool(pos)) for b, pos in e["literals"]))
                for e in doc.get("exactly_one", ())
            ),
        )

    def save(self, path: pathlib.Path) -> None:
        pathlib.Path(path).write_text(json.dumps(self.to_json_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: pathlib.Path) -> "MixedIntegerQP":
        from hybrid_mpc.schema_check import validate_document

        doc = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
        validate_document(doc, "miqp.schema.json")
        return cls.from_json_dict(doc)


def _finite_or_none(v: float) -> Optional[float]:
    return float(v) if math.isfinite(v) else None


def _none_to_inf(values: Sequence[Optional[float]], sign: float) -> np.ndarray:
    return np.array([sign * np.inf if v is None else float(v) for v in values], dtype=float)


# ---------------------------------------------------------------------------
# builder


class ModelBuilder:
    """Accumulates named columns, tagged rows and a quadratic objective.

    Columns whose bounds coincide are *pinned*: :meth:`expr` returns them
    as constants so products with them stay linear.
    """

    def __init__(self) -> None:
        self.names: List[str] = []
        self.index: Dict[str, int] = {}
        self.lb: List[float] = []
        self.ub: List[float] = []
        self.binary: List[int] = []
        self._row_cols: List[List[int]] = []
        self._row_vals: List[List[float]] = []
        self.row_l: List[float] = []
        self.row_u: List[float] = []
        self.row_tags: List[str] = []
        self._p: Dict[Tuple[int, int], float] = {}
        self._q: Dict[int, float] = {}
        self.c0 = 0.0
        self.selector_groups: List[SelectorSpec] = []
        self.exactly_one: List[ExactlyOne] = []
        self.derived: List[Derived] = []
        self.segmented: List[SegmentedColumn] = []

    # -- columns -------------------------------------------------------------

    def var(self, name: str, lo: float, hi: float, binary: bool = False) -> int:
        if name in self.index:
            raise ValueError(f"duplicate column name {name!r}")
        if lo > hi:
            raise ValueError(f"column {name!r} has empty bounds [{lo}, {hi}]")
        j = len(self.names)
        self.names.append(name)
        self.index[name] = j
        self.lb.append(float(lo))
        self.ub.append(float(hi))
        if binary:
            self.binary.append(j)
        return j

    def binary_var(self, name: str) -> int:
        return self.var(name, 0.0, 1.0, binary=True)

    def tighten(self, col: int, lo: float, hi: float) -> None:
        new_lo, new_hi = max(self.lb[col], lo), min(self.ub[col], hi)
        if new_lo > new_hi:
            raise ValueError(f"column {self.names[col]!r}: [{lo}, {hi}] misses its bounds")
        self.lb[col], self.ub[col] = new_lo, new_hi

    def pinned(self, col: int) -> bool:
        return self.lb[col] == self.ub[col]

    def expr(self, col: int) -> Affine:
        if self.pinned(col):
            return Affine.constant(self.lb[col])
        return Affine.column(col)

    def bounds(self, e: Affine) -> Tuple[float, float]:
        """Interval of ``e`` over the column bounds."""
        lo = hi = e.const
        for c, v in e.terms.items():
            a, b = v * self.lb[c], v * self.ub[c]
            lo += min(a, b)
            hi += max(a, b)
        return lo, hi

    def derive(self, col: int, kind: str, *factors: Affine) -> None:
        self.derived.append(Derived(col, kind, tuple(factors)))

    # -- rows ----------------------------------------------------------------

    def row(self, e: Affine, lo: float, hi: float, tag: str) -> int:
        """Append ``lo <= e <= hi``; returns the row index, or -1 for a satisfied constant row."""
        cols = [c for c, v in e.terms.items() if v != 0.0]
        vals = [e.terms[c] for c in cols]
        if not cols:
            tol = 1e-9 * (1.0 + abs(e.const))
            if lo - tol <= e.const <= hi + tol:
                return -1
            logger.debug("constant row %s violated: %g not in [%g, %g]", tag, e.const, lo, hi)
        self._row_cols.append(cols)
        self._row_vals.append(vals)
        self.row_l.append(lo - e.const)
        self.row_u.append(hi - e.const)
        self.row_tags.append(tag)
        return len(self.row_tags) - 1

    def equal(self, lhs: Affine, rhs: Affine, tag: str) -> int:
        return self.row(lhs - rhs, 0.0, 0.0, tag)

    def upper_unless(self, e: Affine, upper: float, deact: Affine, tag: str) -> int:
        """``e <= upper`` whenever ``deact == 0``; relaxed by a per-row big-M otherwise."""
        _, e_hi = self.bounds(e)
        big_m = BIG_M_SLACK * max(0.0, e_hi - upper)
        return self.row(e - deact.scale(big_m), -np.inf, upper, tag)

    def lower_unless(self, e: Affine, lower: float, deact: Affine, tag: str) -> int:
        """``e >= lower`` whenever ``deact == 0``."""
        e_lo, _ = self.bounds(e)
        big_m = BIG_M_SLACK * max(0.0, lower - e_lo)
        return self.row(e + deact.scale(big_m), lower, np.inf, tag)

    # -- objective -------------------------------------------------------------

    def add_square(self, e: Affine, weight: float) -> None:
        """Add ``weight * e**2`` to the objective."""
        if weight == 0.0:
            return
        items = list(e.terms.items())
        for ci, vi in items:
            for cj, vj in items:
                key = (ci, cj)
                self._p[key] = self._p.get(key, 0.0) + 2.0 * weight * vi * vj
            self._q[ci] = self._q.get(ci, 0.0) + 2.0 * weight * e.const * vi
        self.c0 += weight * e.const * e.const

    def add_linear_cost(self, col: int, coef: float) -> None:
        self._q[col] = self._q.get(col, 0.0) + coef

    def add_quadratic_cost(self, ci: int, cj: int, coef: float) -> None:
        """Add ``coef`` to ``P[ci, cj]`` (and its mirror when off-diagonal)."""
        self._p[(ci, cj)] = self._p.get((ci, cj), 0.0) + coef
        if ci != cj:
            self._p[(cj, ci)] = self._p.get((cj, ci), 0.0) + coef

    # -- output ----------------------------------------------------------------

    def build(self) -> MixedIntegerQP:
        n, m = len(self.names), len(self.row_tags)
        indptr = np.zeros(m + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(c) for c in self._row_cols])
        indices = np.fromiter((c for cols in self._row_cols for c in cols), dtype=np.int64,
                              count=int(indptr[-1]))
        data = np.fromiter((v for vals in self._row_vals for v in vals), dtype=float,
                           count=int(indptr[-1]))
        a = sp.csr_matrix((data, indices, indptr), shape=(m, n))
        a.sum_duplicates()
        if self._p:
            keys = list(self._p)
            p = sp.coo_matrix(
                ([self._p[k] for k in keys], ([k[0] for k in keys], [k[1] for k in keys])),
                shape=(n, n),
            ).tocsc()
        else:
            p = sp.csc_matrix((n, n))
        q = np.zeros(n)
        for c, v in self._q.items():
            q[c] += v
        return MixedIntegerQP(
            P=p,
            q=q,
            constraints=LinearConstraintSet(a, np.array(self.row_l), np.array(self.row_u)),
            lb=np.array(self.lb, dtype=float),
            ub=np.array(self.ub, dtype=float),
            binary_idx=np.array(sorted(self.binary), dtype=int),
            var_names=dict(self.index),
            c0=self.c0,
            row_tags=tuple(self.row_tags),
            selector_groups=tuple(self.selector_groups),
            exactly_one=tuple(self.exactly_one),
            derived=tuple(self.derived),
            segmented=tuple(self.segmented),
        )


# ---------------------------------------------------------------------------
# integer assignments


@dataclass(frozen=True)
class IntegerAssignment:
    """0/1 values keyed by binary column name. May be partial (warm starts)."""

    values: Mapping[str, int]

    def __post_init__(self) -> None:
        bad = [k for k, v in self.values.items() if v not in (0, 1)]
        if bad:
            raise InconsistentAssignment(f"non-binary values for {bad[:5]}")

    def key(self) -> Tuple[Tuple[str, int], ...]:
        return tuple(sorted(self.values.items()))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, IntegerAssignment) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_solution(cls, miqp: MixedIntegerQP, x: np.ndarray) -> "IntegerAssignment":
        names = miqp.names
        return cls({names[j]: int(round(float(x[j]))) for j in miqp.binary_idx})

    def problems(self, miqp: MixedIntegerQP, partial: bool = False) -> List[str]:
        out: List[str] = []
        binaries = set(miqp.binary_names)
        unknown = sorted(set(self.values) - binaries)
        if unknown:
            out.append(f"unknown binaries {unknown[:5]}{' ...' if len(unknown) > 5 else ''}")
        if not partial:
            missing = sorted(binaries - set(self.values))
            if missing:
                out.append(f"unassigned binaries {missing[:5]}{' ...' if len(missing) > 5 else ''}")
        for group in miqp.exactly_one:
            truth = group.truth(self.values)
            n_true = sum(1 for t in truth if t)
            if n_true > 1 or (None not in truth and n_true != 1):
                out.append(f"{group.name}: {n_true} literals true, expected exactly one")
        for sel in miqp.selector_groups:
            if all(b in self.values for b in sel.bits) and sel.decode(self.values) is None:
                out.append(f"{sel.name}: bits select no valid region")
        return out

    def validate(self, miqp: MixedIntegerQP, partial: bool = False) -> None:
        problems = self.problems(miqp, partial=partial)
        if problems:
            raise InconsistentAssignment("; ".join(problems))

    def restricted(self, names: Iterable[str]) -> "IntegerAssignment":
        keep = set(names)
        return IntegerAssignment({k: v for k, v in self.values.items() if k in keep})

    def to_dict(self) -> Dict[str, int]:
        return dict(sorted(self.values.items()))


def fix_integers(miqp: MixedIntegerQP, assignment: IntegerAssignment) -> MixedIntegerQP:
    """Substitute every binary and drop the rows the substitution deactivates.

    Rows whose activity range over the remaining column bounds already lies
    within their shifted bounds are dropped; surviving big-M rows lose
    their binary terms and therefore appear at full strength.
    """
    assignment.validate(miqp)
    names = miqp.names
    b_idx = miqp.binary_idx
    is_bin = np.zeros(miqp.n, dtype=bool)
    is_bin[b_idx] = True
    cont = np.flatnonzero(~is_bin)
    b_val = np.array([assignment.values[names[j]] for j in b_idx], dtype=float)

    a = sp.csc_matrix(miqp.constraints.A)
    a_cont = a[:, cont].tocsr()
    a_cont.eliminate_zeros()
    shift = a[:, b_idx] @ b_val if b_idx.size else np.zeros(miqp.m)
    l_new = miqp.constraints.l - shift
    u_new = miqp.constraints.u - shift

    lb_c, ub_c = miqp.lb[cont], miqp.ub[cont]
    a_pos = a_cont.maximum(0.0)
    a_neg = a_cont.minimum(0.0)
    with np.errstate(invalid="ignore"):
        act_hi = _bounded_product(a_pos, ub_c) + _bounded_product(a_neg, lb_c)
        act_lo = _bounded_product(a_pos, lb_c) + _bounded_product(a_neg, ub_c)
    tol = 1e-9 * (1.0 + np.abs(np.where(np.isfinite(l_new), l_new, 0.0))
                  + np.abs(np.where(np.isfinite(u_new), u_new, 0.0)))
    implied = (act_lo >= l_new - tol) & (act_hi <= u_new + tol)
    keep = np.flatnonzero(~implied)

    p = sp.csc_matrix(miqp.P)
    p_cc = p[cont][:, cont]
    q_c = miqp.q[cont] + (p[cont][:, b_idx] @ b_val if b_idx.size else 0.0)
    c0 = miqp.c0 + float(miqp.q[b_idx] @ b_val) + 0.5 * float(b_val @ (p[b_idx][:, b_idx] @ b_val))

    cont_names = {names[j]: k for k, j in enumerate(cont)}
    tags = tuple(miqp.row_tags[i] for i in keep) if miqp.row_tags else ()
    logger.debug("fix_integers: kept %d of %d rows, %d continuous columns",
                 keep.size, miqp.m, cont.size)
    return MixedIntegerQP(
        P=p_cc.tocsc(),
        q=np.asarray(q_c, dtype=float),
        constraints=LinearConstraintSet(a_cont[keep], l_new[keep], u_new[keep]),
        lb=lb_c.copy(),
        ub=ub_c.copy(),
        binary_idx=np.array([], dtype=int),
        var_names=cont_names,
        c0=c0,
        row_tags=tags,
        fixed=assignment.to_dict(),
        source_columns=cont,
    )


def _bounded_product(a: sp.csr_matrix, bound: np.ndarray) -> np.ndarray:
    """``a @ bound`` where infinite bounds only meet stored nonzeros."""
    finite = np.where(np.isfinite(bound), bound, 0.0)
    out = np.asarray(a @ finite, dtype=float)
    inf_cols = np.flatnonzero(~np.isfinite(bound))
    if inf_cols.size:
        sub = a[:, inf_cols]
        contrib = sub.multiply(sp.csr_matrix(np.sign(bound[inf_cols]))).tocsr()
        pos = np.asarray((contrib > 0).sum(axis=1)).ravel()
        neg = np.asarray((contrib < 0).sum(axis=1)).ravel()
        out = out + np.where(pos > 0, np.inf, 0.0) + np.where(neg > 0, -np.inf, 0.0)
    return out
