"""Branch-and-bound over the binaries of a :class:`~hybrid_mpc.miqp.MixedIntegerQP`.

Nodes are ordered best-first on their parent's relaxation value; until the
first incumbent exists, and for a few levels after every new one, the
search dives into the child nearest the relaxed value. Each node fixes a
set of binaries (branching decisions plus what exactly-one propagation
implies), solves the continuous relaxation with :mod:`hybrid_mpc.qp_solver`
and either prunes, records an incumbent or branches.

Integral leaves are re-solved exactly with :func:`solve_fixed`, the same
evaluator :func:`enumerate_miqp` uses, so incumbent costs from the search
and from enumeration are comparable.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import json
import logging
import math
import pathlib
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from hybrid_mpc.miqp import (
    InconsistentAssignment,
    IntegerAssignment,
    MixedIntegerQP,
    fix_integers,
)
from hybrid_mpc.qp_solver import AdmmSolver, NumericalBreakdown, QpSettings, QpSolution, QpStatus, solve_qp
from hybrid_mpc.types import leg_names

logger = logging.getLogger(__name__)

MAX_ENUMERATION_BINARIES = 16
BRANCH_TOL = 1e-3


class InvalidWarmStart(ValueError):
    """A warm-start assignment names binaries the problem does not have, or contradicts itself."""


class TooManyBinaries(ValueError):
    pass


class BranchRule(str, enum.Enum):
    """Branching order; ``"PaperOrder"`` is another name for ``ContactFirst``."""

    MOST_FRACTIONAL = "MostFractional"
    CONTACT_FIRST = "ContactFirst"

    @classmethod
    def _missing_(cls, value: object) -> Optional["BranchRule"]:
        return cls.CONTACT_FIRST if value == "PaperOrder" else None


class MiqpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    GAP_REACHED = "GapReached"
    TIME_LIMIT = "TimeLimit"
    NODE_LIMIT = "NodeLimit"
    INFEASIBLE = "Infeasible"


class GaitStyle(str, enum.Enum):
    TROT = "Trot"
    ALL_STANCE = "AllStance"


@dataclass(frozen=True)
class BnbOptions:
    time_limit: Optional[float] = None
    gap_target: float = 0.0
    branch_rule: BranchRule = BranchRule.CONTACT_FIRST
    warm: Optional[IntegerAssignment] = None
    node_limit: int = 100_000
    workers: int = 1
    plunge_depth: int = 5
    qp: QpSettings = field(default_factory=QpSettings)
    log_path: Optional[pathlib.Path] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.gap_target < 1.0:
            raise ValueError("gap_target must lie in [0, 1)")
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError("time_limit must be > 0")
        if self.node_limit < 1 or self.workers < 1:
            raise ValueError("node_limit and workers must be >= 1")


def gap_ratio(z_p: Optional[float], z_d: float) -> float:
    """``|z_p - z_d| / |z_p|``; infinite without an incumbent, 0 when both are 0."""
    if z_p is None or not math.isfinite(z_p):
        return math.inf
    diff = abs(z_p - z_d)
    if abs(z_p) < 1e-12:
        return 0.0 if diff < 1e-12 else math.inf
    return diff / abs(z_p)


@dataclass
class MiqpResult:
    status: MiqpStatus
    x: Optional[np.ndarray] = None
    assignment: Optional[IntegerAssignment] = None
    z_p: Optional[float] = None
    z_d: float = -math.inf
    nodes: int = 0
    first_incumbent_node: Optional[int] = None
    warnings: List[str] = field(default_factory=list)
    log: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return gap_ratio(self.z_p, self.z_d)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "z_p": self.z_p,
            "z_d": self.z_d if math.isfinite(self.z_d) else None,
            "gap": self.gap if math.isfinite(self.gap) else None,
            "nodes": self.nodes,
            "first_incumbent_node": self.first_incumbent_node,
            "assignment": self.assignment.to_dict() if self.assignment else None,
            "warnings": list(self.warnings),
        }


@dataclass
class FixedSolution:
    """Fixed-integer QP outcome mapped back onto the full column space."""

    qp: QpSolution
    x: np.ndarray
    cost: float

    @property
    def feasible(self) -> bool:
        return self.qp.status is QpStatus.SOLVED


def solve_fixed(miqp: MixedIntegerQP, assignment: IntegerAssignment,
                settings: Optional[QpSettings] = None,
                warm_x: Optional[np.ndarray] = None) -> FixedSolution:
    """:func:`fix_integers` followed by :func:`solve_qp`; ``cost`` includes the constant term."""
    fixed = fix_integers(miqp, assignment)
    P, q, A, l, u = fixed.qp_data()
    warm = None
    if warm_x is not None and fixed.source_columns is not None:
        warm = (np.asarray(warm_x, dtype=float)[fixed.source_columns], None)
    sol = solve_qp(P, q, A, l, u, settings, warm)
    x = fixed.expand(sol.x, miqp.n)
    names = miqp.names
    for j in miqp.binary_idx:
        x[j] = assignment.values[names[j]]
    cost = sol.objective + fixed.c0 if sol.status is QpStatus.SOLVED else math.inf
    return FixedSolution(sol, x, cost)


# ---------------------------------------------------------------------------
# propagation and branching


def propagate(miqp: MixedIntegerQP, fixed: Mapping[str, int]) -> Optional[Dict[str, int]]:
    """Close ``fixed`` under the exactly-one groups; None when a group is violated."""
    out = dict(fixed)
    changed = True
    while changed:
        changed = False
        for group in miqp.exactly_one:
            truth = group.truth(out)
            n_true = sum(1 for t in truth if t)
            if n_true > 1:
                return None
            unknown = [k for k, t in enumerate(truth) if t is None]
            if n_true == 1:
                for k in unknown:
                    bit, positive = group.literals[k]
                    out[bit] = 0 if positive else 1
                    changed = True
            elif not unknown:
                return None
            elif len(unknown) == 1:
                bit, positive = group.literals[unknown[0]]
                out[bit] = 1 if positive else 0
                changed = True
    return out


def _branch_class(name: str) -> int:
    if name.startswith("c["):
        return 0
    if name.startswith("z["):
        return 1
    return 2


def choose_branch(names: Sequence[str], values: np.ndarray, rule: BranchRule,
                  tol: float = BRANCH_TOL) -> Optional[int]:
    """Index into ``names`` of the binary to branch on, or None when all are integral."""
    frac = np.minimum(values, 1.0 - values)
    candidates = [k for k in range(len(names)) if frac[k] > tol]
    if not candidates:
        return None
    if rule is BranchRule.CONTACT_FIRST:
        first = min(_branch_class(names[k]) for k in candidates)
        candidates = [k for k in candidates if _branch_class(names[k]) == first]
    return max(candidates, key=lambda k: (frac[k], -k))


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    depth: int = field(compare=False)
    fixed: Dict[str, int] = field(compare=False, default_factory=dict)


class _Relaxer:
    """Node relaxation with one ADMM solver per thread; bounds change, the pattern does not."""

    def __init__(self, miqp: MixedIntegerQP, settings: QpSettings) -> None:
        self.miqp = miqp
        self.settings = settings
        P, q, A, l, u = miqp.qp_data()
        self._data = (P, q, A)
        self._l, self._u = l, u
        # bound rows follow the constraint rows in column order
        cols = miqp.bounded_columns()
        self._bound_row = {int(j): miqp.m + k for k, j in enumerate(cols)}
        self._local = threading.local()

    def _solver(self) -> AdmmSolver:
        solver = getattr(self._local, "solver", None)
        if solver is None:
            P, q, A = self._data
            solver = AdmmSolver(P, q, A, self._l, self._u, self.settings)
            self._local.solver = solver
        return solver

    def solve(self, fixed: Mapping[str, int]) -> QpSolution:
        l, u = self._l.copy(), self._u.copy()
        for name, v in fixed.items():
            r = self._bound_row[self.miqp.var_names[name]]
            l[r] = u[r] = float(v)
        solver = self._solver()
        solver.update_bounds(l, u)
        return solver.solve()


class _Search:
    def __init__(self, miqp: MixedIntegerQP, opts: BnbOptions) -> None:
        self.miqp = miqp
        self.opts = opts
        self.names = miqp.names
        self.bin_names = miqp.binary_names
        self.relaxer = _Relaxer(miqp, opts.qp)
        self.result = MiqpResult(MiqpStatus.INFEASIBLE)
        self.heap: List[_Node] = []
        self.seq = itertools.count()
        self.t0 = time.perf_counter()
        self.plunge = 0
        self.dive: Optional[_Node] = None
        # least bound among nodes dropped because they were within the gap target
        self.gap_pruned_bound = math.inf
        self._log_fh = None

    # -- bookkeeping -----------------------------------------------------------

    def _log(self, node: _Node, bound: float, event: str) -> None:
        r = self.result
        entry = {
            "node": r.nodes - 1,
            "depth": node.depth,
            "bound": bound if math.isfinite(bound) else None,
            "incumbent": r.z_p,
            "z_d": self._dual_bound(bound) if r.z_p is not None else None,
            "event": event,
        }
        r.log.append(entry)
        if self._log_fh is not None:
            self._log_fh.write(json.dumps(entry) + "\n")
        logger.debug("node %d depth %d %s bound=%s", entry["node"], node.depth, event, entry["bound"])

    def _dual_bound(self, current: float = math.inf) -> float:
        candidates = [n.bound for n in self.heap]
        if self.dive is not None:
            candidates.append(self.dive.bound)
        candidates.extend(b for b in (current, self.gap_pruned_bound) if b < math.inf)
        z_d = min(candidates) if candidates else math.inf
        if self.result.z_p is not None:
            z_d = min(z_d, self.result.z_p)
        return z_d

    def _warn(self, msg: str) -> None:
        self.result.warnings.append(msg)
        logger.warning(msg)

    def _offer(self, assignment: IntegerAssignment, warm_x: Optional[np.ndarray] = None) -> bool:
        """Evaluate an integral assignment; True when it becomes the incumbent."""
        try:
            fixed = solve_fixed(self.miqp, assignment, self.opts.qp, warm_x)
        except NumericalBreakdown as exc:
            self._warn(f"fixed-integer QP failed: {exc}")
            return False
        if not fixed.feasible:
            return False
        r = self.result
        if r.z_p is None or fixed.cost < r.z_p - 1e-12:
            r.z_p, r.x, r.assignment = fixed.cost, fixed.x, assignment
            if r.first_incumbent_node is None:
                r.first_incumbent_node = r.nodes - 1
            self.plunge = self.opts.plunge_depth
            logger.info("incumbent %.6g at node %d", fixed.cost, r.nodes - 1)
            return True
        return False

    def _prunable(self, bound: float) -> bool:
        """True when a node with ``bound`` can be dropped; gap prunes keep their bound for z_d."""
        z_p = self.result.z_p
        if z_p is None:
            return False
        if bound >= z_p - 1e-9 * max(1.0, abs(z_p)):
            return True
        if self.opts.gap_target > 0 and gap_ratio(z_p, bound) <= self.opts.gap_target:
            self.gap_pruned_bound = min(self.gap_pruned_bound, bound)
            return True
        return False

    def _limits_hit(self) -> Optional[MiqpStatus]:
        if self.result.nodes >= self.opts.node_limit:
            return MiqpStatus.NODE_LIMIT
        limit = self.opts.time_limit
        if limit is not None and time.perf_counter() - self.t0 > limit:
            return MiqpStatus.TIME_LIMIT
        return None

    # -- node processing -----------------------------------------------------------

    def _push(self, bound: float, depth: int, fixed: Dict[str, int]) -> _Node:
        node = _Node(bound, next(self.seq), depth, fixed)
        heapq.heappush(self.heap, node)
        return node

    def _expand(self, node: _Node, sol: Optional[QpSolution]) -> Optional[_Node]:
        """Process one evaluated node; returns the child to dive into, if any."""
        r = self.result
        r.nodes += 1
        if sol is None:
            self._log(node, math.inf, "failed")
            return None
        if sol.status is QpStatus.PRIMAL_INFEASIBLE:
            self._log(node, math.inf, "infeasible")
            return None
        if sol.status is not QpStatus.SOLVED:
            self._warn(f"node {r.nodes - 1}: relaxation ended {sol.status.value}; pruned")
            self._log(node, math.inf, "failed")
            return None
        bound = sol.objective + self.miqp.c0
        if self._prunable(bound):
            self._log(node, bound, "pruned")
            return None

        values = np.array([sol.x[self.miqp.var_names[b]] for b in self.bin_names])
        free = [k for k, b in enumerate(self.bin_names) if b not in node.fixed]
        if free:
            k = choose_branch([self.bin_names[i] for i in free], values[free], self.opts.branch_rule)
            branch = None if k is None else free[k]
        else:
            branch = None
        if branch is None:
            rounded = {b: int(round(float(np.clip(v, 0.0, 1.0)))) for b, v in zip(self.bin_names, values)}
            rounded.update(node.fixed)
            closed = propagate(self.miqp, rounded)
            assignment = IntegerAssignment(closed if closed is not None else rounded)
            if assignment.problems(self.miqp):
                self._log(node, bound, "inconsistent")
                return None
            self._offer(assignment, sol.x)
            self._log(node, bound, "integral")
            return None

        name = self.bin_names[branch]
        preferred = 1 if values[branch] >= 0.5 else 0
        children = []
        for v in (preferred, 1 - preferred):
            fixed = propagate(self.miqp, {**node.fixed, name: v})
            if fixed is not None:
                children.append(fixed)
        self._log(node, bound, "branched")
        if not children:
            return None
        dive = None
        if self.result.z_p is None or self.plunge > 0:
            self.plunge = max(self.plunge - 1, 0)
            dive = _Node(bound, next(self.seq), node.depth + 1, children[0])
            children = children[1:]
        for fixed in children:
            self._push(bound, node.depth + 1, fixed)
        return dive

    def _evaluate(self, node: _Node) -> Optional[QpSolution]:
        try:
            return self.relaxer.solve(node.fixed)
        except NumericalBreakdown as exc:
            self._warn(f"relaxation at depth {node.depth} broke down: {exc}")
            return None

    def _dive_warm(self, warm: IntegerAssignment) -> None:
        problems = warm.problems(self.miqp, partial=True)
        if problems:
            raise InvalidWarmStart("; ".join(problems))
        fixed = propagate(self.miqp, warm.values)
        if fixed is None:
            raise InvalidWarmStart("warm assignment violates an exactly-one group")
        if len(fixed) == len(self.bin_names):
            self.result.nodes += 1
            self._offer(IntegerAssignment(fixed))
            self._log(_Node(math.inf, next(self.seq), 0, fixed), math.inf, "warm")
            return
        node: Optional[_Node] = _Node(-math.inf, next(self.seq), 0, fixed)
        while node is not None and self.result.z_p is None and self._limits_hit() is None:
            node = self._expand(node, self._evaluate(node))
        # Nodes left open by the dive are subsets of the root's subtree.
        self.heap.clear()
        self.gap_pruned_bound = math.inf

    def run(self) -> MiqpResult:
        opts = self.opts
        if opts.log_path is not None:
            self._log_fh = open(opts.log_path, "w", encoding="utf-8")
        try:
            if opts.warm is not None:
                self._dive_warm(opts.warm)
            root = propagate(self.miqp, {})
            if root is None:
                return self._finish(MiqpStatus.INFEASIBLE)
            self._push(-math.inf, 0, root)
            status = self._loop()
            return self._finish(status)
        finally:
            if self._log_fh is not None:
                self._log_fh.close()

    def _loop(self) -> MiqpStatus:
        pool = ThreadPoolExecutor(self.opts.workers) if self.opts.workers > 1 else None
        try:
            while self.dive is not None or self.heap:
                hit = self._limits_hit()
                if hit is not None:
                    return hit
                if self.result.z_p is not None and gap_ratio(self.result.z_p, self._dual_bound()) <= self.opts.gap_target \
                        and self.opts.gap_target > 0:
                    return MiqpStatus.GAP_REACHED
                if self.dive is not None:
                    node, self.dive = self.dive, None
                    self.dive = self._expand(node, self._evaluate(node))
                    continue
                batch = [heapq.heappop(self.heap)]
                while pool is not None and self.heap and len(batch) < self.opts.workers:
                    batch.append(heapq.heappop(self.heap))
                live = [n for n in batch if not self._prunable(n.bound)]
                for n in batch:
                    if n not in live:
                        self.result.nodes += 1
                        self._log(n, n.bound, "pruned")
                if pool is not None:
                    sols = list(pool.map(self._evaluate, live))
                else:
                    sols = [self._evaluate(n) for n in live]
                for n, sol in zip(live, sols):
                    child = self._expand(n, sol)
                    if child is not None:
                        if self.dive is None:
                            self.dive = child
                        else:
                            heapq.heappush(self.heap, child)
        finally:
            if pool is not None:
                pool.shutdown()
        return MiqpStatus.OPTIMAL

    def _finish(self, status: MiqpStatus) -> MiqpResult:
        r = self.result
        if r.z_p is None:
            r.status = MiqpStatus.INFEASIBLE if status is MiqpStatus.OPTIMAL else status
            r.z_d = self._dual_bound() if self.heap or self.dive is not None else math.inf
            return r
        r.z_d = self._dual_bound()
        if status is MiqpStatus.OPTIMAL and self.gap_pruned_bound < math.inf:
            # the tree was closed, but some subtrees only to within the gap target
            status = MiqpStatus.GAP_REACHED
        r.status = status
        logger.info("branch-and-bound %s: z_p=%.6g z_d=%.6g gap=%.4f nodes=%d",
                    status.value, r.z_p, r.z_d, r.gap, r.nodes)
        return r


def solve_miqp(miqp: MixedIntegerQP, opts: Optional[BnbOptions] = None) -> MiqpResult:
    """Best-first branch-and-bound with optional full or partial warm start."""
    return _Search(miqp, opts or BnbOptions()).run()


def enumerate_miqp(miqp: MixedIntegerQP, settings: Optional[QpSettings] = None) -> MiqpResult:
    """Exact optimum by solving every consistent assignment (at most 16 binaries)."""
    names = miqp.binary_names
    if len(names) > MAX_ENUMERATION_BINARIES:
        raise TooManyBinaries(
            f"{len(names)} binaries; enumeration is limited to {MAX_ENUMERATION_BINARIES}"
        )
    result = MiqpResult(MiqpStatus.INFEASIBLE)
    for bits in itertools.product((0, 1), repeat=len(names)):
        assignment = IntegerAssignment(dict(zip(names, bits)))
        if assignment.problems(miqp):
            continue
        result.nodes += 1
        try:
            fixed = solve_fixed(miqp, assignment, settings)
        except (NumericalBreakdown, InconsistentAssignment) as exc:
            result.warnings.append(f"{assignment.to_dict()}: {exc}")
            continue
        if fixed.feasible and (result.z_p is None or fixed.cost < result.z_p):
            result.z_p, result.x, result.assignment = fixed.cost, fixed.x, assignment
            result.first_incumbent_node = result.nodes - 1
    if result.z_p is not None:
        result.status = MiqpStatus.OPTIMAL
        result.z_d = result.z_p
    return result


def gait_seed(horizon_n: int, style: GaitStyle = GaitStyle.TROT, n_legs: int = 4) -> IntegerAssignment:
    """Partial assignment over the contact binaries ``c[n].<leg>``.

    Trot keeps the diagonal pairs (0, 3) and (1, 2) in stance on alternate
    knots, starting with (0, 3); with two legs it alternates front and rear.
    Region and selector binaries are left free.
    """
    if horizon_n < 2:
        raise ValueError("horizon_n must be >= 2")
    style = GaitStyle(style)
    legs = leg_names(n_legs)
    values: Dict[str, int] = {}
    for n in range(horizon_n):
        for i, leg in enumerate(legs):
            if style is GaitStyle.ALL_STANCE:
                c = 1
            elif n_legs == 4:
                c = int((i in (0, 3)) == (n % 2 == 0))
            else:
                c = int((i % 2) == (n % 2))
            values[f"c[{n}].{leg}"] = c
    return IntegerAssignment(values)
