"""Operator-splitting (ADMM) solver for convex QPs.

Solves::

    minimize    1/2 x' P x + q' x
    subject to  l <= A x <= u

with the OSQP iteration: a quasi-definite KKT solve, a relaxed projection
onto ``[l, u]`` and a dual ascent step. The data are Ruiz-equilibrated
once per solver instance. Rows get their own penalty (equality rows stiff,
free rows loose) and the scalar penalty adapts to the residual ratio.
Factorizations are cached per (penalty, row classes), so a sequence of
bound-only updates, as produced by branch-and-bound, refactors only when
the set of equality rows changes.

Dual sign convention: ``P x + q + A' y = 0`` at optimality, so a row
active at its upper bound carries ``y > 0`` and one active at its lower
bound ``y < 0``.
"""

from __future__ import annotations

import csv
import enum
import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from hybrid_mpc.miqp import DimensionMismatch

logger = logging.getLogger(__name__)

__all__ = [
    "AdmmSolver",
    "DimensionMismatch",
    "NumericalBreakdown",
    "QpSettings",
    "QpSolution",
    "QpStatus",
    "kkt_residuals",
    "solve_qp",
]

RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_SCALE = 1e3
EQ_TOL = 1e-4
MIN_SCALING = 1e-4
MAX_SCALING = 1e4


class NumericalBreakdown(ValueError):
    """An ADMM iterate became non-finite."""


class QpStatus(str, enum.Enum):
    SOLVED = "Solved"
    MAX_ITER = "MaxIter"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"


@dataclass(frozen=True)
class QpSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    eps_prim_inf: float = 1e-5
    eps_dual_inf: float = 1e-5
    max_iter: int = 4000
    polish: bool = True
    polish_delta: float = 1e-6
    polish_refine_iter: int = 3
    scaling_iter: int = 10
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 25
    adaptive_rho_tolerance: float = 5.0
    check_interval: int = 1
    dump_path: Optional[str] = None

    def __post_init__(self) -> None:
        errors = self.problems()
        if errors:
            raise ValueError("invalid QpSettings: " + "; ".join(errors))

    def problems(self) -> List[str]:
        out: List[str] = []
        if not (self.rho > 0 and self.sigma > 0):
            out.append("rho and sigma must be > 0")
        if not 0 < self.alpha < 2:
            out.append("alpha must lie in (0, 2)")
        if not all(e > 0 for e in (self.eps_abs, self.eps_rel, self.eps_prim_inf,
                                   self.eps_dual_inf)):
            out.append("tolerances must be > 0")
        if self.max_iter < 1:
            out.append("max_iter must be >= 1")
        if self.check_interval < 1 or self.adaptive_rho_interval < 1:
            out.append("check and adaptation intervals must be >= 1")
        return out


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: QpStatus
    prim_res: float
    dual_res: float
    iters: int
    solve_time: float
    objective: float
    rho: float = 0.0
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status is QpStatus.SOLVED


def _check_dims(P: sp.spmatrix, q: np.ndarray, A: sp.spmatrix, l: np.ndarray,
                u: np.ndarray) -> Tuple[int, int]:
    n = q.size
    m = l.size
    if P.shape != (n, n):
        raise DimensionMismatch(f"P is {P.shape}, q has {n} entries")
    if A.shape != (m, n):
        raise DimensionMismatch(f"A is {A.shape}, expected ({m}, {n})")
    if u.size != m:
        raise DimensionMismatch(f"l has {m} entries, u has {u.size}")
    return n, m


def kkt_residuals(P, q, A, l, u, x, y) -> Tuple[float, float, float]:
    """Infinity norms of primal violation, stationarity and complementarity.

    The complementarity term charges ``y_i > 0`` by the distance of row i
    to its upper bound and ``y_i < 0`` by the distance to its lower bound;
    a multiplier pushing against an infinite bound is charged in full.
    """
    P, A = sp.csc_matrix(P), sp.csc_matrix(A)
    q, l, u = (np.asarray(v, dtype=float).ravel() for v in (q, l, u))
    x, y = np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()
    n, m = _check_dims(P, q, A, l, u)
    if x.size != n or y.size != m:
        raise DimensionMismatch(f"x has {x.size} entries (expected {n}), y has {y.size} ({m})")
    ax = A @ x
    prim = np.maximum(l - ax, 0.0) + np.maximum(ax - u, 0.0)
    dual = P @ x + q + A.T @ y
    y_pos, y_neg = np.maximum(y, 0.0), np.maximum(-y, 0.0)
    with np.errstate(invalid="ignore"):
        gap_u = np.where(np.isfinite(u), np.abs(u - ax), 1.0)
        gap_l = np.where(np.isfinite(l), np.abs(ax - l), 1.0)
    comp = y_pos * gap_u + y_neg * gap_l
    return (float(np.max(prim, initial=0.0)), float(np.max(np.abs(dual), initial=0.0)),
            float(np.max(comp, initial=0.0)))


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _diag(v: np.ndarray) -> sp.csc_matrix:
    if v.size == 0:
        return sp.csc_matrix((0, 0))
    return sp.diags(v, format="csc")


def _col_norms(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[0] == 0 or M.shape[1] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).toarray()).ravel()


def _row_norms(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[0] == 0 or M.shape[1] == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).toarray()).ravel()


def _equilibrate(P: sp.csc_matrix, A: sp.csc_matrix, q: np.ndarray,
                 iters: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """Ruiz scaling ``(D, E, c)`` of the KKT matrix, then a scalar cost scaling."""
    n, m = A.shape[1], A.shape[0]
    d, e = np.ones(n), np.ones(m)
    ps, as_ = P, A
    for _ in range(iters):
        col = np.maximum(_col_norms(ps), _col_norms(as_))
        row = _row_norms(as_)
        dk = np.where(col > 0, 1.0 / np.sqrt(np.clip(col, MIN_SCALING, MAX_SCALING)), 1.0)
        ek = np.where(row > 0, 1.0 / np.sqrt(np.clip(row, MIN_SCALING, MAX_SCALING)), 1.0)
        ps = _diag(dk) @ ps @ _diag(dk)
        as_ = _diag(ek) @ as_ @ _diag(dk)
        d *= dk
        e *= ek
    p_norm = float(np.mean(_col_norms(sp.csc_matrix(ps)))) if n else 0.0
    q_norm = _inf_norm(d * q)
    c = 1.0 / float(np.clip(max(p_norm, q_norm, 1.0), MIN_SCALING, MAX_SCALING))
    return d, e, c


class AdmmSolver:
    """Reusable solver for one ``(P, A)`` pattern; ``q``, ``l`` and ``u`` may change between solves."""

    def __init__(self, P, q, A, l, u, settings: Optional[QpSettings] = None) -> None:
        self.settings = settings or QpSettings()
        P, A = sp.csc_matrix(P, dtype=float), sp.csc_matrix(A, dtype=float)
        q = np.asarray(q, dtype=float).ravel()
        l, u = np.asarray(l, dtype=float).ravel(), np.asarray(u, dtype=float).ravel()
        self.n, self.m = _check_dims(P, q, A, l, u)

        self._d, self._e, self._c = _equilibrate(P, A, q, self.settings.scaling_iter)
        dm, em = _diag(self._d), _diag(self._e)
        self._P = sp.csc_matrix(self._c * (dm @ P @ dm))
        self._A = sp.csc_matrix(em @ A @ dm)
        self._q = self._c * self._d * q
        self._l = self._e * l
        self._u = self._e * u
        self._rho = self.settings.rho
        self._factors: Dict[Tuple[float, bytes], spla.SuperLU] = {}
        self.factorizations = 0

        self._x = np.zeros(self.n)
        self._z = np.zeros(self.m)
        self._y = np.zeros(self.m)

    # -- data updates --------------------------------------------------------

    def update_q(self, q) -> None:
        q = np.asarray(q, dtype=float).ravel()
        if q.size != self.n:
            raise DimensionMismatch(f"q has {q.size} entries, expected {self.n}")
        self._q = self._c * self._d * q

    def update_bounds(self, l, u) -> None:
        l, u = np.asarray(l, dtype=float).ravel(), np.asarray(u, dtype=float).ravel()
        if l.size != self.m or u.size != self.m:
            raise DimensionMismatch(f"bounds need {self.m} entries")
        self._l = self._e * l
        self._u = self._e * u

    def warm_start(self, x: Optional[np.ndarray] = None, y: Optional[np.ndarray] = None) -> None:
        if x is not None:
            x = np.asarray(x, dtype=float).ravel()
            if x.size != self.n:
                raise DimensionMismatch(f"warm x has {x.size} entries, expected {self.n}")
            self._x = x / self._d
            self._z = np.clip(self._A @ self._x, self._l, self._u)
        if y is not None:
            y = np.asarray(y, dtype=float).ravel()
            if y.size != self.m:
                raise DimensionMismatch(f"warm y has {y.size} entries, expected {self.m}")
            self._y = self._c * y / self._e

    # -- internals -----------------------------------------------------------

    def _row_classes(self) -> np.ndarray:
        """0 free, 1 inequality, 2 equality."""
        free = np.isinf(self._l) & np.isinf(self._u)
        eq = np.abs(self._u - self._l) < EQ_TOL
        return np.where(free, 0, np.where(eq, 2, 1)).astype(np.int8)

    def _rho_vec(self, classes: np.ndarray) -> np.ndarray:
        scale = np.choose(classes, [0.0, 1.0, RHO_EQ_SCALE])
        return np.where(classes == 0, RHO_MIN, np.clip(self._rho * scale, RHO_MIN, RHO_MAX))

    def _factor(self, rho_vec: np.ndarray, classes: np.ndarray) -> spla.SuperLU:
        key = (self._rho, classes.tobytes())
        factor = self._factors.get(key)
        if factor is None:
            top = self._P + self.settings.sigma * sp.eye(self.n)
            if self.m:
                kkt = sp.bmat([[top, self._A.T], [self._A, -sp.diags(1.0 / rho_vec)]],
                              format="csc")
            else:
                kkt = sp.csc_matrix(top)
            factor = spla.splu(kkt)
            self._factors[key] = factor
            self.factorizations += 1
            logger.debug("factorized KKT (n=%d, m=%d, rho=%.3g)", self.n, self.m, self._rho)
        return factor

    def _residuals(self, x: np.ndarray, z: np.ndarray, y: np.ndarray) -> Tuple[float, float, float, float]:
        """Unscaled residuals and their tolerances."""
        s = self.settings
        ax = self._A @ x
        px = self._P @ x
        aty = self._A.T @ y
        prim = _inf_norm((ax - z) / self._e) if self.m else 0.0
        dual = _inf_norm((px + self._q + aty) / self._d) / self._c
        eps_p = s.eps_abs + s.eps_rel * max(_inf_norm(ax / self._e), _inf_norm(z / self._e))
        eps_d = s.eps_abs + s.eps_rel * max(
            _inf_norm(px / self._d), _inf_norm(aty / self._d), _inf_norm(self._q / self._d)
        ) / self._c
        return prim, dual, eps_p, eps_d

    def _primal_infeasible(self, dy: np.ndarray) -> bool:
        eps = self.settings.eps_prim_inf
        norm = _inf_norm(dy)
        if norm <= eps:
            return False
        v = dy / norm
        pos = v > eps
        neg = v < -eps
        if np.any(pos & np.isinf(self._u)) or np.any(neg & np.isinf(self._l)):
            return False
        support = float(self._u[pos] @ v[pos] + self._l[neg] @ v[neg])
        if support >= -eps:
            return False
        return _inf_norm((self._A.T @ v) / self._d) < eps

    def _dual_infeasible(self, dx: np.ndarray) -> bool:
        eps = self.settings.eps_dual_inf
        norm = _inf_norm(dx)
        if norm <= eps:
            return False
        v = dx / norm
        if float(self._q @ v) >= -eps * self._c:
            return False
        if _inf_norm((self._P @ v) / self._d) >= eps * self._c:
            return False
        av = (self._A @ v) / self._e
        bad_upper = np.isfinite(self._u) & (av > eps)
        bad_lower = np.isfinite(self._l) & (av < -eps)
        return not bool(np.any(bad_upper | bad_lower))

    def _adapt_rho(self, x: np.ndarray, z: np.ndarray, y: np.ndarray) -> bool:
        ax, px, aty = self._A @ x, self._P @ x, self._A.T @ y
        prim = _inf_norm(ax - z) / max(_inf_norm(ax), _inf_norm(z), 1e-10)
        dual = _inf_norm(px + self._q + aty) / max(_inf_norm(px), _inf_norm(aty),
                                                   _inf_norm(self._q), 1e-10)
        new_rho = float(np.clip(self._rho * np.sqrt(prim / max(dual, 1e-10)), RHO_MIN, RHO_MAX))
        tol = self.settings.adaptive_rho_tolerance
        if new_rho > self._rho * tol or new_rho < self._rho / tol:
            logger.debug("rho %.3g -> %.3g", self._rho, new_rho)
            self._rho = new_rho
            return True
        return False

    def _polish(self, x: np.ndarray, z: np.ndarray, y: np.ndarray
                ) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Solve the equality-constrained QP on the guessed active set (scaled space)."""
        s = self.settings
        low = np.flatnonzero(z - self._l < -y)
        upp = np.flatnonzero(self._u - z < y)
        top = self._P + s.polish_delta * sp.eye(self.n)
        if low.size + upp.size:
            a_red = sp.vstack([self._A[low], self._A[upp]], format="csc")
            k = a_red.shape[0]
            kkt = sp.bmat([[top, a_red.T], [a_red, -s.polish_delta * sp.eye(k)]], format="csc")
            exact = sp.bmat([[self._P, a_red.T], [a_red, None]], format="csc")
        else:
            kkt, exact = sp.csc_matrix(top), self._P
        rhs = np.concatenate([-self._q, self._l[low], self._u[upp]])
        try:
            factor = spla.splu(kkt)
        except RuntimeError:
            return None
        sol = factor.solve(rhs)
        for _ in range(s.polish_refine_iter):
            sol = sol + factor.solve(rhs - exact @ sol)
        if not np.all(np.isfinite(sol)):
            return None
        x_pol = sol[:self.n]
        y_pol = np.zeros(self.m)
        y_pol[low] = sol[self.n:self.n + low.size]
        y_pol[upp] = sol[self.n + low.size:]
        z_pol = np.clip(self._A @ x_pol, self._l, self._u)
        return x_pol, z_pol, y_pol

    def _dump(self, rows: List[Tuple[int, float, float, float]]) -> None:
        path = self.settings.dump_path
        if not path:
            return
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "prim_res", "dual_res", "rho"])
            writer.writerows(rows)

    def _quick_infeasible(self) -> bool:
        if np.any(self._l > self._u + EQ_TOL):
            return True
        empty = np.diff(sp.csr_matrix(self._A).indptr) == 0
        return bool(np.any(empty & ((self._l > EQ_TOL) | (self._u < -EQ_TOL))))

    def _solution(self, x, z, y, status, prim, dual, iters, t0, polished=False) -> QpSolution:
        x_out = self._d * x
        y_out = self._e * y / self._c
        obj = float(0.5 * x @ (self._P @ x) + self._q @ x) / self._c
        return QpSolution(x_out, y_out, status, prim, dual, iters,
                          time.perf_counter() - t0, obj, self._rho, polished)

    # -- main loop -------------------------------------------------------------

    def solve(self, warm: Optional[Tuple[Optional[np.ndarray], Optional[np.ndarray]]] = None
              ) -> QpSolution:
        s = self.settings
        t0 = time.perf_counter()
        if warm is not None:
            self.warm_start(*warm)
        if self._quick_infeasible():
            logger.debug("bounds are contradictory; skipping iterations")
            return self._solution(self._x, self._z, self._y, QpStatus.PRIMAL_INFEASIBLE,
                                  float("inf"), float("inf"), 0, t0)

        classes = self._row_classes()
        rho_vec = self._rho_vec(classes)
        factor = self._factor(rho_vec, classes)
        x, z, y = self._x.copy(), np.clip(self._z, self._l, self._u), self._y.copy()
        status = QpStatus.MAX_ITER
        prim = dual = float("inf")
        trace: List[Tuple[int, float, float, float]] = []
        it = 0
        for it in range(1, s.max_iter + 1):
            rhs = np.concatenate([s.sigma * x - self._q, z - y / rho_vec])
            sol = factor.solve(rhs)
            x_tilde = sol[:self.n]
            z_tilde = z + (sol[self.n:] - y) / rho_vec
            x_new = s.alpha * x_tilde + (1.0 - s.alpha) * x
            z_hat = s.alpha * z_tilde + (1.0 - s.alpha) * z
            z_new = np.clip(z_hat + y / rho_vec, self._l, self._u)
            y_new = y + rho_vec * (z_hat - z_new)
            if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(y_new))):
                raise NumericalBreakdown(f"non-finite ADMM iterate at iteration {it}")
            dx, dy = x_new - x, y_new - y
            x, z, y = x_new, z_new, y_new

            if it % s.check_interval == 0 or it == s.max_iter:
                prim, dual, eps_p, eps_d = self._residuals(x, z, y)
                if s.dump_path:
                    trace.append((it, prim, dual, self._rho))
                if prim <= eps_p and dual <= eps_d:
                    status = QpStatus.SOLVED
                    break
                if self.m and prim > eps_p and self._primal_infeasible(dy):
                    status = QpStatus.PRIMAL_INFEASIBLE
                    break
                if dual > eps_d and self._dual_infeasible(dx):
                    status = QpStatus.DUAL_INFEASIBLE
                    break

            if s.adaptive_rho and self.m and it % s.adaptive_rho_interval == 0:
                if self._adapt_rho(x, z, y):
                    rho_vec = self._rho_vec(classes)
                    factor = self._factor(rho_vec, classes)

        self._x, self._z, self._y = x, z, y
        self._dump(trace)
        polished = False
        if status is QpStatus.SOLVED and s.polish:
            candidate = self._polish(x, z, y)
            if candidate is not None:
                x_pol, z_pol, y_pol = candidate
                ax = self._A @ x_pol
                _, p_dual, eps_p, eps_d = self._residuals(x_pol, ax, y_pol)
                violation = np.maximum(self._l - ax, 0.0) + np.maximum(ax - self._u, 0.0)
                p_prim = _inf_norm(violation / self._e) if self.m else 0.0
                if p_prim <= max(prim, eps_p) and p_dual <= max(dual, eps_d):
                    x, z, y = x_pol, z_pol, y_pol
                    prim, dual = p_prim, p_dual
                    polished = True
        logger.debug("ADMM %s after %d iterations (prim %.2e, dual %.2e, polished=%s)",
                     status.value, it, prim, dual, polished)
        return self._solution(x, z, y, status, prim, dual, it, t0, polished)


def solve_qp(P, q, A, l, u, settings: Optional[QpSettings] = None,
             warm: Optional[Tuple[Optional[np.ndarray], Optional[np.ndarray]]] = None) -> QpSolution:
    """One-shot solve; see :class:`AdmmSolver` for repeated solves on the same pattern."""
    return AdmmSolver(P, q, A, l, u, settings).solve(warm)
