"""Linear and box-constrained solvers.

The bound-constrained problem is the complementarity system

    lower <= x <= upper,   r = A x - b,
    r_i >= 0 where x_i = lower_i,  r_i <= 0 where x_i = upper_i,  r_i = 0 otherwise,

which for a coercive (not necessarily symmetric) ``A`` is the nodal form of
the discrete variational inequality over the box.  It is solved by a
reduced-space active-set iteration: bound nodes are frozen, the reduced
system on the free nodes is solved directly, and the partition is updated
from primal violations and residual signs.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import FeSpace, NodalField

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NodeState(enum.IntEnum):
    FREE = 0
    AT_LOWER = 1
    AT_UPPER = 2


@dataclass
class LinearSolveReport:
    method: str
    residual_norm: float
    iterations: int = 0
    wall_time: float = 0.0
    history: list = field(default_factory=list)
    active_lower: int = 0
    active_upper: int = 0


@dataclass
class BoundSet:
    lower: np.ndarray | float = 0.0
    upper: np.ndarray | float = np.inf

    def arrays(self, n):
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if np.any(lo > hi):
            raise SolverError("inconsistent bounds: lower > upper")
        return lo, hi

    def flags(self, x):
        lo, hi = self.arrays(len(x))
        out = np.full(len(x), NodeState.FREE, dtype=np.int8)
        out[x <= lo] = NodeState.AT_LOWER
        out[x >= hi] = NodeState.AT_UPPER
        return out


def _factor_solve(A, b):
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(f"sparse LU failed ({exc}); matrix of size {A.shape} is singular") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverError("sparse LU produced non-finite values; the matrix is numerically singular")
    return x


def solve_linear(A, rhs, rtol: float = 1e-10):
    """Direct solve with a relative residual check; returns (x, report)."""
    t0 = time.perf_counter()
    A = sp.csr_matrix(A)
    rhs = np.asarray(rhs, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != rhs.shape[0]:
        raise SolverError(f"dimension mismatch: matrix {A.shape}, rhs {rhs.shape}")
    x = _factor_solve(A, rhs)
    res = float(np.linalg.norm(A @ x - rhs))
    scale = float(np.linalg.norm(rhs))
    if res > rtol * max(scale, np.finfo(float).tiny):
        # one step of iterative refinement before giving up
        x += _factor_solve(A, rhs - A @ x)
        res = float(np.linalg.norm(A @ x - rhs))
        if res > rtol * max(scale, np.finfo(float).tiny) and scale > 0:
            raise SolverError(f"direct solve residual {res:.3e} exceeds {rtol:.1e} * |rhs| = {rtol * scale:.3e}")
    return x, LinearSolveReport("lu", res, 0, time.perf_counter() - t0)


def solve_supg(A, rhs, space: FeSpace | None = None, rtol: float = 1e-10):
    """Solve the stabilised linear system.  Returns (field or vector, report)."""
    x, rep = solve_linear(A, rhs, rtol)
    rep.method = "supg-lu"
    if space is None:
        return x, rep
    return NodalField(space, x, provenance="supg"), rep


def complementarity_violation(x, r, lo, hi):
    """Largest violation of the sign conditions on the residual (per node class)."""
    at_lo = x <= lo
    at_hi = (x >= hi) & ~at_lo
    free = ~(at_lo | at_hi)
    v = np.zeros_like(r)
    v[at_lo] = np.maximum(0.0, -r[at_lo])
    v[at_hi] = np.maximum(0.0, r[at_hi])
    v[free] = np.abs(r[free])
    return float(v.max()) if len(v) else 0.0


def _solve_reduced(A, b, lo, hi, lower, upper):
    n = len(b)
    x = np.empty(n)
    x[lower] = lo[lower]
    x[upper] = hi[upper]
    free = ~(lower | upper)
    if free.any():
        fixed = ~free
        rhs = b[free] - A[free][:, fixed] @ x[fixed]
        x[free] = _factor_solve(A[free][:, free], rhs)
    return x


def solve_vi(A, rhs, bounds: BoundSet, *, space: FeSpace | None = None, x0=None,
             tol: float | None = None, max_outer: int = 200):
    """Reduced-space active-set solution of the box-constrained complementarity problem.

    ``tol`` defaults to 1e-8 * |rhs|_inf.  The returned iterate is projected
    onto the box, so the bounds hold exactly.
    """
    t0 = time.perf_counter()
    A = sp.csr_matrix(A)
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    if A.shape != (n, n):
        raise SolverError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    lo, hi = bounds.arrays(n)
    if tol is None:
        tol = 1e-8 * float(np.abs(b).max()) if n else 0.0
    tol = max(tol, np.finfo(float).tiny)

    if x0 is None:
        x0 = _factor_solve(A, b)
    x = np.asarray(x0, dtype=float)
    lower = x <= lo
    upper = (x >= hi) & ~lower
    history = []
    seen = set()
    for it in range(1, max_outer + 1):
        x = _solve_reduced(A, b, lo, hi, lower, upper)
        r = A @ x - b
        free = ~(lower | upper)
        xp = np.clip(x, lo, hi)
        viol = complementarity_violation(xp, A @ xp - b, lo, hi)
        history.append(viol)
        new_lower = (lower & (r >= -tol)) | (free & (x < lo))
        new_upper = (upper & (r <= tol)) | (free & (x > hi))
        new_upper &= ~new_lower
        if np.array_equal(new_lower, lower) and np.array_equal(new_upper, upper):
            break
        key = (new_lower.tobytes(), new_upper.tobytes())
        if key in seen:
            # cycling: release only the worst wrong-signed bound and fix only the worst violator
            new_lower, new_upper = _conservative_update(x, r, lo, hi, lower, upper, tol)
            key = (new_lower.tobytes(), new_upper.tobytes())
        seen.add(key)
        lower, upper = new_lower, new_upper
    else:
        raise SolverError(
            f"active-set iteration did not converge in {max_outer} outer iterations "
            f"(|lower| = {int(lower.sum())}, |upper| = {int(upper.sum())}, violation = {history[-1]:.3e})"
        )
    x = np.clip(x, lo, hi)
    r = A @ x - b
    viol = complementarity_violation(x, r, lo, hi)
    history[-1] = viol
    if viol > tol:
        raise SolverError(f"active-set solution violates complementarity: {viol:.3e} > tol {tol:.3e}")
    rep = LinearSolveReport("vi-active-set", viol, it, time.perf_counter() - t0, history,
                            int((x <= lo).sum()), int((x >= hi).sum()))
    log.debug("VI converged in %d iterations, violation %.3e", it, viol)
    if space is None:
        return x, rep
    return NodalField(space, x, provenance="vi", bounds=(float(lo.min()), float(hi.max()))), rep


def _conservative_update(x, r, lo, hi, lower, upper, tol):
    lower, upper = lower.copy(), upper.copy()
    free = ~(lower | upper)
    bad_lo = np.flatnonzero(lower & (r < -tol))
    bad_hi = np.flatnonzero(upper & (r > tol))
    viol_lo = np.flatnonzero(free & (x < lo))
    viol_hi = np.flatnonzero(free & (x > hi))
    if len(viol_lo) or len(viol_hi):
        # add all primal violators, release nothing: the free set shrinks strictly
        lower[viol_lo] = True
        upper[viol_hi] = True
        return lower, upper
    cand = [(-r[i], i, "lo") for i in bad_lo] + [(r[i], i, "hi") for i in bad_hi]
    if cand:
        _, i, which = max(cand)
        if which == "lo":
            lower[i] = False
        else:
            upper[i] = False
    return lower, upper


def min_max_nodal(field) -> tuple[float, float]:
    c = field.coefficients if isinstance(field, NodalField) else np.asarray(field)
    return float(c.min()), float(c.max())
