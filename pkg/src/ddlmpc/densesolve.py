"""Small dense kernels: equality-constrained least squares and box QPs.

Every problem solved here is sized by a local region, never by the network.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .exceptions import ArgumentError, InfeasibleError, NonConvergenceError

PINV_RCOND = 1e-11
ILL_CONDITIONED = 1e12
FEAS_TOL = 1e-8


class IllConditionedWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class EqLsProblem:
    """``min ||C x - d||^2  s.t.  A_eq x = b_eq``.

    ``d_vec`` and ``b_eq`` may be matrices; each column is an independent
    right-hand side sharing the same factorization.
    """

    C: np.ndarray
    d_vec: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None


@dataclass
class EqLsSolution:
    x: np.ndarray
    multipliers: np.ndarray
    condition: float
    diagnostics: list = field(default_factory=list)


class KktFactorization:
    """Factorization of the augmented KKT system of an :class:`EqLsProblem`.

    The saddle-point matrix::

        [ I   C    0   ] [ r  ]   [ d ]
        [ C'  0    A'  ] [ x  ] = [ 0 ]
        [ 0   A    0   ] [ mu ]   [ b ]

    is symmetric indefinite and avoids forming ``C'C``. It is factored once by
    a symmetric eigendecomposition; the pseudo-inverse of that factorization
    returns the minimum-norm solution. The null space of the matrix is a
    product of a subspace in ``x`` and one in ``mu``, so the minimum-norm
    solution of the full system also has minimum-norm ``x``.
    """

    def __init__(self, C, A_eq=None, rcond=PINV_RCOND):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        m, n = C.shape
        A = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
        if A.shape[1] != n:
            raise ArgumentError(f"A_eq has {A.shape[1]} columns, C has {n}")
        k = A.shape[0]
        K = np.zeros((m + n + k, m + n + k))
        K[:m, :m] = np.eye(m)
        K[:m, m:m + n] = C
        K[m:m + n, :m] = C.T
        K[m:m + n, m + n:] = A.T
        K[m + n:, m:m + n] = A
        evals, evecs = np.linalg.eigh(K)
        scale = np.max(np.abs(evals)) if evals.size else 0.0
        keep = np.abs(evals) > rcond * max(scale, 1.0)
        inv = np.zeros_like(evals)
        inv[keep] = 1.0 / evals[keep]
        self.pinv = (evecs * inv) @ evecs.T
        self.C, self.A = C, A
        self.shape = (m, n, k)
        kept = np.abs(evals[keep])
        self.condition = float(kept.max() / kept.min()) if kept.size else np.inf
        self.rank_deficient = bool(np.count_nonzero(~keep))

    def blocks(self):
        """Sub-blocks mapping ``(d, b)`` to ``x`` and to ``mu``."""
        m, n, k = self.shape
        P = self.pinv
        return P[m:m + n, :m], P[m:m + n, m + n:], P[m + n:, :m], P[m + n:, m + n:]

    def solve(self, d, b=None, check=True):
        m, n, k = self.shape
        d = np.asarray(d, dtype=float)
        vector = d.ndim == 1
        d2 = d.reshape(m, -1)
        cols = d2.shape[1]
        b2 = np.zeros((k, cols)) if b is None else np.asarray(b, dtype=float).reshape(k, -1)
        rhs = np.vstack([d2, np.zeros((n, cols)), b2])
        sol = self.pinv @ rhs
        x = sol[m:m + n]
        mu = sol[m + n:]
        if check and k:
            resid = np.linalg.norm(self.A @ x - b2)
            scale = 1.0 + np.linalg.norm(b2)
            if resid > FEAS_TOL * scale:
                raise InfeasibleError(
                    f"equality constraints are inconsistent (residual {resid:.3e})",
                    {"residual": float(resid)})
        lam = -mu
        if vector:
            return x[:, 0], lam[:, 0]
        return x, lam


def solve_eq_ls(problem, rcond=PINV_RCOND):
    """Minimizer of ``||C x - d||^2`` subject to ``A_eq x = b_eq``.

    Rank-deficient problems return the minimum-norm minimizer. An
    :class:`IllConditionedWarning` is issued and recorded in the solution
    diagnostics when the factorization's condition estimate exceeds 1e12.

    >>> import numpy as np
    >>> p = EqLsProblem(np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), np.array([2.0]))
    >>> np.round(solve_eq_ls(p).x, 12)
    array([1., 1.])
    """
    fac = KktFactorization(problem.C, problem.A_eq, rcond)
    x, lam = fac.solve(problem.d_vec, problem.b_eq)
    diagnostics = []
    if fac.condition > ILL_CONDITIONED:
        msg = f"KKT condition estimate {fac.condition:.2e} exceeds {ILL_CONDITIONED:.0e}"
        warnings.warn(msg, IllConditionedWarning, stacklevel=2)
        diagnostics.append(msg)
    return EqLsSolution(x, lam, fac.condition, diagnostics)


# -- box-constrained QP ------------------------------------------------------

@dataclass(frozen=True)
class BoxQpProblem:
    """``min 1/2 x'Px + q'x  s.t.  lo <= x <= hi,  A_eq x = b_eq``."""

    P: np.ndarray
    q: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None


@dataclass
class BoxQpSolution:
    x: np.ndarray
    y: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    polished: bool


def _qp_constraints(problem, n):
    rows, lower, upper, is_eq = [], [], [], []
    lo = None if problem.lo is None else np.broadcast_to(np.asarray(problem.lo, float), (n,))
    hi = None if problem.hi is None else np.broadcast_to(np.asarray(problem.hi, float), (n,))
    if lo is not None or hi is not None:
        lo = np.full(n, -np.inf) if lo is None else lo
        hi = np.full(n, np.inf) if hi is None else hi
        if np.any(lo > hi):
            raise ArgumentError("box lower bound exceeds upper bound")
        bounded = np.isfinite(lo) | np.isfinite(hi)
        idx = np.flatnonzero(bounded)
        rows.append(np.eye(n)[idx])
        lower.append(lo[idx])
        upper.append(hi[idx])
        is_eq.append(lo[idx] == hi[idx])
    if problem.A_eq is not None:
        A_eq = np.atleast_2d(np.asarray(problem.A_eq, float))
        b_eq = np.asarray(problem.b_eq, float).reshape(-1)
        rows.append(A_eq)
        lower.append(b_eq)
        upper.append(b_eq)
        is_eq.append(np.ones(b_eq.size, bool))
    if not rows:
        return np.zeros((0, n)), np.zeros(0), np.zeros(0), np.zeros(0, bool)
    return np.vstack(rows), np.concatenate(lower), np.concatenate(upper), np.concatenate(is_eq)


def _kkt_residuals(P, q, A, x, y, lo, hi):
    """Scaled primal and dual residuals (OSQP-style relative criteria)."""
    Ax = A @ x
    viol = np.maximum(lo - Ax, 0.0) + np.maximum(Ax - hi, 0.0)
    prim = float(np.max(np.abs(viol))) if viol.size else 0.0
    Px, Aty = P @ x, A.T @ y
    dual = float(np.max(np.abs(Px + q + Aty))) if x.size else 0.0
    prim_scale = 1.0 + (float(np.max(np.abs(Ax))) if Ax.size else 0.0)
    dual_scale = 1.0 + max(float(np.max(np.abs(Px))), float(np.max(np.abs(q))),
                           float(np.max(np.abs(Aty))) if Aty.size else 0.0)
    return prim / prim_scale, dual / dual_scale


def _polish(P, q, A, lo, hi, z, y):
    """Solve the equality QP on the active set guessed from ``(z, y)``."""
    n = P.shape[0]
    eq = lo == hi
    lower_act = eq | (z - lo < -y)
    upper_act = ~lower_act & (hi - z < y)
    act = np.flatnonzero(lower_act | upper_act)
    target = np.where(lower_act, lo, hi)[act]
    Aa = A[act]
    k = act.size
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = Aa.T
    K[n:, :n] = Aa
    sol = np.linalg.lstsq(K, np.r_[-q, target], rcond=None)[0]
    xp = sol[:n]
    yp = np.zeros_like(y)
    yp[act] = sol[n:]
    ineq = ~eq
    sign_ok = np.all(yp[lower_act & ineq] <= 0) and np.all(yp[upper_act & ineq] >= 0)
    return xp, yp, bool(sign_ok)


def solve_box_qp(problem, tol=1e-9, max_iter=20000, rho=1.0, alpha=1.6, sigma=1e-6,
                 polish=True):
    """Operator-splitting QP solver with over-relaxation and active-set polishing.

    Iterates on ``l <= A x <= u`` where ``A`` stacks the bounded coordinates and
    the equality rows (equality rows use a 1e3 larger step). After
    convergence an equality-constrained solve on the detected active set
    refines the answer to working precision when it is consistent. Residuals
    are measured relative to the problem scale, OSQP style.

    Raises:
        NonConvergenceError: if ``max_iter`` is reached before both residuals
            fall below ``tol``.
    """
    P = np.atleast_2d(np.asarray(problem.P, dtype=float))
    n = P.shape[0]
    q = np.asarray(problem.q, dtype=float).reshape(n)
    P = 0.5 * (P + P.T)
    A, lo, hi, is_eq = _qp_constraints(problem, n)
    if A.shape[0] == 0:
        x = np.linalg.lstsq(P, -q, rcond=None)[0]
        prim, dual = _kkt_residuals(P, q, A, x, np.zeros(0), lo, hi)
        return BoxQpSolution(x, np.zeros(0), 0, prim, dual, True)
    rho_vec = np.where(is_eq, 1e3 * rho, rho)
    M = P + sigma * np.eye(n) + A.T @ (rho_vec[:, None] * A)
    chol = sla.cho_factor(M)
    x = np.zeros(n)
    z = np.clip(np.zeros(A.shape[0]), lo, hi)
    y = np.zeros(A.shape[0])
    history = {"primal": [], "dual": []}
    it = 0
    for it in range(1, max_iter + 1):
        xt = sla.cho_solve(chol, sigma * x - q + A.T @ (rho_vec * z - y))
        zt = A @ xt
        x = alpha * xt + (1 - alpha) * x
        zr = alpha * zt + (1 - alpha) * z
        z_new = np.clip(zr + y / rho_vec, lo, hi)
        y = y + rho_vec * (zr - z_new)
        z = z_new
        if it % 10 == 0 or it == max_iter:
            prim, dual = _kkt_residuals(P, q, A, x, y, lo, hi)
            history["primal"].append(prim)
            history["dual"].append(dual)
            if polish and max(prim, dual) <= max(tol, 1e-6):
                xp, yp, ok = _polish(P, q, A, lo, hi, z, y)
                if ok:
                    pp, dp = _kkt_residuals(P, q, A, xp, yp, lo, hi)
                    if pp <= tol and dp <= tol:
                        return BoxQpSolution(xp, yp, it, pp, dp, True)
            if prim <= tol and dual <= tol:
                return BoxQpSolution(x, y, it, prim, dual, False)
    raise NonConvergenceError(
        f"box QP did not converge in {max_iter} iterations "
        f"(primal {history['primal'][-1]:.2e}, dual {history['dual'][-1]:.2e})",
        history, iteration=it)


def brute_force_box_qp(P, q, lo, hi):
    """Exact box-QP minimizer by enumerating every active set (tiny ``n`` only)."""
    P = np.asarray(P, float)
    q = np.asarray(q, float)
    n = q.size
    best, best_val = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        fixed = pattern > 0
        x = np.where(pattern == 1, lo, np.where(pattern == 2, hi, 0.0)).astype(float)
        free = ~fixed
        if free.any():
            rhs = -q[free] - P[np.ix_(free, fixed)] @ x[fixed]
            x[free] = np.linalg.solve(P[np.ix_(free, free)], rhs)
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            continue
        val = 0.5 * x @ P @ x + q @ x
        if val < best_val:
            best, best_val = x, val
    return best


# -- proximal closed forms ---------------------------------------------------

def rank1_prox(q_w, a, v, rho):
    """``argmin_phi  q_w (phi'a)^2 + rho/2 ||phi - v||^2``.

    Sherman-Morrison on ``2 q_w a a' + rho I``.
    """
    if rho <= 0:
        raise ArgumentError("rho must be positive")
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    denom = rho + 2.0 * q_w * float(a @ a)
    return v - (2.0 * q_w * float(a @ v) / denom) * a


def quadratic_prox(W, a, V, rho, lo=None, hi=None):
    """``argmin_Phi (Phi a)' W (Phi a) + rho/2 ||Phi - V||_F^2`` with optional bounds on ``Phi a``.

    Batched over a leading axis: ``V`` is ``(..., r, c)``, ``W`` is ``(r, r)``
    or ``(..., r, r)``, ``a`` is ``(c,)``. For fixed ``y = Phi a`` the closest
    ``Phi`` to ``V`` is ``V + (y - V a) a'/|a|^2``, which reduces the problem
    to a QP in ``y``. Diagonal weights are solved exactly by clipping; a
    non-diagonal weight with bounds falls back to :func:`solve_box_qp`.
    """
    V = np.asarray(V, dtype=float)
    a = np.asarray(a, dtype=float)
    s = float(a @ a)
    if s == 0.0:
        return V.copy()
    va = V @ a
    W = np.asarray(W, dtype=float)
    c = rho / s
    r = V.shape[-2]
    Wb = np.broadcast_to(W, V.shape[:-2] + (r, r))
    diag = np.all(Wb == np.einsum("...ii->...i", Wb)[..., None] * np.eye(r))
    if diag:
        w = np.einsum("...ii->...i", Wb)
        y = c * va / (2.0 * w + c)
        if lo is not None or hi is not None:
            y = np.clip(y, -np.inf if lo is None else lo, np.inf if hi is None else hi)
    elif lo is None and hi is None:
        y = np.linalg.solve(2.0 * Wb + c * np.eye(r), (c * va)[..., None])[..., 0]
    else:
        flat_W = Wb.reshape(-1, r, r)
        flat_va = va.reshape(-1, r)
        lo_b = np.broadcast_to(-np.inf if lo is None else lo, va.shape).reshape(-1, r)
        hi_b = np.broadcast_to(np.inf if hi is None else hi, va.shape).reshape(-1, r)
        ys = []
        for Wk, vk, lk, hk in zip(flat_W, flat_va, lo_b, hi_b):
            prob = BoxQpProblem(2.0 * Wk + c * np.eye(r), -c * vk, lk, hk)
            ys.append(solve_box_qp(prob, tol=1e-11).x)
        y = np.array(ys).reshape(va.shape)
    return V + ((y - va) / s)[..., None] * a
