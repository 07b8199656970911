"""Linear solvers: sparse direct saddle-point solve, CG and spectral estimates."""
from dataclasses import dataclass, field
import logging
import time

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import eliminate

log = logging.getLogger(__name__)

DENSE_EIG_LIMIT = 400
SINGULAR_RTOL = 1e-13  # |lambda_min| / |lambda_max| treated as zero


class SolverError(RuntimeError):
    """Numerical failure: breakdown, singularity or non-convergence."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class SolverReport:
    method: str
    iterations: int = 0
    residual: float = 0.0
    wall_time: float = 0.0
    history: list = field(default_factory=list)

    def as_dict(self):
        return {"method": self.method, "iterations": self.iterations,
                "residual": self.residual, "wall_time": self.wall_time}


def symmetric_scaling(K):
    """Diagonal ``d`` with ``d_i = |K_i|_inf^(-1/2)`` so that ``D K D`` has unit-size rows."""
    rowmax = np.asarray(abs(K).max(axis=1).todense()).ravel()
    if np.any(rowmax == 0):
        raise SolverError("matrix has an empty row", {"rows": np.flatnonzero(rowmax == 0)[:10].tolist()})
    return 1.0 / np.sqrt(rowmax)


def _umfpack_factor(K):
    from cvxopt import matrix, spmatrix, umfpack

    C = sp.coo_matrix(K)
    A = spmatrix(C.data.tolist(), C.row.tolist(), C.col.tolist(), C.shape)
    N = umfpack.numeric(A, umfpack.symbolic(A))

    def solve(b):
        x = matrix(np.asarray(b, dtype=float).reshape(-1, 1))
        umfpack.solve(A, N, x)
        return np.array(x).ravel()
    return solve


def _superlu_factor(K):
    lu = spla.splu(sp.csc_matrix(K), permc_spec="COLAMD")
    return lu.solve


def factorize(K, backend="auto"):
    """Sparse LU factorisation returning a solve callable.

    ``backend`` is ``"umfpack"`` (through cvxopt), ``"superlu"`` or ``"auto"``
    (UMFPACK when importable).
    """
    if backend == "auto":
        try:
            import cvxopt.umfpack  # noqa: F401
            backend = "umfpack"
        except ImportError:  # pragma: no cover - cvxopt is a declared dependency
            backend = "superlu"
    try:
        if backend == "umfpack":
            return _umfpack_factor(K), backend
        if backend == "superlu":
            return _superlu_factor(K), backend
    except (RuntimeError, ArithmeticError, ValueError) as exc:
        raise SolverError(f"factorization failed ({backend}): {exc}", {"n": K.shape[0]}) from exc
    raise ValueError(f"unknown backend {backend!r}")


class BorderedSolver:
    """Factorised, symmetrically scaled ``K`` with an optional exact border.

    With ``null`` (the single null vector of ``K``) and ``constraint`` (a
    row ``c``) the bordered system ``[[K, c^T], [c, 0]]`` is solved exactly:
    one unknown with a nonzero null component is pinned, which leaves a
    nonsingular sparse matrix, and the constraint is restored afterwards
    along the null direction.
    """

    def __init__(self, K, null=None, constraint=None, backend="auto"):
        K = sp.csr_matrix(K)
        self.d = symmetric_scaling(K)
        D = sp.diags(self.d)
        self.Ks = (D @ K @ D).tocsr()
        self.bordered = null is not None
        if self.bordered:
            self.ns = np.asarray(null, dtype=float) / self.d  # null vector after scaling
            c = null if constraint is None else constraint
            self.cs = self.d * np.asarray(c, dtype=float)
            pin = int(np.argmax(np.abs(self.ns)))
            Kp = self.Ks.tolil()
            Kp[pin, pin] = Kp[pin, pin] + 1.0
            Kp = Kp.tocsr()
        else:
            Kp = self.Ks
        self._solve, self.backend = factorize(Kp, backend)

    def _project(self, y):
        if not self.bordered:
            return y
        return y - (self.cs @ y) / (self.cs @ self.ns) * self.ns

    def solve(self, b, tol=None, refine_steps=3):
        """Return ``(x, multiplier, scaled relative residual, refinement steps)``."""
        bs = self.d * np.asarray(b, dtype=float)
        mult = float(self.ns @ bs / (self.ns @ self.cs)) if self.bordered else 0.0
        target = bs - self.cs * mult if self.bordered else bs
        y = self._project(self._solve(target))
        scale = np.linalg.norm(bs) or 1.0
        res = np.linalg.norm(self.Ks @ y - target) / scale
        steps = 0
        while tol is not None and res > tol and steps < refine_steps:
            y = self._project(y + self._solve(target - self.Ks @ y))
            res = np.linalg.norm(self.Ks @ y - target) / scale
            steps += 1
        return self.d * y, mult, float(res), steps


def direct_solve(K, b, tol=1e-10, refine_steps=3, backend="auto", null=None, constraint=None):
    """Scaled sparse LU solve with iterative refinement and a residual check.

    See :class:`BorderedSolver` for ``null`` and ``constraint``.  Returns
    ``(x, multiplier, report)``.  The residual is measured on the
    symmetrically scaled system, the meaningful quantity when coefficients
    span many decades.
    """
    t0 = time.perf_counter()
    solver = BorderedSolver(K, null, constraint, backend)
    x, mult, res, steps = solver.solve(b, tol, refine_steps)
    if not np.all(np.isfinite(x)) or res > tol:
        raise SolverError(f"direct solve residual {res:.3e} exceeds tolerance {tol:.1e}",
                          {"residual": res, "n": K.shape[0]})
    return x, mult, SolverReport(solver.backend, steps, res, time.perf_counter() - t0)


def solve_saddle(system, tol=1e-10, backend="auto"):
    """Solve an assembled :class:`SaddleSystem`.

    Returns ``(u, p, multiplier, report)``; ``multiplier`` is the mean
    constraint multiplier (zero when the constraint is inactive).
    """
    K = sp.bmat([[system.A, system.B.T], [system.B, None]], format="csr")
    b = np.concatenate([system.F, -system.G])
    Kf, bf, free = eliminate(K, b, system.fixed_dofs, system.fixed_values)
    nu, npr = system.n_u, system.n_p
    null = constraint = None
    if system.use_mean_constraint:
        full = np.zeros(nu + npr)
        full[nu:] = 1.0
        null = full[free]
        full[nu:] = system.mean_row
        constraint = full[free]
    xf, mult, report = direct_solve(Kf, bf, tol=tol, backend=backend, null=null, constraint=constraint)
    x = np.zeros(nu + npr)
    x[system.fixed_dofs] = system.fixed_values
    x[free] = xf
    return x[:nu], x[nu:], float(mult), report


def _as_apply(op):
    if callable(op) and not hasattr(op, "shape"):
        return op
    return lambda v: op @ v


def solve_spd_cg(apply, rhs, tol=1e-8, max_iter=None, precond=None, x0=None):
    """Preconditioned conjugate gradients for a symmetric positive definite operator.

    ``apply`` is a callable or anything supporting ``@``.  Raises
    :class:`SolverError` on non-convergence or when a direction of
    non-positive curvature is met (the direction is attached to the error).
    """
    t0 = time.perf_counter()
    A = _as_apply(apply)
    M = (lambda r: r) if precond is None else _as_apply(precond)
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    max_iter = max_iter or max(10 * n, 100)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros(n), SolverReport("cg", 0, 0.0, time.perf_counter() - t0)
    z = M(r)
    d = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / nb]
    for it in range(1, max_iter + 1):
        if history[-1] <= tol:
            it -= 1
            break
        Ad = A(d)
        curv = d @ Ad
        if curv <= 0:
            raise SolverError(f"non-positive curvature {curv:.3e} at iteration {it}",
                              {"direction": d, "curvature": curv, "iteration": it})
        a = rz / curv
        x += a * d
        r -= a * Ad
        z = M(r)
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
        history.append(np.linalg.norm(r) / nb)
    else:
        raise SolverError(f"CG did not converge in {max_iter} iterations "
                          f"(residual {history[-1]:.3e})", {"history": history})
    res = np.linalg.norm(b - A(x)) / nb
    return x, SolverReport("cg", it, float(res), time.perf_counter() - t0, history)


def _deflated(apply, basis):
    if basis is None:
        return apply
    Q = basis

    def op(v):
        v = v - Q @ (Q.T @ v)
        w = apply(v)
        return w - Q @ (Q.T @ w)
    return op


@dataclass
class EigenEstimate:
    lambda_min: float
    lambda_max: float
    kappa: float
    residual_min: float = 0.0
    residual_max: float = 0.0


def estimate_extreme_eigenvalues(apply, n, iters=None, solve=None, nullspace=None, tol=1e-8):
    """Extreme eigenvalue magnitudes of a symmetric operator.

    Returns :class:`EigenEstimate` with ``lambda_min``/``lambda_max`` the
    smallest and largest eigenvalue magnitudes and ``kappa`` their ratio, the
    spectral condition number, valid for indefinite operators too.  The
    smallest magnitude uses ``solve`` (an inverse application) when given.
    ``nullspace`` holds orthonormal columns projected out of the operator.
    Small operators are treated densely.
    """
    A = _as_apply(apply)
    Q = None
    if nullspace is not None:
        Q = np.linalg.qr(np.asarray(nullspace, dtype=float).reshape(n, -1))[0]
    op = _deflated(A, Q)
    if n <= DENSE_EIG_LIMIT:
        dense = np.column_stack([op(e) for e in np.eye(n)])
        if not np.allclose(dense, dense.T, rtol=1e-10, atol=1e-12 * np.abs(dense).max()):
            raise SolverError("operator is not symmetric")
        ev = np.abs(sla.eigvalsh(0.5 * (dense + dense.T)))
        if Q is not None:
            # drop the eigenvalues belonging to the projected-out directions
            ev = np.sort(ev)[Q.shape[1]:]
        lmin, lmax = float(ev.min()), float(ev.max())
        if lmin <= SINGULAR_RTOL * lmax:
            raise SolverError("operator is singular", {"lambda_max": lmax})
        return EigenEstimate(lmin, lmax, lmax / lmin)
    ncv = min(n - 1, max(2 * 1 + 1, iters or 40))
    L = spla.LinearOperator((n, n), matvec=op, dtype=float)
    v0 = np.ones(n) / np.sqrt(n) + 1e-3 * np.cos(np.arange(n))
    if Q is not None:
        v0 -= Q @ (Q.T @ v0)
    try:
        lmax_v, xmax = spla.eigsh(L, k=1, which="LM", ncv=ncv, tol=tol, v0=v0, maxiter=50 * n)
        if solve is None:
            lmin_v, xmin = spla.eigsh(L, k=1, which="SM", ncv=ncv, tol=tol, v0=v0, maxiter=50 * n)
        else:
            S = _deflated(_as_apply(solve), Q)
            Linv = spla.LinearOperator((n, n), matvec=S, dtype=float)
            mu, xmin = spla.eigsh(Linv, k=1, which="LM", ncv=ncv, tol=tol, v0=v0, maxiter=50 * n)
            lmin_v = 1.0 / mu
    except spla.ArpackError as exc:
        raise SolverError(f"Lanczos breakdown: {exc}") from exc
    lmax, lmin = abs(float(lmax_v[0])), abs(float(lmin_v[0]))
    rmax = np.linalg.norm(op(xmax[:, 0]) - lmax_v[0] * xmax[:, 0])
    rmin = np.linalg.norm(op(xmin[:, 0]) - lmin_v[0] * xmin[:, 0])
    if lmin <= SINGULAR_RTOL * lmax:
        raise SolverError("operator is singular")
    return EigenEstimate(lmin, lmax, lmax / lmin, float(rmin), float(rmax))
