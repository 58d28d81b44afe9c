"""Dense linear algebra helpers and linear-programming solvers.

Everything downstream (Hankel rank checks, predictive-control programs,
optimal-transport distances) targets the :class:`LinearProgram` /
:func:`solve_lp` interface defined here.

Two interchangeable backends are available:

* ``"ipm"`` -- a self-contained primal-dual interior-point method using the
  homogeneous self-dual embedding (Andersen & Andersen style, dense normal
  equations).  No dependencies beyond numpy/scipy linear algebra; iteration
  cap 200.
* ``"highs"`` -- scipy's HiGHS wrapper, used for the large sparse programs
  produced by the receding-horizon controller where a dense Python method
  is too slow.

``backend="auto"`` picks ``"ipm"`` for small dense problems and ``"highs"``
otherwise.  Both backends are exercised against each other in the test
suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sps
from scipy.optimize import linprog as _scipy_linprog

from .errors import InvalidInputError, NumericalFailureError

__all__ = [
    "LinearProgram",
    "LpSolution",
    "solve_lp",
    "numerical_rank",
    "dual_norm",
    "least_squares_residual",
    "save_matrix_csv",
    "load_matrix_csv",
]

# Problems whose standard form stays below this size are solved by the
# built-in dense IPM under backend="auto"; larger ones go to HiGHS.
_AUTO_IPM_LIMIT = 500


def _check_finite_array(a, name):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def as_matrix(a, name="matrix"):
    """Validate and return a finite 2-D float array."""
    a = _check_finite_array(a, name)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_vector(a, name="vector"):
    """Validate and return a finite 1-D float array."""
    a = _check_finite_array(a, name)
    if a.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-D, got shape {a.shape}")
    return a


def numerical_rank(m, rel_tol=1e-8):
    """Number of singular values above ``rel_tol`` times the largest one.

    Returns 0 for a zero (or empty) matrix.
    """
    if rel_tol <= 0:
        raise InvalidInputError("rel_tol must be positive")
    m = as_matrix(m, "rank input")
    if m.size == 0:
        return 0
    svals = scipy.linalg.svdvals(m)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.count_nonzero(svals > rel_tol * svals[0]))


def dual_norm(kind, v):
    """Dual norm of ``kind`` evaluated at ``v``.

    ``sup {<v, y> : ||y||_kind <= 1}``: the 1-norm for ``kind="inf"``, the
    infinity-norm for ``kind="one"``, and the (self-dual) 2-norm for
    ``kind="two"``.
    """
    v = as_vector(v, "dual_norm input")
    if kind == "inf":
        return float(np.sum(np.abs(v)))
    if kind == "one":
        return float(np.max(np.abs(v))) if v.size else 0.0
    if kind == "two":
        return float(np.linalg.norm(v))
    raise InvalidInputError(f"unknown norm kind {kind!r}")


def least_squares_residual(m, b):
    """Minimum of ``||m x - b||_2`` over x."""
    m = as_matrix(m, "least-squares matrix")
    b = as_vector(b, "least-squares rhs")
    if m.shape[0] != b.shape[0]:
        raise InvalidInputError(
            f"row count {m.shape[0]} does not match rhs length {b.shape[0]}"
        )
    if m.shape[1] == 0:
        return float(np.linalg.norm(b))
    x, *_ = np.linalg.lstsq(m, b, rcond=None)
    return float(np.linalg.norm(m @ x - b))


def save_matrix_csv(path, m):
    """Write a dense matrix as comma-separated ``%.12e`` rows (debug format)."""
    m = as_matrix(m, "matrix")
    with open(path, "w") as fh:
        for row in m:
            fh.write(",".join(f"{v:.12e}" for v in row) + "\n")


def load_matrix_csv(path):
    """Read a matrix written by :func:`save_matrix_csv`."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    return np.asarray(rows, dtype=float)


# ---------------------------------------------------------------------------
# linear programs


def _nnz_finite(a, name):
    if sps.issparse(a):
        if not np.all(np.isfinite(a.data)):
            raise InvalidInputError(f"{name} contains non-finite entries")
        return a
    return as_matrix(a, name)


@dataclass(frozen=True)
class LinearProgram:
    """``min c @ x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lb <= x <= ub``.

    ``A_eq`` / ``A_ub`` may be dense arrays or scipy sparse matrices.
    ``bounds`` is an optional list of ``(low, high)`` pairs with ``None``
    for an absent bound; by default every variable is free.
    """

    c: np.ndarray
    A_eq: object = None
    b_eq: np.ndarray = None
    A_ub: object = None
    b_ub: np.ndarray = None
    bounds: list = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("cost vector contains non-finite entries")
        object.__setattr__(self, "c", c)
        n = c.shape[0]
        for mat_name, vec_name in (("A_eq", "b_eq"), ("A_ub", "b_ub")):
            mat, vec = getattr(self, mat_name), getattr(self, vec_name)
            if mat is None:
                mat = np.zeros((0, n))
                vec = np.zeros(0)
            else:
                mat = _nnz_finite(mat, mat_name)
                vec = as_vector(np.atleast_1d(vec), vec_name)
            if mat.shape[1] != n:
                raise InvalidInputError(
                    f"{mat_name} has {mat.shape[1]} columns, expected {n}"
                )
            if mat.shape[0] != vec.shape[0]:
                raise InvalidInputError(
                    f"{mat_name}/{vec_name} row mismatch: "
                    f"{mat.shape[0]} vs {vec.shape[0]}"
                )
            object.__setattr__(self, mat_name, mat)
            object.__setattr__(self, vec_name, vec)
        if self.bounds is not None:
            if len(self.bounds) != n:
                raise InvalidInputError("bounds length does not match cost vector")
            for lo, hi in self.bounds:
                if lo is not None and hi is not None and lo > hi:
                    raise InvalidInputError(f"bound pair ({lo}, {hi}) is empty")

    @property
    def n_vars(self):
        return self.c.shape[0]


@dataclass(frozen=True)
class LpSolution:
    """Result of :func:`solve_lp`.

    ``status`` is one of ``"optimal"``, ``"infeasible"``, ``"unbounded"``.
    ``x`` and ``objective`` are meaningful only when optimal.
    """

    status: str
    x: np.ndarray = None
    objective: float = np.nan
    iterations: int = 0


def _max_violation(lp, x):
    worst = 0.0
    if lp.A_eq.shape[0]:
        worst = max(worst, float(np.max(np.abs(lp.A_eq @ x - lp.b_eq))))
    if lp.A_ub.shape[0]:
        worst = max(worst, float(np.max(lp.A_ub @ x - lp.b_ub)))
    if lp.bounds is not None:
        for xi, (lo, hi) in zip(x, lp.bounds):
            if lo is not None:
                worst = max(worst, lo - xi)
            if hi is not None:
                worst = max(worst, xi - hi)
    return worst


def solve_lp(lp, feas_tol=1e-6, opt_tol=1e-8, maxiter=200, backend="auto"):
    """Solve a :class:`LinearProgram`.

    Parameters
    ----------
    lp : LinearProgram
    feas_tol : float
        Maximum constraint violation accepted in an "optimal" solution;
        exceeding it raises :class:`NumericalFailureError`.
    opt_tol : float
        Relative duality-gap / residual tolerance of the solver.
    maxiter : int
        Iteration cap (interior-point backend).
    backend : {"auto", "ipm", "highs"}

    Returns
    -------
    LpSolution

    Raises
    ------
    NumericalFailureError
        Iteration cap exceeded (``.best`` holds the last iterate) or the
        returned point violates ``feas_tol``.
    """
    if backend not in ("auto", "ipm", "highs"):
        raise InvalidInputError(f"unknown backend {backend!r}")
    chosen = backend
    if chosen == "auto":
        m_rows = lp.A_eq.shape[0] + lp.A_ub.shape[0]
        small = lp.n_vars <= _AUTO_IPM_LIMIT and m_rows <= 2 * _AUTO_IPM_LIMIT
        chosen = "ipm" if small else "highs"

    def attempt(which):
        sol = _solve_highs(lp, opt_tol) if which == "highs" \
            else _solve_ipm(lp, opt_tol, maxiter)
        if sol.status == "optimal":
            worst = _max_violation(lp, sol.x)
            if worst > feas_tol:
                raise NumericalFailureError(
                    f"solution violates constraints by {worst:.3e} > feas_tol",
                    best=sol,
                )
        return sol

    if chosen == "highs":
        return attempt("highs")
    try:
        return attempt("ipm")
    except NumericalFailureError:
        # Degenerate programs (exactly rank-deficient data, huge penalty
        # weights) can defeat dense normal equations; under "auto" the
        # sparse simplex backend is a sound second attempt.
        if backend != "auto":
            raise
        return attempt("highs")


def _solve_highs(lp, opt_tol):
    bounds = lp.bounds if lp.bounds is not None else [(None, None)] * lp.n_vars
    res = _scipy_linprog(
        lp.c,
        A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
        b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
        A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
        b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": max(opt_tol, 1e-10),
                 "dual_feasibility_tolerance": max(opt_tol, 1e-10)},
    )
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        return LpSolution("optimal", np.asarray(res.x, dtype=float),
                          float(res.fun), nit)
    if res.status == 2:
        return LpSolution("infeasible", iterations=nit)
    if res.status == 3:
        return LpSolution("unbounded", iterations=nit)
    raise NumericalFailureError(f"HiGHS failed: {res.message}")


# ---------------------------------------------------------------------------
# standard-form conversion for the interior-point backend


def _standard_form(lp):
    """Rewrite ``lp`` as ``min c @ x, A x = b, x >= 0``.

    Returns ``(A, b, c, c0, recover)`` where ``recover`` maps a
    standard-form point back to the original variables.
    """
    n = lp.n_vars
    A_eq = lp.A_eq.toarray() if sps.issparse(lp.A_eq) else np.array(lp.A_eq)
    A_ub = lp.A_ub.toarray() if sps.issparse(lp.A_ub) else np.array(lp.A_ub)
    A = np.vstack([A_eq, A_ub]) if n else np.zeros((A_eq.shape[0] + A_ub.shape[0], 0))
    b = np.concatenate([lp.b_eq, lp.b_ub])
    c = np.array(lp.c)
    c0 = 0.0
    m_eq = A_eq.shape[0]
    m_ub = A_ub.shape[0]

    if lp.bounds is None:
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
    else:
        lo = np.array([-np.inf if l is None else float(l) for l, _ in lp.bounds])
        hi = np.array([np.inf if h is None else float(h) for _, h in lp.bounds])

    # Eliminate fixed variables outright; an interior-point method cannot
    # approach a variable whose feasible set is a single point gracefully.
    fixed = np.isfinite(lo) & (lo == hi)
    fixed_vals = np.where(fixed, lo, 0.0)
    keep = np.flatnonzero(~fixed)
    if np.any(fixed):
        b = b - A[:, fixed] @ fixed_vals[fixed]
        c0 += float(c[fixed] @ fixed_vals[fixed])
        A = A[:, keep]
        c = c[keep]
        lo = lo[keep]
        hi = hi[keep]
    n = keep.shape[0]

    # Shift/flip each variable so its lower bound is 0; free variables are
    # split into positive and negative parts afterwards.
    shift = np.zeros(n)
    flip = np.zeros(n, dtype=bool)
    for i in range(n):
        if np.isfinite(lo[i]):
            shift[i] = lo[i]
        elif np.isfinite(hi[i]):
            shift[i] = hi[i]
            flip[i] = True
        else:
            continue
        b -= A[:, i] * shift[i]
        c0 += c[i] * shift[i]
        if flip[i]:
            A[:, i] = -A[:, i]
            c[i] = -c[i]
    width = np.where(flip, np.inf, hi - shift)  # flipped vars have no upper bound
    free = ~np.isfinite(lo) & ~np.isfinite(hi)
    bounded_above = np.isfinite(width)

    cols = [A]
    costs = [c]
    split_col = np.full(n, -1)
    k = n
    if np.any(free):
        cols.append(-A[:, free])
        costs.append(-c[free])
        split_col[free] = k + np.arange(int(np.count_nonzero(free)))
        k += int(np.count_nonzero(free))
    A = np.hstack(cols)
    c = np.concatenate(costs)

    # slacks for inequality rows
    if m_ub:
        S = np.zeros((A.shape[0], m_ub))
        S[m_eq:, :] = np.eye(m_ub)
        A = np.hstack([A, S])
        c = np.concatenate([c, np.zeros(m_ub)])
        k += m_ub

    # rows for two-sided bounds: x_i + s = width_i
    ub_idx = np.flatnonzero(bounded_above)
    if ub_idx.size:
        extra = np.zeros((ub_idx.size, k + ub_idx.size))
        extra[np.arange(ub_idx.size), ub_idx] = 1.0
        extra[np.arange(ub_idx.size), k + np.arange(ub_idx.size)] = 1.0
        A = np.hstack([A, np.zeros((A.shape[0], ub_idx.size))])
        A = np.vstack([A, extra])
        b = np.concatenate([b, width[ub_idx]])
        c = np.concatenate([c, np.zeros(ub_idx.size)])
        k += ub_idx.size

    def recover(x_std):
        x = x_std[:n].copy()
        for i in np.flatnonzero(split_col >= 0):
            x[i] -= x_std[split_col[i]]
        x = np.where(flip, -x, x) + shift
        full = fixed_vals.copy()
        full[keep] = x
        return full

    return A, b, c, c0, recover


# ---------------------------------------------------------------------------
# homogeneous self-dual interior-point method


def _normal_solve_factory(M, reg_boost=1.0):
    """Return a solver for the (regularized) normal-equation matrix.

    One step of iterative refinement against the unregularized matrix
    keeps the directions accurate when the factorized matrix had to be
    shifted for definiteness.
    """
    reg = reg_boost * 1e-13 * (1.0 + np.trace(M) / max(M.shape[0], 1))
    Mr = M + reg * np.eye(M.shape[0])
    base = None
    try:
        L = scipy.linalg.cho_factor(Mr, check_finite=False)
        base = lambda r: scipy.linalg.cho_solve(L, r, check_finite=False)
    except scipy.linalg.LinAlgError:
        try:
            lu = scipy.linalg.lu_factor(Mr, check_finite=False)
            base = lambda r: scipy.linalg.lu_solve(lu, r, check_finite=False)
        except scipy.linalg.LinAlgError:
            base = lambda r: np.linalg.lstsq(Mr, r, rcond=None)[0]

    def refine(r):
        v = base(r)
        return v + base(r - M @ v)

    return refine


def _hsd_step_length(x, dx, z, dz, tau, dtau, kappa, dkappa, scale):
    alpha = 1.0
    for v, dv in ((x, dx), (z, dz)):
        neg = dv < 0
        if np.any(neg):
            alpha = min(alpha, scale * np.min(v[neg] / -dv[neg]))
    if dtau < 0:
        alpha = min(alpha, scale * tau / -dtau)
    if dkappa < 0:
        alpha = min(alpha, scale * kappa / -dkappa)
    return alpha


def _ip_hsd(A, b, c, tol, maxiter):
    """Homogeneous self-dual IPM for ``min c@x, Ax=b, x>=0``.

    Returns ``(x, status, iterations)`` with status in
    {"optimal", "infeasible", "unbounded"}.  The problem data are scaled
    into O(1) range first (the embedding is positively homogeneous, so
    optimal points rescale exactly and the certificates are unchanged).
    """
    b_scale = max(1.0, float(np.max(np.abs(b)))) if b.size else 1.0
    c_scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    try:
        x, status, iters = _ip_hsd_core(A, b / b_scale, c / c_scale, tol, maxiter)
    except NumericalFailureError as exc:
        if exc.best is not None:
            exc.best = exc.best * b_scale
        raise
    if x is not None:
        x = x * b_scale
    return x, status, iters


def _ip_hsd_core(A, b, c, tol, maxiter):
    m, n = A.shape
    if n == 0:
        ok = b.size == 0 or np.max(np.abs(b)) <= tol
        return np.zeros(0), "optimal" if ok else "infeasible", 0
    if m == 0:
        # No constraints besides x >= 0.
        if np.all(c >= -tol):
            return np.zeros(n), "optimal", 0
        return None, "unbounded", 0

    x = np.ones(n)
    y = np.zeros(m)
    z = np.ones(n)
    tau, kappa = 1.0, 1.0

    norm_b = max(1.0, np.linalg.norm(b - A @ x))
    norm_c = max(1.0, np.linalg.norm(c - z))
    norm_g = max(1.0, abs(c @ x - b @ y + kappa))
    mu0 = (x @ z + tau * kappa) / (n + 1)

    best = None
    best_ind = np.inf
    stall = 0
    reg_boost = 1.0
    for it in range(1, maxiter + 1):
        r_p = b * tau - A @ x
        r_d = c * tau - A.T @ y - z
        r_g = c @ x - b @ y + kappa
        mu = (x @ z + tau * kappa) / (n + 1)

        rho_p = np.linalg.norm(r_p) / norm_b
        rho_d = np.linalg.norm(r_d) / norm_c
        rho_A = abs(c @ x - b @ y) / (tau + abs(b @ y))
        rho_g = abs(r_g) / norm_g
        rho_mu = mu / mu0
        indicator = max(rho_p, rho_d, rho_A)
        if indicator < 0.9 * best_ind:
            best_ind = indicator
            best = x / tau
            stall = 0
        else:
            stall += 1

        if rho_p < tol and rho_d < tol and rho_A < tol:
            return x / tau, "optimal", it - 1
        inf1 = rho_p < tol and rho_d < tol and rho_g < tol and tau < tol * max(1.0, kappa)
        inf2 = rho_mu < tol and tau < tol * min(1.0, kappa)
        if inf1 or inf2:
            return None, ("infeasible" if b @ y > tol else "unbounded"), it - 1
        if stall >= 10 and it >= 15:
            # Roundoff in the nearly singular endgame normal equations can
            # de-converge the iterates; try once more with a stiffer
            # regularization shift, then accept the best point seen if it
            # is close to tolerance, otherwise report honest failure.
            if reg_boost < 1e6:
                reg_boost *= 1e4
                stall = 0
            elif best_ind <= 1e3 * tol:
                return best, "optimal", it - 1
            else:
                raise NumericalFailureError(
                    f"interior-point stalled at residual {best_ind:.3e}", best=best
                )

        # Clip the scaling matrix: on degenerate optimal faces split free
        # variables can drift, pushing x/z ratios toward overflow.
        Dinv = np.clip(x / z, 1e-16, 1e16)
        M = (A * Dinv) @ A.T
        solve = _normal_solve_factory(M, reg_boost)

        def newton(rhat_p, rhat_d, rhat_g, rhat_xs, rhat_tk):
            # Reduce the HSD Newton system to two normal-equation solves.
            r1 = rhat_d - rhat_xs / x
            q = solve(b + A @ (Dinv * c))
            p = Dinv * (A.T @ q - c)
            v = solve(rhat_p + A @ (Dinv * r1))
            u = Dinv * (A.T @ v - r1)
            denom = kappa / tau + (-c @ p + b @ q)
            dtau = (rhat_g + rhat_tk / tau - (-c @ u + b @ v)) / denom
            dx = u + p * dtau
            dy = v + q * dtau
            dz = (rhat_xs - z * dx) / x
            dkappa = (rhat_tk - kappa * dtau) / tau
            return dx, dy, dz, dtau, dkappa

        try:
            # Mehrotra predictor (gamma = 0) ...
            dx, dy, dz, dtau, dkappa = newton(r_p, r_d, r_g, -x * z, -tau * kappa)
            alpha = _hsd_step_length(x, dx, z, dz, tau, dtau, kappa, dkappa, 1.0)
            gamma = (1 - alpha) ** 2 * min(0.1, 1 - alpha)
            eta = 1.0 - gamma
            # ... then corrector.
            dx, dy, dz, dtau, dkappa = newton(
                eta * r_p,
                eta * r_d,
                eta * r_g,
                gamma * mu - x * z - dx * dz,
                gamma * mu - tau * kappa - dtau * dkappa,
            )
        except (ValueError, FloatingPointError, ZeroDivisionError) as exc:
            raise NumericalFailureError(
                f"interior-point linear algebra failed at iteration {it}",
                best=best,
            ) from exc

        alpha = _hsd_step_length(x, dx, z, dz, tau, dtau, kappa, dkappa, 0.99995)
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    raise NumericalFailureError(
        f"interior-point iteration cap ({maxiter}) exceeded", best=best
    )


def _solve_ipm(lp, opt_tol, maxiter):
    A, b, c, c0, recover = _standard_form(lp)
    try:
        x_std, status, iters = _ip_hsd(A, b, c, opt_tol, maxiter)
    except NumericalFailureError as exc:
        if exc.best is not None:
            exc.best = recover(exc.best)
        raise
    if status != "optimal":
        return LpSolution(status, iterations=iters)
    x = recover(x_std)
    return LpSolution("optimal", x, float(lp.c @ x), iters)
