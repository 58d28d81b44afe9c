"""Assembly of DeePC optimization programs as linear programs.

Three program families are produced, all over the Hankel combination
variable g:

* deterministic:  min f(Uf g, Yf g)  s.t. (Up; Yp) g = (u_ini; y_ini),
  Uf g in the input box;
* soft-constrained: the past-output equality moved into the objective as
  an L1 penalty ``lambda_ini * ||Yp g - y_ini||_1``;
* distributionally robust: the soft-constrained cost plus the Wasserstein
  ambiguity regularizer

      eps * max( theta_sup * ||col(g, 0)||_*,  lambda_ini * ||col(g, -1)||_* )

  where ``||.||_*`` is the dual of the norm applied to the rows of the
  uncertain data matrix and ``theta_sup`` bounds the conjugate domain of
  the output cost.

The supported objective family is weighted 1-norms (input effort plus
reference tracking), which keeps every program an LP after the standard
epigraph rewriting; the conjugate-domain bound is then available in
closed form.  One-norm and max terms enter through nonnegative slack
variables; the max regularizer through a single scalar bounded below by
both branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .errors import (
    ExcitationError,
    InvalidInputError,
    UnsupportedObjectiveError,
)
from .optim import LinearProgram, as_vector, dual_norm, numerical_rank

__all__ = [
    "Objective",
    "BoxConstraint",
    "RobustConfig",
    "AssembledProblem",
    "theta_sup",
    "assemble_deterministic",
    "assemble_robust",
    "in_sample_cost",
    "robust_regularizer",
]


@dataclass(frozen=True)
class Objective:
    """Separable stage cost  f(u, y) = w_u ||u||_1 + w_y ||y - r||_1.

    ``output_weight`` may be a per-channel array but must be uniform (the
    analytic regularizer bound is only valid for a single weight; mixed
    weights are rejected rather than silently approximated).
    ``reference`` is a (Tf, p) array, a flat vector, or None for zero.
    """

    input_weight: float = 1.0
    output_weight: object = 1.0
    reference: object = None

    def __post_init__(self):
        w = float(self.input_weight)
        if not np.isfinite(w) or w < 0:
            raise InvalidInputError("input_weight must be finite and nonnegative")
        wy = np.atleast_1d(np.asarray(self.output_weight, dtype=float))
        if not np.all(np.isfinite(wy)) or np.any(wy < 0):
            raise InvalidInputError("output_weight must be finite and nonnegative")
        if self.reference is not None:
            r = np.asarray(self.reference, dtype=float)
            if not np.all(np.isfinite(r)):
                raise InvalidInputError("reference contains non-finite entries")

    def reference_vector(self, Tf, p):
        """Reference flattened to length p*Tf (channel-major per step)."""
        if self.reference is None:
            return np.zeros(p * Tf)
        r = np.asarray(self.reference, dtype=float).reshape(-1)
        if r.shape[0] != p * Tf:
            raise InvalidInputError(
                f"reference has {r.shape[0]} entries, expected {p * Tf}"
            )
        return r

    def with_reference(self, reference):
        return Objective(self.input_weight, self.output_weight, reference)

    def stage_cost(self, u, y, r):
        """f evaluated on one realized step against its reference."""
        wy = theta_sup(self)
        return float(self.input_weight * np.sum(np.abs(u))
                     + wy * np.sum(np.abs(np.asarray(y) - np.asarray(r))))


def theta_sup(objective):
    """Supremum of ||theta||_inf over the conjugate domain of the output cost.

    For the tracking cost w_y ||y - r||_1 the conjugate is finite exactly
    on the infinity-ball of radius w_y, so the bound is w_y itself (and 0
    for a zero weight, whose conjugate domain is the origin).  Non-uniform
    per-channel weights are rejected: the bound would silently need the
    maximum weight.
    """
    wy = np.atleast_1d(np.asarray(objective.output_weight, dtype=float))
    if wy.size > 1 and not np.all(wy == wy[0]):
        raise UnsupportedObjectiveError(
            "per-channel output weights must be uniform for the analytic "
            "regularizer bound; got a non-uniform weight vector"
        )
    return float(wy[0])


@dataclass(frozen=True)
class BoxConstraint:
    """Per-step input box, replicated over the horizon."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.low, dtype=float))
        hi = np.atleast_1d(np.asarray(self.high, dtype=float))
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidInputError("box bounds must be finite")
        if lo.shape != hi.shape or np.any(lo > hi):
            raise InvalidInputError("box requires low <= high componentwise")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    def replicated(self, Tf, m):
        lo = np.broadcast_to(self.low, (m,))
        hi = np.broadcast_to(self.high, (m,))
        return np.tile(lo, Tf), np.tile(hi, Tf)


@dataclass(frozen=True)
class RobustConfig:
    """Ambiguity-set and penalty parameters.

    ``epsilon``: Wasserstein-ball radius; ``lambda_ini``: slack penalty on
    the past-output residual; ``row_norm``: the norm applied to each row
    of the uncertain data matrix (their sum is the transport cost norm).
    """

    epsilon: float = 0.0
    lambda_ini: float = 1e5
    row_norm: str = "inf"

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise InvalidInputError("epsilon must be finite and nonnegative")
        if not np.isfinite(self.lambda_ini) or self.lambda_ini <= 0:
            raise InvalidInputError("lambda_ini must be positive")
        if self.row_norm not in ("inf", "one", "two"):
            raise InvalidInputError(f"unknown row norm {self.row_norm!r}")


# ---------------------------------------------------------------------------
# LP construction


class _ProgramBuilder:
    """Accumulates variables, rows, bounds; emits a sparse LinearProgram."""

    def __init__(self):
        self.n = 0
        self.slices = {}
        self._cost = []
        self._bounds = []
        self._eq = ([], [], [], [])  # rows, cols, vals, rhs-chunks
        self._ub = ([], [], [], [])
        self._eq_rows = 0
        self._ub_rows = 0

    def add_var(self, name, size, lb=None, ub=None, cost=0.0):
        sl = slice(self.n, self.n + size)
        self.slices[name] = sl
        self.n += size
        lbs = np.broadcast_to(np.atleast_1d(np.asarray(lb, dtype=float)), (size,)) \
            if lb is not None else [None] * size
        ubs = np.broadcast_to(np.atleast_1d(np.asarray(ub, dtype=float)), (size,)) \
            if ub is not None else [None] * size
        self._bounds.extend(zip(lbs, ubs))
        c = np.broadcast_to(np.atleast_1d(np.asarray(cost, dtype=float)), (size,))
        self._cost.append(np.array(c))
        return sl

    def _add(self, store, row_count, entries, rhs):
        rows, cols, vals, rhs_chunks = store
        base = row_count
        for sl, spec in entries:
            width = sl.stop - sl.start
            if isinstance(spec, tuple) and spec[0] == "I":
                scale = float(spec[1])
                rows.append(base + np.arange(width))
                cols.append(sl.start + np.arange(width))
                vals.append(np.full(width, scale))
            elif isinstance(spec, tuple) and spec[0] == "row":
                coeffs = np.broadcast_to(
                    np.atleast_1d(np.asarray(spec[1], dtype=float)), (width,))
                rows.append(np.zeros(width, dtype=int) + base)
                cols.append(sl.start + np.arange(width))
                vals.append(np.array(coeffs))
            else:
                M = np.asarray(spec, dtype=float)
                nr = M.shape[0]
                rows.append(base + np.repeat(np.arange(nr), width))
                cols.append(sl.start + np.tile(np.arange(width), nr))
                vals.append(M.reshape(-1))
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        rhs_chunks.append(rhs)
        return row_count + rhs.shape[0]

    def add_eq(self, entries, rhs):
        self._eq_rows = self._add(self._eq, self._eq_rows, entries, rhs)

    def add_ub(self, entries, rhs):
        self._ub_rows = self._add(self._ub, self._ub_rows, entries, rhs)

    def _matrix(self, store, n_rows):
        rows, cols, vals, rhs_chunks = store
        if n_rows == 0:
            return None, None
        A = sps.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_rows, self.n),
        ).tocsr()
        return A, np.concatenate(rhs_chunks)

    def build(self):
        A_eq, b_eq = self._matrix(self._eq, self._eq_rows)
        A_ub, b_ub = self._matrix(self._ub, self._ub_rows)
        return LinearProgram(
            c=np.concatenate(self._cost) if self._cost else np.zeros(0),
            A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub, bounds=self._bounds,
        )


@dataclass
class AssembledProblem:
    """A constructed program plus the bookkeeping to read solutions back.

    ``slices`` maps variable-block names ('g', 'u', 'y', ...) to index
    ranges in the LP decision vector; ``meta`` records the problem
    dimensions and regularizer constants.
    """

    lp: LinearProgram
    slices: dict
    meta: dict = field(default_factory=dict)

    @property
    def g_slice(self):
        return self.slices["g"]

    def g_star(self, solution):
        return solution.x[self.g_slice]

    def u_plan(self, solution):
        Tf, m = self.meta["Tf"], self.meta["m"]
        return solution.x[self.slices["u"]].reshape(Tf, m)

    def y_plan(self, solution):
        Tf, p = self.meta["Tf"], self.meta["p"]
        return solution.x[self.slices["y"]].reshape(Tf, p)

    def to_lp_text(self):
        """Plain-text LP dump (objective, rows, bounds) for external checks."""
        names = np.empty(self.lp.n_vars, dtype=object)
        for block, sl in self.slices.items():
            for k in range(sl.stop - sl.start):
                names[sl.start + k] = f"{block}{k}"
        lines = ["minimize"]
        lines.append("  " + " + ".join(
            f"{c:+.12g} {names[i]}" for i, c in enumerate(self.lp.c) if c != 0.0
        ))
        lines.append("subject to")

        def emit(A, b, rel):
            A = A.tocsr() if sps.issparse(A) else sps.csr_matrix(A)
            for i in range(A.shape[0]):
                row = A.getrow(i)
                terms = " + ".join(
                    f"{v:+.12g} {names[j]}" for j, v in zip(row.indices, row.data)
                )
                lines.append(f"  {terms} {rel} {b[i]:.12g}")

        if self.lp.A_eq is not None and self.lp.A_eq.shape[0]:
            emit(self.lp.A_eq, self.lp.b_eq, "==")
        if self.lp.A_ub is not None and self.lp.A_ub.shape[0]:
            emit(self.lp.A_ub, self.lp.b_ub, "<=")
        lines.append("bounds")
        for i, (lo, hi) in enumerate(self.lp.bounds or []):
            if lo is not None or hi is not None:
                lo_s = "-inf" if lo is None else f"{lo:.12g}"
                hi_s = "+inf" if hi is None else f"{hi:.12g}"
                lines.append(f"  {lo_s} <= {names[i]} <= {hi_s}")
        return "\n".join(lines) + "\n"


def _flat(name, value, expected):
    v = as_vector(np.asarray(value, dtype=float).reshape(-1), name)
    if v.shape[0] != expected:
        raise InvalidInputError(f"{name} has length {v.shape[0]}, expected {expected}")
    return v


def _assert_input_consistency(blocks):
    # Up must have full row rank so that Up g = u_ini is always solvable;
    # this is implied by persistency of excitation of the collected input.
    want = blocks.m * blocks.Tini
    got = numerical_rank(blocks.Up)
    if got < want:
        raise ExcitationError(
            f"past-input block has rank {got} < {want}; the equality "
            "constraint may be infeasible (data not persistently exciting)"
        )


def _core_variables(b, blocks, objective, box, tie_break):
    """Common g/u/y variables, epigraph slacks and coupling rows."""
    K, m, p, Tf = blocks.K, blocks.m, blocks.p, blocks.Tf
    r = objective.reference_vector(Tf, p)
    wy = theta_sup(objective)
    lo, hi = box.replicated(Tf, m)
    g = b.add_var("g", K)
    u = b.add_var("u", m * Tf, lb=lo, ub=hi)
    y = b.add_var("y", p * Tf)
    su = b.add_var("su", m * Tf, cost=objective.input_weight + tie_break)
    sy = b.add_var("sy", p * Tf, cost=wy + tie_break)
    b.add_eq([(g, blocks.Uf), (u, ("I", -1.0))], np.zeros(m * Tf))
    b.add_eq([(g, blocks.Yf), (y, ("I", -1.0))], np.zeros(p * Tf))
    b.add_ub([(u, ("I", 1.0)), (su, ("I", -1.0))], np.zeros(m * Tf))
    b.add_ub([(u, ("I", -1.0)), (su, ("I", -1.0))], np.zeros(m * Tf))
    b.add_ub([(y, ("I", 1.0)), (sy, ("I", -1.0))], r)
    b.add_ub([(y, ("I", -1.0)), (sy, ("I", -1.0))], -r)
    return g


def _soft_ini_slack(b, blocks, g, y_ini, penalty):
    e = b.add_var("e", blocks.p * blocks.Tini)
    ss = b.add_var("ss", blocks.p * blocks.Tini, cost=penalty)
    b.add_eq([(g, blocks.Yp), (e, ("I", -1.0))], y_ini)
    b.add_ub([(e, ("I", 1.0)), (ss, ("I", -1.0))], np.zeros(blocks.p * blocks.Tini))
    b.add_ub([(e, ("I", -1.0)), (ss, ("I", -1.0))], np.zeros(blocks.p * blocks.Tini))


def assemble_deterministic(blocks, u_ini, y_ini, objective, box,
                           soft_ini_penalty=None, tie_break=0.0):
    """DeePC program over the data span.

    With ``soft_ini_penalty=None`` the past window enters as the hard
    equality (Up; Yp) g = (u_ini; y_ini); with a penalty value the
    past-output part is softened to an L1 term, which is the standard
    recourse when measured outputs are noise-corrupted and the equality
    may be inconsistent.

    ``tie_break`` adds the tiny secondary objective
    ``tie_break * (||u||_1 + ||y - r||_1)`` through the existing slack
    variables so that two solvers facing the same degenerate optimal face
    select comparable optima.
    """
    u_ini = _flat("u_ini", u_ini, blocks.m * blocks.Tini)
    y_ini = _flat("y_ini", y_ini, blocks.p * blocks.Tini)
    _assert_input_consistency(blocks)
    b = _ProgramBuilder()
    g = _core_variables(b, blocks, objective, box, tie_break)
    b.add_eq([(g, blocks.Up)], u_ini)
    if soft_ini_penalty is None:
        b.add_eq([(g, blocks.Yp)], y_ini)
    else:
        _soft_ini_slack(b, blocks, g, y_ini, float(soft_ini_penalty))
    return AssembledProblem(
        lp=b.build(),
        slices=b.slices,
        meta={"K": blocks.K, "Tini": blocks.Tini, "Tf": blocks.Tf,
              "m": blocks.m, "p": blocks.p,
              "theta_sup": theta_sup(objective), "epsilon": 0.0,
              "soft_ini_penalty": soft_ini_penalty},
    )


def assemble_robust(blocks, u_ini, y_ini, objective, cfg, box, tie_break=0.0):
    """Wasserstein-robust DeePC program (regularized soft-constrained LP).

    Encodes

        min_g  f1(Uf g) + f2(Yf g) + lambda_ini ||Yp g - y_ini||_1
               + eps * max( theta_sup ||col(g,0)||_*, lambda_ini ||col(g,-1)||_* )
        s.t.   Up g = u_ini,  Uf g in box,

    with the dual norm fixed by ``cfg.row_norm``: an infinity row norm
    dualizes to the 1-norm (so ||col(g,0)||_* = ||g||_1 and
    ||col(g,-1)||_* = ||g||_1 + 1), a 1-norm row norm dualizes to the
    infinity-norm.  The 2-norm variant is self-dual but needs a cone
    solver, which is out of scope here; it is rejected explicitly.

    At eps = 0 the regularizer is dropped and the program coincides with
    the soft-constrained one.
    """
    u_ini = _flat("u_ini", u_ini, blocks.m * blocks.Tini)
    y_ini = _flat("y_ini", y_ini, blocks.p * blocks.Tini)
    if cfg.row_norm == "two":
        raise UnsupportedObjectiveError(
            "row_norm='two' requires a second-order cone solver; this "
            "build supports the piecewise-linear 'inf' and 'one' row norms"
        )
    _assert_input_consistency(blocks)
    tsup = theta_sup(objective)
    lam = cfg.lambda_ini
    eps = cfg.epsilon

    b = _ProgramBuilder()
    g = _core_variables(b, blocks, objective, box, tie_break)
    b.add_eq([(g, blocks.Up)], u_ini)
    _soft_ini_slack(b, blocks, g, y_ini, lam)
    K = blocks.K
    if eps > 0.0:
        if cfg.row_norm == "inf":
            # dual is the 1-norm: t >= tsup * sum|g|, t >= lam * (sum|g| + 1)
            sg = b.add_var("sg", K)
            t = b.add_var("t", 1, cost=eps)
            b.add_ub([(g, ("I", 1.0)), (sg, ("I", -1.0))], np.zeros(K))
            b.add_ub([(g, ("I", -1.0)), (sg, ("I", -1.0))], np.zeros(K))
            b.add_ub([(sg, ("row", tsup)), (t, ("row", -1.0))], [0.0])
            b.add_ub([(sg, ("row", lam)), (t, ("row", -1.0))], [-lam])
        else:
            # dual is the inf-norm: t >= tsup * max|g|, t >= lam * max(max|g|, 1)
            gmax = b.add_var("gmax", 1, lb=0.0)
            t = b.add_var("t", 1, lb=lam, cost=eps)
            ones = np.ones((K, 1))
            b.add_ub([(g, ("I", 1.0)), (gmax, -ones)], np.zeros(K))
            b.add_ub([(g, ("I", -1.0)), (gmax, -ones)], np.zeros(K))
            b.add_ub([(gmax, ("row", tsup)), (t, ("row", -1.0))], [0.0])
            b.add_ub([(gmax, ("row", lam)), (t, ("row", -1.0))], [0.0])
    return AssembledProblem(
        lp=b.build(),
        slices=b.slices,
        meta={"K": K, "Tini": blocks.Tini, "Tf": blocks.Tf,
              "m": blocks.m, "p": blocks.p, "theta_sup": tsup,
              "epsilon": eps, "lambda_ini": lam, "row_norm": cfg.row_norm},
    )


def in_sample_cost(blocks, u_ini, y_ini, objective, lambda_ini, g):
    """Cost of a fixed g under the empirical (measured) data.

    f1(Uf g) + f2(Yf g) + lambda_ini ||Yp g - y_ini||_1, i.e. the
    expectation of the stage cost under the point distribution at the
    measurements.
    """
    g = _flat("g", g, blocks.K)
    y_ini = _flat("y_ini", y_ini, blocks.p * blocks.Tini)
    r = objective.reference_vector(blocks.Tf, blocks.p)
    wy = theta_sup(objective)
    u = blocks.Uf @ g
    y = blocks.Yf @ g
    slack = blocks.Yp @ g - y_ini
    return float(objective.input_weight * np.sum(np.abs(u))
                 + wy * np.sum(np.abs(y - r))
                 + lambda_ini * np.sum(np.abs(slack)))


def robust_regularizer(g, theta_sup_value, cfg):
    """eps * max(theta_sup ||col(g,0)||_*, lambda_ini ||col(g,-1)||_*)."""
    g = np.asarray(g, dtype=float).reshape(-1)
    g0 = np.append(g, 0.0)
    h = np.append(g, -1.0)
    return cfg.epsilon * max(
        theta_sup_value * dual_norm(cfg.row_norm, g0),
        cfg.lambda_ini * dual_norm(cfg.row_norm, h),
    )
