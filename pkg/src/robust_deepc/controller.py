"""Receding-horizon controllers over Hankel data, plus a model-based oracle.

The deterministic and robust controllers solve their respective programs,
apply the first ``s`` planned inputs, shift the past window forward and
re-solve.  The model-based predictive controller solves the same
finite-horizon objective through exact prediction matrices and exists so
that closed-loop equivalence on noise-free plants can be verified without
trusting the data-driven path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .deepc import (
    AssembledProblem,
    _ProgramBuilder,
    assemble_deterministic,
    assemble_robust,
    theta_sup,
)
from .errors import (
    InfeasibleProblemError,
    InvalidInputError,
    NumericalFailureError,
    RobustDeepcError,
)
from .lti import NoiseModel, Trajectory, make_rng, step
from .optim import solve_lp

__all__ = [
    "ControllerState",
    "RunReport",
    "deepc_step",
    "robust_deepc_step",
    "mpc_oracle_step",
    "run_closed_loop",
]


@dataclass
class ControllerState:
    """Rolling window of the last Tini applied inputs and measured outputs."""

    Tini: int
    m: int
    p: int
    u_hist: list = field(default_factory=list)
    y_hist: list = field(default_factory=list)
    t: int = 0

    @property
    def warm(self):
        return len(self.u_hist) == self.Tini

    def push(self, u, y):
        self.u_hist.append(np.asarray(u, dtype=float).reshape(self.m))
        self.y_hist.append(np.asarray(y, dtype=float).reshape(self.p))
        if len(self.u_hist) > self.Tini:
            self.u_hist.pop(0)
            self.y_hist.pop(0)
        self.t += 1

    def u_ini_vector(self):
        self._require_warm()
        return np.concatenate(self.u_hist)

    def y_ini_vector(self):
        self._require_warm()
        return np.concatenate(self.y_hist)

    def _require_warm(self):
        if not self.warm:
            raise InvalidInputError(
                f"controller state holds {len(self.u_hist)} of {self.Tini} "
                "required past steps"
            )


def _solve_assembled(problem, backend, feas_tol, opt_tol):
    return solve_lp(problem.lp, feas_tol=feas_tol, opt_tol=opt_tol,
                    backend=backend)


def deepc_step(blocks, state, objective, box, tie_break=0.0, backend="auto",
               feas_tol=1e-6, opt_tol=1e-8):
    """One deterministic plan: solve the hard-constrained program.

    Returns ``(u_star, g_star)`` with ``u_star`` of shape (Tf, m).  A
    noise-inconsistent past window makes the equality constraints
    unsatisfiable, which surfaces as :class:`InfeasibleProblemError`
    pointing at the robust variant.
    """
    problem = assemble_deterministic(
        blocks, state.u_ini_vector(), state.y_ini_vector(), objective, box,
        tie_break=tie_break)
    sol = _solve_assembled(problem, backend, feas_tol, opt_tol)
    if sol.status == "infeasible":
        raise InfeasibleProblemError(
            "deterministic program infeasible: the measured past window is "
            "not consistent with any trajectory in the data span (expected "
            "under noise); use robust_deepc_step instead"
        )
    if sol.status != "optimal":
        raise NumericalFailureError(f"solver returned status {sol.status}")
    return problem.u_plan(sol), problem.g_star(sol)


def robust_deepc_step(blocks, state, objective, cfg, box, tie_break=0.0,
                      backend="auto", feas_tol=1e-6, opt_tol=1e-8):
    """One robust plan: solve the regularized program.

    Feasibility is structural (full-row-rank past-input block plus a
    nonempty box), so anything other than an optimal status is a
    numerical failure.
    """
    problem = assemble_robust(
        blocks, state.u_ini_vector(), state.y_ini_vector(), objective, cfg,
        box, tie_break=tie_break)
    sol = _solve_assembled(problem, backend, feas_tol, opt_tol)
    if sol.status != "optimal":
        raise NumericalFailureError(f"solver returned status {sol.status}")
    return problem.u_plan(sol), problem.g_star(sol)


def _prediction_matrices(model, Tf):
    n, m, p = model.n, model.m, model.p
    phi = np.zeros((p * Tf, n))
    gam = np.zeros((p * Tf, m * Tf))
    # Markov parameters: y(k) = C A^k x + sum_{j<k} C A^(k-1-j) B u(j) + D u(k)
    markov = [model.D]
    Ak = np.eye(n)
    for _ in range(Tf - 1):
        markov.append(model.C @ Ak @ model.B)
        Ak = Ak @ model.A
    Ak = np.eye(n)
    for k in range(Tf):
        phi[k * p:(k + 1) * p] = model.C @ Ak
        Ak = Ak @ model.A
    for k in range(Tf):
        for j in range(k + 1):
            gam[k * p:(k + 1) * p, j * m:(j + 1) * m] = markov[k - j]
    return phi, gam


def mpc_oracle_step(model, x, objective, box, Tf, tie_break=0.0,
                    backend="auto", feas_tol=1e-6, opt_tol=1e-8):
    """Finite-horizon plan from the exact model and state.

    Solves the same weighted-1-norm objective as the data-driven
    controllers, but over the explicit prediction equations
    y = Phi x + Gamma u.  Returns the (Tf, m) input plan.
    """
    x = np.asarray(x, dtype=float).reshape(model.n)
    phi, gam = _prediction_matrices(model, Tf)
    r = objective.reference_vector(Tf, model.p)
    wy = theta_sup(objective)
    lo, hi = box.replicated(Tf, model.m)

    b = _ProgramBuilder()
    u = b.add_var("u", model.m * Tf, lb=lo, ub=hi)
    y = b.add_var("y", model.p * Tf)
    su = b.add_var("su", model.m * Tf, cost=objective.input_weight + tie_break)
    sy = b.add_var("sy", model.p * Tf, cost=wy + tie_break)
    b.add_eq([(u, -gam), (y, ("I", 1.0))], phi @ x)
    b.add_ub([(u, ("I", 1.0)), (su, ("I", -1.0))], np.zeros(model.m * Tf))
    b.add_ub([(u, ("I", -1.0)), (su, ("I", -1.0))], np.zeros(model.m * Tf))
    b.add_ub([(y, ("I", 1.0)), (sy, ("I", -1.0))], r)
    b.add_ub([(y, ("I", -1.0)), (sy, ("I", -1.0))], -r)
    problem = AssembledProblem(lp=b.build(), slices=b.slices,
                               meta={"Tf": Tf, "m": model.m, "p": model.p})
    sol = _solve_assembled(problem, backend, feas_tol, opt_tol)
    if sol.status == "infeasible":
        raise InfeasibleProblemError("input box admits no feasible plan")
    if sol.status != "optimal":
        raise NumericalFailureError(f"solver returned status {sol.status}")
    return problem.u_plan(sol)


@dataclass
class RunReport:
    """Closed-loop record of one receding-horizon run."""

    closed_loop: Trajectory
    per_step_objective: np.ndarray
    accumulated_cost: float
    solver_failures: int
    constraint_violations: int
    solver_calls: int
    reference: np.ndarray

    def to_csv(self, path):
        """Rows ``t,u_*,y_*,r_*,stage_cost`` with %.12e formatting."""
        traj = self.closed_loop
        m, p = traj.u.shape[1], traj.y.shape[1]
        header = (["t"] + [f"u_{i+1}" for i in range(m)]
                  + [f"y_{i+1}" for i in range(p)]
                  + [f"r_{i+1}" for i in range(p)] + ["stage_cost"])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for k in range(traj.length):
                vals = [k * traj.dt, *traj.u[k], *traj.y[k],
                        *self.reference[k], self.per_step_objective[k]]
                fh.write(",".join(f"{v:.12e}" for v in vals) + "\n")

    def summary(self):
        return {
            "accumulated_cost": self.accumulated_cost,
            "solver_failures": self.solver_failures,
            "constraint_violations": self.constraint_violations,
            "solver_calls": self.solver_calls,
            "steps": self.closed_loop.length,
        }


def _window(reference, t, Tf):
    """Tf rows of the reference starting at t, holding the last value."""
    n = reference.shape[0]
    idx = np.minimum(np.arange(t, t + Tf), n - 1)
    return reference[idx]


def run_closed_loop(model, mode, blocks, objective, cfg, box, reference,
                    steps, s=1, noise=None, seed=0, x0=None, tie_break=0.0,
                    backend="auto", feas_tol=1e-6, opt_tol=1e-8):
    """Receding-horizon execution for ``steps`` plant transitions.

    ``mode`` is ``"deterministic"``, ``"robust"``, or ``"mpc_oracle"``
    (the latter reads the exact simulated state and ignores ``cfg``).
    The first Tini steps apply (box-clipped) zero inputs to fill the past
    window; afterwards a plan is computed every ``s`` steps and its next
    entries applied.  Solver errors increment ``solver_failures`` and the
    previous plan keeps being consumed.  ``reference`` is an (N, p) array;
    windows past its end hold the final row.
    """
    Tini, Tf = blocks.Tini, blocks.Tf
    if not 1 <= s <= Tf - 1:
        raise InvalidInputError(f"apply-count s={s} must satisfy 1 <= s <= Tf-1")
    if steps <= Tini:
        raise InvalidInputError("steps must exceed the warm-up window Tini")
    reference = np.asarray(reference, dtype=float)
    if reference.ndim == 1:
        reference = reference[:, None]
    if reference.shape[1] != model.p:
        raise InvalidInputError(
            f"reference has {reference.shape[1]} channels, expected {model.p}"
        )
    noise = noise or NoiseModel()
    rng = make_rng(seed)
    x = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n)

    state = ControllerState(Tini=Tini, m=model.m, p=model.p)
    u_warm = np.clip(np.zeros(model.m), box.low, box.high)

    u_log = np.zeros((steps, model.m))
    y_log = np.zeros((steps, model.p))
    x_log = np.zeros((steps + 1, model.n))
    x_log[0] = x
    stage = np.zeros(steps)
    failures = violations = calls = 0
    plan = None
    plan_pos = 0

    for t in range(steps):
        if t < Tini:
            u_t = u_warm
        else:
            if (t - Tini) % s == 0:
                window = _window(reference, t, Tf).reshape(-1)
                obj_t = objective.with_reference(window)
                try:
                    calls += 1
                    if mode == "deterministic":
                        plan, _ = deepc_step(blocks, state, obj_t, box,
                                             tie_break, backend, feas_tol, opt_tol)
                    elif mode == "robust":
                        plan, _ = robust_deepc_step(blocks, state, obj_t, cfg, box,
                                                    tie_break, backend, feas_tol,
                                                    opt_tol)
                    elif mode == "mpc_oracle":
                        plan = mpc_oracle_step(model, x, obj_t, box, Tf,
                                               tie_break, backend, feas_tol,
                                               opt_tol)
                    else:
                        raise InvalidInputError(f"unknown mode {mode!r}")
                    plan_pos = 0
                except InvalidInputError:
                    raise
                except RobustDeepcError:
                    failures += 1
            if plan is None:
                u_t = u_warm
            else:
                u_t = plan[min(plan_pos, Tf - 1)]
                plan_pos += 1
        if np.any(u_t < box.low - 1e-9) or np.any(u_t > box.high + 1e-9):
            violations += 1
        v_t = noise.sample(1, model.q, rng)[0]
        x_next, y_t = step(model, x, u_t, v_t)
        u_log[t] = u_t
        y_log[t] = y_t
        x_log[t + 1] = x_next
        r_t = reference[min(t, reference.shape[0] - 1)]
        stage[t] = objective.stage_cost(u_t, y_t, r_t)
        state.push(u_t, y_t)
        x = x_next

    traj = Trajectory(u=u_log, y=y_log, x=x_log, dt=model.dt)
    ref_realized = np.array([reference[min(t, reference.shape[0] - 1)]
                             for t in range(steps)])
    return RunReport(
        closed_loop=traj,
        per_step_objective=stage,
        accumulated_cost=float(np.sum(stage)),
        solver_failures=failures,
        constraint_violations=violations,
        solver_calls=calls,
        reference=ref_realized,
    )
