"""Stochastic LTI simulation and excited data collection.

Systems follow the recursion

    x(t+1) = A x(t) + B u(t) + E v(t)
    y(t)   = C x(t) + D u(t) + F v(t)

with the disturbance v drawn i.i.d. from a :class:`NoiseModel`.  All
randomness flows through numpy's counter-based Philox generator so that a
seed fully determines a trajectory, bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ExcitationError, InvalidInputError
from .optim import as_matrix, as_vector, numerical_rank

__all__ = [
    "StateSpaceModel",
    "NoiseModel",
    "Trajectory",
    "step",
    "simulate",
    "lag",
    "collect_excited_data",
    "trajectory_to_csv",
    "trajectory_from_csv",
    "model_to_json",
    "model_from_json",
]


def make_rng(seed):
    """Philox generator for ``seed`` (int or anything SeedSequence accepts)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class StateSpaceModel:
    """Matrices and dimensions of the plant.

    Construction validates dimension consistency, controllability of
    (A, B) and observability of (A, C); violating either raises
    :class:`InvalidInputError`.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray = None
    F: np.ndarray = None
    dt: float = 1.0

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C")
        D = as_matrix(self.D, "D")
        n, m, p = A.shape[0], B.shape[1], C.shape[0]
        E = np.zeros((n, 0)) if self.E is None else as_matrix(self.E, "E")
        F = np.zeros((p, 0)) if self.F is None else as_matrix(self.F, "F")
        q = E.shape[1]
        expected = {"A": (n, n), "B": (n, m), "C": (p, n), "D": (p, m),
                    "E": (n, q), "F": (p, q)}
        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D), ("E", E), ("F", F)):
            if mat.shape != expected[name]:
                raise InvalidInputError(
                    f"{name} has shape {mat.shape}, expected {expected[name]}"
                )
        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D), ("E", E), ("F", F)):
            object.__setattr__(self, name, mat)
        if numerical_rank(_krylov_stack(A, B, n, by_rows=False), 1e-8) < n:
            raise InvalidInputError("(A, B) is not controllable")
        if numerical_rank(_krylov_stack(A.T, C.T, n, by_rows=False).T, 1e-8) < n:
            raise InvalidInputError("(A, C) is not observable")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.E.shape[1]


def _krylov_stack(A, B, depth, by_rows):
    """[B, AB, ..., A^(depth-1) B] stacked horizontally (controllability
    matrix); transpose-tricked by callers for observability."""
    blocks = []
    M = B
    for _ in range(depth):
        blocks.append(M)
        M = A @ M
    return np.hstack(blocks) if not by_rows else np.vstack(blocks)


@dataclass(frozen=True)
class NoiseModel:
    """Disturbance distribution for the stacked channel v.

    ``std`` is a scalar or per-channel array of standard deviations;
    ``truncation`` (in standard deviations, two-sided) applies to the
    ``truncated_gaussian`` kind only.  ``seed`` is the default stream used
    when the caller does not supply one.
    """

    kind: str = "none"
    std: object = 0.0
    truncation: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "truncated_gaussian"):
            raise InvalidInputError(f"unknown noise kind {self.kind!r}")
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if not np.all(np.isfinite(std)) or np.any(std < 0):
            raise InvalidInputError("noise std must be finite and nonnegative")
        object.__setattr__(self, "std", std)
        if self.kind == "truncated_gaussian" and not self.truncation > 0:
            raise InvalidInputError("truncation must be positive")

    def _std_vector(self, q):
        if self.std.size == 1:
            return np.full(q, self.std[0])
        if self.std.size != q:
            raise InvalidInputError(
                f"noise std has {self.std.size} channels, model expects {q}"
            )
        return self.std

    def sample(self, steps, q, rng):
        """Draw a (steps, q) block of disturbances from ``rng``."""
        if self.kind == "none" or q == 0:
            return np.zeros((steps, q))
        std = self._std_vector(q)
        v = rng.normal(size=(steps, q))
        if self.kind == "truncated_gaussian":
            bad = np.abs(v) > self.truncation
            while np.any(bad):
                v[bad] = rng.normal(size=int(bad.sum()))
                bad = np.abs(v) > self.truncation
        return v * std


@dataclass(frozen=True)
class Trajectory:
    """Recorded input/output run; ``x`` is kept for test oracles only (the
    controllers are output-feedback and never read it)."""

    u: np.ndarray
    y: np.ndarray
    x: np.ndarray = None
    dt: float = 1.0

    def __post_init__(self):
        u = as_matrix(np.atleast_2d(self.u), "u")
        y = as_matrix(np.atleast_2d(self.y), "y")
        if u.shape[0] != y.shape[0] or u.shape[0] < 1:
            raise InvalidInputError(
                f"u and y must share length >= 1, got {u.shape[0]} and {y.shape[0]}"
            )
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if self.x is not None:
            x = as_matrix(self.x, "x")
            if x.shape[0] != u.shape[0] + 1:
                raise InvalidInputError("x must have one more row than u")
            object.__setattr__(self, "x", x)

    @property
    def length(self):
        return self.u.shape[0]


def step(model, x, u, v=None):
    """One transition: returns ``(A x + B u + E v, C x + D u + F v)``."""
    x = as_vector(np.atleast_1d(x), "state")
    u = as_vector(np.atleast_1d(u), "input")
    v = np.zeros(model.q) if v is None else as_vector(np.atleast_1d(v), "disturbance")
    if x.shape[0] != model.n or u.shape[0] != model.m or v.shape[0] != model.q:
        raise InvalidInputError(
            f"expected dims (n={model.n}, m={model.m}, q={model.q}), got "
            f"({x.shape[0]}, {u.shape[0]}, {v.shape[0]})"
        )
    x_next = model.A @ x + model.B @ u + model.E @ v
    y = model.C @ x + model.D @ u + model.F @ v
    return x_next, y


def simulate(model, x0, u_seq, noise=None, seed=None, rng=None):
    """Roll the system forward under an input sequence.

    ``noise`` defaults to the noiseless model; the draw stream comes from
    ``rng`` if given, else from ``seed``, else from ``noise.seed``.  With
    ``kind="none"`` the result is deterministic.
    """
    u_seq = as_matrix(np.atleast_2d(u_seq), "input sequence")
    if u_seq.shape[0] < 1:
        raise InvalidInputError("input sequence must be nonempty")
    if u_seq.shape[1] != model.m:
        raise InvalidInputError(
            f"input sequence has {u_seq.shape[1]} channels, model has {model.m}"
        )
    noise = noise or NoiseModel()
    if rng is None:
        rng = make_rng(noise.seed if seed is None else seed)
    T = u_seq.shape[0]
    v = noise.sample(T, model.q, rng)
    x = np.zeros((T + 1, model.n))
    y = np.zeros((T, model.p))
    x[0] = as_vector(np.atleast_1d(x0), "x0")
    for t in range(T):
        x[t + 1], y[t] = step(model, x[t], u_seq[t], v[t])
    return Trajectory(u=u_seq, y=y, x=x, dt=model.dt)


def lag(model):
    """Smallest l such that col(C, CA, ..., C A^(l-1)) has rank n."""
    blocks = []
    M = model.C
    for ell in range(1, model.n + 1):
        blocks.append(M)
        if numerical_rank(np.vstack(blocks), 1e-8) == model.n:
            return ell
        M = M @ model.A
    raise InvalidInputError("observability matrix never reaches full rank")


def collect_excited_data(model, T, input_low, input_high, noise=None, seed=0,
                         pe_order=None, retries=10):
    """Excite the plant with i.i.d. uniform box inputs and record the run.

    When ``pe_order`` is given, the drawn input must be persistently
    exciting of that order; failing draws are retried (fresh inputs and
    noise from the same stream) up to ``retries`` times before raising
    :class:`ExcitationError`.
    """
    from .hankel import is_persistently_exciting  # deferred: hankel imports lti

    if T < 1:
        raise InvalidInputError("T must be at least 1")
    low = np.broadcast_to(np.atleast_1d(np.asarray(input_low, dtype=float)),
                          (model.m,)).copy()
    high = np.broadcast_to(np.atleast_1d(np.asarray(input_high, dtype=float)),
                           (model.m,)).copy()
    if np.any(low > high):
        raise InvalidInputError("input_low must not exceed input_high")
    noise = noise or NoiseModel()
    rng = make_rng(seed)
    last_rank = None
    for _ in range(retries):
        u = rng.uniform(low, high, size=(T, model.m))
        if pe_order is not None and not is_persistently_exciting(u, pe_order):
            from .hankel import block_hankel

            if T >= pe_order:
                last_rank = numerical_rank(block_hankel(u, pe_order))
            continue
        return simulate(model, np.zeros(model.n), u, noise=noise, rng=rng)
    required = model.m * pe_order if pe_order is not None else None
    raise ExcitationError(
        f"failed to draw a persistently exciting input of order {pe_order} "
        f"in {retries} attempts (achieved rank {last_rank}, required {required})"
    )


# ---------------------------------------------------------------------------
# serialization


def trajectory_to_csv(traj, path):
    """Write ``t,u_1..u_m,y_1..y_p`` rows with %.12e formatting."""
    m, p = traj.u.shape[1], traj.y.shape[1]
    header = ["t"] + [f"u_{i+1}" for i in range(m)] + [f"y_{i+1}" for i in range(p)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(traj.length):
            vals = [k * traj.dt, *traj.u[k], *traj.y[k]]
            fh.write(",".join(f"{v:.12e}" for v in vals) + "\n")


def trajectory_from_csv(path):
    """Inverse of :func:`trajectory_to_csv` (state is not stored)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(tok) for tok in line.strip().split(",")]
                for line in fh if line.strip()]
    m = sum(1 for name in header if name.startswith("u_"))
    p = sum(1 for name in header if name.startswith("y_"))
    data = np.asarray(rows)
    dt = float(data[1, 0] - data[0, 0]) if data.shape[0] > 1 else 1.0
    return Trajectory(u=data[:, 1:1 + m], y=data[:, 1 + m:1 + m + p], dt=dt)


def model_to_json(model, path):
    payload = {name: getattr(model, name).tolist()
               for name in ("A", "B", "C", "D", "E", "F")}
    payload["dt"] = model.dt
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def model_from_json(path):
    with open(path) as fh:
        payload = json.load(fh)
    mats = {name: np.asarray(payload[name], dtype=float)
            for name in ("A", "B", "C", "D", "E", "F")}
    return StateSpaceModel(dt=float(payload.get("dt", 1.0)), **mats)
