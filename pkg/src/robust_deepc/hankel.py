"""Block Hankel predictors: construction, excitation checks, membership.

A length-T input/output record is organized into past/future Hankel
blocks (Up, Yp, Uf, Yf); persistently exciting data makes the stacked
blocks a complete non-parametric model of the plant, in the sense that a
tuple (u_ini, y_ini, u, y) is a system trajectory exactly when it lies in
their column span.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ExcitationError, InvalidInputError
from .lti import lag
from .optim import as_matrix, as_vector, least_squares_residual, numerical_rank

__all__ = [
    "HankelBlocks",
    "block_hankel",
    "is_persistently_exciting",
    "min_samples",
    "build_blocks",
    "trajectory_residual",
]


def block_hankel(w, L):
    """Depth-L block Hankel matrix of a (T, q) signal.

    Column j stacks w(j), ..., w(j+L-1) channel-major, giving a
    (q L) x (T - L + 1) matrix.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    w = as_matrix(w, "signal")
    T, q = w.shape
    if L < 1 or T < L:
        raise InvalidInputError(f"need T >= L >= 1, got T={T}, L={L}")
    H = np.empty((q * L, T - L + 1))
    for i in range(L):
        H[i * q:(i + 1) * q, :] = w[i:i + T - L + 1].T
    return H


def is_persistently_exciting(u, L, rel_tol=1e-8):
    """True iff the depth-L block Hankel of ``u`` has full row rank.

    False in particular whenever T < (m + 1) L - 1: the matrix then has
    fewer columns than rows and cannot reach rank m L.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if L < 1:
        raise InvalidInputError("order L must be at least 1")
    T, m = u.shape
    if T < L or T < (m + 1) * L - 1:
        return False
    return numerical_rank(block_hankel(u, L), rel_tol) == m * L


def min_samples(m, Tini, Tf, n):
    """Minimum record length for excitation of order Tini + Tf + n:
    (m + 1)(Tini + Tf + n) - 1."""
    for name, v in (("m", m), ("Tini", Tini), ("Tf", Tf), ("n", n)):
        if v < 1:
            raise InvalidInputError(f"{name} must be positive, got {v}")
    return (m + 1) * (Tini + Tf + n) - 1


@dataclass(frozen=True)
class HankelBlocks:
    """Partitioned data matrices of the non-parametric predictor.

    Up/Yp hold the first Tini block rows, Uf/Yf the last Tf block rows of
    the depth-(Tini+Tf) Hankel matrices; all four share K = T - Tini - Tf + 1
    columns, the dimension of the combination variable.
    """

    Up: np.ndarray
    Yp: np.ndarray
    Uf: np.ndarray
    Yf: np.ndarray
    m: int
    p: int
    Tini: int
    Tf: int
    T: int

    def __post_init__(self):
        for name in ("Up", "Yp", "Uf", "Yf"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        K = self.T - self.Tini - self.Tf + 1
        if K < 1:
            raise InvalidInputError("record shorter than Tini + Tf")
        shapes = {
            "Up": (self.m * self.Tini, K),
            "Yp": (self.p * self.Tini, K),
            "Uf": (self.m * self.Tf, K),
            "Yf": (self.p * self.Tf, K),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise InvalidInputError(f"{name} has shape {got}, expected {want}")

    @property
    def K(self):
        return self.T - self.Tini - self.Tf + 1

    def stacked(self):
        """col(Up, Yp, Uf, Yf)."""
        return np.vstack([self.Up, self.Yp, self.Uf, self.Yf])


def build_blocks(traj, Tini, Tf, require_pe=None, model=None):
    """Partition a trajectory into :class:`HankelBlocks`.

    ``require_pe`` is the assumed system order n; when given, the input
    must be persistently exciting of order Tini + Tf + n.  When ``model``
    is supplied and Tini < lag(model), a non-fatal warning is emitted
    (past windows shorter than the lag do not pin the initial state
    uniquely).
    """
    if Tini < 1 or Tf < 1:
        raise InvalidInputError("Tini and Tf must be positive")
    T = traj.length
    L = Tini + Tf
    if T < L:
        raise InvalidInputError(f"trajectory length {T} shorter than Tini+Tf={L}")
    m = traj.u.shape[1]
    p = traj.y.shape[1]
    if require_pe is not None:
        order = L + int(require_pe)
        if not is_persistently_exciting(traj.u, order):
            achieved = (numerical_rank(block_hankel(traj.u, order))
                        if T >= order else 0)
            raise ExcitationError(
                f"input not persistently exciting of order {order}: "
                f"Hankel rank {achieved}, required {m * order}"
            )
    if model is not None and Tini < lag(model):
        warnings.warn(
            f"Tini={Tini} is below the system lag {lag(model)}; the past "
            "window may not determine the initial state uniquely",
            stacklevel=2,
        )
    Hu = block_hankel(traj.u, L)
    Hy = block_hankel(traj.y, L)
    return HankelBlocks(
        Up=Hu[: m * Tini], Uf=Hu[m * Tini:],
        Yp=Hy[: p * Tini], Yf=Hy[p * Tini:],
        m=m, p=p, Tini=Tini, Tf=Tf, T=T,
    )


def trajectory_residual(blocks, u_ini, y_ini, u, y):
    """Distance of a candidate tuple from the predictor's column span.

    Returns ``min_g ||col(Up, Yp, Uf, Yf) g - col(u_ini, y_ini, u, y)||_2``;
    values at numerical zero certify the tuple as a plant trajectory.
    """
    parts = [
        ("u_ini", u_ini, blocks.m * blocks.Tini),
        ("y_ini", y_ini, blocks.p * blocks.Tini),
        ("u", u, blocks.m * blocks.Tf),
        ("y", y, blocks.p * blocks.Tf),
    ]
    flat = []
    for name, val, want in parts:
        v = as_vector(np.asarray(val, dtype=float).reshape(-1), name)
        if v.shape[0] != want:
            raise InvalidInputError(f"{name} has length {v.shape[0]}, expected {want}")
        flat.append(v)
    rhs = np.concatenate(flat)
    return least_squares_residual(blocks.stacked(), rhs)
