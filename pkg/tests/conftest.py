import numpy as np
import pytest

from robust_deepc.errors import InvalidInputError
from robust_deepc.lti import StateSpaceModel


def rng_for(seed):
    return np.random.Generator(np.random.Philox(seed))


def random_system(rng, n_max=4, m_max=2, p_max=2, spectral_radius=0.85,
                  full_noise=False):
    """Random controllable/observable discrete-time system.

    ``full_noise=True`` attaches the process/measurement channel pattern
    E = (I, 0), F = (0, I); otherwise the system is noise-free (q = 0).
    """
    for _ in range(50):
        n = int(rng.integers(1, n_max + 1))
        m = int(rng.integers(1, m_max + 1))
        p = int(rng.integers(1, p_max + 1))
        A = rng.normal(size=(n, n))
        radius = np.max(np.abs(np.linalg.eigvals(A)))
        if radius > 0:
            A *= spectral_radius / radius
        B = rng.normal(size=(n, m))
        C = rng.normal(size=(p, n))
        D = np.zeros((p, m))
        kwargs = {}
        if full_noise:
            kwargs["E"] = np.hstack([np.eye(n), np.zeros((n, p))])
            kwargs["F"] = np.hstack([np.zeros((p, n)), np.eye(p)])
        try:
            return StateSpaceModel(A=A, B=B, C=C, D=D, **kwargs)
        except InvalidInputError:
            continue
    raise RuntimeError("could not draw a controllable/observable system")


def single_integrator():
    return StateSpaceModel(A=[[1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0]])


@pytest.fixture
def integrator():
    return single_integrator()
