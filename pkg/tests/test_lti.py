import numpy as np
import pytest

from conftest import random_system, rng_for, single_integrator

from robust_deepc.errors import ExcitationError, InvalidInputError
from robust_deepc.lti import (
    NoiseModel,
    StateSpaceModel,
    Trajectory,
    collect_excited_data,
    lag,
    model_from_json,
    model_to_json,
    simulate,
    step,
    trajectory_from_csv,
    trajectory_to_csv,
)


# ---------------------------------------------------------------------------
# construction invariants


def test_model_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        StateSpaceModel(A=np.eye(2), B=np.ones((3, 1)), C=np.eye(2), D=np.zeros((2, 1)))


def test_model_rejects_uncontrollable():
    # B in the span of the first coordinate with diagonal A: second state
    # is unreachable.
    with pytest.raises(InvalidInputError, match="controllable"):
        StateSpaceModel(A=np.diag([0.5, 0.4]), B=[[1.0], [0.0]],
                        C=np.eye(2), D=np.zeros((2, 1)))


def test_model_rejects_unobservable():
    with pytest.raises(InvalidInputError, match="observable"):
        StateSpaceModel(A=np.diag([0.5, 0.4]), B=np.ones((2, 1)),
                        C=[[1.0, 0.0]], D=np.zeros((1, 1)))


# ---------------------------------------------------------------------------
# step


def test_step_single_integrator(integrator):
    x_next, y = step(integrator, [1.0], [-1.0])
    assert x_next[0] == pytest.approx(0.0)
    assert y[0] == pytest.approx(1.0)


def test_step_equilibrium(integrator):
    x_next, y = step(integrator, [0.0], [0.0])
    assert x_next[0] == 0.0 and y[0] == 0.0


def test_step_scalar_arithmetic():
    # x+ = 0.5*2 + 1*1 + 1*0.5 = 2.5 ; y = 2*2 + 0 + 0 = 4
    model = StateSpaceModel(A=[[0.5]], B=[[1.0]], C=[[2.0]], D=[[0.0]],
                            E=[[1.0]], F=[[0.0]])
    x_next, y = step(model, [2.0], [1.0], [0.5])
    assert x_next[0] == pytest.approx(2.5)
    assert y[0] == pytest.approx(4.0)


def test_step_dimension_mismatch(integrator):
    with pytest.raises(InvalidInputError):
        step(integrator, [1.0, 2.0], [0.0])


# ---------------------------------------------------------------------------
# simulate


def test_simulate_integrator_ramp(integrator):
    traj = simulate(integrator, [0.0], [[1.0], [1.0], [1.0]])
    assert np.allclose(traj.y[:, 0], [0.0, 1.0, 2.0])


def test_simulate_equilibrium_stays_zero():
    model = random_system(rng_for(0))
    traj = simulate(model, np.zeros(model.n), np.zeros((5, model.m)))
    assert np.allclose(traj.y, 0.0)


def test_simulate_semigroup_property():
    model = random_system(rng_for(1))
    rng = rng_for(2)
    u = rng.normal(size=(10, model.m))
    full = simulate(model, np.zeros(model.n), u)
    head = simulate(model, np.zeros(model.n), u[:4])
    tail = simulate(model, head.x[4], u[4:])
    assert np.allclose(np.vstack([head.y, tail.y]), full.y, atol=1e-12)


def test_simulate_output_equation_consistency():
    model = random_system(rng_for(3))
    u = rng_for(4).normal(size=(8, model.m))
    traj = simulate(model, np.zeros(model.n), u)
    for t in range(8):
        y_expect = model.C @ traj.x[t] + model.D @ traj.u[t]
        assert np.max(np.abs(traj.y[t] - y_expect)) <= 1e-12


def test_simulate_bit_identical_for_equal_seeds():
    model = random_system(rng_for(5), full_noise=True)
    noise = NoiseModel(kind="gaussian", std=0.1, seed=99)
    u = rng_for(6).normal(size=(20, model.m))
    a = simulate(model, np.zeros(model.n), u, noise=noise)
    b = simulate(model, np.zeros(model.n), u, noise=noise)
    assert np.array_equal(a.y, b.y)
    c = simulate(model, np.zeros(model.n), u, noise=noise, seed=100)
    assert not np.array_equal(a.y, c.y)


def test_truncated_gaussian_within_bounds():
    model = random_system(rng_for(7), full_noise=True)
    noise = NoiseModel(kind="truncated_gaussian", std=0.5, truncation=2.0, seed=1)
    rng = rng_for(8)
    draws = noise.sample(500, model.q, rng)
    assert np.max(np.abs(draws)) <= 2.0 * 0.5 + 1e-15


def test_noise_model_validation():
    with pytest.raises(InvalidInputError):
        NoiseModel(kind="laplace")
    with pytest.raises(InvalidInputError):
        NoiseModel(kind="gaussian", std=-1.0)
    with pytest.raises(InvalidInputError):
        NoiseModel(kind="truncated_gaussian", std=1.0, truncation=0.0)


# ---------------------------------------------------------------------------
# lag


def test_lag_full_state_measurement():
    model = random_system(rng_for(9))
    full = StateSpaceModel(A=model.A, B=model.B, C=np.eye(model.n),
                           D=np.zeros((model.n, model.m)))
    assert lag(full) == 1


def test_lag_shift_system():
    model = StateSpaceModel(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]],
                            C=[[1.0, 0.0]], D=[[0.0]])
    assert lag(model) == 2


def test_lag_scalar():
    model = StateSpaceModel(A=[[0.9]], B=[[1.0]], C=[[1.0]], D=[[0.0]])
    assert lag(model) == 1


# ---------------------------------------------------------------------------
# collect_excited_data


def test_collect_single_sample_within_bounds(integrator):
    traj = collect_excited_data(integrator, 1, -2.0, 3.0, seed=0)
    assert traj.length == 1
    assert -2.0 <= traj.u[0, 0] <= 3.0


def test_collect_persistently_exciting(integrator):
    traj = collect_excited_data(integrator, 20, -1.0, 1.0, seed=1, pe_order=5)
    from robust_deepc.hankel import is_persistently_exciting

    assert is_persistently_exciting(traj.u, 5)


def test_collect_degenerate_bounds_fail_excitation(integrator):
    with pytest.raises(ExcitationError, match="rank"):
        collect_excited_data(integrator, 10, 1.0, 1.0, seed=2, pe_order=2)


# ---------------------------------------------------------------------------
# serialization


def test_trajectory_csv_roundtrip(tmp_path):
    model = random_system(rng_for(10), full_noise=True)
    noise = NoiseModel(kind="gaussian", std=0.05, seed=3)
    u = rng_for(11).uniform(-1, 1, size=(12, model.m))
    traj = simulate(model, np.zeros(model.n), u, noise=noise)
    path = tmp_path / "traj.csv"
    trajectory_to_csv(traj, path)
    header = path.read_text().splitlines()[0]
    assert header == "t," + ",".join(
        [f"u_{i+1}" for i in range(model.m)] + [f"y_{i+1}" for i in range(model.p)]
    )
    again = trajectory_from_csv(path)
    assert np.allclose(again.u, traj.u, atol=1e-11)
    assert np.allclose(again.y, traj.y, atol=1e-11)


def test_model_json_roundtrip(tmp_path):
    model = random_system(rng_for(12), full_noise=True)
    path = tmp_path / "model.json"
    model_to_json(model, path)
    again = model_from_json(path)
    for name in ("A", "B", "C", "D", "E", "F"):
        assert np.array_equal(getattr(model, name), getattr(again, name))
    assert again.dt == model.dt


def test_trajectory_validation():
    with pytest.raises(InvalidInputError):
        Trajectory(u=np.ones((3, 1)), y=np.ones((2, 1)))
