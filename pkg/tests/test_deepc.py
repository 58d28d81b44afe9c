import numpy as np
import pytest

from conftest import random_system, rng_for, single_integrator

from robust_deepc.deepc import (
    BoxConstraint,
    Objective,
    RobustConfig,
    assemble_deterministic,
    assemble_robust,
    in_sample_cost,
    robust_regularizer,
    theta_sup,
)
from robust_deepc.errors import (
    ExcitationError,
    InvalidInputError,
    UnsupportedObjectiveError,
)
from robust_deepc.hankel import build_blocks, min_samples
from robust_deepc.lti import NoiseModel, collect_excited_data, lag, simulate
from robust_deepc.optim import solve_lp


WIDE_BOX = BoxConstraint(low=-100.0, high=100.0)


def integrator_blocks(Tini=1, Tf=3, T=None, seed=0):
    model = single_integrator()
    T = T or min_samples(1, Tini, Tf, 1)
    traj = collect_excited_data(model, T, -1, 1, seed=seed,
                                pe_order=Tini + Tf + 1)
    return model, build_blocks(traj, Tini, Tf)


def noisy_case(rng, Tini=2, Tf=3, noise_std=0.05, seed=0):
    """Small stochastic system with noisy collected data and past window."""
    model = random_system(rng, n_max=2, m_max=1, p_max=1, full_noise=True)
    T = min_samples(model.m, Tini, Tf, model.n) + 5
    noise = NoiseModel(kind="gaussian", std=noise_std, seed=seed)
    data = collect_excited_data(model, T, -1, 1, noise=noise, seed=seed,
                                pe_order=Tini + Tf + model.n)
    blocks = build_blocks(data, Tini, Tf)
    recent = simulate(model, np.zeros(model.n),
                      rng.uniform(-1, 1, size=(Tini, model.m)),
                      noise=noise, seed=seed + 1)
    return model, blocks, recent.u.reshape(-1), recent.y.reshape(-1)


# ---------------------------------------------------------------------------
# theta_sup


def test_theta_sup_values():
    assert theta_sup(Objective(1.0, 200.0)) == 200.0
    assert theta_sup(Objective(1.0, 1.0)) == 1.0
    assert theta_sup(Objective(1.0, 0.0)) == 0.0


def test_theta_sup_uniform_vector_ok():
    assert theta_sup(Objective(1.0, [5.0, 5.0, 5.0])) == 5.0


def test_theta_sup_rejects_nonuniform_weights():
    with pytest.raises(UnsupportedObjectiveError):
        theta_sup(Objective(1.0, [1.0, 2.0]))


# ---------------------------------------------------------------------------
# deterministic assembly


def test_deterministic_drives_integrator_to_zero():
    model, blocks = integrator_blocks()
    obj = Objective(1.0, 200.0)
    problem = assemble_deterministic(blocks, [0.0], [1.0], obj, WIDE_BOX)
    sol = solve_lp(problem.lp)
    assert sol.status == "optimal"
    u = problem.u_plan(sol)
    assert u[0, 0] == pytest.approx(-1.0, abs=1e-6)


def test_deterministic_equilibrium_is_free():
    model, blocks = integrator_blocks()
    problem = assemble_deterministic(blocks, [0.0], [0.0],
                                     Objective(1.0, 200.0), WIDE_BOX)
    sol = solve_lp(problem.lp)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(0.0, abs=1e-7)
    assert np.allclose(problem.u_plan(sol), 0.0, atol=1e-6)


def test_deterministic_infeasible_for_noisy_past_window():
    # Noise-free data span, noise-corrupted past outputs: with p*Tini > n
    # the output rows are consistent only for exact trajectories.
    model, blocks = integrator_blocks(Tini=2, Tf=3)
    clean = simulate(model, [0.3], [[0.5], [-0.2]])
    y_noisy = clean.y.reshape(-1) + np.array([0.01, -0.02])
    problem = assemble_deterministic(blocks, clean.u.reshape(-1), y_noisy,
                                     Objective(1.0, 200.0), WIDE_BOX)
    assert solve_lp(problem.lp).status == "infeasible"


def test_deterministic_requires_exciting_past_input_block():
    model = single_integrator()
    traj = simulate(model, [0.0], np.ones((8, 1)))  # constant input: rank 1
    blocks = build_blocks(traj, 2, 2)
    with pytest.raises(ExcitationError):
        assemble_deterministic(blocks, [1.0, 1.0], [0.0, 1.0],
                               Objective(1.0, 200.0), WIDE_BOX)


# ---------------------------------------------------------------------------
# robust assembly


def test_robust_zero_radius_matches_soft_program():
    rng = rng_for(1)
    for seed in range(3):
        model, blocks, u_ini, y_ini = noisy_case(rng, seed=seed)
        obj = Objective(1.0, 200.0)
        cfg = RobustConfig(epsilon=0.0, lambda_ini=1e5)
        robust = assemble_robust(blocks, u_ini, y_ini, obj, cfg, WIDE_BOX)
        soft = assemble_deterministic(blocks, u_ini, y_ini, obj, WIDE_BOX,
                                      soft_ini_penalty=1e5)
        a = solve_lp(robust.lp)
        b = solve_lp(soft.lp)
        assert a.status == b.status == "optimal"
        assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_regularizer_formula_at_paper_parameters():
    # with lambda_ini = 1e5 >= theta_sup = 200 the slack branch always
    # dominates: eps * max(200||g||_1, 1e5(||g||_1 + 1)) = 100 (||g||_1 + 1)
    cfg = RobustConfig(epsilon=1e-3, lambda_ini=1e5, row_norm="inf")
    rng = rng_for(2)
    for _ in range(20):
        g = rng.normal(size=30)
        expected = 100.0 * (np.sum(np.abs(g)) + 1.0)
        assert robust_regularizer(g, 200.0, cfg) == pytest.approx(expected)


def test_regularizer_branch_crossover():
    # theta_sup = 200, lambda_ini = 1: branches cross at ||g||_1 = 1/199
    cfg = RobustConfig(epsilon=1.0, lambda_ini=1.0, row_norm="inf")
    a_star = 1.0 / 199.0
    g = np.array([a_star])
    assert 200.0 * a_star == pytest.approx(1.0 * (a_star + 1.0))
    assert robust_regularizer(g, 200.0, cfg) == pytest.approx(200.0 * a_star)
    g_small = np.array([a_star / 2])
    assert robust_regularizer(g_small, 200.0, cfg) == pytest.approx(
        1.0 * (a_star / 2 + 1.0))
    g_big = np.array([2 * a_star])
    assert robust_regularizer(g_big, 200.0, cfg) == pytest.approx(200.0 * 2 * a_star)


def test_robust_rejects_two_norm():
    rng = rng_for(3)
    model, blocks, u_ini, y_ini = noisy_case(rng)
    with pytest.raises(UnsupportedObjectiveError, match="cone"):
        assemble_robust(blocks, u_ini, y_ini, Objective(1.0, 200.0),
                        RobustConfig(epsilon=0.1, row_norm="two"), WIDE_BOX)


def _tight_completion(problem, blocks, y_ini, obj, cfg, g0):
    """Decision vector with g pinned and every slack at its minimal value."""
    x = np.zeros(problem.lp.n_vars)
    sl = problem.slices
    r = obj.reference_vector(blocks.Tf, blocks.p)
    u = blocks.Uf @ g0
    y = blocks.Yf @ g0
    e = blocks.Yp @ g0 - y_ini
    x[sl["g"]] = g0
    x[sl["u"]] = u
    x[sl["y"]] = y
    x[sl["e"]] = e
    x[sl["su"]] = np.abs(u)
    x[sl["sy"]] = np.abs(y - r)
    x[sl["ss"]] = np.abs(e)
    tsup = theta_sup(obj)
    if cfg.row_norm == "inf":
        x[sl["sg"]] = np.abs(g0)
        x[sl["t"]] = max(tsup * np.sum(np.abs(g0)),
                         cfg.lambda_ini * (np.sum(np.abs(g0)) + 1.0))
    else:
        gmax = np.max(np.abs(g0))
        x[sl["gmax"]] = gmax
        x[sl["t"]] = max(tsup * gmax, cfg.lambda_ini * max(gmax, 1.0))
    return x


def test_robust_lp_objective_matches_formula_at_pinned_g():
    # The LP cost at the tight slack completion of a fixed g must reproduce
    # in_sample_cost + regularizer, and the completion must satisfy every
    # assembled row: this validates the epigraph encoding independent of
    # any solver.
    rng = rng_for(4)
    for row_norm in ("inf", "one"):
        model, blocks, u_ini, y_ini = noisy_case(rng, seed=10)
        obj = Objective(1.0, 200.0)
        cfg = RobustConfig(epsilon=0.05, lambda_ini=50.0, row_norm=row_norm)
        problem = assemble_robust(blocks, u_ini, y_ini, obj, cfg, WIDE_BOX)
        g_part, *_ = np.linalg.lstsq(blocks.Up, u_ini, rcond=None)
        _, svals, vt = np.linalg.svd(blocks.Up)
        null_basis = vt[np.count_nonzero(svals > 1e-10 * svals[0]):].T
        for _ in range(50):
            g0 = g_part + null_basis @ rng.normal(size=null_basis.shape[1]) * 0.5
            x = _tight_completion(problem, blocks, y_ini, obj, cfg, g0)
            scale = 1.0 + np.max(np.abs(x))
            assert np.max(np.abs(problem.lp.A_eq @ x - problem.lp.b_eq)) <= 1e-9 * scale
            assert np.max(problem.lp.A_ub @ x - problem.lp.b_ub) <= 1e-9 * scale
            expected = (in_sample_cost(blocks, u_ini, y_ini, obj,
                                       cfg.lambda_ini, g0)
                        + robust_regularizer(g0, theta_sup(obj), cfg))
            got = float(problem.lp.c @ x)
            assert got == pytest.approx(expected, abs=1e-9 * (1 + expected))


def test_robust_optimal_value_nondecreasing_in_epsilon():
    rng = rng_for(5)
    model, blocks, u_ini, y_ini = noisy_case(rng, seed=20)
    obj = Objective(1.0, 200.0)
    values = []
    for eps in (0.0, 1e-3, 1e-2, 1e-1):
        cfg = RobustConfig(epsilon=eps, lambda_ini=100.0)
        sol = solve_lp(assemble_robust(blocks, u_ini, y_ini, obj, cfg,
                                       WIDE_BOX).lp)
        assert sol.status == "optimal"
        values.append(sol.objective)
    assert all(b >= a - 1e-6 * (1 + abs(a)) for a, b in zip(values, values[1:]))


def test_robust_recovers_hard_constraint_when_feasible():
    # noise-free data and consistent past window: with a large slack
    # penalty the optimal slack vanishes
    model, blocks = integrator_blocks(Tini=2, Tf=3)
    clean = simulate(model, [0.4], [[0.3], [-0.1]])
    obj = Objective(1.0, 200.0)
    cfg = RobustConfig(epsilon=1e-3, lambda_ini=1e5)
    problem = assemble_robust(blocks, clean.u.reshape(-1), clean.y.reshape(-1),
                              obj, cfg, WIDE_BOX)
    sol = solve_lp(problem.lp)
    g = problem.g_star(sol)
    slack = blocks.Yp @ g - clean.y.reshape(-1)
    assert np.sum(np.abs(slack)) <= 1e-6


# ---------------------------------------------------------------------------
# in_sample_cost


def test_in_sample_cost_zero_cases():
    model, blocks = integrator_blocks()
    obj = Objective(1.0, 200.0)
    assert in_sample_cost(blocks, [0.0], [0.0], obj, 1e5,
                          np.zeros(blocks.K)) == 0.0


def test_in_sample_cost_unit_vector_matches_column():
    model, blocks = integrator_blocks(Tini=1, Tf=2)
    obj = Objective(1.0, 200.0)
    j = 1
    g = np.zeros(blocks.K)
    g[j] = 1.0
    u_ini = blocks.Up[:, j]
    y_ini = blocks.Yp[:, j]
    cost = in_sample_cost(blocks, u_ini, y_ini, obj, 1e5, g)
    expected = (np.sum(np.abs(blocks.Uf[:, j]))
                + 200.0 * np.sum(np.abs(blocks.Yf[:, j])))
    assert cost == pytest.approx(expected)


def test_robust_optimum_consistent_with_reported_objective():
    rng = rng_for(6)
    model, blocks, u_ini, y_ini = noisy_case(rng, seed=30)
    obj = Objective(1.0, 200.0)
    cfg = RobustConfig(epsilon=0.01, lambda_ini=200.0)
    problem = assemble_robust(blocks, u_ini, y_ini, obj, cfg, WIDE_BOX)
    sol = solve_lp(problem.lp, opt_tol=1e-10)
    g = problem.g_star(sol)
    recomposed = (in_sample_cost(blocks, u_ini, y_ini, obj, cfg.lambda_ini, g)
                  + robust_regularizer(g, theta_sup(obj), cfg))
    assert recomposed == pytest.approx(sol.objective, abs=1e-6 * (1 + sol.objective))


# ---------------------------------------------------------------------------
# plumbing


def test_validation_errors():
    with pytest.raises(InvalidInputError):
        Objective(-1.0, 1.0)
    with pytest.raises(InvalidInputError):
        BoxConstraint(low=1.0, high=0.0)
    with pytest.raises(InvalidInputError):
        RobustConfig(epsilon=-0.1)
    with pytest.raises(InvalidInputError):
        RobustConfig(lambda_ini=0.0)
    model, blocks = integrator_blocks()
    with pytest.raises(InvalidInputError):
        assemble_deterministic(blocks, [0.0, 1.0], [0.0],
                               Objective(1.0, 1.0), WIDE_BOX)


def test_lp_text_dump_mentions_all_blocks():
    model, blocks = integrator_blocks()
    problem = assemble_robust(blocks, [0.0], [1.0], Objective(1.0, 200.0),
                              RobustConfig(epsilon=0.01), WIDE_BOX)
    text = problem.to_lp_text()
    assert text.startswith("minimize")
    for token in ("subject to", "bounds", "g0", "u0", "sg0", "t0", "=="):
        assert token in text
