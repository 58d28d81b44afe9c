"""Batch experiment driver: quadcopter benchmark, tracking, radius sweep.

Subcommands:

* ``collect`` -- excite the plant and store the raw trajectory;
* ``track`` -- robust receding-horizon tracking of a figure-8 reference;
* ``sweep-eps`` -- closed-loop step-tracking cost across Wasserstein radii,
  averaged over repetitions with independent seeds;
* ``verify`` -- run the numerical theory oracles at desk scale;
* ``equivalence`` -- deterministic controller vs. exact-model predictive
  control on random systems.

Everything is seed-complete: the summary JSON written next to each
artifact is enough to reproduce the run.  Exit codes: 0 success, 2
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import run_closed_loop
from .deepc import BoxConstraint, Objective, RobustConfig
from .errors import ConfigError, InvalidInputError, RobustDeepcError
from .hankel import build_blocks, min_samples
from .lti import (
    NoiseModel,
    StateSpaceModel,
    collect_excited_data,
    lag,
    model_from_json,
    trajectory_to_csv,
)
from .optim import dual_norm
from .verify import (
    DiscreteDistribution,
    MaxAffineFunction,
    OutOfSampleExperiment,
    lemma_worst_case_oracle,
    monte_carlo_bound_check,
    thm2_worst_case_oracle,
    wasserstein_discrete,
)

__all__ = [
    "ExperimentConfig",
    "quadcopter_model",
    "figure8_reference",
    "step_reference",
    "run_tracking_experiment",
    "run_epsilon_sweep",
    "main",
]


def quadcopter_model():
    """12-state quadcopter linearized about hover, sampled at 0.1 s.

    Full state measurement; process noise enters every state and
    measurement noise every output: E = (I, 0), F = (0, I).
    """
    A = np.array([
        [1, 0, 0, 0.1, 0, 0, 0, 0.049, 0, 0, 0.0016, 0],
        [0, 1, 0, 0, 0.1, 0, -0.049, 0, 0, -0.0016, 0, 0],
        [0, 0, 1, 0, 0, 0.1, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 1, 0, 0, 0, 0.981, 0, 0, 0.049, 0],
        [0, 0, 0, 0, 1, 0, -0.981, 0, 0, -0.049, 0, 0],
        [0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 1, 0, 0, 0.1, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0.1, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0.1],
        [0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1],
    ], dtype=float)
    B = np.array([
        [-2.3e-5, 0, 2.3e-5, 0],
        [0, -2.3e-5, 0, 2.3e-5],
        [1.75e-2, 1.75e-2, 1.75e-2, 1.75e-2],
        [-9.21e-4, 0, 9.21e-4, 0],
        [0, -9.21e-4, 0, 9.21e-4],
        [0.35, 0.35, 0.35, 0.35],
        [0, 2.8e-3, 0, -2.8e-3],
        [-2.8e-3, 0, 2.8e-3, 0],
        [3.7e-3, -3.7e-3, 3.7e-3, -3.7e-3],
        [0, 5.6e-2, 0, -5.6e-2],
        [-5.6e-2, 0, 5.6e-2, 0],
        [7.3e-2, -7.3e-2, 7.3e-2, -7.3e-2],
    ])
    n, p = 12, 12
    return StateSpaceModel(
        A=A, B=B, C=np.eye(p), D=np.zeros((p, 4)),
        E=np.hstack([np.eye(n), np.zeros((n, p))]),
        F=np.hstack([np.zeros((p, n)), np.eye(p)]),
        dt=0.1,
    )


def figure8_reference(steps, dt, amplitude, period, z0=0.0, p=12):
    """Lissajous 1:2 figure-8 on the (x, y) position channels.

    x(t) = A sin(2 pi t / period), y(t) = A sin(2 pi t / period)
    cos(2 pi t / period), z held at ``z0``; all other channels zero.
    """
    if period <= 0:
        raise ConfigError("period must be positive")
    t = np.arange(steps) * dt
    phase = 2.0 * np.pi * t / period
    ref = np.zeros((steps, p))
    ref[:, 0] = amplitude * np.sin(phase)
    if p > 1:
        ref[:, 1] = amplitude * np.sin(phase) * np.cos(phase)
    if p > 2:
        ref[:, 2] = z0
    return ref


def step_reference(steps, p=12, magnitude=1.0):
    """Constant setpoint ``magnitude`` on the (up to three) position channels."""
    ref = np.zeros((steps, p))
    ref[:, :min(3, p)] = magnitude
    return ref


@dataclass
class ExperimentConfig:
    """Seed-complete description of a benchmark run (JSON round-trips)."""

    model: str = "quadcopter"
    Tini: int = 1
    Tf: int = 30
    samples: int = 214
    input_weight: float = 1.0
    output_weight: float = 200.0
    lambda_ini: float = 1e5
    epsilon: float = 1e-3
    eps_grid: list = field(default_factory=lambda: [0.0, 1e-5, 1e-4, 1e-3,
                                                    1e-2, 1e-1, 1.0])
    row_norm: str = "inf"
    box_low: float = -0.7007
    box_high: float = 0.2993
    noise_kind: str = "gaussian"
    noise_std: float = 0.005
    truncation: float = 3.0
    seed: int = 0
    steps: int = 200
    apply_steps: int = 1
    reps: int = 15
    amplitude: float = 1.0
    period: float = 16.0
    z0: float = 0.0
    step_magnitude: float = 1.0
    workers: int = 2
    out_dir: str = "out"

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    def to_dict(self):
        return dataclasses.asdict(self)

    def load_model(self):
        if self.model == "quadcopter":
            return quadcopter_model()
        return model_from_json(self.model)

    def noise_model(self):
        return NoiseModel(kind=self.noise_kind, std=self.noise_std,
                          truncation=self.truncation, seed=self.seed)

    def objective(self, reference=None):
        return Objective(self.input_weight, self.output_weight, reference)

    def robust(self, epsilon=None):
        return RobustConfig(
            epsilon=self.epsilon if epsilon is None else epsilon,
            lambda_ini=self.lambda_ini, row_norm=self.row_norm)

    def box(self, m):
        return BoxConstraint(low=np.full(m, self.box_low),
                             high=np.full(m, self.box_high))

    def validate(self, model):
        try:
            need = min_samples(model.m, self.Tini, self.Tf, model.n)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc
        if self.samples < need:
            raise ConfigError(
                f"samples={self.samples} below the excitation minimum "
                f"{need} for (m={model.m}, Tini={self.Tini}, Tf={self.Tf}, "
                f"n={model.n})"
            )
        if not 1 <= self.apply_steps <= self.Tf - 1:
            raise ConfigError("apply_steps must lie in [1, Tf-1]")
        if self.steps <= self.Tini:
            raise ConfigError("steps must exceed Tini")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.epsilon < 0 or any(e < 0 for e in self.eps_grid):
            raise ConfigError("epsilon values must be nonnegative")
        if not self.eps_grid:
            raise ConfigError("eps_grid must be nonempty")


def _collect_blocks(cfg, model, data_seed):
    noise = cfg.noise_model()
    data = collect_excited_data(
        model, cfg.samples, cfg.box_low, cfg.box_high, noise=noise,
        seed=data_seed, pe_order=cfg.Tini + cfg.Tf + model.n)
    return data, build_blocks(data, cfg.Tini, cfg.Tf, require_pe=model.n)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def run_tracking_experiment(cfg, out_dir=None):
    """Figure-8 tracking under the robust controller; writes CSV + JSON.

    Returns the :class:`RunReport`.  The summary JSON echoes the full
    configuration, making the run reproducible from the artifact alone.
    """
    model = cfg.load_model()
    cfg.validate(model)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data, blocks = _collect_blocks(cfg, model, data_seed=cfg.seed)
    reference = figure8_reference(cfg.steps, model.dt, cfg.amplitude,
                                  cfg.period, cfg.z0, p=model.p)
    report = run_closed_loop(
        model, "robust", blocks, cfg.objective(), cfg.robust(),
        cfg.box(model.m), reference, steps=cfg.steps, s=cfg.apply_steps,
        noise=cfg.noise_model(), seed=cfg.seed + 1)
    k = min(3, model.p)
    pos_err = np.linalg.norm(report.closed_loop.y[:, :k] - reference[:, :k],
                             axis=1)
    trajectory_to_csv(data, out / "data.csv")
    report.to_csv(out / "tracking.csv")
    summary = {
        "config": cfg.to_dict(),
        "mean_position_error": float(np.mean(pos_err)),
        **report.summary(),
    }
    _write_json(out / "summary.json", summary)
    return report


def _sweep_cell(args):
    """One (epsilon, repetition) closed-loop run; top-level for pickling."""
    cfg_dict, eps, rep = args
    cfg = ExperimentConfig(**cfg_dict)
    model = cfg.load_model()
    try:
        # repetition seeds are shared across epsilons (paired comparison)
        data, blocks = _collect_blocks(cfg, model, data_seed=(cfg.seed, rep, 0))
        reference = step_reference(cfg.steps, p=model.p,
                                   magnitude=cfg.step_magnitude)
        report = run_closed_loop(
            model, "robust", blocks, cfg.objective(), cfg.robust(eps),
            cfg.box(model.m), reference, steps=cfg.steps, s=cfg.apply_steps,
            noise=cfg.noise_model(), seed=(cfg.seed, rep, 1))
        return {"epsilon": eps, "rep": rep, "cost": report.accumulated_cost,
                "failures": report.solver_failures}
    except RobustDeepcError as exc:
        return {"epsilon": eps, "rep": rep, "cost": float("nan"),
                "failures": 1, "error": str(exc)}


def run_epsilon_sweep(cfg, out_dir=None, parallel=True):
    """Closed-loop step-tracking cost per Wasserstein radius.

    Each radius is run ``cfg.reps`` times with repetition-indexed seeds
    (identical across radii, so comparisons are paired).  Emits
    ``sweep.csv`` with ``epsilon,mean_cost,std_cost,failures`` rows merged
    in fixed (radius, repetition) order regardless of execution order.
    """
    model = cfg.load_model()
    cfg.validate(model)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(cfg.to_dict(), eps, rep)
             for eps in cfg.eps_grid for rep in range(cfg.reps)]
    if parallel and cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(cell) for cell in cells]
    by_key = {(r["epsilon"], r["rep"]): r for r in results}
    rows = []
    for eps in cfg.eps_grid:
        cell = [by_key[(eps, rep)] for rep in range(cfg.reps)]
        costs = np.array([c["cost"] for c in cell])
        ok = np.isfinite(costs)
        rows.append({
            "epsilon": eps,
            "mean_cost": float(np.mean(costs[ok])) if np.any(ok) else float("nan"),
            "std_cost": float(np.std(costs[ok], ddof=1)) if ok.sum() > 1 else 0.0,
            "failures": int(sum(c["failures"] for c in cell)),
        })
    with open(out / "sweep.csv", "w") as fh:
        fh.write("epsilon,mean_cost,std_cost,failures\n")
        for row in rows:
            fh.write(f"{row['epsilon']:.12e},{row['mean_cost']:.12e},"
                     f"{row['std_cost']:.12e},{row['failures']}\n")
    _write_json(out / "summary.json", {"config": cfg.to_dict(), "cells": results})
    return rows


def _run_verify_suite(out, seed=0):
    """Desk-scale oracle checks; returns (all_passed, detail dict)."""
    rng = np.random.Generator(np.random.Philox(seed))
    detail = {}

    ok = True
    for trial in range(5):
        k1, k2 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        p1 = DiscreteDistribution(rng.normal(size=(k1, 2)), rng.dirichlet(np.ones(k1)))
        p2 = DiscreteDistribution(rng.normal(size=(k2, 2)), rng.dirichlet(np.ones(k2)))
        d12 = wasserstein_discrete(p1, p2, "inf")
        d21 = wasserstein_discrete(p2, p1, "inf")
        ok &= abs(d12 - d21) <= 1e-8
    detail["wasserstein_symmetry"] = bool(ok)

    radii = (1.0, 10.0, 100.0, 1000.0)
    lemma_ok = True
    for trial in range(6):
        r, q = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        L = MaxAffineFunction.weighted_one_norm(rng.uniform(0.3, 2.0, size=r))
        b = rng.normal(size=q)
        threshold = L.theta_bound() * dual_norm("inf", b)
        for lam, expect in ((1.3 * threshold, True), (0.7 * threshold, False)):
            if lam <= 0:
                continue
            rep = lemma_worst_case_oracle(L, b, rng.normal(size=(r, q)), lam,
                                          radii, row_norm="inf", seed=trial)
            lemma_ok &= rep.converged == expect
    detail["lemma_classification"] = bool(lemma_ok)

    thm_ok = True
    model = StateSpaceModel(A=[[1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0]],
                            E=[[0.0]], F=[[1.0]])
    for trial in range(4):
        noise = NoiseModel(kind="gaussian", std=0.05, seed=trial)
        data = collect_excited_data(model, 3, -1, 1, noise=noise, seed=trial)
        blocks = build_blocks(data, 1, 1)
        g = rng.normal(size=blocks.K)
        h = np.append(g, -1.0)
        obj = Objective(1.0, 2.0, reference=np.zeros((1, 1)))
        cfg = RobustConfig(epsilon=0.3, lambda_ini=3.0, row_norm="inf")
        rep = thm2_worst_case_oracle(blocks, h, [0.0], [float(rng.normal())],
                                     obj, cfg, radii, seed=trial)
        rel = abs(rep.sup_estimates[-1] - rep.closed_form) / (1 + abs(rep.closed_form))
        thm_ok &= rel <= 0.02
        rep_box = thm2_worst_case_oracle(blocks, h, [0.0], [0.1], obj, cfg,
                                         radii, support_radius=2.0, seed=trial)
        thm_ok &= rep_box.sup_estimates[-1] <= rep_box.closed_form + 1e-6
    detail["thm2_reformulation"] = bool(thm_ok)

    exp = OutOfSampleExperiment(
        model=model, u_data=rng.uniform(-1, 1, size=(8, 1)),
        u_recent=rng.uniform(-1, 1, size=(1, 1)), Tini=1, Tf=2,
        objective=Objective(1.0, 2.0, reference=np.zeros((2, 1))),
        lambda_ini=10.0,
        noise=NoiseModel(kind="truncated_gaussian", std=0.05, seed=3))
    h = np.append(rng.normal(size=exp.K), -1.0)
    coverage, mean_cost = monte_carlo_bound_check(exp, h, np.inf, trials=120,
                                                  seed=seed)
    detail["monte_carlo"] = {"coverage": coverage, "mean": mean_cost,
                             "well_formed": bool(0.0 <= coverage <= 1.0)}
    ok_all = bool(detail["wasserstein_symmetry"] and detail["lemma_classification"]
                  and detail["thm2_reformulation"]
                  and detail["monte_carlo"]["well_formed"])
    _write_json(Path(out) / "verify.json", {"passed": ok_all, "detail": detail})
    return ok_all, detail


def _run_equivalence(out, systems=5, seed=0, tol=1e-5):
    """Deterministic controller vs exact-model oracle on random systems."""
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    details = []
    for trial in range(systems):
        model = _random_test_system(rng)
        Tini = lag(model)
        Tf = 5
        T = min_samples(model.m, Tini, Tf, model.n) + 5
        data = collect_excited_data(model, T, -1, 1, seed=(seed, trial),
                                    pe_order=Tini + Tf + model.n)
        blocks = build_blocks(data, Tini, Tf)
        box = BoxConstraint(low=-np.ones(model.m), high=np.ones(model.m))
        obj = Objective(1.0, 200.0)
        ref = np.zeros((12, model.p))
        runs = {}
        for mode in ("deterministic", "mpc_oracle"):
            runs[mode] = run_closed_loop(model, mode, blocks, obj, None, box,
                                         ref, steps=12, s=1, seed=0,
                                         tie_break=1e-9)
        dev = float(np.max(np.abs(runs["deterministic"].closed_loop.y
                                  - runs["mpc_oracle"].closed_loop.y)))
        worst = max(worst, dev)
        details.append({"trial": trial, "max_output_deviation": dev})
    passed = worst <= tol
    _write_json(Path(out) / "equivalence.json",
                {"passed": bool(passed), "worst_deviation": worst,
                 "tolerance": tol, "runs": details})
    return passed, worst


def _random_test_system(rng, n_max=3):
    while True:
        n = int(rng.integers(1, n_max + 1))
        m = int(rng.integers(1, 3))
        p = int(rng.integers(1, 3))
        A = rng.normal(size=(n, n))
        radius = np.max(np.abs(np.linalg.eigvals(A)))
        if radius > 0:
            A *= 0.85 / radius
        try:
            return StateSpaceModel(A=A, B=rng.normal(size=(n, m)),
                                   C=rng.normal(size=(p, n)),
                                   D=np.zeros((p, m)))
        except InvalidInputError:
            continue


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="robust-deepc",
        description="Data-driven predictive control benchmark driver")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--eps", help="epsilon (comma list for sweep-eps)")
    common.add_argument("--tini", type=int)
    common.add_argument("--tf", type=int)
    common.add_argument("--lambda-ini", type=float, dest="lambda_ini")
    common.add_argument("--samples", type=int)
    common.add_argument("--reps", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--apply", type=int, dest="apply_steps")
    common.add_argument("--noise-std", type=float, dest="noise_std")
    common.add_argument("--workers", type=int)
    sub.add_parser("collect", parents=[common])
    sub.add_parser("track", parents=[common])
    sub.add_parser("sweep-eps", parents=[common])
    sub.add_parser("verify", parents=[common])
    eq = sub.add_parser("equivalence", parents=[common])
    eq.add_argument("--systems", type=int, default=5)
    return parser


def _config_from_args(args):
    cfg = (ExperimentConfig.from_json(args.config) if args.config
           else ExperimentConfig())
    overrides = {
        "seed": args.seed, "out_dir": args.out, "Tini": args.tini,
        "Tf": args.tf, "lambda_ini": args.lambda_ini,
        "samples": args.samples, "reps": args.reps, "steps": args.steps,
        "apply_steps": args.apply_steps, "noise_std": args.noise_std,
        "workers": args.workers,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    if args.eps is not None:
        values = [float(tok) for tok in str(args.eps).split(",") if tok != ""]
        if not values:
            raise ConfigError("--eps given without values")
        cfg.epsilon = values[0]
        if len(values) > 1 or args.command == "sweep-eps":
            cfg.eps_grid = values
    return cfg


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        out = Path(cfg.out_dir)
        if args.command == "collect":
            model = cfg.load_model()
            cfg.validate(model)
            out.mkdir(parents=True, exist_ok=True)
            data, _ = _collect_blocks(cfg, model, data_seed=cfg.seed)
            trajectory_to_csv(data, out / "data.csv")
            _write_json(out / "summary.json", {"config": cfg.to_dict(),
                                               "samples": data.length})
        elif args.command == "track":
            report = run_tracking_experiment(cfg)
            print(f"accumulated_cost={report.accumulated_cost:.6e} "
                  f"violations={report.constraint_violations} "
                  f"failures={report.solver_failures}")
        elif args.command == "sweep-eps":
            rows = run_epsilon_sweep(cfg)
            for row in rows:
                print(f"eps={row['epsilon']:.3e} mean={row['mean_cost']:.6e} "
                      f"std={row['std_cost']:.3e} failures={row['failures']}")
        elif args.command == "verify":
            out.mkdir(parents=True, exist_ok=True)
            passed, _ = _run_verify_suite(out, seed=cfg.seed)
            print(f"verify: {'pass' if passed else 'FAIL'}")
            if not passed:
                return 3
        elif args.command == "equivalence":
            out.mkdir(parents=True, exist_ok=True)
            passed, worst = _run_equivalence(out, systems=args.systems,
                                             seed=cfg.seed)
            print(f"equivalence: worst deviation {worst:.3e} "
                  f"({'pass' if passed else 'FAIL'})")
            if not passed:
                return 3
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RobustDeepcError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
