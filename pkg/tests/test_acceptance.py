"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary section at the end
lists every criterion.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from diffnet.engine import DiffusionSystem, NetworkState, StepConfig
from diffnet.harness import ExperimentConfig, cmd_run, cmd_sweep
from diffnet.harness.checks import (
    centroid_identity_deviation,
    disagreement_slope,
    mh_optimality_gap,
    noise_moment_checks,
)
from diffnet.landscape import NNSaddleLoss, Quadratic, StochasticOracle, check_gradient, check_hessian
from diffnet.stationarity import Region, classify, min_eigenvalue
from diffnet.topology import (
    NoiseProfile,
    asymmetric_mh_policy,
    build_graph,
    mixing_rate,
    perron_vector,
    policy_objective,
    random_policy,
    uniform_policy,
)

pytestmark = pytest.mark.acceptance

# a point away from the saddle, so the data-sampling part of the noise is active
OFF_SADDLE = np.array([0.4, -0.3, 0.2, 0.5, -0.1, 0.3])


def test_01_linear_speedup(tmp_path, criterion):
    cfg = ExperimentConfig.load(None, {"out": str(tmp_path)})
    assert cfg.agents == [1, 2, 4, 8, 16] and len(cfg.seeds) == 20
    t0 = time.perf_counter()
    res = cmd_sweep(cfg)
    wall = time.perf_counter() - t0
    fit = res.fits["uniform"]
    slope = fit.get("slope", float("nan"))
    meds = ", ".join(f"K={K}:{res.stats[('uniform', K)].median:g}" for K in cfg.agents)
    criterion(1, "linear speedup", -1.3 <= slope <= -0.7 and wall <= 300,
              f"slope {slope:.3f} in [-1.3, -0.7], medians {meds}, {wall:.1f}s (<= 300s)")


def test_02_variance_reduction(criterion):
    model = NNSaddleLoss(2, 0.01)
    m2 = {}
    for K in (1, 4, 16):
        oracle = StochasticOracle(model, np.full(K, 0.1), seed=11)
        noise = oracle.noise_profile(OFF_SADDLE)
        m2[K] = noise_moment_checks(oracle, OFF_SADDLE, np.full(K, 1 / K), noise, 100_000).m2
    rel = {K: abs(m2[K] * K / m2[1] - 1) for K in (4, 16)}
    criterion(2, "variance reduction", max(rel.values()) <= 0.05,
              f"E|s|^2 K=1 {m2[1]:.4g}, K=4 {m2[4]:.4g}, K=16 {m2[16]:.4g}; "
              f"relative error vs 1/K: {rel[4]:.3%}, {rel[16]:.3%} (<= 5%)")


def test_03_covariance_sandwich(criterion):
    model = NNSaddleLoss(2, 0.01)
    K = 8
    sigma = np.resize([0.1, 0.2], K)
    oracle = StochasticOracle(model, sigma, seed=12)
    graph = build_graph("random", K, prob=0.5, seed=3)
    ok, parts = True, []
    for w in (np.zeros(model.dim), OFF_SADDLE):
        noise = oracle.noise_profile(w)
        for name, pol in (("uniform", uniform_policy(graph)), ("mh", asymmetric_mh_policy(graph, noise))):
            m = noise_moment_checks(oracle, w, pol.p, noise, 100_000)
            tol = 4 * m.eig_se
            inside = m.lower_bound - tol <= m.eig_min and m.eig_max <= m.bound + tol
            ok &= inside
            parts.append(f"{name}: [{m.eig_min:.3g}, {m.eig_max:.3g}] in [{m.lower_bound:.3g}, {m.bound:.3g}]"
                         f" +- {tol:.1g}")
    criterion(3, "covariance sandwich", ok, "; ".join(parts))


def test_04_centroid_identity(criterion):
    model = NNSaddleLoss(2, 0.01)
    K = 8
    sigma = np.resize([0.1, 0.2], K)
    oracle = StochasticOracle(model, sigma, seed=4)
    noise = oracle.noise_profile(np.zeros(model.dim))
    rng = np.random.default_rng(4)
    graph = build_graph("random", K, prob=0.4, seed=9)
    policies = {
        "uniform-ring": uniform_policy(build_graph("ring", K)),
        "uniform-star": uniform_policy(build_graph("star", K)),
        "mh-random": asymmetric_mh_policy(graph, noise),
        "random-valid": random_policy(graph, rng),
    }
    worst = 0.0
    w0 = np.full(model.dim, 0.05)
    for pol in policies.values():
        system = DiffusionSystem(model, oracle, pol, StepConfig(0.01))
        worst = max(worst, centroid_identity_deviation(system, w0, 1000))
    # negative control: the MH matrix paired with a vector that is not its Perron vector
    mh = policies["mh-random"]
    wrong = np.full(K, 1 / K)
    broken = centroid_identity_deviation(DiffusionSystem(model, oracle, mh, StepConfig(0.01)), w0, 1000, p=wrong)
    criterion(4, "centroid identity", worst <= 1e-10 and broken > 1e-10,
              f"max deviation {worst:.2e} over {len(policies)} valid policies (<= 1e-10); "
              f"with A p != p: {broken:.2e} (must exceed 1e-10)")


def test_05_disagreement_scaling(criterion):
    slope, vals = disagreement_slope()
    criterion(5, "disagreement scaling", 3.5 <= slope <= 4.5,
              f"slope {slope:.3f} in [3.5, 4.5]; means " + ", ".join(f"{v:.3g}" for v in vals))


def test_06_policy_optimality(criterion):
    gap, perron_err = mh_optimality_gap(50, 100)
    criterion(6, "policy optimality", gap <= 1e-9 and perron_err <= 1e-8,
              f"worst objective(MH) - objective(random) = {gap:.3e} (<= 1e-9) over 50x100 policies; "
              f"complete-graph p vs inverse variances {perron_err:.1e} (<= 1e-8)")


def test_07_perron_spectral(criterion):
    rng = np.random.default_rng(7)
    residual = 0.0
    count = 0
    for kind, K in (("complete", 6), ("ring", 7), ("grid", 9), ("star", 5), ("random", 10)):
        graph = build_graph(kind, K, prob=0.4, seed=2)
        sig = rng.uniform(0.5, 3.0, K)
        for pol in (uniform_policy(graph), asymmetric_mh_policy(graph, NoiseProfile(sig, 0.5 * sig)),
                    random_policy(graph, rng)):
            p = perron_vector(pol.A)
            residual = max(residual, float(np.max(np.abs(pol.A @ p - p))))
            count += 1
    A = np.array([[0.5, 0.25], [0.5, 0.75]])
    err_a = max(np.max(np.abs(perron_vector(A) - [1 / 3, 2 / 3])), abs(mixing_rate(A) - 0.25))
    mh = asymmetric_mh_policy(build_graph("complete", 2), NoiseProfile(np.array([1.0, 2.0]), np.array([0.5, 1.0])))
    err_b = float(np.max(np.abs(mh.p - [2 / 3, 1 / 3])))
    criterion(7, "Perron/spectral", residual <= 1e-10 and err_a <= 1e-10 and err_b <= 1e-10,
              f"max residual {residual:.1e} over {count} policies; 2x2 case error {err_a:.1e}; "
              f"MH 2x2 error {err_b:.1e} (all <= 1e-10)")


def test_08_strict_saddle(criterion):
    ok, parts = True, []
    for M in (2, 3, 5):
        nn = NNSaddleLoss(M, 0.01)
        g = nn.gradient(np.zeros(nn.dim))
        lam = min_eigenvalue(nn.hessian(np.zeros(nn.dim)))
        ok &= bool(np.all(g == 0)) and lam <= -0.01
        parts.append(f"M={M}: |g|={np.max(np.abs(g)):.0e}, lambda_min={lam:.4f}")
    criterion(8, "strict saddle", ok, "; ".join(parts) + " (need g = 0 and lambda_min <= -0.01)")


def test_09_derivative_oracles(criterion):
    rng = np.random.default_rng(9)
    losses = {
        "quadratic": Quadratic([[2.0, 0.3], [0.3, 1.0]]),
        "saddle-quadratic": Quadratic.diag(1.0, -1.0),
        "nn M=2": NNSaddleLoss(2, 0.01),
        "nn M=3": NNSaddleLoss(3, 0.01),
    }
    worst = {}
    for name, loss in losses.items():
        errs = [(check_gradient(loss, w), check_hessian(loss, w))
                for w in rng.uniform(-2, 2, size=(100, loss.dim))]
        worst[name] = max(max(e) for e in errs)
    criterion(9, "gradient/Hessian oracles", max(worst.values()) <= 1e-5,
              ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<= 1e-5)")


def test_10_descent_in_g(criterion):
    cfg = ExperimentConfig.load(None, {"agents": [4]})
    cell = cfg.cell(4)
    w = np.full(cell.system.model.dim, 0.5)
    label = classify(w, cell.system.model, cell.params)
    J0 = cell.system.model.value(w)
    deltas = []
    for seed in range(200):
        run = cell.system.reseeded(seed)
        nxt = run.step_once(NetworkState.at(w, run.policy.p))
        deltas.append(run.model.value(nxt.centroid) - J0)
    mean, se = float(np.mean(deltas)), float(np.std(deltas) / np.sqrt(200))
    criterion(10, "descent in G", label.region is Region.G and mean < 0,
              f"start region {label.region.value}, mean one-step change {mean:.3e} (se {se:.1e}) over 200 seeds")


def test_11_asymmetric_benefit(tmp_path, criterion):
    cfg = ExperimentConfig.load(None, {
        "agents": [8], "policy": ["uniform", "mh"], "noise": {"sigma_iso": [0.1, 0.2]}, "out": str(tmp_path)})
    noise = cfg.noise_profile(8)
    assert np.isclose(noise.sigma_sq.max() / noise.sigma_sq.min(), 4.0)
    res = cmd_sweep(cfg)
    uni, mh = res.stats[("uniform", 8)], res.stats[("mh", 8)]
    graph = cfg.graph(8)
    obj_u = policy_objective(uniform_policy(graph).p, noise)
    obj_m = policy_objective(asymmetric_mh_policy(graph, noise).p, noise)
    criterion(11, "asymmetric benefit", mh.median <= uni.median and obj_m < obj_u,
              f"median escape MH {mh.median:g} vs uniform {uni.median:g} (20 seeds); "
              f"objective MH {obj_m:.4g} < uniform {obj_u:.4g}")


def test_12_determinism(tmp_path, criterion):
    run_bytes = []
    for j in range(2):
        out = tmp_path / f"run{j}"
        cmd_run(ExperimentConfig.load(None, {"agents": [8], "iters": 1000, "seeds": [3], "out": str(out)}))
        run_bytes.append((out / "metrics.csv").read_bytes())
    sweep_bytes = []
    for workers in (1, 4):
        out = tmp_path / f"sweep{workers}"
        cmd_sweep(ExperimentConfig.load(None, {"agents": [2, 4, 8], "seeds": list(range(8)),
                                               "workers": workers, "out": str(out)}))
        sweep_bytes.append((out / "escape.csv").read_bytes())
    same_run = run_bytes[0] == run_bytes[1]
    same_sweep = sweep_bytes[0] == sweep_bytes[1]
    criterion(12, "determinism", same_run and same_sweep,
              f"repeated run metrics.csv identical: {same_run}; escape.csv workers=1 vs 4 identical: {same_sweep}")
