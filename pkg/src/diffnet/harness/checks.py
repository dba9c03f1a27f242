"""Cross-module verification suite run by ``diffnet check``.

Each item returns a ``CheckResult``; the command exits 0 only if all pass.
The experiment helpers here are shared with the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import DiffusionSystem, NetworkState, StepConfig, aggregated_noise, centroid_recursion_check, diffusion_step
from ..landscape import NNSaddleLoss, Quadratic, StochasticOracle, check_gradient, check_hessian
from ..stationarity import min_eigenvalue
from ..topology import (
    CombinationPolicy,
    NoiseProfile,
    asymmetric_mh_policy,
    build_graph,
    perron_vector,
    policy_objective,
    random_policy,
    uniform_policy,
    validate_policy,
)
from .config import ExperimentConfig

__all__ = [
    "CheckResult",
    "cmd_check",
    "disagreement_slope",
    "mh_optimality_gap",
    "noise_moment_checks",
    "centroid_identity_deviation",
    "DISAGREEMENT_MUS",
    "format_report",
]

DISAGREEMENT_MUS = (0.02, 0.01, 0.005, 0.0025)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


# --------------------------------------------------------------------------- experiment helpers


def disagreement_slope(mus=DISAGREEMENT_MUS, K: int = 8, iters: int = 5000, sigma_iso: float = 0.1,
                       seed: int = 0) -> tuple[float, list[float]]:
    """Log-log slope of the post-burn-in mean ``disagreement4`` against ``mu``.

    Quadratic ``0.5 (w1^2 + 0.5 w2^2)`` on a ring with uniform weights.
    """
    model = Quadratic.diag(1.0, 0.5)
    policy = uniform_policy(build_graph("ring", K))
    oracle = StochasticOracle(model, [sigma_iso] * K, seed)
    vals = [DiffusionSystem(model, oracle, policy, StepConfig(mu)).mean_disagreement4(np.zeros(2), iters)
            for mu in mus]
    slope = float(np.polyfit(np.log(mus), np.log(vals), 1)[0])
    return slope, vals


def mh_optimality_gap(n_graphs: int, n_policies: int, K: int = 8, seed: int = 0) -> tuple[float, float]:
    """Worst ``objective(MH) - objective(random policy)`` and worst Perron error on complete graphs.

    Random graphs are Erdos-Renyi with random heterogeneous variances; a
    non-positive gap means the MH policy was never beaten.
    """
    rng = np.random.default_rng(seed)
    worst_gap = -np.inf
    worst_perron = 0.0
    for j in range(n_graphs):
        graph = build_graph("random", K, prob=0.4, seed=int(rng.integers(2**32)))
        sig = rng.uniform(0.2, 5.0, K)
        noise = NoiseProfile(sig, 0.5 * sig)
        mh = asymmetric_mh_policy(graph, noise)
        best = policy_objective(mh.p, noise)
        for _ in range(n_policies):
            worst_gap = max(worst_gap, best - policy_objective(random_policy(graph, rng).p, noise))
        full = asymmetric_mh_policy(build_graph("complete", K), noise)
        inv = (1 / sig) / np.sum(1 / sig)
        worst_perron = max(worst_perron, float(np.max(np.abs(full.p - inv))))
    return float(worst_gap), worst_perron


@dataclass
class NoiseMoments:
    m2: float
    m2_se: float
    bound: float
    lower_bound: float
    eig_min: float
    eig_max: float
    eig_se: float
    mean_z: float


def noise_moment_checks(oracle: StochasticOracle, w, p, noise: NoiseProfile, draws: int = 100_000,
                        start: int = 0) -> NoiseMoments:
    """Monte-Carlo second moment and covariance spectrum of ``sum_k p_k s_k``."""
    s = aggregated_noise(oracle, w, p, draws, start)
    sq = np.einsum("ij,ij->i", s, s)
    cov = s.T @ s / draws
    evals, evecs = np.linalg.eigh(cov)
    # standard errors of the extreme Rayleigh quotients
    se = max(float(((s @ evecs[:, j]) ** 2).std()) for j in (0, -1)) / np.sqrt(draws)
    mean_z = float(np.max(np.abs(s.mean(axis=0)) / (s.std(axis=0) / np.sqrt(draws))))
    p = np.asarray(p)
    return NoiseMoments(
        m2=float(sq.mean()),
        m2_se=float(sq.std() / np.sqrt(draws)),
        bound=float(np.sum(p**2 * noise.sigma_sq)),
        lower_bound=float(np.sum(p**2 * noise.sigma_lower_sq)),
        eig_min=float(evals[0]),
        eig_max=float(evals[-1]),
        eig_se=se,
        mean_z=mean_z,
    )


def centroid_identity_deviation(system: DiffusionSystem, w0, iters: int = 1000, p=None) -> float:
    """Run ``iters`` diffusion steps recording gradients; return the centroid-recursion deviation.

    ``p`` overrides the weights used for the centroid (negative controls).
    """
    p = system.policy.p if p is None else np.asarray(p, dtype=float)
    states = [NetworkState.at(w0, p)]
    for _ in range(iters):
        states.append(diffusion_step(states[-1], system.oracle, system.policy, system.step, record_gradients=True))
    return centroid_recursion_check(states, p, system.step)


# --------------------------------------------------------------------------- the suite


def _run(name: str, fn) -> CheckResult:
    try:
        passed, detail = fn()
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        return CheckResult(name, False, f"error: {exc}")
    return CheckResult(name, bool(passed), detail)


def cmd_check(cfg: ExperimentConfig, quick: bool = False) -> list[CheckResult]:
    """Run every verification item against the configured experiment (largest K)."""
    K = max(cfg.agents)
    name = cfg.policy_names[0]
    graph = cfg.graph(K)
    model = cfg.model()
    noise = cfg.noise_profile(K)
    start = cfg.start_point()
    draws = 20_000 if quick else 100_000
    results: list[CheckResult] = []

    raw_A = cfg.policy_matrix(name, graph, noise) if (name != "mh" or noise is not None) else None
    policy: CombinationPolicy | None = None

    def policy_constraints():
        if raw_A is None:
            return False, "mh weights need a noise profile"
        if raw_A.shape != (K, K):
            return False, f"matrix is {raw_A.shape}, expected {(K, K)}"
        report = validate_policy(raw_A, graph)
        return report.ok, str(report).replace("\n", "; ")

    results.append(_run("policy-constraints", policy_constraints))
    if results[-1].passed:
        policy = CombinationPolicy.from_matrix(raw_A, graph)

    def perron():
        pols = [uniform_policy(build_graph(kind, 8, prob=0.4, seed=1)) for kind in ("complete", "ring", "random")]
        sig = NoiseProfile(np.linspace(1.0, 4.0, 8), np.full(8, 0.5))
        pols += [asymmetric_mh_policy(build_graph(kind, 8, prob=0.4, seed=1), sig)
                 for kind in ("complete", "ring", "random")]
        if policy is not None:
            pols.append(policy)
        worst = max(float(np.max(np.abs(P.A @ perron_vector(P.A) - perron_vector(P.A)))) for P in pols)
        return worst <= 1e-10, f"max |Ap - p| = {worst:.2e} over {len(pols)} policies (tol 1e-10)"

    results.append(_run("perron-residual", perron))

    def mh_opt():
        gap, perr = mh_optimality_gap(5 if quick else 10, 20 if quick else 50)
        return gap <= 1e-9 and perr <= 1e-8, f"worst objective gap {gap:.2e} (<= 1e-9), complete-graph p error {perr:.1e}"

    results.append(_run("mh-optimality", mh_opt))

    def classifier():
        cell = cfg.cell(K, name)
        if cell.params is None:
            return False, cell.params_error
        return True, f"mu'*delta = {cell.params.mu_effective * cell.params.delta:.4g} < 0.5"

    results.append(_run("classifier-params", classifier))

    def gradients():
        rng = np.random.default_rng(0)
        losses = [model, Quadratic.diag(1.0, -1.0), NNSaddleLoss(3, 0.01, n_data=500)]
        worst_g = worst_h = 0.0
        for loss in losses:
            for _ in range(20 if quick else 100):
                w = rng.standard_normal(loss.dim)
                worst_g = max(worst_g, check_gradient(loss, w))
                worst_h = max(worst_h, check_hessian(loss, w))
        ok = worst_g <= 1e-5 and worst_h <= 1e-5
        return ok, f"gradient err {worst_g:.1e}, hessian err {worst_h:.1e} (tol 1e-5)"

    results.append(_run("derivative-oracles", gradients))

    def saddle():
        lams = []
        for M in (2, 3, 5):
            nn = NNSaddleLoss(M, 0.01)
            if np.any(nn.gradient(np.zeros(nn.dim)) != 0):
                return False, f"gradient at origin non-zero for M={M}"
            lams.append(min_eigenvalue(nn.hessian(np.zeros(nn.dim))))
        return max(lams) <= -0.01, "lambda_min at origin: " + ", ".join(f"{x:.3f}" for x in lams)

    results.append(_run("strict-saddle", saddle))

    def variance():
        if noise is None or policy is None:
            return False, "needs a noise profile and a valid policy"
        oracle = cfg.oracle(K)
        m = noise_moment_checks(oracle, start, policy.p, noise, draws)
        tol = 4 * m.eig_se
        ok = (m.m2 <= m.bound + 4 * m.m2_se and m.eig_min >= m.lower_bound - tol
              and m.eig_max <= m.bound + tol and m.mean_z <= 4.5)
        return ok, (f"E|s|^2={m.m2:.4g} <= {m.bound:.4g}; eig in [{m.eig_min:.4g}, {m.eig_max:.4g}] "
                    f"vs [{m.lower_bound:.4g}, {m.bound:.4g}] +- {tol:.1e}; max |mean| z={m.mean_z:.2f}")

    results.append(_run("variance-bounds", variance))

    def identity():
        if policy is None:
            return False, "combination matrix violates the column-sum/sign/sparsity constraints"
        cell = cfg.cell(K, name)
        dev = centroid_identity_deviation(cell.system, start, 200 if quick else 1000)
        return dev <= 1e-10, f"max deviation {dev:.2e} (tol 1e-10)"

    results.append(_run("centroid-identity", identity))

    def disagreement():
        slope, _ = disagreement_slope(iters=1000 if quick else 5000)
        return 3.5 <= slope <= 4.5, f"slope {slope:.3f} in [3.5, 4.5]"

    results.append(_run("disagreement-slope", disagreement))
    return results


def format_report(results: list[CheckResult]) -> str:
    return "\n".join(r.line() for r in results)

