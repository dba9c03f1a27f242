"""Diffusion (adapt-then-combine) recursion, centralized baselines and centroid bookkeeping.

Iterates of the ``K`` agents are stored as the rows of a ``(K, M)`` array.  One
diffusion step is

    phi_k  = w_k - mu' * (stochastic gradient of agent k at w_k)
    w_k+   = sum_l a_lk phi_l          i.e.  W+ = A.T @ Phi

so the ``p``-weighted centroid obeys ``c+ = c - mu' * sum_k p_k g_k`` exactly
whenever ``A p = p``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .landscape import LossModel, StochasticOracle
from .topology import CombinationPolicy, NoiseProfile, policy_objective

__all__ = [
    "DivergenceError",
    "NetworkState",
    "StepConfig",
    "DiffusionSystem",
    "normalize_step",
    "diffusion_step",
    "centralized_full_step",
    "centralized_sampled_step",
    "centroid",
    "centroid_recursion_check",
    "disagreement4",
    "burn_in",
    "aggregated_noise",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e12
MAX_BURN_IN = 100_000


class DivergenceError(FloatingPointError):
    """An iterate left the finite range guarded by ``DIVERGENCE_LIMIT``."""

    def __init__(self, agent: int, iteration: int):
        super().__init__(f"agent {agent} diverged at iteration {iteration}")
        self.agent = agent
        self.iteration = iteration


def _guard(W: np.ndarray, iteration: int) -> None:
    bad = ~np.isfinite(W) | (np.abs(W) > DIVERGENCE_LIMIT)
    if bad.any():
        raise DivergenceError(int(np.argwhere(bad)[0][0]), iteration)


@dataclass(frozen=True)
class NetworkState:
    """Agent iterates at one iteration.

    ``gradients`` optionally holds the stochastic gradients (one row per
    agent) that produced this state from the previous one.
    """

    iterates: np.ndarray
    p: np.ndarray
    iteration: int = 0
    gradients: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def at(cls, w0, p) -> "NetworkState":
        """All agents placed at ``w0``."""
        p = np.asarray(p, dtype=float)
        W = np.tile(np.asarray(w0, dtype=float), (len(p), 1))
        return cls(W, p, 0)

    @property
    def K(self) -> int:
        return self.iterates.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.p @ self.iterates


def centroid(state: NetworkState, p=None) -> np.ndarray:
    p = state.p if p is None else np.asarray(p, dtype=float)
    if len(p) != state.K:
        raise ValueError(f"p has length {len(p)} but the state has {state.K} agents")
    return p @ state.iterates


def disagreement4(state: NetworkState, p=None) -> float:
    """Fourth power of the norm of the stacked deviations from the centroid."""
    c = centroid(state, p)
    dev = state.iterates - c
    return float(np.sum(dev * dev) ** 2)


def normalize_step(mu: float, p, noise: NoiseProfile) -> float:
    """``mu / sum_k p_k^2 sigma_k^2``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    denom = policy_objective(p, noise)
    if denom <= 0:
        raise ZeroDivisionError("sum_k p_k^2 sigma_k^2 is zero")
    return mu / denom


@dataclass(frozen=True)
class StepConfig:
    mu: float
    normalized: bool = False
    p: np.ndarray | None = None
    noise: NoiseProfile | None = None

    def __post_init__(self) -> None:
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.normalized and (self.p is None or self.noise is None):
            raise ValueError("a normalized step needs p and a noise profile")

    @functools.cached_property
    def mu_effective(self) -> float:
        if self.normalized:
            return normalize_step(self.mu, self.p, self.noise)
        return self.mu


def diffusion_step(
    state: NetworkState,
    oracle: StochasticOracle,
    policy: CombinationPolicy,
    step: StepConfig,
    record_gradients: bool = False,
) -> NetworkState:
    """One synchronous adapt-then-combine round."""
    i = state.iteration
    grads = oracle.sample_all(state.iterates, i)
    phi = state.iterates - step.mu_effective * grads
    W = policy.A.T @ phi
    _guard(W, i + 1)
    return NetworkState(W, state.p, i + 1, grads if record_gradients else None)


def centralized_full_step(w, oracle: StochasticOracle, p, step: StepConfig, iteration: int = 0) -> np.ndarray:
    """``w - mu' * sum_k p_k g_k(w)`` with every agent's stochastic gradient at ``w``."""
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    grads = oracle.sample_all(np.tile(w, (oracle.K, 1)), iteration)
    out = w - step.mu_effective * (p @ grads)
    _guard(out[None, :], iteration + 1)
    return out


def centralized_sampled_step(
    w, oracle: StochasticOracle, p, step: StepConfig, rng: np.random.Generator, iteration: int = 0
) -> np.ndarray:
    """``w - mu' * g_k(w)`` for one agent ``k`` drawn with probability ``p_k``."""
    w = np.asarray(w, dtype=float)
    k = int(rng.choice(len(p), p=np.asarray(p, dtype=float)))
    out = w - step.mu_effective * oracle.sample(k, w, iteration)
    _guard(out[None, :], iteration + 1)
    return out


def centroid_recursion_check(states: list[NetworkState], p, step: StepConfig) -> float:
    """Largest deviation from ``c_i = c_{i-1} - mu' sum_k p_k g_k`` over a recorded trajectory."""
    p = np.asarray(p, dtype=float)
    worst = 0.0
    for prev, cur in zip(states, states[1:]):
        if cur.gradients is None:
            raise ValueError(f"state at iteration {cur.iteration} has no recorded gradients")
        predicted = p @ prev.iterates - step.mu_effective * (p @ cur.gradients)
        worst = max(worst, float(np.max(np.abs(p @ cur.iterates - predicted))))
    return worst


def burn_in(mu: float, lambda2: float) -> int:
    """Iterations before network-disagreement statistics are collected."""
    if lambda2 <= 0:
        return 1
    return int(min(MAX_BURN_IN, max(1, math.ceil(4 * math.log(1 / mu) / math.log(1 / lambda2)))))


@dataclass
class DiffusionSystem:
    """A loss, its oracle, a combination policy and a step rule, ready to run."""

    model: LossModel
    oracle: StochasticOracle
    policy: CombinationPolicy
    step: StepConfig

    def __post_init__(self) -> None:
        if self.oracle.K != self.policy.K:
            raise ValueError(f"oracle has {self.oracle.K} agents, policy has {self.policy.K}")

    @property
    def K(self) -> int:
        return self.policy.K

    def reseeded(self, seed: int) -> "DiffusionSystem":
        return DiffusionSystem(self.model, self.oracle.reseeded(seed), self.policy, self.step)

    def start(self, w0) -> NetworkState:
        return NetworkState.at(w0, self.policy.p)

    def step_once(self, state: NetworkState, record_gradients: bool = False) -> NetworkState:
        return diffusion_step(state, self.oracle, self.policy, self.step, record_gradients)

    def trajectory(self, w0, iters: int, record_gradients: bool = False) -> list[NetworkState]:
        states = [self.start(w0)]
        for _ in range(iters):
            states.append(self.step_once(states[-1], record_gradients))
        return states

    def mean_disagreement4(self, w0, iters: int, burn: int | None = None) -> float:
        """Average of ``disagreement4`` over ``iters`` iterations after burn-in."""
        if burn is None:
            burn = burn_in(self.step.mu_effective, self.policy.lambda2)
        state = self.start(w0)
        total = 0.0
        for _ in range(burn):
            state = self.step_once(state)
        for _ in range(iters):
            state = self.step_once(state)
            total += disagreement4(state)
        return total / iters


def aggregated_noise(oracle: StochasticOracle, w, p, draws: int, start: int = 0) -> np.ndarray:
    """Draws of the network noise ``sum_k p_k s_k`` at a fixed point, shape ``(draws, M)``."""
    p = np.asarray(p, dtype=float)
    if len(p) != oracle.K:
        raise ValueError(f"p has length {len(p)}, oracle has {oracle.K} agents")
    total = np.zeros((draws, oracle.model.dim))
    for k in range(oracle.K):
        total += p[k] * oracle.noise_draws(k, w, start, draws)
    return total
