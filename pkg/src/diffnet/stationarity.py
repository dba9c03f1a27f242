"""Region classification (large gradient / strict saddle / second-order stationary)
and empirical saddle-escape times."""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .engine import DiffusionSystem, NetworkState
from .landscape import LossModel
from .topology import NoiseProfile, policy_objective

__all__ = [
    "Region",
    "RegionLabel",
    "ClassifierParams",
    "EscapeStats",
    "classify",
    "min_eigenvalue",
    "measure_escape",
    "escape_scaling_fit",
    "centroid_trace",
    "default_epsilon_drop",
    "MAX_EIG_DIM",
]

MAX_EIG_DIM = 2500


class Region(str, Enum):
    G = "G"  # large gradient
    H = "H"  # approximately stationary, significant negative curvature
    M = "M"  # approximately second-order stationary


@dataclass(frozen=True)
class RegionLabel:
    region: Region
    grad_norm_sq: float
    lambda_min: float | None = None


@dataclass(frozen=True)
class ClassifierParams:
    """Thresholds of the three-way split of parameter space.

    ``c1 = (1 - 2 mu' delta) / 2`` and ``c2 = (delta / 2) sum_k p_k^2 sigma_k^2``;
    a point is in ``G`` when ``|grad J|^2 >= mu' (c2 / c1) (1 + 1/pi)``.
    """

    mu_effective: float
    delta: float
    pi: float
    tau: float
    p: np.ndarray
    noise: NoiseProfile

    def __post_init__(self) -> None:
        if not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must be in (0, 1), got {self.pi}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.mu_effective <= 0 or self.delta <= 0:
            raise ValueError("step size and delta must be positive")
        if self.mu_effective * self.delta >= 0.5:
            raise ValueError(f"need mu*delta < 1/2, got {self.mu_effective * self.delta:.4g}")

    @property
    def c1(self) -> float:
        return 0.5 * (1.0 - 2.0 * self.mu_effective * self.delta)

    @property
    def c2(self) -> float:
        return 0.5 * self.delta * policy_objective(self.p, self.noise)

    @property
    def threshold(self) -> float:
        return self.mu_effective * self.c2 / self.c1 * (1.0 + 1.0 / self.pi)


def min_eigenvalue(H) -> float:
    """Smallest eigenvalue of a symmetric matrix (dense symmetric solver)."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("matrix must be square")
    if H.shape[0] > MAX_EIG_DIM:
        raise ValueError(f"dimension {H.shape[0]} exceeds the dense-solver guard {MAX_EIG_DIM}")
    scale = max(1.0, float(np.max(np.abs(H))))
    if np.max(np.abs(H - H.T)) > 1e-8 * scale:
        raise ValueError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])


def classify(w, model: LossModel, params: ClassifierParams) -> RegionLabel:
    g = model.gradient(w)
    gsq = float(g @ g)
    if gsq >= params.threshold:
        return RegionLabel(Region.G, gsq)
    lam = min_eigenvalue(model.hessian(w))
    return RegionLabel(Region.H if lam <= -params.tau else Region.M, gsq, lam)


def default_epsilon_drop(model: LossModel, saddle) -> float:
    """5% of the gap between the saddle value and the global minimum, else 0.01."""
    if model.known_minimum is None:
        return 0.01
    return 0.05 * abs(model.value(saddle) - model.known_minimum)


@dataclass
class EscapeStats:
    """Per-seed first-passage times below ``J(saddle) - epsilon_drop``.

    Censored seeds carry ``max_iters`` as their time.
    """

    seeds: list[int]
    times: np.ndarray
    censored: np.ndarray
    max_iters: int

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    @property
    def iqr(self) -> float:
        q75, q25 = np.percentile(self.times, [75, 25])
        return float(q75 - q25)

    @property
    def all_censored(self) -> bool:
        return bool(np.all(self.censored))

    @property
    def median_censored(self) -> bool:
        # the median is censored once half or more of the seeds never escaped
        return bool(np.sum(self.censored) * 2 >= len(self.censored))


def _escape_one(system: DiffusionSystem, saddle: np.ndarray, target: float, max_iters: int,
                seed: int, trace_every: int) -> tuple[int, bool, list[float]]:
    run = system.reseeded(seed)
    state = NetworkState.at(saddle, run.policy.p)
    value = run.model.value
    trace = [value(state.centroid)] if trace_every else []
    hit = None
    for i in range(1, max_iters + 1):
        state = run.step_once(state)
        if trace_every or hit is None:
            j = value(state.centroid)
            if trace_every and i % trace_every == 0:
                trace.append(j)
            if hit is None and j <= target:
                hit = i
                if not trace_every:
                    break
    if hit is None:
        return max_iters, True, trace
    return hit, False, trace


def centroid_trace(system: DiffusionSystem, start, iters: int, seed: int, every: int = 1) -> np.ndarray:
    """``J(w_c)`` at iterations ``0, every, 2*every, ...`` of one seeded run from ``start``."""
    start = np.asarray(start, dtype=float)
    return np.array(_escape_one(system, start, -np.inf, iters, seed, max(1, every))[2])


def measure_escape(
    system: DiffusionSystem,
    saddle,
    epsilon_drop: float,
    max_iters: int,
    seeds: list[int],
    params: ClassifierParams | None = None,
    workers: int = 1,
) -> EscapeStats:
    """Start every agent at ``saddle`` and time the centroid's first drop below
    ``J(saddle) - epsilon_drop``, once per seed.

    ``params`` (if given) is used to confirm that ``saddle`` is a strict saddle.
    Seeds are independent and may be spread over ``workers`` processes; results
    are returned in seed order either way.
    """
    saddle = np.asarray(saddle, dtype=float)
    if epsilon_drop <= 0:
        raise ValueError("epsilon_drop must be positive")
    if params is not None:
        label = classify(saddle, system.model, params)
        if label.region is not Region.H:
            raise ValueError(f"start point is in region {label.region.value}, not H")
    target = system.model.value(saddle) - epsilon_drop
    jobs = [(system, saddle, target, max_iters, s, 0) for s in seeds]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_escape_one, *zip(*jobs)))
    else:
        results = [_escape_one(*job) for job in jobs]
    stats = EscapeStats(
        seeds=list(seeds),
        times=np.array([r[0] for r in results], dtype=float),
        censored=np.array([r[1] for r in results], dtype=bool),
        max_iters=max_iters,
    )
    if stats.all_censored:
        warnings.warn(f"no seed escaped within {max_iters} iterations", stacklevel=2)
    return stats


def escape_scaling_fit(Ks, medians, censored=None) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log(median)`` against ``log(K)``."""
    Ks = np.asarray(Ks, dtype=float)
    medians = np.asarray(medians, dtype=float)
    if len(Ks) != len(medians):
        raise ValueError("Ks and medians must have the same length")
    if len(np.unique(Ks)) < 3:
        raise ValueError("need at least three distinct K values")
    if censored is not None and np.any(censored):
        raise ValueError("cannot fit censored medians")
    if np.any(medians <= 0):
        raise ValueError("medians must be positive")
    slope, intercept = np.polyfit(np.log(Ks), np.log(medians), 1)
    return float(slope), float(intercept)
