"""Experiment configuration: one JSON document, overridden by CLI flags."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..engine import DiffusionSystem, StepConfig
from ..landscape import LossModel, NNSaddleLoss, Quadratic, StochasticOracle
from ..stationarity import ClassifierParams, default_epsilon_drop
from ..topology import (
    CombinationPolicy,
    Graph,
    NoiseProfile,
    asymmetric_mh_policy,
    build_graph,
    read_policy_csv,
    uniform_policy,
)

__all__ = ["ConfigError", "DEFAULTS", "ExperimentConfig", "Cell", "config_hash", "canonical_json"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "loss": {"kind": "nn_saddle", "M": 2, "reg": 0.01, "shift": 0.5, "n_data": 2000, "data_seed": 0},
    "topology": {"kind": "complete"},
    "policy": "uniform",
    "agents": [1, 2, 4, 8, 16],
    "mu": 3.75e-4,
    "normalize": True,
    "noise": {"sigma_iso": 0.1},
    "classifier": {"tau": 0.01, "pi": 0.5, "epsilon_drop": None, "delta": None},
    "start": "saddle",
    "seeds": list(range(20)),
    "max_iters": 200_000,
    "iters": 2000,
    "cadence": 1,
    "baselines": False,
    "workers": 1,
    "out": "out",
}

# fields that never influence results and are left out of the config hash
_UNHASHED = ("out", "workers")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(raw: dict) -> str:
    hashed = {k: v for k, v in raw.items() if k not in _UNHASHED}
    return hashlib.sha256(canonical_json(hashed).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Cell:
    """Everything needed to simulate one (policy, K) combination."""

    K: int
    policy_name: str
    system: DiffusionSystem
    noise: NoiseProfile | None
    start: np.ndarray
    params: ClassifierParams | None
    params_error: str | None


class ExperimentConfig:
    """Resolved configuration.  ``raw`` is the merged JSON document."""

    def __init__(self, raw: dict, base_dir: Path | None = None):
        self.raw = raw
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        self._model: LossModel | None = None
        self._validate()

    # ----------------------------------------------------------------- loading

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "ExperimentConfig":
        raw = copy.deepcopy(DEFAULTS)
        base_dir = None
        if path is not None:
            path = Path(path)
            try:
                doc = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigError("config must be a JSON object")
            raw = _merge(raw, doc)
            base_dir = path.parent
        if overrides:
            raw = _merge(raw, overrides)
        return cls(raw, base_dir)

    def _validate(self) -> None:
        r = self.raw
        agents = r["agents"]
        if isinstance(agents, int):
            r["agents"] = agents = [agents]
        if not agents or any(int(k) < 1 for k in agents):
            raise ConfigError("'agents' must be a non-empty list of positive integers")
        seeds = r["seeds"]
        if isinstance(seeds, int):
            r["seeds"] = seeds = [seeds]
        if not seeds or len(set(seeds)) != len(seeds):
            raise ConfigError("'seeds' must be a non-empty list of distinct integers")
        if any(int(s) < 0 for s in seeds):
            raise ConfigError("seeds must be non-negative")
        if float(r["mu"]) <= 0:
            raise ConfigError("'mu' must be positive")
        if int(r["cadence"]) < 1 or int(r["max_iters"]) < 1 or int(r["iters"]) < 1:
            raise ConfigError("'cadence', 'iters' and 'max_iters' must be positive")
        for name in self.policy_names:
            if name not in ("uniform", "mh") and not self._resolve(name).exists():
                raise ConfigError(f"policy file {name} does not exist")
        profile = r["noise"].get("profile")
        if profile is not None and not self._resolve(profile).exists():
            raise ConfigError(f"noise profile {profile} does not exist")

    def _resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    # ----------------------------------------------------------------- accessors

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def agents(self) -> list[int]:
        return [int(k) for k in self.raw["agents"]]

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.raw["seeds"]]

    @property
    def policy_names(self) -> list[str]:
        pol = self.raw["policy"]
        return [pol] if isinstance(pol, str) else list(pol)

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out"])

    @property
    def workers(self) -> int:
        return max(1, int(self.raw["workers"]))

    def model(self) -> LossModel:
        if self._model is None:
            spec = dict(self.raw["loss"])
            kind = spec.pop("kind")
            try:
                if kind == "nn_saddle":
                    self._model = NNSaddleLoss(**spec)
                elif kind == "quadratic":
                    if "diag" in spec:
                        self._model = Quadratic(np.diag(spec["diag"]))
                    else:
                        self._model = Quadratic(spec["D"])
                else:
                    raise ConfigError(f"unknown loss kind {kind!r}")
            except (TypeError, KeyError, ValueError) as exc:
                raise ConfigError(f"bad loss spec: {exc}") from exc
        return self._model

    def start_point(self) -> np.ndarray:
        start = self.raw["start"]
        dim = self.model().dim
        if start in ("saddle", "origin"):
            return np.zeros(dim)
        w = np.asarray(start, dtype=float)
        if w.shape != (dim,):
            raise ConfigError(f"start point must have length {dim}")
        return w

    def graph(self, K: int) -> Graph:
        spec = dict(self.raw["topology"])
        kind = spec.pop("kind")
        try:
            return build_graph(kind, K, **spec)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sigma_iso(self, K: int) -> np.ndarray:
        noise = self.raw["noise"]
        if noise.get("profile") is not None:
            prof = self.file_noise_profile()
            if prof.K != K:
                raise ConfigError(f"noise profile has {prof.K} agents, experiment uses K={K}")
            return np.sqrt(prof.sigma_lower_sq)
        pattern = np.atleast_1d(np.asarray(noise.get("sigma_iso", 0.1), dtype=float))
        # a shorter list is tiled across agents
        return np.resize(pattern, K)

    def file_noise_profile(self) -> NoiseProfile:
        try:
            return NoiseProfile.from_json(self._resolve(self.raw["noise"]["profile"]).read_text())
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad noise profile: {exc}") from exc

    def oracle(self, K: int, seed: int = 0) -> StochasticOracle:
        return StochasticOracle(self.model(), self.sigma_iso(K), seed)

    def noise_profile(self, K: int) -> NoiseProfile | None:
        """Declared noise bounds; ``None`` for a noiseless oracle."""
        if self.raw["noise"].get("profile") is not None:
            return self.file_noise_profile()
        try:
            return self.oracle(K).noise_profile(self.start_point())
        except ValueError:
            return None

    def policy_matrix(self, name: str, graph: Graph, noise: NoiseProfile) -> np.ndarray:
        """The raw matrix for a policy name (file policies are not validated here)."""
        if name == "uniform":
            return uniform_policy(graph).A
        if name == "mh":
            return asymmetric_mh_policy(graph, noise).A
        try:
            return read_policy_csv(self._resolve(name))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read policy file {name}: {exc}") from exc

    def policy(self, name: str, graph: Graph, noise: NoiseProfile) -> CombinationPolicy:
        if name == "uniform":
            return uniform_policy(graph)
        if name == "mh":
            return asymmetric_mh_policy(graph, noise)
        A = self.policy_matrix(name, graph, noise)
        if A.shape != (graph.K, graph.K):
            raise ConfigError(f"policy file {name} is {A.shape[0]}x{A.shape[1]}, expected K={graph.K}")
        return CombinationPolicy.from_matrix(A, graph)

    def classifier(self, mu_effective: float, p, noise: NoiseProfile) -> ClassifierParams:
        c = self.raw["classifier"]
        delta = c.get("delta") or self.model().smoothness.delta
        return ClassifierParams(mu_effective, float(delta), float(c["pi"]), float(c["tau"]), np.asarray(p), noise)

    def epsilon_drop(self) -> float:
        eps = self.raw["classifier"].get("epsilon_drop")
        if eps is None:
            return default_epsilon_drop(self.model(), self.start_point())
        return float(eps)

    def cell(self, K: int, policy_name: str | None = None, seed: int = 0) -> Cell:
        name = policy_name or self.policy_names[0]
        graph = self.graph(K)
        noise = self.noise_profile(K)
        normalize = bool(self.raw["normalize"])
        if noise is None and (normalize or name == "mh"):
            raise ConfigError("step normalization and mh weights need a non-zero noise profile")
        if noise is not None and noise.K != K:
            raise ConfigError(f"noise profile has {noise.K} agents, experiment uses K={K}")
        policy = self.policy(name, graph, noise)
        step = StepConfig(float(self.raw["mu"]), normalize, policy.p, noise)
        system = DiffusionSystem(self.model(), self.oracle(K, seed), policy, step)
        if noise is None:
            params, err = None, "no noise profile (noiseless oracle)"
        else:
            try:
                params, err = self.classifier(step.mu_effective, policy.p, noise), None
            except ValueError as exc:
                params, err = None, str(exc)
        return Cell(K, name, system, noise, self.start_point(), params, err)
