"""The ``policy``, ``run`` and ``sweep`` commands."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..engine import DivergenceError, centralized_full_step, centralized_sampled_step, disagreement4
from ..rng import STREAM_SAMPLER
from ..stationarity import (
    EscapeStats,
    centroid_trace,
    classify,
    escape_scaling_fit,
    measure_escape,
)
from ..topology import CombinationPolicy, PolicyError, policy_objective, uniform_policy, validate_policy, write_policy_csv
from .config import ConfigError, ExperimentConfig
from .svg import line_plot

__all__ = ["RunRecord", "SweepResult", "cmd_policy", "cmd_run", "cmd_sweep", "read_config_hash", "check_replay",
           "METRICS_COLUMNS", "ESCAPE_COLUMNS"]

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["iter", "J_centroid", "grad_norm_sq", "disagreement4", "region", "escaped_flag"]
ESCAPE_COLUMNS = ["K", "policy", "seed", "escape_iter", "censored"]


def _num(x: float) -> str:
    return repr(float(x))


def _hash_line(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.hash}\n"


def read_config_hash(path) -> str | None:
    """The ``config_hash`` recorded in the header of an output file, if any."""
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# config_hash="):
                return line.split("=", 1)[1]
            if line.startswith('{'):
                try:
                    return json.loads(Path(path).read_text()).get("config_hash")
                except json.JSONDecodeError:
                    return None
            if line and not line.startswith("#"):
                return None
    return None


def check_replay(path, cfg: ExperimentConfig) -> bool:
    """True when ``path`` was produced by a config with the same hash as ``cfg``."""
    return read_config_hash(path) == cfg.hash


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------- policy


def cmd_policy(cfg: ExperimentConfig) -> dict:
    """Write the combination matrix, its Perron vector, mixing rate and objective."""
    K = cfg.agents[0]
    name = cfg.policy_names[0]
    graph = cfg.graph(K)
    noise = cfg.noise_profile(K)
    if name == "mh" and noise is None:
        raise ConfigError("mh weights need a non-zero noise profile")
    A = cfg.policy_matrix(name, graph, noise)
    if A.shape != (K, K):
        raise ConfigError(f"policy matrix is {A.shape[0]}x{A.shape[1]}, expected K={K}")
    report = validate_policy(A, graph)
    if not report.ok:
        raise PolicyError(report)
    policy = CombinationPolicy.from_matrix(A, graph)
    out = _out_dir(cfg)
    write_policy_csv(out / "policy.csv", policy.A, comments=[f"config_hash={cfg.hash}"])
    summary = {
        "config_hash": cfg.hash,
        "K": K,
        "policy": name,
        "p": policy.p.tolist(),
        "lambda2": policy.lambda2,
        "perron_residual": float(np.max(np.abs(policy.A @ policy.p - policy.p))),
    }
    if noise is not None:
        summary["objective"] = policy_objective(policy.p, noise)
        if name != "uniform":
            summary["uniform_objective"] = policy_objective(uniform_policy(graph).p, noise)
    (out / "policy.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# --------------------------------------------------------------------------- run


@dataclass
class RunRecord:
    config_hash: str
    rows: list[tuple] = field(default_factory=list)
    escape_iter: int | None = None
    wall_clock: float = 0.0
    baseline_rows: list[tuple] = field(default_factory=list)
    diverged: DivergenceError | None = None


def cmd_run(cfg: ExperimentConfig) -> RunRecord:
    """One diffusion run from the configured start; metrics every ``cadence`` iterations.

    Rows are recorded at iterations ``cadence, 2*cadence, ...`` and at the final
    iteration.  ``escaped_flag`` switches to 1 at the first iteration where
    ``J(w_c) <= J(start) - epsilon_drop`` and stays there.
    """
    t0 = time.perf_counter()
    K = cfg.agents[0]
    seed = cfg.seeds[0]
    cell = cfg.cell(K, seed=seed)
    system = cell.system
    model = system.model
    iters = int(cfg.raw["iters"])
    cadence = int(cfg.raw["cadence"])
    target = model.value(cell.start) - cfg.epsilon_drop()
    record = RunRecord(cfg.hash)
    out = _out_dir(cfg)

    baselines = bool(cfg.raw["baselines"])
    w_full = w_samp = cell.start.copy()
    sampler = np.random.default_rng([seed, STREAM_SAMPLER])

    state = system.start(cell.start)
    with open(out / "metrics.csv", "w", newline="") as fh, \
            (open(out / "baselines.csv", "w", newline="") if baselines else _NullFile()) as bh:
        fh.write(_hash_line(cfg))
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        bwriter = csv.writer(bh, lineterminator="\n")
        if baselines:
            bh.write(_hash_line(cfg))
            bwriter.writerow(["iter", "J_diffusion", "J_central_full", "J_central_sampled"])
        try:
            for i in range(1, iters + 1):
                state = system.step_once(state)
                c = state.centroid
                J = model.value(c)
                if record.escape_iter is None and J <= target:
                    record.escape_iter = i
                if baselines:
                    w_full = centralized_full_step(w_full, system.oracle, system.policy.p, system.step, i - 1)
                    w_samp = centralized_sampled_step(w_samp, system.oracle, system.policy.p, system.step,
                                                      sampler, i - 1)
                if i % cadence and i != iters:
                    continue
                g = model.gradient(c)
                region = classify(c, model, cell.params).region.value if cell.params else "-"
                row = (i, _num(J), _num(g @ g), _num(disagreement4(state)), region,
                       int(record.escape_iter is not None))
                writer.writerow(row)
                record.rows.append(row)
                if baselines:
                    brow = (i, _num(J), _num(model.value(w_full)), _num(model.value(w_samp)))
                    bwriter.writerow(brow)
                    record.baseline_rows.append(brow)
        except DivergenceError as exc:
            record.diverged = exc
            log.error("run diverged: %s", exc)
    record.wall_clock = time.perf_counter() - t0
    summary = {
        "config_hash": cfg.hash,
        "K": K,
        "seed": seed,
        "policy": cell.policy_name,
        "mu_effective": system.step.mu_effective,
        "escape_iter": record.escape_iter,
        "rows": len(record.rows),
        "status": "diverged" if record.diverged else "ok",
        "wall_clock_s": record.wall_clock,
    }
    if cell.params_error:
        summary["classifier"] = cell.params_error
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if record.diverged:
        raise record.diverged
    return record


class _NullFile:
    def write(self, _):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


# --------------------------------------------------------------------------- sweep


@dataclass
class SweepResult:
    config_hash: str
    stats: dict[tuple[str, int], EscapeStats]
    fits: dict[str, dict]
    traces: dict[tuple[str, int], np.ndarray]
    trace_every: int
    wall_clock: float = 0.0


def write_escape_plot(path, per_policy: dict[str, tuple[list[int], list[float]]]) -> None:
    line_plot(
        path,
        [(f"{name} (median)", Ks, meds) for name, (Ks, meds) in per_policy.items()],
        title="Median escape time vs number of agents",
        xlabel="agents K",
        ylabel="median escape iteration",
        logx=True,
        logy=True,
        markers=True,
    )


def cmd_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Escape-time statistics for every (policy, K) cell, with log-log slope fits and plots."""
    t0 = time.perf_counter()
    eps = cfg.epsilon_drop()
    max_iters = int(cfg.raw["max_iters"])
    stats: dict[tuple[str, int], EscapeStats] = {}
    cells = {}
    for name in cfg.policy_names:
        for K in cfg.agents:
            cell = cfg.cell(K, name)
            if cell.params is None:
                raise ConfigError(f"classifier parameters invalid for K={K}: {cell.params_error}")
            try:
                stats[(name, K)] = measure_escape(cell.system, cell.start, eps, max_iters, cfg.seeds,
                                                  cell.params, cfg.workers)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            cells[(name, K)] = cell
            log.info("policy=%s K=%d median=%s", name, K, stats[(name, K)].median)

    out = _out_dir(cfg)
    with open(out / "escape.csv", "w", newline="") as fh:
        fh.write(_hash_line(cfg))
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ESCAPE_COLUMNS)
        for (name, K), st in stats.items():
            for seed, t, cens in zip(st.seeds, st.times, st.censored):
                writer.writerow([K, name, seed, int(t), int(cens)])

    fits: dict[str, dict] = {}
    per_policy: dict[str, tuple[list[int], list[float]]] = {}
    for name in cfg.policy_names:
        Ks = [K for K in cfg.agents if not stats[(name, K)].median_censored]
        meds = [stats[(name, K)].median for K in Ks]
        per_policy[name] = (Ks, meds)
        censored_Ks = [K for K in cfg.agents if stats[(name, K)].median_censored]
        if censored_Ks:
            fits[name] = {"skipped": f"censored medians at K={censored_Ks}"}
        elif len(set(cfg.agents)) < 3:
            fits[name] = {"skipped": "fewer than three K values"}
        else:
            slope, intercept = escape_scaling_fit(Ks, meds)
            fits[name] = {"slope": slope, "intercept": intercept}

    finite = [st.median for st in stats.values() if not st.median_censored]
    horizon = int(min(max_iters, 2 * max(finite))) if finite else min(max_iters, 1000)
    every = max(1, horizon // 400)
    traces = {
        key: centroid_trace(cells[key].system, cells[key].start, horizon, cfg.seeds[0], every)
        for key in stats
    }
    xs = list(range(0, horizon + 1, every))
    line_plot(
        out / "trajectories.svg",
        [(f"K={K} {name}" if len(cfg.policy_names) > 1 else f"K={K}", xs[: len(tr)], tr.tolist())
         for (name, K), tr in traces.items()],
        title=f"J at the network centroid (seed {cfg.seeds[0]})",
        xlabel="iteration",
        ylabel="J(w_c)",
    )
    write_escape_plot(out / "escape_vs_K.svg", per_policy)

    wall = time.perf_counter() - t0
    summary = {
        "config_hash": cfg.hash,
        "epsilon_drop": eps,
        "max_iters": max_iters,
        "cells": [
            {
                "policy": name,
                "K": K,
                "mu_effective": cells[(name, K)].system.step.mu_effective,
                "objective": policy_objective(cells[(name, K)].system.policy.p, cells[(name, K)].noise),
                "median": st.median,
                "iqr": st.iqr,
                "censored": int(np.sum(st.censored)),
            }
            for (name, K), st in stats.items()
        ],
        "fits": fits,
        "wall_clock_s": wall,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return SweepResult(cfg.hash, stats, fits, traces, every, wall)
