"""Graphs, combination policies and their spectral quantities.

Orientation convention used everywhere (code, CSV files, docs): the policy
matrix ``A`` has entry ``A[l, k] = a_lk``, the weight agent ``k`` assigns to
the intermediate estimate of neighbour ``l``.  Columns sum to one
(left-stochastic), so the combine step is ``W_next = A.T @ Phi`` when agent
iterates are stored as rows of ``Phi``.

Agents are indexed from 0.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ConvergenceError",
    "PolicyError",
    "Graph",
    "NoiseProfile",
    "CombinationPolicy",
    "ValidationReport",
    "build_graph",
    "validate_policy",
    "perron_vector",
    "mixing_rate",
    "uniform_policy",
    "asymmetric_mh_policy",
    "policy_objective",
    "random_policy",
    "read_policy_csv",
    "write_policy_csv",
    "POLICY_CSV_HEADER",
]

POLICY_CSV_HEADER = "# left-stochastic, entry(l,k)=a_lk"

PERRON_TOL = 1e-12
MAX_POWER_ITERS = 100_000
SQUARE_EVERY = 1000
MAX_GRAPH_RETRIES = 100
VALIDATION_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """Power iteration did not settle within its iteration cap."""


class PolicyError(ValueError):
    """A combination matrix violates the convex-combination constraints."""

    def __init__(self, report: "ValidationReport"):
        super().__init__(str(report))
        self.report = report


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------- graphs


@dataclass(frozen=True)
class Graph:
    """Undirected graph with self-loops; ``neighbor_sets[k]`` always contains ``k``."""

    K: int
    neighbor_sets: tuple[frozenset[int], ...]

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("a graph needs at least one agent")
        if len(self.neighbor_sets) != self.K:
            raise ValueError("need one neighbour set per agent")
        for k, nbrs in enumerate(self.neighbor_sets):
            if k not in nbrs:
                raise ValueError(f"agent {k} is missing its self-loop")
            for l in nbrs:
                if not 0 <= l < self.K:
                    raise ValueError(f"agent {k} lists out-of-range neighbour {l}")
                if k not in self.neighbor_sets[l]:
                    raise ValueError(f"asymmetric adjacency between {k} and {l}")
        if not self.is_connected():
            raise ValueError("graph is not connected")

    @classmethod
    def from_edges(cls, K: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        nbrs = [{k} for k in range(K)]
        for a, b in edges:
            nbrs[a].add(b)
            nbrs[b].add(a)
        return cls(K, tuple(frozenset(s) for s in nbrs))

    @property
    def n(self) -> np.ndarray:
        """Neighbourhood sizes ``n_k = |N_k|`` (self included)."""
        return np.array([len(s) for s in self.neighbor_sets])

    def adjacency(self) -> np.ndarray:
        """Boolean pattern with ``adj[l, k]`` true iff ``l`` is in ``N_k``."""
        adj = np.zeros((self.K, self.K), dtype=bool)
        for k, nbrs in enumerate(self.neighbor_sets):
            adj[list(nbrs), k] = True
        return adj

    def is_connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        while queue:
            k = queue.popleft()
            for l in self.neighbor_sets[k]:
                if l not in seen:
                    seen.add(l)
                    queue.append(l)
        return len(seen) == self.K

    def is_regular(self) -> bool:
        return len(set(self.n.tolist())) == 1


def _bfs_connected(K: int, edges: Sequence[tuple[int, int]]) -> bool:
    nbrs = [[] for _ in range(K)]
    for a, b in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    seen = {0}
    queue = deque([0])
    while queue:
        for l in nbrs[queue.popleft()]:
            if l not in seen:
                seen.add(l)
                queue.append(l)
    return len(seen) == K


def build_graph(kind: str, K: int, **extra) -> Graph:
    """Construct a connected graph with self-loops.

    ``kind`` is one of ``complete``, ``ring``, ``grid``, ``random`` or ``star``.
    ``grid`` takes ``rows``/``cols`` (their product must equal ``K``);
    ``random`` is Erdos-Renyi and takes ``prob`` and ``seed``, redrawing until the
    graph is connected (at most 100 attempts).
    """
    if K < 1:
        raise ValueError(f"K must be positive, got {K}")
    kind = kind.lower()
    edges: list[tuple[int, int]] = []
    if kind == "complete":
        edges = [(a, b) for a in range(K) for b in range(a + 1, K)]
    elif kind == "ring":
        edges = [(k, (k + 1) % K) for k in range(K)] if K > 1 else []
    elif kind == "star":
        edges = [(0, k) for k in range(1, K)]
    elif kind == "grid":
        rows = extra.get("rows")
        cols = extra.get("cols")
        if rows is None and cols is None:
            rows = int(np.sqrt(K))
            while K % rows:
                rows -= 1
            cols = K // rows
        elif rows is None:
            rows = K // cols if cols else 0
        elif cols is None:
            cols = K // rows if rows else 0
        if rows < 1 or cols < 1 or rows * cols != K:
            raise ValueError(f"grid {rows}x{cols} does not hold K={K} agents")
        for r in range(rows):
            for c in range(cols):
                k = r * cols + c
                if c + 1 < cols:
                    edges.append((k, k + 1))
                if r + 1 < rows:
                    edges.append((k, k + cols))
    elif kind == "random":
        if "prob" not in extra or "seed" not in extra:
            raise ValueError("random graphs need 'prob' and 'seed'")
        prob = float(extra["prob"])
        if not 0.0 <= prob <= 1.0:
            raise ValueError(f"edge probability must be in [0, 1], got {prob}")
        rng = np.random.default_rng(extra["seed"])
        pairs = [(a, b) for a in range(K) for b in range(a + 1, K)]
        for _ in range(MAX_GRAPH_RETRIES):
            keep = rng.random(len(pairs)) < prob
            edges = [e for e, on in zip(pairs, keep) if on]
            if _bfs_connected(K, edges):
                break
        else:
            raise ValueError(
                f"no connected random graph after {MAX_GRAPH_RETRIES} draws (K={K}, prob={prob})"
            )
    else:
        raise ValueError(f"unknown topology kind {kind!r}")
    return Graph.from_edges(K, edges)


# --------------------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseProfile:
    """Per-agent gradient-noise bounds.

    ``sigma_sq[k]`` bounds ``E||s_k||^2`` from above and ``sigma_lower_sq[k]``
    bounds the noise covariance from below (``R_k >= sigma_lower_sq[k] * I``).
    """

    sigma_sq: np.ndarray
    sigma_lower_sq: np.ndarray

    def __post_init__(self) -> None:
        upper = _frozen(self.sigma_sq).reshape(-1)
        lower = _frozen(self.sigma_lower_sq).reshape(-1)
        object.__setattr__(self, "sigma_sq", upper)
        object.__setattr__(self, "sigma_lower_sq", lower)
        if upper.shape != lower.shape:
            raise ValueError("sigma_sq and sigma_lower_sq must have the same length")
        if np.any(lower <= 0) or np.any(upper <= 0):
            raise ValueError("noise variances must be positive")
        if np.any(lower > upper * (1 + 1e-12)):
            raise ValueError("sigma_lower_sq must not exceed sigma_sq")

    @property
    def K(self) -> int:
        return len(self.sigma_sq)

    @classmethod
    def uniform(cls, K: int, sigma_sq: float, sigma_lower_sq: float | None = None) -> "NoiseProfile":
        lower = sigma_sq if sigma_lower_sq is None else sigma_lower_sq
        return cls(np.full(K, float(sigma_sq)), np.full(K, float(lower)))

    def to_json(self) -> str:
        return json.dumps(
            [
                {"agent": k, "sigma_sq": float(s), "sigma_lower_sq": float(l)}
                for k, (s, l) in enumerate(zip(self.sigma_sq, self.sigma_lower_sq))
            ],
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "NoiseProfile":
        entries = sorted(json.loads(text), key=lambda e: int(e["agent"]))
        if [int(e["agent"]) for e in entries] != list(range(len(entries))):
            raise ValueError("noise profile agents must be 0..K-1 without gaps")
        return cls(
            np.array([e["sigma_sq"] for e in entries], dtype=float),
            np.array([e["sigma_lower_sq"] for e in entries], dtype=float),
        )


# --------------------------------------------------------------------------- validation


@dataclass
class ConstraintCheck:
    name: str
    passed: bool
    offending: list = field(default_factory=list)


@dataclass
class ValidationReport:
    """Outcome of the three convex-combination constraints on a matrix."""

    checks: list[ConstraintCheck]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def __str__(self) -> str:
        lines = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            extra = f" at {c.offending[:10]}" if c.offending else ""
            lines.append(f"{c.name}: {status}{extra}")
        return "\n".join(lines)


def validate_policy(A, graph: Graph, tol: float = VALIDATION_TOL) -> ValidationReport:
    """Check non-negativity, unit column sums and the graph's sparsity pattern."""
    A = np.asarray(A, dtype=float)
    if A.shape != (graph.K, graph.K):
        raise ValueError(f"matrix shape {A.shape} does not match K={graph.K}")
    neg = [tuple(int(x) for x in ix) for ix in np.argwhere(A < 0)]
    col_err = np.abs(A.sum(axis=0) - 1.0)
    bad_cols = [int(k) for k in np.flatnonzero(col_err > tol)]
    outside = [tuple(int(x) for x in ix) for ix in np.argwhere((A != 0) & ~graph.adjacency())]
    return ValidationReport(
        [
            ConstraintCheck("non-negativity", not neg, neg),
            ConstraintCheck("column-sum", not bad_cols, bad_cols),
            ConstraintCheck("sparsity", not outside, outside),
        ]
    )


# --------------------------------------------------------------------------- spectra


def perron_vector(A, tol: float = PERRON_TOL, max_iter: int = MAX_POWER_ITERS) -> np.ndarray:
    """Positive eigenvector of ``A`` at eigenvalue one, normalised to sum to one.

    Power iteration is run from two different starting vectors at once; if they
    do not reach the same limit the eigenvalue is not simple (reducible or
    periodic structure) and ``ConvergenceError`` is raised.  Slowly mixing
    matrices would exhaust the iteration cap, so every ``SQUARE_EVERY``
    unconverged steps the operator is squared (``A -> A^2 -> A^4 ...``), which
    keeps the fixed point and squares the contraction ratio.
    """
    A = np.asarray(A, dtype=float)
    K = A.shape[0]
    if A.shape != (K, K):
        raise ValueError("matrix must be square")
    X = np.empty((K, 2))
    X[:, 0] = 1.0 / K
    X[:, 1] = np.arange(1, K + 1) / (K * (K + 1) / 2)
    op = A
    step = prev = np.inf
    for it in range(1, max_iter + 1):
        Y = op @ X
        Y /= Y.sum(axis=0)
        prev, step = step, np.max(np.abs(Y - X))
        X = Y
        if step <= tol:
            break
        if it % SQUARE_EVERY == 0:
            op = op @ op
            op /= op.sum(axis=0)
            step = np.inf
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")
    if op is not A:
        # polish against A itself so rounding in the squared operator does not leak into p
        X = A @ X
        X /= X.sum(axis=0)
    # distance to the limit is about step * r / (1 - r) for contraction ratio r
    r = step / prev if 0 < step < prev else 0.0
    slack = 1e3 * tol + 10 * step * r / (1 - r)
    if np.max(np.abs(X[:, 0] - X[:, 1])) > slack:
        raise ConvergenceError("eigenvalue one is not simple: graph assumptions violated")
    p = X[:, 0]
    if np.any(p <= 0):
        raise ConvergenceError("Perron vector has non-positive entries: reducible matrix")
    return p / p.sum()


def mixing_rate(
    A,
    p: np.ndarray | None = None,
    tol: float = PERRON_TOL,
    max_iter: int = MAX_POWER_ITERS,
) -> float:
    """Second-largest eigenvalue magnitude of a combination matrix.

    Symmetric matrices go through a dense symmetric eigensolver. Otherwise a
    block power iteration is run on the deflated matrix ``A - p 1^T``; a block
    (rather than a single vector) also captures complex-conjugate pairs.
    """
    A = np.asarray(A, dtype=float)
    K = A.shape[0]
    if K == 1:
        return 0.0
    if np.allclose(A, A.T, rtol=0.0, atol=1e-14):
        B = A - np.full((K, K), 1.0 / K)
        return float(np.max(np.abs(np.linalg.eigvalsh((B + B.T) / 2))))
    if p is None:
        p = perron_vector(A)
    B = A - np.outer(p, np.ones(K))
    scale = max(np.abs(B).sum(axis=0).max(), 1e-300)
    b = min(K - 1, 4)
    X, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((K, b)))
    prev = np.inf
    settled = 0
    for _ in range(max_iter):
        Y = B @ X
        if np.linalg.norm(Y) <= 1e-15 * scale:
            return 0.0
        ritz = np.max(np.abs(np.linalg.eigvals(X.T @ Y)))
        X, _ = np.linalg.qr(Y)
        settled = settled + 1 if abs(ritz - prev) <= tol * max(ritz, 1.0) else 0
        prev = ritz
        if settled >= 3:
            return float(ritz)
    raise ConvergenceError(f"deflated power iteration did not converge in {max_iter} steps")


# --------------------------------------------------------------------------- policies


@dataclass(frozen=True)
class CombinationPolicy:
    """A validated left-stochastic matrix with its Perron vector and mixing rate."""

    A: np.ndarray
    graph: Graph
    p: np.ndarray
    lambda2: float

    @classmethod
    def from_matrix(cls, A, graph: Graph) -> "CombinationPolicy":
        A = _frozen(A)
        report = validate_policy(A, graph)
        if not report.ok:
            raise PolicyError(report)
        p = _frozen(perron_vector(A))
        lam = mixing_rate(A, p)
        if not lam < 1.0:
            raise ConvergenceError(f"mixing rate {lam} is not below one")
        return cls(A, graph, p, lam)

    @property
    def K(self) -> int:
        return self.graph.K

    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.A, self.A.T, rtol=0.0, atol=1e-14))


def uniform_policy(graph: Graph) -> CombinationPolicy:
    """``a_lk = 1/n_k`` on the neighbourhood of ``k``."""
    A = graph.adjacency() / graph.n[np.newaxis, :]
    return CombinationPolicy.from_matrix(A, graph)


def asymmetric_mh_policy(graph: Graph, noise: NoiseProfile) -> CombinationPolicy:
    """Hastings-type weights minimising ``sum_k p_k^2 sigma_k^2`` over valid policies.

    ``a_lk = sigma_k^2 / max(n_k sigma_k^2, n_l sigma_l^2)`` for neighbours
    ``l != k``; the diagonal takes the remaining mass.  The resulting Perron
    vector is proportional to ``1 / sigma_k^2``.
    """
    s = np.asarray(noise.sigma_sq, dtype=float)
    if len(s) != graph.K:
        raise ValueError("noise profile length does not match the graph")
    if np.any(s <= 0):
        raise ValueError("sigma_sq must be positive")
    n = graph.n
    A = np.zeros((graph.K, graph.K))
    for k, nbrs in enumerate(graph.neighbor_sets):
        for l in nbrs:
            if l != k:
                A[l, k] = s[k] / max(n[k] * s[k], n[l] * s[l])
        A[k, k] = 1.0 - A[:, k].sum()
    return CombinationPolicy.from_matrix(A, graph)


def policy_objective(p, noise: NoiseProfile) -> float:
    """``sum_k p_k^2 sigma_k^2``, the quantity governing approximate escape time."""
    p = np.asarray(p, dtype=float)
    if p.shape != noise.sigma_sq.shape:
        raise ValueError(f"p has length {len(p)}, noise profile has {noise.K}")
    if np.any(p <= 0):
        warnings.warn("p has non-positive entries; not a valid Perron vector", stacklevel=2)
    return float(np.sum(p**2 * noise.sigma_sq))


def random_policy(graph: Graph, rng: np.random.Generator) -> CombinationPolicy:
    """Random valid policy: positive weights on each neighbourhood, columns normalised.

    Weights are drawn on a log scale so that some columns are strongly peaked.
    """
    W = np.exp(rng.uniform(-3.0, 3.0, size=(graph.K, graph.K))) * graph.adjacency()
    return CombinationPolicy.from_matrix(W / W.sum(axis=0), graph)


# --------------------------------------------------------------------------- files


def write_policy_csv(path, A, comments: Sequence[str] = ()) -> None:
    """Row-major CSV, one matrix row ``l`` per line, after the orientation header."""
    A = np.asarray(A, dtype=float)
    buf = io.StringIO()
    buf.write(POLICY_CSV_HEADER + "\n")
    for c in comments:
        buf.write(f"# {c}\n")
    writer = csv.writer(buf, lineterminator="\n")
    for row in A:
        writer.writerow([repr(float(x)) for x in row])
    Path(path).write_text(buf.getvalue())


def read_policy_csv(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append([float(x) for x in line.split(",")])
    A = np.array(rows, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"policy file {path} does not hold a square matrix")
    return A
