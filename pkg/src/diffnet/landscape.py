"""Loss models, stochastic-gradient oracles and finite-difference checks.

All agents share one ``LossModel`` (``J_k = J``, so the gradient-disagreement
bound is zero).  Agents differ only in their noise: each stochastic gradient is
the gradient of the loss at one freshly drawn data point plus isotropic
Gaussian noise of standard deviation ``sigma_iso[k]`` per axis.  The isotropic
part guarantees a covariance floor of ``sigma_iso[k]**2``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .rng import STREAM_NOISE, KeyedStream, normals, uniforms
from .topology import NoiseProfile

__all__ = [
    "Smoothness",
    "LossModel",
    "Quadratic",
    "NNSaddleLoss",
    "StochasticOracle",
    "NoiseEstimate",
    "eval_loss",
    "eval_hessian",
    "fd_gradient",
    "fd_hessian",
    "check_gradient",
    "check_hessian",
    "sample_stochastic_gradient",
    "estimate_noise_constants",
]

GRAD_FD_STEP = 1e-6
HESS_FD_STEP = 1e-4


@dataclass(frozen=True)
class Smoothness:
    """Gradient-Lipschitz ``delta``, Hessian-Lipschitz ``rho_h``, disagreement bound ``g_dis``."""

    delta: float
    rho_h: float
    g_dis: float = 0.0


def _check_dim(model: "LossModel", w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (model.dim,):
        raise ValueError(f"expected a vector of length {model.dim}, got shape {w.shape}")
    return w


class LossModel:
    """Interface shared by the shipped losses.

    Subclasses provide ``value``, ``gradient`` and optionally ``hessian``
    (falls back to finite differences).  Losses defined as an average over a
    finite data set set ``n_data`` and implement ``sample_gradients``.
    """

    dim: int
    n_data: int = 0
    known_minimum: float | None = None

    def value(self, w) -> float:
        raise NotImplementedError

    def gradient(self, w) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, w) -> np.ndarray:
        return fd_hessian(self, w)

    @property
    def smoothness(self) -> Smoothness:
        raise NotImplementedError

    def sample_gradients(self, W: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Per-sample gradients: row ``j`` is the gradient at ``W[j]`` for data point ``idx[j]``."""
        return np.stack([self.gradient(w) for w in W])

    def data_covariance(self, w) -> np.ndarray:
        """Covariance of the per-sample gradient over the data set at ``w``."""
        return np.zeros((self.dim, self.dim))

    def spec(self) -> dict:
        raise NotImplementedError


class Quadratic(LossModel):
    """``J(w) = 0.5 w^T D w`` for a symmetric ``D`` (deterministic, no data)."""

    def __init__(self, D):
        D = np.atleast_2d(np.asarray(D, dtype=float))
        if D.ndim != 2 or D.shape[0] != D.shape[1] or not np.allclose(D, D.T):
            raise ValueError("D must be a symmetric square matrix")
        self.D = D
        self.dim = D.shape[0]
        eig = np.linalg.eigvalsh(D)
        self.known_minimum = 0.0 if eig[0] >= 0 else None

    @classmethod
    def diag(cls, *entries: float) -> "Quadratic":
        return cls(np.diag(entries))

    def value(self, w) -> float:
        w = _check_dim(self, w)
        return 0.5 * float(w @ self.D @ w)

    def gradient(self, w) -> np.ndarray:
        return self.D @ _check_dim(self, w)

    def hessian(self, w) -> np.ndarray:
        _check_dim(self, w)
        return self.D.copy()

    def sample_gradients(self, W, idx):
        return np.asarray(W, dtype=float) @ self.D

    @property
    def smoothness(self) -> Smoothness:
        return Smoothness(float(np.max(np.abs(np.linalg.eigvalsh(self.D)))), 0.0, 0.0)

    def spec(self) -> dict:
        return {"kind": "quadratic", "D": self.D.tolist()}


class NNSaddleLoss(LossModel):
    """Single-layer network with a linear hidden layer and logistic output.

    ``J(w1, W2) = mean_n log(1 + exp(-g_n w1^T W2 h_n)) + reg/2 (|w1|^2 + |W2|_F^2)``

    averaged over a fixed population of ``n_data`` points drawn once: labels
    ``g = +-1`` equiprobable and features ``h = g * shift * 1 + z`` with
    ``z ~ N(0, I_M)``.  Parameters are packed as ``[w1, W2.ravel()]``
    (row-major), dimension ``M + M**2``.  The origin is a strict saddle when
    ``reg < |mean(g h)| / 2``.
    """

    def __init__(self, M: int = 2, reg: float = 0.01, shift: float = 0.5,
                 n_data: int = 2000, data_seed: int = 0):
        if M < 1 or n_data < 1:
            raise ValueError("M and n_data must be positive")
        self.M = int(M)
        self.reg = float(reg)
        self.shift = float(shift)
        self.n_data = int(n_data)
        self.data_seed = int(data_seed)
        self.dim = self.M + self.M**2
        rng = np.random.default_rng(self.data_seed)
        self.labels = rng.choice(np.array([-1.0, 1.0]), size=self.n_data)
        self.features = self.labels[:, None] * self.shift + rng.standard_normal((self.n_data, self.M))
        # labelled features g_n h_n; the loss only ever sees this product
        self._gh = self.labels[:, None] * self.features
        self._gh.setflags(write=False)

    def spec(self) -> dict:
        return {"kind": "nn_saddle", "M": self.M, "reg": self.reg, "shift": self.shift,
                "n_data": self.n_data, "data_seed": self.data_seed}

    def _unpack(self, w):
        w = _check_dim(self, w)
        return w[: self.M], w[self.M:].reshape(self.M, self.M)

    def _margins(self, w1, W2) -> np.ndarray:
        return self._gh @ (W2.T @ w1)

    def value(self, w) -> float:
        w1, W2 = self._unpack(w)
        u = self._margins(w1, W2)
        out = float(np.mean(np.logaddexp(0.0, -u)) + 0.5 * self.reg * np.dot(w, w))
        if not np.isfinite(out):
            raise FloatingPointError("non-finite loss value")
        return out

    def gradient(self, w) -> np.ndarray:
        w1, W2 = self._unpack(w)
        dl = -expit(-self._margins(w1, W2))
        c = dl @ self._gh / self.n_data
        grad = np.concatenate([W2 @ c, np.outer(w1, c).ravel()])
        grad += self.reg * np.asarray(w, dtype=float)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite gradient")
        return grad

    def hessian(self, w) -> np.ndarray:
        w1, W2 = self._unpack(w)
        M = self.M
        u = self._margins(w1, W2)
        dl = -expit(-u)
        d2l = expit(u) * expit(-u)
        gh = self._gh
        # per-sample margin gradients
        G = np.concatenate([gh @ W2.T, (w1[None, :, None] * gh[:, None, :]).reshape(-1, M * M)], axis=1)
        H = (G.T * (d2l / self.n_data)) @ G
        c = dl @ gh / self.n_data
        cross = np.kron(np.eye(M), c[None, :])
        H[:M, M:] += cross
        H[M:, :M] += cross.T
        H[np.diag_indices_from(H)] += self.reg
        return H

    def sample_gradients(self, W, idx) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        M = self.M
        w1 = W[:, :M]
        W2 = W[:, M:].reshape(-1, M, M)
        gh = self._gh[np.asarray(idx)]
        a = np.einsum("rij,rj->ri", W2, gh)  # W2 (g h)
        u = np.einsum("ri,ri->r", w1, a)
        dl = -expit(-u)[:, None]
        out = np.concatenate([dl * a, (dl[:, :, None] * w1[:, :, None] * gh[:, None, :]).reshape(-1, M * M)],
                             axis=1)
        return out + self.reg * W

    def data_covariance(self, w) -> np.ndarray:
        w = _check_dim(self, w)
        grads = self.sample_gradients(np.broadcast_to(w, (self.n_data, self.dim)), np.arange(self.n_data))
        return np.cov(grads, rowvar=False, bias=True)

    def strict_saddle_margin(self) -> float:
        """``|mean(g h)| / 2``: the origin is a strict saddle iff ``reg`` is below this."""
        return 0.5 * float(np.linalg.norm(self._gh.mean(axis=0)))

    @functools.cached_property
    def known_minimum(self) -> float:
        best = np.inf
        for sign in (1.0, -1.0):
            x0 = np.concatenate([sign * np.ones(self.M), np.ones(self.M * self.M)])
            res = minimize(self.value, x0, jac=self.gradient, method="BFGS", options={"gtol": 1e-10})
            best = min(best, float(res.fun))
        return best

    @functools.cached_property
    def smoothness(self) -> Smoothness:
        # Hessian norms sampled over the radius-2 ball
        rng = np.random.default_rng(12345)
        pts = rng.standard_normal((1000, self.dim))
        pts *= (2.0 * rng.random(1000) ** (1.0 / self.dim) / np.linalg.norm(pts, axis=1))[:, None]
        hess = [self.hessian(x) for x in pts]
        delta = max(float(np.max(np.abs(np.linalg.eigvalsh(H)))) for H in hess)
        rho = 0.0
        for j in range(0, 1000, 2):
            dist = np.linalg.norm(pts[j] - pts[j + 1])
            rho = max(rho, float(np.linalg.norm(hess[j] - hess[j + 1], 2)) / dist)
        return Smoothness(delta, rho, 0.0)


# --------------------------------------------------------------------------- evaluation


def eval_loss(model: LossModel, w) -> tuple[float, np.ndarray]:
    w = _check_dim(model, w)
    val, grad = model.value(w), model.gradient(w)
    if not np.isfinite(val) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite loss or gradient")
    return val, grad


def eval_hessian(model: LossModel, w) -> np.ndarray:
    return model.hessian(_check_dim(model, w))


def fd_gradient(model: LossModel, w, step: float = GRAD_FD_STEP) -> np.ndarray:
    w = _check_dim(model, w)
    out = np.empty(model.dim)
    for j in range(model.dim):
        h = step * (1.0 + abs(w[j]))
        e = np.zeros(model.dim)
        e[j] = h
        out[j] = (model.value(w + e) - model.value(w - e)) / (2 * h)
    return out


def fd_hessian(model: LossModel, w, step: float = HESS_FD_STEP, symmetrize: bool = True) -> np.ndarray:
    """Central differences of the analytic gradient, column by column."""
    w = _check_dim(model, w)
    H = np.empty((model.dim, model.dim))
    for j in range(model.dim):
        h = step * (1.0 + abs(w[j]))
        e = np.zeros(model.dim)
        e[j] = h
        H[:, j] = (model.gradient(w + e) - model.gradient(w - e)) / (2 * h)
    return 0.5 * (H + H.T) if symmetrize else H


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Worst entrywise ``|a - b| / max(|a|, |b|, 1)``."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom))


def check_gradient(model: LossModel, w) -> float:
    """Worst per-axis error of the analytic gradient against central differences."""
    return _relative_error(model.gradient(w), fd_gradient(model, w))


def check_hessian(model: LossModel, w) -> float:
    return _relative_error(model.hessian(w), fd_hessian(model, w))


# --------------------------------------------------------------------------- oracle


class StochasticOracle:
    """Per-agent stochastic gradients with reproducible, addressable noise.

    The draw for agent ``k`` at iteration ``i`` uses the words
    ``KeyedStream(seed).words(k, i)``: ``dim`` of them become the isotropic
    Gaussian perturbation, one more selects the data point.
    """

    def __init__(self, model: LossModel, sigma_iso, seed: int = 0):
        self.model = model
        self.sigma_iso = np.array(sigma_iso, dtype=float).reshape(-1)
        if np.any(self.sigma_iso < 0):
            raise ValueError("sigma_iso must be non-negative")
        self.seed = int(seed)
        self.stream = KeyedStream(self.seed, model.dim + 1, STREAM_NOISE)

    @property
    def K(self) -> int:
        return len(self.sigma_iso)

    def reseeded(self, seed: int) -> "StochasticOracle":
        return StochasticOracle(self.model, self.sigma_iso, seed)

    def __getstate__(self):
        return {"model": self.model, "sigma_iso": self.sigma_iso, "seed": self.seed}

    def __setstate__(self, state):
        self.__init__(state["model"], state["sigma_iso"], state["seed"])

    def _decode(self, words: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dim = self.model.dim
        z = normals(words[..., :dim])
        n = max(self.model.n_data, 1)
        idx = np.minimum((uniforms(words[..., dim]) * n).astype(np.int64), n - 1)
        return z, idx

    def _check_agent(self, k: int) -> None:
        if not 0 <= k < self.K:
            raise IndexError(f"agent {k} out of range for K={self.K}")

    def sample(self, k: int, w, iteration: int) -> np.ndarray:
        self._check_agent(k)
        w = _check_dim(self.model, w)
        z, idx = self._decode(self.stream.words(k, iteration))
        return self.model.sample_gradients(w[None, :], np.array([idx]))[0] + self.sigma_iso[k] * z

    def sample_all(self, W: np.ndarray, iteration: int) -> np.ndarray:
        """Stochastic gradients of every agent at its own iterate (rows of ``W``)."""
        W = np.asarray(W, dtype=float)
        if W.shape != (self.K, self.model.dim):
            raise ValueError(f"expected iterates of shape {(self.K, self.model.dim)}, got {W.shape}")
        words = np.stack([self.stream.words(k, iteration) for k in range(self.K)])
        z, idx = self._decode(words)
        return self.model.sample_gradients(W, idx) + self.sigma_iso[:, None] * z

    def noise_draws(self, k: int, w, start: int, count: int) -> np.ndarray:
        """Gradient noise ``s = sample - grad J`` at a fixed point for iterations ``start..start+count-1``."""
        self._check_agent(k)
        w = _check_dim(self.model, w)
        z, idx = self._decode(self.stream.block(k, start, count))
        grads = self.model.sample_gradients(np.broadcast_to(w, (count, self.model.dim)), idx)
        return grads - self.model.gradient(w) + self.sigma_iso[k] * z

    def noise_profile(self, w) -> NoiseProfile:
        """Exact noise bounds at ``w``: trace and isotropic floor of each agent's covariance."""
        w = _check_dim(self.model, w)
        cov = self.model.data_covariance(w)
        lower = self.sigma_iso**2 + max(float(np.linalg.eigvalsh(cov)[0]), 0.0)
        upper = self.model.dim * self.sigma_iso**2 + float(np.trace(cov))
        return NoiseProfile(upper, lower)


def sample_stochastic_gradient(oracle: StochasticOracle, k: int, w, iteration: int) -> np.ndarray:
    return oracle.sample(k, w, iteration)


@dataclass
class NoiseEstimate:
    """Monte-Carlo moments of one agent's gradient noise at a fixed point."""

    m2: float
    m2_se: float
    m4: float
    m4_se: float
    cov_min_eig: float
    cov_min_eig_se: float
    mean: np.ndarray
    mean_se: np.ndarray


def estimate_noise_constants(oracle: StochasticOracle, w, draws: int, start: int = 0) -> list[NoiseEstimate]:
    """Estimate ``E|s_k|^2``, ``E|s_k|^4`` and ``lambda_min(cov s_k)`` for every agent."""
    if draws < 1000:
        raise ValueError(f"need at least 1000 draws, got {draws}")
    out = []
    for k in range(oracle.K):
        s = oracle.noise_draws(k, w, start, draws)
        sq = np.einsum("ij,ij->i", s, s)
        cov = s.T @ s / draws
        evals, evecs = np.linalg.eigh(cov)
        proj = (s @ evecs[:, 0]) ** 2
        root_n = np.sqrt(draws)
        out.append(NoiseEstimate(
            m2=float(sq.mean()), m2_se=float(sq.std() / root_n),
            m4=float((sq**2).mean()), m4_se=float((sq**2).std() / root_n),
            cov_min_eig=float(max(evals[0], 0.0)), cov_min_eig_se=float(proj.std() / root_n),
            mean=s.mean(axis=0), mean_se=s.std(axis=0) / root_n,
        ))
    return out
