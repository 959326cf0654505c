"""Exact score functions for noised low-rank Gaussian mixtures.

All densities are evaluated through the low-rank identities for
Sigma = s^2 U U^T + gamma^2 I:

    Sigma^{-1} v  = (1/gamma^2) (v - s^2 U (gamma^2 I_r + s^2 U^T U)^{-1} U^T v)
    log det Sigma = 2 (d - r) log gamma + log det(gamma^2 I_r + s^2 U^T U)

which stay exact for arbitrary U (the orthonormal-columns projection form is
a special case).  Every function accepts a single point (d,) or a batch
(n, d) and returns a matching shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import DimensionMismatch, SingularNoise
from .model import MoLRMoGModel, component_weights
from .schedule import DiffusionSchedule, coefficients

LOG_2PI = float(np.log(2.0 * np.pi))


def _require_noise(gamma: float) -> None:
    if not (gamma > 0):
        raise SingularNoise(f"gamma must be positive, got {gamma}")


def _batch(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != d:
            raise DimensionMismatch(f"expected point of length {d}, got {x.shape[0]}")
        return x[None, :], True
    if x.shape[-1] != d:
        raise DimensionMismatch(f"expected points of length {d}, got {x.shape[-1]}")
    return x, False


class _LowRankCov:
    """Cached factorization of Sigma = s^2 U U^T + gamma^2 I."""

    def __init__(self, U: np.ndarray, s: float, gamma: float):
        _require_noise(gamma)
        U = np.asarray(U, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        self.U = U
        self.s = float(s)
        self.gamma = float(gamma)
        self.d = U.shape[0]
        self.r = U.shape[1]
        g2 = gamma * gamma
        if self.r > 0:
            core = g2 * np.eye(self.r) + (s * s) * (U.T @ U)
            self._core_cf = cho_factor(core)
            self.logdet = 2.0 * (self.d - self.r) * np.log(gamma) + 2.0 * np.sum(
                np.log(np.diag(self._core_cf[0]))
            )
        else:
            self._core_cf = None
            self.logdet = 2.0 * self.d * np.log(gamma)

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Sigma^{-1} v for v of shape (..., d)."""
        g2 = self.gamma * self.gamma
        if self.r == 0:
            return v / g2
        proj = cho_solve(self._core_cf, (v @ self.U).T).T
        return (v - (self.s * self.s) * (proj @ self.U.T)) / g2

    def log_density(self, x: np.ndarray, mean: np.ndarray) -> np.ndarray:
        """Gaussian log-density N(mean, Sigma) for x of shape (n, d)."""
        resid = x - mean
        quad = np.sum(resid * self.solve(resid), axis=-1)
        return -0.5 * (self.d * LOG_2PI + self.logdet + quad)


@dataclass(frozen=True)
class NoisedComponentView:
    """One mixture component pushed through the forward process to time t."""

    s: float
    gamma: float
    mu: np.ndarray
    U: np.ndarray

    def cov(self) -> _LowRankCov:
        return _LowRankCov(self.U, self.s, self.gamma)


def log_density(view: NoisedComponentView, x: np.ndarray) -> np.ndarray | float:
    """log N(x; s mu, s^2 U U^T + gamma^2 I) via the low-rank route."""
    cov = view.cov()
    xb, single = _batch(x, cov.d)
    out = cov.log_density(xb, view.s * np.asarray(view.mu, dtype=float))
    return float(out[0]) if single else out


def delta_vec(view: NoisedComponentView, x: np.ndarray) -> np.ndarray:
    """Whitened residual gamma^2 Sigma^{-1} (x - s mu)."""
    cov = view.cov()
    xb, single = _batch(x, cov.d)
    out = (cov.gamma ** 2) * cov.solve(xb - view.s * np.asarray(view.mu, dtype=float))
    return out[0] if single else out


@dataclass(frozen=True)
class LatentParams:
    """Trainable parameters (mu_l, U_l) of one subspace's mixture.

    Fixes the global flatten order: all means first, then all covariance
    factors, component-major, each U raveled column-major.
    """

    components: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        comps = tuple(
            (np.asarray(mu, dtype=float), _as_factor(U)) for mu, U in self.components
        )
        object.__setattr__(self, "components", comps)
        d = comps[0][0].shape[0]
        for mu, U in comps:
            if mu.shape[0] != d or U.shape[0] != d:
                raise DimensionMismatch("inconsistent component dimensions")

    @property
    def d(self) -> int:
        return self.components[0][0].shape[0]

    @property
    def dim(self) -> int:
        return sum(mu.size + U.size for mu, U in self.components)

    def flatten(self) -> np.ndarray:
        mus = [mu for mu, _ in self.components]
        us = [U.ravel(order="F") for _, U in self.components]
        return np.concatenate(mus + us)

    def unflatten(self, vec: np.ndarray) -> "LatentParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"expected flat vector of length {self.dim}")
        mus, us, pos = [], [], 0
        for mu, _ in self.components:
            mus.append(vec[pos : pos + mu.size])
            pos += mu.size
        for _, U in self.components:
            us.append(vec[pos : pos + U.size].reshape(U.shape, order="F"))
            pos += U.size
        return LatentParams(tuple(zip(mus, us)))


@dataclass(frozen=True)
class SymmetricParams:
    """Tied two-mode parameterization: means at +/- s mu, shared factor U."""

    mu: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "U", _as_factor(self.U))
        if self.U.shape[0] != self.mu.shape[0]:
            raise DimensionMismatch("U rows differ from mu length")

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.size + self.U.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.mu, self.U.ravel(order="F")])

    def unflatten(self, vec: np.ndarray) -> "SymmetricParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"expected flat vector of length {self.dim}")
        d = self.mu.size
        return SymmetricParams(mu=vec[:d], U=vec[d:].reshape(self.U.shape, order="F"))

    def as_latent(self) -> tuple[LatentParams, np.ndarray]:
        """Explicit two-component equivalent: weights (1/2, 1/2), means +/- mu."""
        params = LatentParams(((self.mu, self.U), (-self.mu, self.U)))
        return params, np.array([0.5, 0.5])


def _as_factor(U: np.ndarray) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    return U


def from_model_subspace(sub) -> tuple[LatentParams, np.ndarray]:
    """Extract (LatentParams, weights) from a model Subspace."""
    params = LatentParams(tuple((c.mu, c.U) for c in sub.components))
    return params, sub.weights


def _component_logjoint(params: LatentParams, pis, s: float, gamma: float,
                        x: np.ndarray) -> tuple[np.ndarray, list[_LowRankCov]]:
    """log(pi_l N_l(x)) for each component; x is (n, d)."""
    pis = np.asarray(pis, dtype=float)
    covs = [_LowRankCov(U, s, gamma) for _, U in params.components]
    cols = []
    for (mu, _), pi, cov in zip(params.components, pis, covs):
        cols.append(np.log(pi) + cov.log_density(x, s * mu))
    return np.stack(cols, axis=-1), covs


def responsibilities(params: LatentParams, pis, sched: DiffusionSchedule, t: float,
                     x: np.ndarray) -> np.ndarray:
    """Posterior component probabilities r_l(x), log-sum-exp stabilized."""
    s, _, gamma = coefficients(sched, t)
    xb, single = _batch(x, params.d)
    logj, _ = _component_logjoint(params, pis, s, gamma, xb)
    logr = logj - logsumexp(logj, axis=-1, keepdims=True)
    r = np.exp(logr)
    return r[0] if single else r


def mixture_log_density(params: LatentParams, pis, sched: DiffusionSchedule, t: float,
                        x: np.ndarray) -> np.ndarray | float:
    """log p_t(x) of the noised latent mixture (brute-force oracle hook)."""
    s, _, gamma = coefficients(sched, t)
    xb, single = _batch(x, params.d)
    logj, _ = _component_logjoint(params, pis, s, gamma, xb)
    out = logsumexp(logj, axis=-1)
    return float(out[0]) if single else out


def latent_score(params: LatentParams, pis, sched: DiffusionSchedule, t: float,
                 x: np.ndarray) -> np.ndarray:
    """Score of the noised latent mixture: -(1/gamma^2) sum_l r_l delta_l."""
    s, _, gamma = coefficients(sched, t)
    xb, single = _batch(x, params.d)
    logj, covs = _component_logjoint(params, pis, s, gamma, xb)
    logr = logj - logsumexp(logj, axis=-1, keepdims=True)
    r = np.exp(logr)
    out = np.zeros_like(xb)
    for l, ((mu, _), cov) in enumerate(zip(params.components, covs)):
        out -= r[:, l : l + 1] * cov.solve(xb - s * mu)
    return out[0] if single else out


def symmetric_responsibilities(mu, U, sched: DiffusionSchedule, t: float,
                               x: np.ndarray) -> np.ndarray:
    """(r_plus, r_minus) for the tied two-mode mixture; shape (n, 2) or (2,)."""
    p = SymmetricParams(mu=mu, U=U)
    params, pis = p.as_latent()
    return responsibilities(params, pis, sched, t, x)


def symmetric_score(mu, U, sched: DiffusionSchedule, t: float, x: np.ndarray) -> np.ndarray:
    """Score of the tied two-mode mixture with modes at +/- s mu, shared Sigma."""
    p = SymmetricParams(mu=mu, U=U)
    params, pis = p.as_latent()
    return latent_score(params, pis, sched, t, x)


def _ambient_flat(model: MoLRMoGModel):
    """Flat (weight, ambient mean direction A mu, ambient factor A U) list."""
    out = []
    for k, l, w in component_weights(model):
        sub = model.subspaces[k]
        comp = sub.components[l]
        out.append((w, sub.A @ comp.mu, sub.A @ comp.U))
    return out


def ambient_log_density(model: MoLRMoGModel, sched: DiffusionSchedule, t: float,
                        x: np.ndarray) -> np.ndarray | float:
    """log p_t(x) of the full ambient mixture, via low-rank factors A U."""
    s, _, gamma = coefficients(sched, t)
    xb, single = _batch(x, model.D)
    cols = []
    for w, amu, aU in _ambient_flat(model):
        cov = _LowRankCov(aU, s, gamma)
        cols.append(np.log(w) + cov.log_density(xb, s * amu))
    out = logsumexp(np.stack(cols, axis=-1), axis=-1)
    return float(out[0]) if single else out


def ambient_responsibilities(model: MoLRMoGModel, sched: DiffusionSchedule, t: float,
                             x: np.ndarray) -> np.ndarray:
    """Posterior over flat (k, l) components for ambient points."""
    s, _, gamma = coefficients(sched, t)
    xb, single = _batch(x, model.D)
    cols = []
    for w, amu, aU in _ambient_flat(model):
        cov = _LowRankCov(aU, s, gamma)
        cols.append(np.log(w) + cov.log_density(xb, s * amu))
    logj = np.stack(cols, axis=-1)
    r = np.exp(logj - logsumexp(logj, axis=-1, keepdims=True))
    return r[0] if single else r


def ambient_score(model: MoLRMoGModel, sched: DiffusionSchedule, t: float,
                  x: np.ndarray) -> np.ndarray:
    """Score of the ambient mixture sum_{k,l} (1/K) pi_l N(s A mu, s^2 (AU)(AU)^T + gamma^2 I)."""
    s, _, gamma = coefficients(sched, t)
    xb, single = _batch(x, model.D)
    flat = _ambient_flat(model)
    cols, covs = [], []
    for w, amu, aU in flat:
        cov = _LowRankCov(aU, s, gamma)
        covs.append(cov)
        cols.append(np.log(w) + cov.log_density(xb, s * amu))
    logj = np.stack(cols, axis=-1)
    r = np.exp(logj - logsumexp(logj, axis=-1, keepdims=True))
    out = np.zeros_like(xb)
    for i, ((_, amu, _), cov) in enumerate(zip(flat, covs)):
        out -= r[:, i : i + 1] * cov.solve(xb - s * amu)
    return out[0] if single else out


def conditional_score(x_t: np.ndarray, x0: np.ndarray, sched: DiffusionSchedule,
                      t: float) -> np.ndarray:
    """Score of the Gaussian transition kernel: -(x_t - s x0) / gamma^2."""
    s, _, gamma = coefficients(sched, t)
    _require_noise(gamma)
    x_t = np.asarray(x_t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    return -(x_t - s * x0) / (gamma * gamma)
