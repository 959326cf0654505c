"""Ground-truth mixture-of-low-rank-MoG model: construction, sampling, noising.

The data distribution is a union of K linear subspaces mixed with equal
weight 1/K.  Subspace k carries an orthonormal basis A_k (D x d_k) and an
n_k-component Gaussian mixture in latent coordinates; component l has weight
pi_l, mean mu_l, and covariance U_l U_l^T (possibly rank deficient).  A
noiseless sample is x = A_k (mu_l + U_l z) with z standard normal, so the
data lies exactly on its subspace.  Full-rank noise enters only through the
forward process at t > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import (
    DimensionMismatch,
    NonOrthonormalBasis,
    TimeOutOfRange,
    ValidationError,
    WeightsNotNormalized,
)
from .schedule import DiffusionSchedule, coefficients

ORTHO_TOL = 1e-10
WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class MoGComponent:
    pi: float
    mu: np.ndarray  # (d,)
    U: np.ndarray  # (d, r) with r <= d

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        U = np.asarray(self.U, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        object.__setattr__(self, "U", U)
        d = self.mu.shape[0]
        if self.U.shape[0] != d:
            raise DimensionMismatch(f"U has {self.U.shape[0]} rows, mu has length {d}")
        if self.U.shape[1] > d:
            raise DimensionMismatch(f"U rank {self.U.shape[1]} exceeds latent dim {d}")
        if not (self.pi > 0):
            raise ValidationError(f"component weight must be positive, got {self.pi}")


@dataclass(frozen=True)
class Subspace:
    A: np.ndarray  # (D, d), orthonormal columns
    components: tuple[MoGComponent, ...]

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "components", tuple(self.components))
        d = self.A.shape[1]
        gram = self.A.T @ self.A
        if np.max(np.abs(gram - np.eye(d))) > ORTHO_TOL:
            raise NonOrthonormalBasis("A^T A deviates from identity beyond 1e-10")
        total = sum(c.pi for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise WeightsNotNormalized(f"component weights sum to {total}")
        for c in self.components:
            if c.mu.shape[0] != d:
                raise DimensionMismatch("component dimension differs from subspace dimension")

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.pi for c in self.components])


@dataclass(frozen=True)
class MoLRMoGModel:
    D: int
    subspaces: tuple[Subspace, ...]

    def __post_init__(self):
        object.__setattr__(self, "subspaces", tuple(self.subspaces))
        if len(self.subspaces) < 1:
            raise ValidationError("model needs at least one subspace")
        for sub in self.subspaces:
            if sub.A.shape[0] != self.D:
                raise DimensionMismatch("subspace basis row count differs from ambient dimension")

    @property
    def K(self) -> int:
        return len(self.subspaces)


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    x_latent: np.ndarray
    k: int
    l: int


@dataclass
class LabeledDataset:
    """Column-oriented store of labeled draws; vector friendly at large n."""

    k: np.ndarray  # (n,) subspace labels
    l: np.ndarray  # (n,) component labels
    x: np.ndarray  # (n, D) ambient points

    def __len__(self) -> int:
        return self.x.shape[0]

    def sample(self, model: MoLRMoGModel, i: int) -> LabeledSample:
        ki = int(self.k[i])
        return LabeledSample(
            x=self.x[i],
            x_latent=model.subspaces[ki].A.T @ self.x[i],
            k=ki,
            l=int(self.l[i]),
        )


@dataclass(frozen=True)
class EquivalentGaussian:
    mu_bar: np.ndarray  # (d,)
    sigma_bar: np.ndarray  # (d, d) symmetric PSD


def random_orthonormal(D: int, d: int, seed: int) -> np.ndarray:
    """Orthonormalize a seeded Gaussian matrix; sign-fixed for determinism."""
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((D, d))
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.diag(R))


def build_model(spec: dict) -> MoLRMoGModel:
    """Build a model from a plain-dict description (the JSON config shape).

    spec = {"D": int, "subspaces": [{"d": int, "A_seed": int | "A": [[..]],
            "components": [{"pi": num, "mu": [..], "U": [[..]]}]}]}
    """
    try:
        D = int(spec["D"])
        sub_specs = spec["subspaces"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"model spec missing field: {exc}") from exc
    subspaces = []
    for ss in sub_specs:
        comps = tuple(
            MoGComponent(pi=float(c["pi"]), mu=np.asarray(c["mu"], dtype=float),
                         U=np.asarray(c["U"], dtype=float))
            for c in ss["components"]
        )
        if "A" in ss:
            A = np.asarray(ss["A"], dtype=float)
        else:
            d = int(ss["d"])
            A = random_orthonormal(D, d, int(ss["A_seed"]))
        subspaces.append(Subspace(A=A, components=comps))
    return MoLRMoGModel(D=D, subspaces=tuple(subspaces))


def component_weights(model: MoLRMoGModel) -> list[tuple[int, int, float]]:
    """Flat (k, l, weight) list with weights (1/K) * pi summing to 1."""
    K = model.K
    out = []
    for k, sub in enumerate(model.subspaces):
        for l, comp in enumerate(sub.components):
            out.append((k, l, comp.pi / K))
    return out


def sample_data(model: MoLRMoGModel, n: int, rng) -> LabeledDataset:
    """Draw n labeled noiseless samples; component chosen with prob (1/K) pi."""
    if n < 1:
        raise ValidationError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(rng)
    flat = component_weights(model)
    probs = np.array([w for _, _, w in flat])
    idx = rng.choice(len(flat), size=n, p=probs)
    k_lab = np.array([flat[i][0] for i in idx], dtype=int)
    l_lab = np.array([flat[i][1] for i in idx], dtype=int)
    x = np.empty((n, model.D))
    # one block of normal draws per component, in fixed component order
    for ci, (k, l, _) in enumerate(flat):
        rows = np.nonzero(idx == ci)[0]
        sub = model.subspaces[k]
        comp = sub.components[l]
        z = rng.standard_normal((len(rows), comp.U.shape[1]))
        latent = comp.mu + z @ comp.U.T
        x[rows] = latent @ sub.A.T
    return LabeledDataset(k=k_lab, l=l_lab, x=x)


def forward_noise(x0: np.ndarray, sched: DiffusionSchedule, t: float, rng,
                  zero_noise: bool = False) -> np.ndarray:
    """Push x0 through the forward process: s(t) x0 + gamma(t) z."""
    s, _, gamma = coefficients(sched, t)  # raises TimeOutOfRange
    x0 = np.asarray(x0, dtype=float)
    if zero_noise:
        return s * x0
    rng = np.random.default_rng(rng)
    return s * x0 + gamma * rng.standard_normal(x0.shape)


def encode(sub: Subspace, x: np.ndarray) -> np.ndarray:
    """Project ambient points onto latent coordinates: A^T x."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sub.A.shape[0]:
        raise DimensionMismatch(f"expected ambient length {sub.A.shape[0]}, got {x.shape[-1]}")
    return x @ sub.A


def decode(sub: Subspace, z: np.ndarray) -> np.ndarray:
    """Lift latent points to ambient space: A z."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != sub.A.shape[1]:
        raise DimensionMismatch(f"expected latent length {sub.A.shape[1]}, got {z.shape[-1]}")
    return z @ sub.A.T


def moment_match(sub: Subspace, sched: DiffusionSchedule, t: float) -> EquivalentGaussian:
    """First two latent moments of the noised mixture on one subspace."""
    s, _, gamma = coefficients(sched, t)
    d = sub.d
    mu_bar = np.zeros(d)
    for comp in sub.components:
        mu_bar += comp.pi * s * comp.mu
    sigma_bar = np.zeros((d, d))
    for comp in sub.components:
        cov_l = s * s * comp.U @ comp.U.T + gamma * gamma * np.eye(d)
        mean_l = s * comp.mu
        sigma_bar += comp.pi * (cov_l + np.outer(mean_l, mean_l))
    sigma_bar -= np.outer(mu_bar, mu_bar)
    return EquivalentGaussian(mu_bar=mu_bar, sigma_bar=sigma_bar)


def support_radius(model: MoLRMoGModel, mass: float) -> float:
    """Conservative radius R with Pr(|x| <= R) >= mass for noiseless data.

    Per component: |A mu| plus an integer-sigma inflation of the largest
    covariance-factor singular value, z = ceil(sqrt(chi2 quantile at rank)).
    """
    if not (0 < mass < 1):
        raise ValidationError(f"mass must be in (0,1), got {mass}")
    R = 0.0
    for sub in model.subspaces:
        for comp in sub.components:
            center = float(np.linalg.norm(sub.A @ comp.mu))
            smax = float(np.linalg.svd(comp.U, compute_uv=False)[0]) if comp.U.size else 0.0
            if smax == 0.0:
                R = max(R, center)
                continue
            df = max(comp.U.shape[1], 1)
            z = math.ceil(math.sqrt(stats.chi2.ppf(mass, df)))
            R = max(R, center + z * smax)
    return R
