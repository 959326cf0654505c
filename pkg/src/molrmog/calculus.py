"""Analytic parameter-derivatives of the score and curvature analysis.

Conventions fixed here and used everywhere:

  * Flatten order of theta follows LatentParams / SymmetricParams: all means
    first, then all covariance factors, component-major, U column-major.
  * A Jacobian J(x) is d x p: row i is the derivative of score coordinate i
    with respect to the flattened theta.  Batched forms are (n, d, p).
  * H = E[J^T J] over x from the noised mixture at theta (p x p, PSD).  The
    Hessian of the squared-error loss at theta* is 2H; the factor is carried
    as a flag on reports, never folded in silently.

The exact Jacobian splits into a "self-cluster" part (term A: component
responsibilities frozen) and a responsibility-derivative part (term B,
proportional to the pairwise overlap r_i r_j and exponentially suppressed as
the modes separate).  Term A alone is the simplified Jacobian; A + B matches
finite differences to first-principles accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    RankNotOne,
    SingleComponent,
)
from .model import Subspace, moment_match
from .schedule import DiffusionSchedule, coefficients
from .score import (
    LatentParams,
    SymmetricParams,
    _LowRankCov,
    _batch,
    latent_score,
    mixture_log_density,
    symmetric_score,
)
from scipy.special import logsumexp

# responsibility products below this are treated as exactly zero overlap
XI_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# score / flatten dispatch shared with the optimizer


def score_of(params, pis, sched: DiffusionSchedule, t: float, x: np.ndarray) -> np.ndarray:
    """Evaluate the score under either parameterization."""
    if isinstance(params, SymmetricParams):
        return symmetric_score(params.mu, params.U, sched, t, x)
    return latent_score(params, pis, sched, t, x)


def sample_noised(params, pis, sched: DiffusionSchedule, t: float, n: int, rng) -> np.ndarray:
    """Draw n latent points from the noised mixture defined by params."""
    rng = np.random.default_rng(rng)
    s, _, gamma = coefficients(sched, t)
    if isinstance(params, SymmetricParams):
        params, pis = params.as_latent()
    pis = np.asarray(pis, dtype=float)
    labels = rng.choice(len(pis), size=n, p=pis)
    d = params.d
    x = np.empty((n, d))
    for l, (mu, U) in enumerate(params.components):
        rows = np.nonzero(labels == l)[0]
        z1 = rng.standard_normal((len(rows), U.shape[1]))
        z2 = rng.standard_normal((len(rows), d))
        x[rows] = s * mu + s * (z1 @ U.T) + gamma * z2
    return x


# ---------------------------------------------------------------------------
# Jacobians


@dataclass(frozen=True)
class JacobianPair:
    """Per-component derivative blocks of the score at one point."""

    J_mu: tuple[np.ndarray, ...]  # each (d, d)
    J_U: tuple[np.ndarray, ...]  # each (d, d * r), columns U-column-major

    @property
    def full(self) -> np.ndarray:
        return np.hstack(list(self.J_mu) + list(self.J_U))


def _pair_from_full(full: np.ndarray, params) -> JacobianPair:
    if isinstance(params, SymmetricParams):
        comps = [(params.mu, params.U)]
    else:
        comps = list(params.components)
    j_mu, j_u, pos = [], [], 0
    for mu, _ in comps:
        j_mu.append(full[:, pos : pos + mu.size])
        pos += mu.size
    for _, U in comps:
        j_u.append(full[:, pos : pos + U.size])
        pos += U.size
    return JacobianPair(J_mu=tuple(j_mu), J_U=tuple(j_u))


def jacobian_fd(theta, pis, sched: DiffusionSchedule, t: float, x: np.ndarray,
                h: float = 1e-5) -> JacobianPair:
    """Central finite differences of the score in every theta coordinate."""
    if not (h > 0):
        raise DimensionMismatch(f"need positive step, got {h}")
    x = np.asarray(x, dtype=float)
    vec = theta.flatten()
    cols = []
    for j in range(vec.size):
        e = np.zeros_like(vec)
        e[j] = h
        sp = score_of(theta.unflatten(vec + e), pis, sched, t, x)
        sm = score_of(theta.unflatten(vec - e), pis, sched, t, x)
        cols.append((sp - sm) / (2.0 * h))
    return _pair_from_full(np.stack(cols, axis=-1), theta)


def _sym_parts(mu, U, sched, t, X):
    """Shared intermediates for the tied two-mode Jacobian terms."""
    s, _, gamma = coefficients(sched, t)
    p = SymmetricParams(mu=mu, U=U)
    mu, U = p.mu, p.U
    cov = _LowRankCov(U, s, gamma)
    d = cov.d
    Xb, single = _batch(X, d)
    rho_p = Xb - s * mu
    rho_m = Xb + s * mu
    q_p = cov.solve(rho_p)
    q_m = cov.solve(rho_m)
    # responsibilities from the shared-covariance quadratic forms
    logw = -0.5 * np.stack([np.sum(rho_p * q_p, -1), np.sum(rho_m * q_m, -1)], -1)
    r = np.exp(logw - logsumexp(logw, axis=-1, keepdims=True))
    Sinv = cov.solve(np.eye(d))
    V = cov.solve(U.T).T if U.shape[1] else np.zeros((d, 0))  # Sigma^{-1} U
    return s, gamma, p, cov, Xb, single, rho_p, rho_m, q_p, q_m, r, Sinv, V


def _sym_gU(s, q, qU, V):
    """d logN / dU for one mode: entries s^2 (q_j (qU)_c - V_{jc}); (n, d, r)."""
    return (s * s) * (q[:, :, None] * qU[:, None, :] - V[None, :, :])


def _flatten_U_axes(T):
    """(n, d, j, c) -> (n, d, r*d) with column index c*d + j (column-major U)."""
    n, d, dj, r = T.shape
    return T.transpose(0, 1, 3, 2).reshape(n, d, r * dj)


def symmetric_exact_terms(mu, U, sched: DiffusionSchedule, t: float,
                          X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched (termA, termB) for the tied two-mode score, each (n, d, p).

    Term A freezes the responsibilities (self-cluster part); term B carries
    their parameter derivative and is proportional to r_plus * r_minus.
    """
    s, gamma, p, cov, Xb, single, rho_p, rho_m, q_p, q_m, r, Sinv, V = _sym_parts(
        mu, U, sched, t, X)
    n, d = Xb.shape
    rr = p.U.shape[1]
    g2 = gamma * gamma
    rp = r[:, 0]
    rm = r[:, 1]

    # term A, mean block: s (r+ - r-) Sigma^{-1}
    A_mu = s * (rp - rm)[:, None, None] * Sinv[None, :, :]
    # term B, mean block: -(r+ r-/g2) (eps - delta') (g+ - g-)^T
    w = -2.0 * s * g2 * (Sinv @ p.mu)  # eps - delta', independent of x
    dg_mu = s * (q_p + q_m)  # g+_mu - g-_mu
    B_mu = -(rp * rm)[:, None, None] / g2 * w[None, :, None] * dg_mu[:, None, :]

    if rr > 0:
        qpU = q_p @ p.U
        qmU = q_m @ p.U
        # d eps_i / dU_jc = -g2 s^2 [Sinv_ij (qU)_c + V_ic q_j]
        def d_resid(q, qU):
            return -(g2 * s * s) * (
                Sinv[None, :, :, None] * qU[:, None, None, :]
                + V[None, :, None, :] * q[:, None, :, None]
            )

        A_U = -(1.0 / g2) * (
            rp[:, None, None, None] * d_resid(q_p, qpU)
            + rm[:, None, None, None] * d_resid(q_m, qmU)
        )
        A_U = _flatten_U_axes(A_U)
        dg_U = _sym_gU(s, q_p, qpU, V) - _sym_gU(s, q_m, qmU, V)
        dg_U_flat = dg_U.transpose(0, 2, 1).reshape(n, rr * d)
        B_U = -(rp * rm)[:, None, None] / g2 * w[None, :, None] * dg_U_flat[:, None, :]
    else:
        A_U = np.zeros((n, d, 0))
        B_U = np.zeros((n, d, 0))

    termA = np.concatenate([A_mu, A_U], axis=-1)
    termB = np.concatenate([B_mu, B_U], axis=-1)
    return termA, termB


def jacobian_exact_terms(mu, U, sched: DiffusionSchedule, t: float,
                         x: np.ndarray) -> tuple[JacobianPair, JacobianPair]:
    """Exact tied two-mode Jacobian split at one point; A + B matches FD."""
    termA, termB = symmetric_exact_terms(mu, U, sched, t, np.asarray(x, dtype=float))
    p = SymmetricParams(mu=mu, U=U)
    return _pair_from_full(termA[0], p), _pair_from_full(termB[0], p)


def jacobian_simplified_sym(mu, U, sched: DiffusionSchedule, t: float,
                            x: np.ndarray) -> JacobianPair:
    """Self-cluster (responsibilities-frozen) Jacobian of the tied score."""
    termA, _ = symmetric_exact_terms(mu, U, sched, t, np.asarray(x, dtype=float))
    return _pair_from_full(termA[0], SymmetricParams(mu=mu, U=U))


def general_jacobian(params: LatentParams, pis, sched: DiffusionSchedule, t: float,
                     X: np.ndarray) -> np.ndarray:
    """Exact batched Jacobian (n, d, p) of latent_score for a free mixture.

    For component m with residual rho_m = x - s mu_m and q_m = Sigma_m^{-1} rho_m:
    the theta_m derivative is the self term r_m d(delta_m)/d(theta_m) plus the
    responsibility-derivative cross term r_m (delta_m - delta_bar) g_m^T where
    g_m is the component log-density gradient in theta_m.
    """
    s, _, gamma = coefficients(sched, t)
    Xb, single = _batch(X, params.d)
    n, d = Xb.shape
    g2 = gamma * gamma
    pis = np.asarray(pis, dtype=float)
    L = len(params.components)

    covs = [_LowRankCov(U, s, gamma) for _, U in params.components]
    qs = [cov.solve(Xb - s * mu) for (mu, _), cov in zip(params.components, covs)]
    logj = np.stack(
        [np.log(pi) + cov.log_density(Xb, s * mu)
         for (mu, _), pi, cov in zip(params.components, pis, covs)],
        axis=-1,
    )
    r = np.exp(logj - logsumexp(logj, axis=-1, keepdims=True))
    deltas = [g2 * q for q in qs]
    delta_bar = sum(r[:, l : l + 1] * deltas[l] for l in range(L))

    mu_blocks, U_blocks = [], []
    for m in range(L):
        cov = covs[m]
        Sinv = cov.solve(np.eye(d))
        V = cov.solve(params.components[m][1].T).T if params.components[m][1].shape[1] else None
        rm = r[:, m]
        dev = deltas[m] - delta_bar  # (n, d)

        # mean block: cross term + self term s r_m Sigma^{-1}
        g_mu = s * qs[m]
        Jmu = -(rm[:, None, None] / g2) * dev[:, :, None] * g_mu[:, None, :]
        Jmu += s * rm[:, None, None] * Sinv[None, :, :]
        mu_blocks.append(Jmu)

        Um = params.components[m][1]
        rr = Um.shape[1]
        if rr == 0:
            U_blocks.append(np.zeros((n, d, 0)))
            continue
        qU = qs[m] @ Um
        g_U = _sym_gU(s, qs[m], qU, V)  # (n, d, r)
        g_U_flat = g_U.transpose(0, 2, 1).reshape(n, rr * d)
        # self term: -(r_m/g2) d(delta_m)/dU, with
        # d(delta_m)_i/dU_jc = -g2 s^2 [Sinv_ij (qU)_c + V_ic q_j]
        d_delta = -(g2 * s * s) * (
            Sinv[None, :, :, None] * qU[:, None, None, :]
            + V[None, :, None, :] * qs[m][:, None, :, None]
        )
        JU = -(rm[:, None, None] / g2) * (
            dev[:, :, None] * g_U_flat[:, None, :] + _flatten_U_axes(d_delta)
        )
        U_blocks.append(JU)

    J = np.concatenate(mu_blocks + U_blocks, axis=-1)
    return J


def exact_jacobian(params, pis, sched: DiffusionSchedule, t: float,
                   X: np.ndarray) -> np.ndarray:
    """Batched (n, d, p) exact Jacobian under either parameterization."""
    if isinstance(params, SymmetricParams):
        termA, termB = symmetric_exact_terms(params.mu, params.U, sched, t, X)
        return termA + termB
    return general_jacobian(params, pis, sched, t, X)


# ---------------------------------------------------------------------------
# Hessian assembly


@dataclass
class HessianReport:
    H: np.ndarray  # (p, p) Monte Carlo mean of J^T J
    stderr: np.ndarray  # elementwise MC standard error of H
    mu_slice: slice
    U_slice: slice
    lambda_min: float
    lambda_min_mumu: float
    lambda_min_UU: float
    cross_norm: float  # spectral norm of the mu-U cross block
    alpha_formula: float | None
    corr_r: float
    factor2: bool = True  # loss Hessian equals 2 H

    @property
    def H_mumu(self) -> np.ndarray:
        return self.H[self.mu_slice, self.mu_slice]

    @property
    def H_UU(self) -> np.ndarray:
        return self.H[self.U_slice, self.U_slice]

    @property
    def H_muU(self) -> np.ndarray:
        return self.H[self.mu_slice, self.U_slice]


def _mu_U_slices(params) -> tuple[slice, slice]:
    if isinstance(params, SymmetricParams):
        return slice(0, params.mu.size), slice(params.mu.size, params.dim)
    n_mu = sum(mu.size for mu, _ in params.components)
    return slice(0, n_mu), slice(n_mu, params.dim)


def hessian_from_samples(params, pis, sched: DiffusionSchedule, t: float,
                         X: np.ndarray, jac_mode: str = "exact",
                         chunk: int = 8192) -> HessianReport:
    """Assemble H = mean_x J(x)^T J(x) over the given sample set."""
    Xb, _ = _batch(X, params.d)
    n = Xb.shape[0]
    if n == 0:
        raise EmptyDataset("no samples for Hessian assembly")
    p = params.dim
    S1 = np.zeros((p, p))
    S2 = np.zeros((p, p))
    for start in range(0, n, chunk):
        batch = Xb[start : start + chunk]
        J = _jacobian_by_mode(params, pis, sched, t, batch, jac_mode)
        M = np.einsum("ndp,ndq->npq", J, J)
        S1 += M.sum(axis=0)
        S2 += (M * M).sum(axis=0)
    H = S1 / n
    var = np.maximum(S2 / n - H * H, 0.0)
    stderr = np.sqrt(var / n)
    H = 0.5 * (H + H.T)
    return _finish_report(params, pis, sched, t, H, stderr)


def _jacobian_by_mode(params, pis, sched, t, X, jac_mode):
    if jac_mode == "exact":
        return exact_jacobian(params, pis, sched, t, X)
    if jac_mode == "simplified":
        if not isinstance(params, SymmetricParams):
            raise RankNotOne("simplified Jacobian is defined for the tied two-mode form")
        termA, _ = symmetric_exact_terms(params.mu, params.U, sched, t, X)
        return termA
    if jac_mode == "fd":
        rows = [jacobian_fd(params, pis, sched, t, x).full for x in np.atleast_2d(X)]
        return np.stack(rows, axis=0)
    raise DimensionMismatch(f"unknown jac_mode {jac_mode!r}")


def _finish_report(params, pis, sched, t, H, stderr) -> HessianReport:
    mu_sl, U_sl = _mu_U_slices(params)
    evals = np.linalg.eigvalsh(H)
    Hmm = H[mu_sl, mu_sl]
    Huu = H[U_sl, U_sl]
    Hcross = H[mu_sl, U_sl]
    lam_mu = float(np.linalg.eigvalsh(Hmm)[0]) if Hmm.size else float("nan")
    lam_uu = float(np.linalg.eigvalsh(Huu)[0]) if Huu.size else float("nan")
    cross = float(np.linalg.norm(Hcross, 2)) if Hcross.size else 0.0
    corr_r = 0.0
    if Hcross.size and lam_mu > 0 and lam_uu > 0:
        corr_r = cross / np.sqrt(lam_mu * lam_uu)
    alpha = None
    try:
        if isinstance(params, SymmetricParams):
            alpha = alpha_symmetric(params.mu, params.U, sched, t)
        else:
            alpha = alpha_asymmetric(params, pis, sched, t)
    except (RankNotOne, SingleComponent):
        alpha = None
    return HessianReport(
        H=H,
        stderr=stderr,
        mu_slice=mu_sl,
        U_slice=U_sl,
        lambda_min=float(evals[0]),
        lambda_min_mumu=lam_mu,
        lambda_min_UU=lam_uu,
        cross_norm=cross,
        alpha_formula=alpha,
        corr_r=float(corr_r),
    )


def hessian_empirical(theta_star, pis, sched: DiffusionSchedule, t: float,
                      n_mc: int, rng, jac_mode: str = "exact") -> HessianReport:
    """Monte Carlo H = E[J^T J] at theta_star over the noised mixture."""
    X = sample_noised(theta_star, pis, sched, t, n_mc, rng)
    return hessian_from_samples(theta_star, pis, sched, t, X, jac_mode=jac_mode)


# ---------------------------------------------------------------------------
# closed-form spectrum of M M^T for M = (a^T b) I + b a^T


@dataclass(frozen=True)
class MMTopEigs:
    lambda_min: float
    lambda_max: float
    bulk: float
    spectrum: np.ndarray


def mmtop_eigs(a: np.ndarray, b: np.ndarray) -> MMTopEigs:
    """Spectrum of M M^T with M = (a^T b) I + b a^T, in closed form.

    The bulk eigenvalue (a^T b)^2 has multiplicity n - 2; the two edge
    eigenvalues live in span{a, b}.  M M^T is positive definite iff a^T b
    is nonzero.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"length mismatch {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise DimensionMismatch("need vectors of length >= 2")
    c = float(a @ b)
    na2 = float(a @ a)
    nb2 = float(b @ b)
    disc = np.sqrt(na2 * nb2 * (8.0 * c * c + na2 * nb2))
    mu1 = 0.5 * (4.0 * c * c + na2 * nb2 + disc)
    mu2 = 0.5 * (4.0 * c * c + na2 * nb2 - disc)
    mu2 = max(mu2, 0.0)  # clip tiny negative round-off
    bulk = c * c
    spectrum = np.sort(np.concatenate([np.full(n - 2, bulk), [mu1, mu2]]))
    return MMTopEigs(lambda_min=float(mu2), lambda_max=float(max(mu1, bulk)),
                     bulk=bulk, spectrum=spectrum)


# ---------------------------------------------------------------------------
# strong-convexity constants


def alpha_symmetric(mu, U, sched: DiffusionSchedule, t: float) -> float:
    """Curvature lower bound for the tied two-mode model (rank-one U)."""
    mu = np.asarray(mu, dtype=float)
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[1] != 1:
        raise RankNotOne(f"tied two-mode analysis needs a rank-1 factor, got rank {U.shape[1]}")
    s, _, gamma = coefficients(sched, t)
    first = s * s / (s * s + gamma * gamma) ** 2
    second = mmtop_eigs(U.ravel(), mu).lambda_min
    return float(min(first, second))


def alpha_asymmetric(params: LatentParams, pis, sched: DiffusionSchedule, t: float,
                     r2_weights=None) -> float:
    """Curvature lower bound for a free mixture of rank-one components.

    Per-component mean curvature c_l gamma^4/(s^2+gamma^2)^2 with
    c_l = w_l s^2/gamma^4, and factor curvature w_l times the closed-form
    minimum eigenvalue; w_l defaults to pi_l, or the exact E[r_l^2] when
    supplied.
    """
    s, _, gamma = coefficients(sched, t)
    weights = np.asarray(r2_weights if r2_weights is not None else pis, dtype=float)
    lam1 = np.inf
    lam2 = np.inf
    for w, (mu, U) in zip(weights, params.components):
        if U.shape[1] != 1:
            raise RankNotOne(f"analysis needs rank-1 factors, got rank {U.shape[1]}")
        c = w * s * s / gamma ** 4
        lam1 = min(lam1, c * gamma ** 4 / (s * s + gamma * gamma) ** 2)
        lam2 = min(lam2, w * mmtop_eigs(U.ravel(), mu).lambda_min)
    return float(min(lam1, lam2))


# ---------------------------------------------------------------------------
# overlap and perturbation analysis


@dataclass
class OverlapConstants:
    S_mu: float
    S_U: float
    C1p: float
    C2p: float
    C: float  # C' (two-mode) or C-tilde (multi-mode)


@dataclass
class OverlapReport:
    mode: str
    xi_max: float
    eps_total: np.ndarray | None  # per-component sum of expected overlaps
    eps_overlap: float
    lambda_base: float
    constants: OverlapConstants
    alpha_eff: float
    lambda_min_H: float
    lambda_min_Hdiag: float
    delta_norm: float  # spectral norm of the discarded cross blocks
    weyl_gap: float
    hessian: HessianReport


def _responsibility_matrix(params, pis, sched, t, X):
    from .score import responsibilities

    if isinstance(params, SymmetricParams):
        lat, lpis = params.as_latent()
        return responsibilities(lat, lpis, sched, t, X)
    return responsibilities(params, pis, sched, t, X)


def _cross_term_norms(params, pis, sched, t, X):
    """Per-sample norms of the responsibility-derivative Jacobian part,
    split into mean and factor columns, plus the pairwise overlap weight."""
    if isinstance(params, SymmetricParams):
        termA, termB = symmetric_exact_terms(params.mu, params.U, sched, t, X)
        r = _responsibility_matrix(params, pis, sched, t, X)
        xi = r[:, 0] * r[:, 1]
        mu_sl, U_sl = _mu_U_slices(params)
        nB_mu = np.linalg.norm(termB[:, :, mu_sl], axis=(1, 2))
        nB_U = np.linalg.norm(termB[:, :, U_sl], axis=(1, 2))
        return nB_mu, nB_U, xi
    # free mixture: cross term = exact minus self-cluster-only Jacobian
    J = general_jacobian(params, pis, sched, t, X)
    J_self = _self_cluster_jacobian(params, pis, sched, t, X)
    diff = J - J_self
    r = _responsibility_matrix(params, pis, sched, t, X)
    L = r.shape[1]
    xi = np.zeros(r.shape[0])
    for i in range(L):
        for j in range(i + 1, L):
            xi += r[:, i] * r[:, j]
    mu_sl, U_sl = _mu_U_slices(params)
    nB_mu = np.linalg.norm(diff[:, :, mu_sl], axis=(1, 2))
    nB_U = np.linalg.norm(diff[:, :, U_sl], axis=(1, 2))
    return nB_mu, nB_U, xi


def _self_cluster_jacobian(params: LatentParams, pis, sched, t, X):
    """Responsibility-frozen Jacobian of a free mixture: drop the
    (delta_m - delta_bar) g_m^T cross term, keep r_m d(delta_m)/d(theta_m)."""
    s, _, gamma = coefficients(sched, t)
    Xb, _ = _batch(X, params.d)
    n, d = Xb.shape
    g2 = gamma * gamma
    r = _responsibility_matrix(params, pis, sched, t, Xb)
    mu_blocks, U_blocks = [], []
    for m, (mu, Um) in enumerate(params.components):
        cov = _LowRankCov(Um, s, gamma)
        Sinv = cov.solve(np.eye(d))
        rm = r[:, m]
        mu_blocks.append(s * rm[:, None, None] * Sinv[None, :, :])
        rr = Um.shape[1]
        if rr == 0:
            U_blocks.append(np.zeros((n, d, 0)))
            continue
        q = cov.solve(Xb - s * mu)
        qU = q @ Um
        V = cov.solve(Um.T).T
        d_delta = -(g2 * s * s) * (
            Sinv[None, :, :, None] * qU[:, None, None, :]
            + V[None, :, None, :] * q[:, None, :, None]
        )
        U_blocks.append(-(rm[:, None, None] / g2) * _flatten_U_axes(d_delta))
    return np.concatenate(mu_blocks + U_blocks, axis=-1)


def constants_CprimeCtilde(params, pis, sched: DiffusionSchedule, t: float,
                           R: float, samples: np.ndarray) -> OverlapConstants:
    """Perturbation constants: sensitivity scales S_mu, S_U and the measured
    cross-term-to-overlap ratios C1', C2' combined per the composite bound."""
    s, _, gamma = coefficients(sched, t)
    S_mu = s / gamma ** 2
    S_U = s * R * R / gamma ** 2
    nB_mu, nB_U, xi = _cross_term_norms(params, pis, sched, t, samples)
    mask = xi > XI_FLOOR
    if not np.any(mask):
        C1p = C2p = 0.0
    else:
        C1p = float(np.max(nB_mu[mask] / xi[mask]))
        C2p = float(np.max(nB_U[mask] / xi[mask]))
    if isinstance(params, SymmetricParams):
        C = 2.0 * (S_mu + S_U) * (C1p + C2p)
    else:
        C = 2.0 * (S_mu * C1p + S_U * C2p)
    return OverlapConstants(S_mu=float(S_mu), S_U=float(S_U), C1p=C1p, C2p=C2p, C=float(C))


def _component_block_slices(params) -> list[np.ndarray]:
    """Index groups whose cross blocks are zeroed to form H_diag."""
    if isinstance(params, SymmetricParams):
        mu_sl, U_sl = _mu_U_slices(params)
        return [np.arange(mu_sl.start, mu_sl.stop), np.arange(U_sl.start, U_sl.stop)]
    groups = []
    pos = 0
    mu_starts = []
    for mu, _ in params.components:
        mu_starts.append((pos, pos + mu.size))
        pos += mu.size
    U_starts = []
    for _, U in params.components:
        U_starts.append((pos, pos + U.size))
        pos += U.size
    for (ms, me), (us, ue) in zip(mu_starts, U_starts):
        groups.append(np.concatenate([np.arange(ms, me), np.arange(us, ue)]))
    return groups


def overlap_analysis(params, pis, sched: DiffusionSchedule, t: float,
                     samples: np.ndarray, mode: str = "two_mode_sup",
                     R: float | None = None) -> OverlapReport:
    """Overlap statistics, curvature degradation, and the Weyl decomposition.

    H is assembled from the given samples; H_diag zeroes every cross block
    between parameter groups (mean vs factor for the tied form, component vs
    component for a free mixture) and the Weyl bound
    lambda_min(H) >= lambda_min(H_diag) - |Delta H|_2 is evaluated on the
    computed matrices.
    """
    Xb, _ = _batch(samples, params.d)
    if Xb.shape[0] == 0:
        raise EmptyDataset("overlap analysis needs samples")
    if mode not in ("two_mode_sup", "multi_mode_expect"):
        raise DimensionMismatch(f"unknown overlap mode {mode!r}")
    r = _responsibility_matrix(params, pis, sched, t, Xb)
    L = r.shape[1]
    xi_pair_max = 0.0
    for i in range(L):
        for j in range(i + 1, L):
            xi_pair_max = max(xi_pair_max, float(np.max(r[:, i] * r[:, j])))
    eps_total = None
    if mode == "two_mode_sup":
        if L != 2:
            raise DimensionMismatch("two_mode_sup needs exactly two components")
        eps_overlap = xi_pair_max
    else:
        eps_total = np.zeros(L)
        for l in range(L):
            for j in range(L):
                if j != l:
                    eps_total[l] += float(np.mean(r[:, j] * r[:, l]))
        eps_overlap = float(np.max(eps_total))

    hess = hessian_from_samples(params, pis, sched, t, Xb, jac_mode="exact")
    H = hess.H
    groups = _component_block_slices(params)
    H_diag = np.zeros_like(H)
    for g in groups:
        H_diag[np.ix_(g, g)] = H[np.ix_(g, g)]
    delta = H - H_diag
    delta_norm = float(np.linalg.norm(delta, 2)) if delta.size else 0.0
    lam_H = float(np.linalg.eigvalsh(H)[0])
    lam_diag = float(np.linalg.eigvalsh(H_diag)[0])
    weyl_gap = lam_H - (lam_diag - delta_norm)

    # curvature floor before overlap degradation
    s, _, gamma = coefficients(sched, t)
    if mode == "two_mode_sup":
        lambda_base = (1.0 - 4.0 * eps_overlap) * min(hess.lambda_min_mumu, hess.lambda_min_UU)
    else:
        pis_arr = np.asarray(pis, dtype=float)
        lambda_base = np.inf
        for l, (mu, U) in enumerate(params.components):
            if U.shape[1] == 1:
                unit = min(s * s / (s * s + gamma * gamma) ** 2,
                           mmtop_eigs(U.ravel(), mu).lambda_min)
            else:
                g = groups[l]
                unit = float(np.linalg.eigvalsh(H[np.ix_(g, g)])[0]) / pis_arr[l]
            lambda_base = min(lambda_base, (pis_arr[l] - eps_total[l]) * unit)
        lambda_base = float(lambda_base)

    if R is None:
        R = float(np.max(np.linalg.norm(Xb, axis=1)))
    consts = constants_CprimeCtilde(params, pis, sched, t, R, Xb)
    alpha_eff = float(lambda_base - consts.C * eps_overlap)
    return OverlapReport(
        mode=mode,
        xi_max=xi_pair_max,
        eps_total=eps_total,
        eps_overlap=float(eps_overlap),
        lambda_base=float(lambda_base),
        constants=consts,
        alpha_eff=alpha_eff,
        lambda_min_H=lam_H,
        lambda_min_Hdiag=lam_diag,
        delta_norm=delta_norm,
        weyl_gap=float(weyl_gap),
        hessian=hess,
    )


# ---------------------------------------------------------------------------
# equivalent-Gaussian approximation error


def equivalent_gaussian_error(sub: Subspace, sched: DiffusionSchedule, t: float,
                              probe_radius: float, n_dirs: int = 64,
                              n_radii: int = 16, seed: int = 0):
    """Worst log-density gap between the noised mixture and its moment match
    over the ball |x - mu_bar| <= probe_radius, plus the parameter spreads
    eps (max pairwise factor distance) and delta (max pairwise mean distance).
    """
    comps = sub.components
    if len(comps) < 2:
        raise SingleComponent("equivalent-Gaussian error needs >= 2 components")
    eps = 0.0
    delta = 0.0
    for i in range(len(comps)):
        for j in range(i + 1, len(comps)):
            eps = max(eps, float(np.linalg.norm(comps[i].U - comps[j].U)))
            delta = max(delta, float(np.linalg.norm(comps[i].mu - comps[j].mu)))
    eq = moment_match(sub, sched, t)
    d = sub.d
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_dirs, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.vstack([dirs, np.eye(d), -np.eye(d)])
    radii = np.linspace(0.0, probe_radius, n_radii + 1)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d) + eq.mu_bar

    from .score import from_model_subspace

    params, pis = from_model_subspace(sub)
    log_p = mixture_log_density(params, pis, sched, t, pts)
    # Gaussian log-density of the moment match via a dense Cholesky
    from scipy.linalg import solve_triangular

    cf = np.linalg.cholesky(eq.sigma_bar)
    y = solve_triangular(cf, (pts - eq.mu_bar).T, lower=True).T
    log_q = -0.5 * (d * np.log(2.0 * np.pi) + 2.0 * np.sum(np.log(np.diag(cf)))
                    + np.sum(y * y, axis=1))
    err_max = float(np.max(np.abs(log_p - log_q)))
    return eps, delta, err_max
