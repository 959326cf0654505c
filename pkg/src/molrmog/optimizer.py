"""Full-batch gradient descent on the empirical score-matching loss.

The loss at the true parameters is pointwise zero, so its gradient vanishes
exactly there and GD initialized inside the strong-convexity basin contracts
to the truth itself: there is no sampling-noise floor on the distance.  The
theoretical step 2/(alpha + L') yields the contraction factor
rho = (kappa - 1)/(kappa + 1) with kappa = L'/alpha; traces record the
per-iteration distance ratios against that bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import exact_jacobian, score_of
from .errors import (
    DivergenceDetected,
    EmptyDataset,
    LSmallerThanAlpha,
    NaNDetected,
    NonPositiveAlpha,
    ValidationError,
)
from .schedule import DiffusionSchedule


@dataclass(frozen=True)
class GDConfig:
    eta: float | None = None  # None means 2/(alpha_hat + L_hat) from FD estimates
    m_max: int = 500
    tol: float = 1e-10
    init_radius: float = 0.0

    def __post_init__(self):
        if self.eta is not None and not (self.eta > 0):
            raise ValidationError(f"explicit step size must be positive, got {self.eta}")
        if self.init_radius < 0:
            raise ValidationError("init_radius must be non-negative")


@dataclass
class TraceRow:
    m: int
    loss: float
    grad_norm: float
    dist: float
    ratio: float  # dist_m / dist_{m-1}; nan at m = 0


@dataclass
class TrainTrace:
    rows: list[TraceRow]
    eta: float
    kappa: float
    rho_bound: float
    converged: bool

    @property
    def final_dist(self) -> float:
        return self.rows[-1].dist


def _check_data(data) -> np.ndarray:
    X = np.atleast_2d(np.asarray(data, dtype=float))
    if X.shape[0] == 0:
        raise EmptyDataset("gradient descent needs a non-empty dataset")
    return X


def loss_and_grad(theta, truth, pis, sched: DiffusionSchedule, t: float,
                  data: np.ndarray) -> tuple[float, np.ndarray]:
    """Empirical loss and its analytic gradient (2/n) sum J^T residual."""
    X = _check_data(data)
    resid = score_of(theta, pis, sched, t, X) - score_of(truth, pis, sched, t, X)
    loss = float(np.mean(np.sum(resid ** 2, axis=-1)))
    J = exact_jacobian(theta, pis, sched, t, X)
    grad = 2.0 * np.einsum("nd,ndp->p", resid, J) / X.shape[0]
    return loss, grad


def grad_empirical(theta, truth, pis, sched: DiffusionSchedule, t: float,
                   data: np.ndarray) -> np.ndarray:
    """Gradient of the empirical loss over the flattened parameters."""
    return loss_and_grad(theta, truth, pis, sched, t, data)[1]


def init_near(truth, radius: float, rng):
    """truth + radius * u with u uniform on the flattened unit sphere."""
    if radius < 0:
        raise ValidationError("radius must be non-negative")
    vec = truth.flatten()
    if radius == 0:
        return truth.unflatten(vec)
    rng = np.random.default_rng(rng)
    u = rng.standard_normal(vec.size)
    u /= np.linalg.norm(u)
    return truth.unflatten(vec + radius * u)


def theoretical_step(alpha: float, L_prime: float) -> tuple[float, float, float]:
    """(eta, kappa, rho) for strongly convex/smooth GD."""
    if not (alpha > 0):
        raise NonPositiveAlpha(f"need alpha > 0, got {alpha}")
    if L_prime < alpha:
        raise LSmallerThanAlpha(f"need L' >= alpha, got L'={L_prime} < alpha={alpha}")
    eta = 2.0 / (alpha + L_prime)
    kappa = L_prime / alpha
    rho = (kappa - 1.0) / (kappa + 1.0)
    return eta, kappa, rho


def estimate_local_constants(truth, pis, sched: DiffusionSchedule, t: float,
                             data: np.ndarray, h: float = 1e-4) -> tuple[float, float]:
    """(alpha_hat, L_hat): extreme eigenvalues of the FD Hessian of the
    empirical loss at the truth, built from central differences of the
    analytic gradient."""
    X = _check_data(data)
    vec = truth.flatten()
    p = vec.size
    H = np.empty((p, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = h
        gp = grad_empirical(truth.unflatten(vec + e), truth, pis, sched, t, X)
        gm = grad_empirical(truth.unflatten(vec - e), truth, pis, sched, t, X)
        H[:, j] = (gp - gm) / (2.0 * h)
    H = 0.5 * (H + H.T)
    evals = np.linalg.eigvalsh(H)
    return float(evals[0]), float(evals[-1])


def gd_train(theta0, truth, pis, sched: DiffusionSchedule, t: float,
             data: np.ndarray, cfg: GDConfig) -> TrainTrace:
    """Deterministic full-batch GD; trace records distance contraction."""
    X = _check_data(data)
    if cfg.eta is None:
        alpha_hat, L_hat = estimate_local_constants(truth, pis, sched, t, X)
        eta, kappa, rho = theoretical_step(alpha_hat, L_hat)
    else:
        eta, kappa, rho = cfg.eta, float("nan"), float("nan")

    truth_vec = truth.flatten()
    vec = theta0.flatten()
    dist0 = float(np.linalg.norm(vec - truth_vec))
    rows: list[TraceRow] = []
    prev_dist = None
    converged = False
    for m in range(cfg.m_max + 1):
        theta = truth.unflatten(vec)
        loss, grad = loss_and_grad(theta, truth, pis, sched, t, X)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NaNDetected(f"non-finite loss or gradient at iteration {m}")
        dist = float(np.linalg.norm(vec - truth_vec))
        ratio = float("nan") if prev_dist is None or prev_dist == 0 else dist / prev_dist
        grad_norm = float(np.linalg.norm(grad))
        rows.append(TraceRow(m=m, loss=loss, grad_norm=grad_norm, dist=dist, ratio=ratio))
        if dist0 > 0 and dist > 10.0 * dist0:
            raise DivergenceDetected(
                f"distance {dist:.3g} exceeded 10x initial {dist0:.3g} at iteration {m}")
        if grad_norm <= cfg.tol:
            converged = True
            break
        if m == cfg.m_max:
            break
        prev_dist = dist
        vec = vec - eta * grad
    return TrainTrace(rows=rows, eta=float(eta), kappa=float(kappa),
                      rho_bound=float(rho), converged=converged)


@dataclass
class ContractionReport:
    fraction: float
    first_violation: int | None
    checked: int


def contraction_check(trace: TrainTrace, rho: float, slack: float = 0.05,
                      dist_floor: float = 0.0) -> ContractionReport:
    """Fraction of recorded ratios at or below rho + slack, above the floor."""
    checked = 0
    ok = 0
    first_violation = None
    for row in trace.rows:
        if math.isnan(row.ratio) or row.dist <= dist_floor:
            continue
        checked += 1
        if row.ratio <= rho + slack:
            ok += 1
        elif first_violation is None:
            first_violation = row.m
    fraction = ok / checked if checked else 1.0
    return ContractionReport(fraction=fraction, first_violation=first_violation,
                             checked=checked)
