import numpy as np
import pytest

from conftest import dense_gaussian_logpdf, fd_gradient
from molrmog.errors import DimensionMismatch, SingularNoise
from molrmog.model import MoGComponent, Subspace, random_orthonormal, MoLRMoGModel
from molrmog.score import (
    LatentParams,
    NoisedComponentView,
    SymmetricParams,
    ambient_log_density,
    ambient_responsibilities,
    ambient_score,
    conditional_score,
    delta_vec,
    from_model_subspace,
    latent_score,
    log_density,
    mixture_log_density,
    responsibilities,
    symmetric_responsibilities,
    symmetric_score,
)


def random_params(d, n_comp, rank, seed):
    rng = np.random.default_rng(seed)
    comps = tuple(
        (rng.standard_normal(d), rng.standard_normal((d, rank)))
        for _ in range(n_comp)
    )
    pis = rng.uniform(0.2, 1.0, n_comp)
    return LatentParams(comps), pis / pis.sum()


def test_log_density_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for d, r in [(1, 1), (3, 1), (5, 3), (4, 4)]:
        U = rng.standard_normal((d, r))
        mu = rng.standard_normal(d)
        s, gamma = 0.7, 0.4
        view = NoisedComponentView(s=s, gamma=gamma, mu=mu, U=U)
        cov = s * s * U @ U.T + gamma * gamma * np.eye(d)
        X = rng.standard_normal((6, d))
        want = dense_gaussian_logpdf(X, s * mu, cov)
        assert log_density(view, X) == pytest.approx(want, rel=1e-12)
        assert log_density(view, X[0]) == pytest.approx(want[0], rel=1e-12)


def test_log_density_rank_zero_factor():
    view = NoisedComponentView(s=1.0, gamma=0.5, mu=np.zeros(2), U=np.zeros((2, 0)))
    want = dense_gaussian_logpdf(np.array([0.3, -0.1]), np.zeros(2), 0.25 * np.eye(2))
    assert log_density(view, np.array([0.3, -0.1])) == pytest.approx(want, rel=1e-12)


def test_delta_vec_matches_dense_solve():
    rng = np.random.default_rng(1)
    d, r = 4, 2
    U = rng.standard_normal((d, r))
    mu = rng.standard_normal(d)
    s, gamma = 1.3, 0.6
    view = NoisedComponentView(s=s, gamma=gamma, mu=mu, U=U)
    cov = s * s * U @ U.T + gamma * gamma * np.eye(d)
    x = rng.standard_normal(d)
    want = gamma * gamma * np.linalg.solve(cov, x - s * mu)
    assert delta_vec(view, x) == pytest.approx(want, rel=1e-12)


def test_singular_noise_rejected():
    with pytest.raises(SingularNoise):
        log_density(NoisedComponentView(s=1.0, gamma=0.0, mu=np.zeros(2), U=np.eye(2)),
                    np.zeros(2))


def test_flatten_unflatten_roundtrip_and_order():
    params, _ = random_params(3, 2, 2, seed=2)
    vec = params.flatten()
    assert vec.shape == (params.dim,)
    back = params.unflatten(vec)
    for (mu_a, U_a), (mu_b, U_b) in zip(params.components, back.components):
        assert np.array_equal(mu_a, mu_b)
        assert np.array_equal(U_a, U_b)
    # means occupy the leading block; factors are raveled column-major
    assert np.array_equal(vec[:3], params.components[0][0])
    U0 = params.components[0][1]
    assert vec[6] == U0[0, 0] and vec[7] == U0[1, 0] and vec[9] == U0[0, 1]
    with pytest.raises(DimensionMismatch):
        params.unflatten(np.zeros(params.dim + 1))


def test_symmetric_params_roundtrip_and_expansion():
    p = SymmetricParams(mu=[4.0, 0.0], U=[[1.0], [0.0]])
    q = p.unflatten(p.flatten())
    assert np.array_equal(q.mu, p.mu) and np.array_equal(q.U, p.U)
    latent, pis = p.as_latent()
    assert np.array_equal(pis, [0.5, 0.5])
    assert np.array_equal(latent.components[1][0], -p.mu)
    assert np.array_equal(latent.components[1][1], p.U)


def test_responsibilities_sum_to_one_and_limits(unit_sched):
    params, pis = random_params(3, 3, 2, seed=4)
    X = np.random.default_rng(5).standard_normal((20, 3))
    r = responsibilities(params, pis, unit_sched, 0.5, X)
    assert r.shape == (20, 3)
    assert np.all(r >= 0)
    assert np.sum(r, axis=1) == pytest.approx(np.ones(20), abs=1e-12)
    # with equal shared covariances, a point far along one mean is assigned
    # to that component
    sep = LatentParams((([4.0, 0.0, 0.0], 0.3 * np.eye(3)[:, :1]),
                        ([-4.0, 0.0, 0.0], 0.3 * np.eye(3)[:, :1])))
    far = responsibilities(sep, [0.5, 0.5], unit_sched, 0.5, np.array([4.0, 0.0, 0.0]))
    assert far[0] > 0.999


def test_latent_score_is_gradient_of_log_density(unit_sched, vp_sched):
    for sched, seed in [(unit_sched, 6), (vp_sched, 7)]:
        params, pis = random_params(3, 2, 2, seed=seed)
        rng = np.random.default_rng(seed + 50)
        for t in [0.1, 0.8]:
            for _ in range(3):
                x = rng.standard_normal(3)
                want = fd_gradient(
                    lambda y: mixture_log_density(params, pis, sched, t, y), x
                )
                got = latent_score(params, pis, sched, t, x)
                assert got == pytest.approx(want, abs=1e-6)


def test_symmetric_score_odd_and_matches_explicit_mixture(unit_sched):
    mu = np.array([2.0, 0.5])
    U = np.array([[0.8], [0.1]])
    rng = np.random.default_rng(8)
    X = rng.standard_normal((30, 2))
    got = symmetric_score(mu, U, unit_sched, 1.0, X)
    params, pis = SymmetricParams(mu=mu, U=U).as_latent()
    assert got == pytest.approx(latent_score(params, pis, unit_sched, 1.0, X), abs=1e-14)
    # odd symmetry of the tied two-mode score
    assert symmetric_score(mu, U, unit_sched, 1.0, -X) == pytest.approx(-got, abs=1e-12)
    r = symmetric_responsibilities(mu, U, unit_sched, 1.0, np.zeros(2))
    assert r == pytest.approx([0.5, 0.5], abs=1e-14)


def test_score_at_midpoint_of_symmetric_pair_is_pulled_by_covariance(unit_sched):
    # at x = 0 the mean terms cancel, leaving only the shared-covariance pull
    mu = np.array([3.0, 0.0])
    U = np.array([[1.0], [0.0]])
    sc = symmetric_score(mu, U, unit_sched, 1.0, np.zeros(2))
    assert sc == pytest.approx(np.zeros(2), abs=1e-14)


def test_ambient_score_matches_fd_and_latent_reduction(unit_sched):
    A = random_orthonormal(4, 2, 7)
    comps = (
        MoGComponent(pi=0.5, mu=[2.0, 0.0], U=[[0.6], [0.1]]),
        MoGComponent(pi=0.5, mu=[-2.0, 0.5], U=[[0.2], [0.5]]),
    )
    model = MoLRMoGModel(D=4, subspaces=(Subspace(A=A, components=comps),))
    rng = np.random.default_rng(9)
    t = 0.5
    for _ in range(4):
        x = rng.standard_normal(4)
        want = fd_gradient(lambda y: ambient_log_density(model, unit_sched, t, y), x)
        assert ambient_score(model, unit_sched, t, x) == pytest.approx(want, abs=1e-6)
    r = ambient_responsibilities(model, unit_sched, t, rng.standard_normal((5, 4)))
    assert np.sum(r, axis=1) == pytest.approx(np.ones(5), abs=1e-12)
    # single-subspace ambient density equals the latent density plus the
    # off-subspace Gaussian part (orthogonal complement is pure noise)
    params, pis = from_model_subspace(model.subspaces[0])
    x = rng.standard_normal(4)
    z = A.T @ x
    perp = x - A @ z
    gamma = unit_sched.gamma(t)
    off = -0.5 * (2 * np.log(2 * np.pi * gamma**2) + np.sum(perp**2) / gamma**2)
    assert ambient_log_density(model, unit_sched, t, x) == pytest.approx(
        mixture_log_density(params, pis, unit_sched, t, z) + off, rel=1e-10
    )


def test_conditional_score_closed_form(unit_sched):
    x0 = np.array([1.0, -2.0])
    xt = np.array([0.5, 0.5])
    got = conditional_score(xt, x0, unit_sched, 0.25)
    assert got == pytest.approx(-(xt - x0) / 0.25, rel=1e-12)


def test_batch_and_single_shapes_agree(unit_sched):
    params, pis = random_params(2, 2, 1, seed=10)
    X = np.random.default_rng(11).standard_normal((7, 2))
    batch = latent_score(params, pis, unit_sched, 0.3, X)
    rows = np.stack([latent_score(params, pis, unit_sched, 0.3, x) for x in X])
    assert batch == pytest.approx(rows, rel=1e-12, abs=1e-12)
    with pytest.raises(DimensionMismatch):
        latent_score(params, pis, unit_sched, 0.3, np.zeros(5))
