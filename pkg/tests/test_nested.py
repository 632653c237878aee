import jax.numpy as jnp
import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from neutrabench.diagnostics import kish_ess
from neutrabench.models import DensityTarget, GaussianQuantileTransform, PosteriorModel
from neutrabench.models.densities import normal_log_pdf
from neutrabench.nested import (
    DeadPoint,
    LivePointSet,
    NestedSamplerError,
    accumulate_evidence,
    make_slice_kernel,
    replace_lowest,
    run_ns,
)


def _linear_target():
    # L(u) = 2u on the unit interval, Z = 1
    return DensityTarget(1, cube_log_density=lambda u: jnp.log(2.0 * u[0]))


@pytest.mark.parametrize("n_live", [10, 57])
def test_constant_likelihood_exact(n_live):
    target = DensityTarget(2, cube_log_density=lambda u: jnp.log(3.0) + 0.0 * jnp.sum(u))
    res = run_ns(target, n_live, seed=1)
    assert res.log_z == pytest.approx(np.log(3.0), abs=1e-12)
    np.testing.assert_allclose(res.weights, 1.0 / res.weights.size, rtol=1e-12)


@pytest.fixture(scope="module")
def linear_runs():
    target = _linear_target()
    return [run_ns(target, 400, seed=s) for s in range(16)]


def test_linear_likelihood_evidence(linear_runs):
    res = linear_runs[0]
    assert abs(res.log_z) < 3 * res.log_z_err


def test_linear_error_calibration(linear_runs):
    log_z = np.array([r.log_z for r in linear_runs])
    err = np.mean([r.log_z_err for r in linear_runs])
    assert 0.5 * err <= np.std(log_z, ddof=1) <= 2.0 * err


def test_dead_points_nondecreasing(linear_runs):
    for res in linear_runs[:4]:
        dead = res.log_likelihoods[: res.n_iterations]
        assert np.all(np.diff(dead) >= 0)


def test_weights_normalised(linear_runs):
    for res in linear_runs:
        assert res.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_seeded_reproducibility():
    a = run_ns(_linear_target(), 50, seed=3)
    b = run_ns(_linear_target(), 50, seed=3)
    assert a.log_z == b.log_z
    assert a.samples.tobytes() == b.samples.tobytes()
    assert kish_ess(a.weights) == kish_ess(b.weights)


def _conjugate_target(y=1.3, sigma2=0.25):
    def log_like(theta):
        return normal_log_pdf(y, theta[0], sigma2) + normal_log_pdf(-y, theta[1], sigma2)

    post = PosteriorModel(
        dimension=2,
        parameter_names=("a", "b"),
        log_prior=lambda t: jnp.sum(normal_log_pdf(t, 0.0, 1.0)),
        log_likelihood=log_like,
        support_transform=None,
        cube_transform=GaussianQuantileTransform(np.zeros(2), np.ones(2)),
    )
    # the quantile transform maps the uniform cube to the prior, so the cube
    # integrand is the likelihood alone
    target = DensityTarget(2, cube_log_density=lambda u: log_like(post.cube_to_model(u)), to_model=post.cube_to_model)
    truth = 2 * stats.norm.logpdf(y, 0, np.sqrt(1 + sigma2))
    return target, truth


def test_doubling_live_points_reduces_error():
    target, truth = _conjugate_target()
    err = {n: np.mean([abs(run_ns(target, n, seed=s).log_z - truth) for s in range(16)]) for n in (25, 50)}
    assert err[50] < err[25]


def test_replace_lowest_unconstrained_is_uniform():
    target = DensityTarget(1, cube_log_density=lambda u: jnp.log(2.0 * u[0]))
    kernel = make_slice_kernel(target.cube_log_density, 1)
    rng = np.random.default_rng(0)
    live = LivePointSet(rng.uniform(size=(20, 1)), np.log(2 * rng.uniform(size=20)))
    draws = np.array([replace_lowest(live, -np.inf, target, s, kernel)[0][0] for s in range(10000)])
    assert stats.kstest(draws, "uniform").pvalue > 0.01


def test_replace_lowest_median_threshold():
    target = _linear_target()
    kernel = make_slice_kernel(target.cube_log_density, 1)
    rng = np.random.default_rng(1)
    pts = rng.uniform(size=(101, 1))
    logl = np.log(2 * pts[:, 0])
    threshold = float(np.median(logl))
    u_star = np.exp(threshold) / 2
    # brute-force fraction of the cube above the threshold
    brute = np.mean(np.log(2 * rng.uniform(size=200000)) > threshold)
    assert brute == pytest.approx(1 - u_star, abs=0.005)
    assert 1 - u_star == pytest.approx(0.5, abs=0.1)
    live = LivePointSet(pts, logl)
    draws = []
    for s in range(3000):
        point, log_l, _ = replace_lowest(live, threshold, target, s, kernel)
        assert log_l > threshold
        draws.append(point[0])
    # uniform on the reachable interval (u*, 1)
    assert stats.kstest((np.array(draws) - u_star) / (1 - u_star), "uniform").pvalue > 0.01


def test_replace_lowest_no_point_above():
    target = _linear_target()
    live = LivePointSet(np.full((3, 1), 0.5), np.zeros(3))
    with pytest.raises(NestedSamplerError):
        replace_lowest(live, 0.0, target, 0)


def test_accumulate_single_iteration_uniform():
    # plateau convention: the removed point and the three survivors each hold V / 4
    live = LivePointSet(np.random.default_rng(0).uniform(size=(3, 1)), np.zeros(3))
    dead = [DeadPoint(np.array([0.1]), 0.0, float(np.log(0.25)))]
    log_z, err, w, info = accumulate_evidence(dead, live, float(np.log(0.75)))
    assert log_z == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(w, 0.25, rtol=1e-12)
    assert err == pytest.approx(0.0, abs=1e-6)


def test_accumulate_matches_direct_sum():
    rng = np.random.default_rng(2)
    n, n_dead = 10, 30
    logl = np.sort(rng.normal(size=n_dead))
    log_v = -np.arange(1, n_dead + 1) / n
    shells = np.concatenate([[0.0], log_v[:-1]]) + np.log1p(-np.exp(-1 / n))
    dead = [DeadPoint(np.zeros(1), float(l), float(s)) for l, s in zip(logl, shells)]
    live_logl = logl[-1] + rng.uniform(size=n)
    live = LivePointSet(rng.uniform(size=(n, 1)), live_logl)
    log_z, _, w, _ = accumulate_evidence(dead, live, float(log_v[-1]))
    direct = logsumexp(np.concatenate([shells + logl, log_v[-1] - np.log(n) + live_logl]))
    assert log_z == pytest.approx(direct, abs=1e-10)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_accumulate_requires_dead_points():
    with pytest.raises(ValueError):
        accumulate_evidence([], LivePointSet(np.zeros((2, 1)), np.zeros(2)), 0.0)


def test_run_ns_validation():
    with pytest.raises(ValueError):
        run_ns(_linear_target(), 1)
    with pytest.raises(ValueError):
        run_ns(_linear_target(), 50, frac_remain=1.5)
