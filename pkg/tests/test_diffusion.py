import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from melforge.diffusion import (
    DiffusionBatch,
    NoiseSchedule,
    forward_sample,
    gaussian_oracle,
    reverse_ode_rhs,
    sample,
    score_matching_loss,
    score_target,
)
from melforge.errors import DivergenceError, DomainError, ShapeError

SCHED = NoiseSchedule()  # beta0=0.05, beta1=19.95, t_min=1e-3


# ---------------------------------------------------------------------------
# schedule

def test_schedule_at_origin():
    assert SCHED.int_beta(0.0) == 0.0
    assert SCHED.rho_coeff(0.0) == 1.0
    assert SCHED.sigma(0.0) == 0.0


def test_schedule_defaults_at_one():
    # frozen closed forms: int = 0.05 + 19.95/2, rho = e^(-int/2), sigma^2 = 1 - e^(-int)
    assert SCHED.int_beta(1.0) == 10.025
    assert abs(SCHED.rho_coeff(1.0) - 0.006654246877201174) < 1e-15
    assert abs(SCHED.sigma(1.0) ** 2 - 0.9999557209984973) < 1e-15


def test_schedule_domain_error():
    with pytest.raises(DomainError):
        SCHED.sigma(1.5)
    with pytest.raises(DomainError):
        SCHED.beta(-0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.0, max_value=1.0))
def test_variance_preservation(t):
    gap = SCHED.rho_coeff(t) ** 2 + SCHED.sigma(t) ** 2 - 1.0
    assert abs(gap) < 1e-12


def test_sigma_monotone_rho_decreasing():
    t = np.linspace(0.0, 1.0, 500)
    assert np.all(np.diff(SCHED.sigma(t)) > 0)
    assert np.all(np.diff(SCHED.rho_coeff(t)) < 0)


def test_schedule_validation():
    with pytest.raises(DomainError):
        NoiseSchedule(beta0=0.0)
    with pytest.raises(DomainError):
        NoiseSchedule(beta1=-1.0)
    with pytest.raises(DomainError):
        NoiseSchedule(t_min=0.0)


# ---------------------------------------------------------------------------
# forward marginal

def test_forward_sample_deterministic_part():
    x0 = np.array([1.0, -2.0, 0.5])
    out = forward_sample(SCHED, x0, 0.3, np.zeros(3))
    np.testing.assert_allclose(out, float(SCHED.rho_coeff(0.3)) * x0, atol=1e-15)


def test_forward_sample_at_zero_is_identity():
    x0 = np.array([0.7, -0.1])
    out = forward_sample(SCHED, x0, 0.0, np.array([3.0, -4.0]))
    np.testing.assert_array_equal(out, x0)


def test_forward_sample_shape_mismatch():
    with pytest.raises(ShapeError):
        forward_sample(SCHED, np.zeros(3), 0.5, np.zeros(4))


def test_forward_sample_monte_carlo_moments():
    rng = np.random.default_rng(0)
    n = 10**5
    x0 = 50.0
    for t in (0.1, 0.5, 0.9):
        eps = rng.standard_normal(n)
        x_t = forward_sample(SCHED, np.full(n, x0), t, eps)
        want_mean = float(SCHED.rho_coeff(t)) * x0
        want_var = float(SCHED.sigma(t)) ** 2
        assert abs(x_t.mean() - want_mean) / abs(want_mean) < 0.02
        assert abs(x_t.var() - want_var) / want_var < 0.02


def test_forward_sample_per_item_times():
    x0 = np.ones((4, 2, 3))
    eps = np.zeros_like(x0)
    t = np.array([0.1, 0.2, 0.3, 0.4])
    out = forward_sample(SCHED, x0, t, eps)
    for i in range(4):
        np.testing.assert_allclose(out[i], float(SCHED.rho_coeff(t[i])), atol=1e-15)


# ---------------------------------------------------------------------------
# score target

def test_score_target_zero_eps():
    np.testing.assert_array_equal(score_target(SCHED, np.zeros(5), 0.5), np.zeros(5))


def test_score_target_at_one_is_minus_eps():
    eps = np.array([1.0, -0.5, 2.0])
    target = score_target(SCHED, eps, 1.0)
    # 1/sigma(1) = 1.0000221402360148, frozen from the closed form
    np.testing.assert_allclose(target, -eps * 1.0000221402360148, rtol=1e-12)
    assert np.abs(target + eps).max() < 3e-5 * np.abs(eps).max()


def test_score_target_linearity():
    rng = np.random.default_rng(1)
    eps = rng.standard_normal(8)
    np.testing.assert_allclose(
        score_target(SCHED, 2.0 * eps, 0.4), 2.0 * score_target(SCHED, eps, 0.4), rtol=1e-14
    )


def test_score_target_below_t_min():
    with pytest.raises(DomainError):
        score_target(SCHED, np.ones(2), 1e-5)


# ---------------------------------------------------------------------------
# loss

def _batch(n, dim, seed=0, t_fixed=None):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((n, dim))
    y = rng.standard_normal((n, dim))
    t = np.full(n, t_fixed) if t_fixed else rng.uniform(SCHED.t_min, 1.0, n)
    eps = rng.standard_normal((n, dim))
    return DiffusionBatch(x0, y, np.zeros_like(x0), t, eps)


def test_loss_zero_at_exact_target():
    batch = _batch(16, 12, seed=2)
    calls = iter(range(16))

    def oracle(x_t, t, y, mu):
        return score_target(SCHED, batch.eps[next(calls)], t)

    assert score_matching_loss(SCHED, oracle, batch) < 1e-12


def test_loss_zero_score_equals_dimensionality():
    dim = 24
    batch = _batch(10**4, dim, seed=3)
    loss = score_matching_loss(SCHED, lambda x, t, y, mu: np.zeros_like(x), batch)
    assert abs(loss - dim) / dim < 0.05


def test_loss_permutation_invariant():
    batch = _batch(8, 6, seed=4)
    loss1 = score_matching_loss(SCHED, lambda x, t, y, mu: -x, batch)
    perm = np.random.default_rng(5).permutation(8)
    shuffled = DiffusionBatch(
        batch.x0[perm], batch.y[perm], batch.mu[perm], batch.t[perm], batch.eps[perm]
    )
    loss2 = score_matching_loss(SCHED, lambda x, t, y, mu: -x, shuffled)
    assert abs(loss1 - loss2) < 1e-9


def test_batch_shape_validation():
    with pytest.raises(ShapeError):
        DiffusionBatch(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 3)),
                       np.full(2, 0.5), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# reverse ODE

def test_rhs_fixed_point_at_standard_normal_score():
    x = np.array([0.3, -1.2, 4.0])
    out = reverse_ode_rhs(SCHED, lambda x_t, t, y, mu: -x_t, x, 0.7, x, x)
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


def test_rhs_scales_linearly_with_beta():
    # beta enters only as the overall rate: doubling (beta0, beta1) doubles dx/dt
    x = np.array([1.0, -2.0])
    score = lambda x_t, t, y, mu: 0.5 * x_t  # noqa: E731
    a = reverse_ode_rhs(NoiseSchedule(0.05, 19.95), score, x, 0.5, x, x)
    b = reverse_ode_rhs(NoiseSchedule(0.10, 39.90), score, x, 0.5, x, x)
    np.testing.assert_allclose(b, 2.0 * a, rtol=1e-12)


def test_rhs_time_domain():
    with pytest.raises(DomainError):
        reverse_ode_rhs(SCHED, lambda *a: a[0], np.ones(2), 1e-5, np.ones(2), np.ones(2))


# ---------------------------------------------------------------------------
# samplers

def test_expint1_single_step_stationary_exact():
    rng = np.random.default_rng(6)
    x1 = rng.standard_normal(10**4)
    zeros = np.zeros_like(x1)
    oracle = gaussian_oracle(SCHED, 0.0, 1.0)
    out = sample(SCHED, oracle, zeros, zeros, n_steps=1, solver="expint1", x_init=x1)
    # score -x makes the exponential step an exact fixed point
    np.testing.assert_allclose(out, x1, atol=1e-12)
    assert abs(out.mean()) < 0.03 and abs(out.var() - 1.0) < 0.03


def test_gaussian_sampling_moments_expint2():
    m, s = 1.5, 0.7
    rng = np.random.default_rng(7)
    x1 = rng.standard_normal(10**4)
    zeros = np.zeros_like(x1)
    out = sample(SCHED, gaussian_oracle(SCHED, m, s), zeros, zeros,
                 n_steps=25, solver="expint2", x_init=x1)
    assert abs(out.mean() - m) < 0.02 * abs(m) + 0.01
    assert abs(out.var() - s * s) / (s * s) < 0.05


def test_expint2_agrees_with_fine_euler():
    m, s = 1.5, 0.7
    rng = np.random.default_rng(8)
    x1 = rng.standard_normal(10**4)
    zeros = np.zeros_like(x1)
    oracle = gaussian_oracle(SCHED, m, s)
    fast = sample(SCHED, oracle, zeros, zeros, n_steps=25, solver="expint2", x_init=x1)
    ref = sample(SCHED, oracle, zeros, zeros, n_steps=1000, solver="euler", x_init=x1)
    assert np.abs(fast - ref).max() < 1e-2


def test_expint2_converges_with_steps():
    oracle = gaussian_oracle(SCHED, 1.0, 0.5)
    x1 = np.random.default_rng(9).standard_normal(200)
    zeros = np.zeros_like(x1)
    ref = sample(SCHED, oracle, zeros, zeros, n_steps=2000, solver="euler", x_init=x1)
    errs = {
        n: np.abs(sample(SCHED, oracle, zeros, zeros, n_steps=n, solver="expint2", x_init=x1) - ref).max()
        for n in (5, 25, 100)
    }
    assert errs[25] < errs[5]
    assert errs[100] < errs[25]


def test_sampler_seeded_prior_draw():
    oracle = gaussian_oracle(SCHED, 0.0, 1.0)
    y = np.zeros((4, 3))
    a = sample(SCHED, oracle, y, y, n_steps=5, rng=np.random.default_rng(10))
    b = sample(SCHED, oracle, y, y, n_steps=5, rng=np.random.default_rng(10))
    np.testing.assert_array_equal(a, b)
    assert a.shape == y.shape


def test_sampler_divergence_error_carries_step():
    def bad(x, t, y, mu):
        return np.full_like(x, np.inf)

    with pytest.raises(DivergenceError, match="step 0"):
        sample(SCHED, bad, np.zeros(3), np.zeros(3), n_steps=4, x_init=np.zeros(3))


def test_sampler_argument_validation():
    with pytest.raises(DomainError):
        sample(SCHED, lambda *a: a[0], np.zeros(2), np.zeros(2), n_steps=0)
    with pytest.raises(DomainError):
        sample(SCHED, lambda *a: a[0], np.zeros(2), np.zeros(2), solver="heun")


# ---------------------------------------------------------------------------
# gaussian oracle

def test_oracle_standard_normal_is_minus_x():
    oracle = gaussian_oracle(SCHED, 0.0, 1.0)
    x = np.array([0.5, -2.0, 3.0])
    for t in (SCHED.t_min, 0.3, 0.8, 1.0):
        np.testing.assert_allclose(oracle(x, t), -x, rtol=1e-12)


def test_oracle_at_zero_time_is_data_score():
    m, s = 2.0, 0.5
    oracle = gaussian_oracle(SCHED, m, s)
    x = np.array([1.0, 2.5])
    np.testing.assert_allclose(oracle(x, 0.0), -(x - m) / (s * s), rtol=1e-12)


def test_oracle_matches_kde_finite_difference():
    # estimate p_t by diffusing draws of N(m, s^2), kernel-density estimate on
    # a 1-D grid, finite-difference the log-density, compare with the oracle.
    # log p_t is quadratic, so a wide central-difference stencil carries no
    # truncation error; averaging over the grid suppresses estimator noise.
    from scipy.stats import gaussian_kde

    m, s, t = 1.0, 0.8, 0.5
    rng = np.random.default_rng(11)
    n = 4 * 10**5
    x0 = rng.normal(m, s, n)
    x_t = forward_sample(SCHED, x0, t, rng.standard_normal(n))
    rho = float(SCHED.rho_coeff(t))
    std_t = np.sqrt(rho * rho * s * s + float(SCHED.sigma(t)) ** 2)
    mean_t = rho * m
    grid = mean_t + std_t * np.linspace(-1.6, 1.6, 25)
    delta = 0.4 * std_t
    kde = gaussian_kde(x_t, bw_method=0.08)
    fd_score = (np.log(kde(grid + delta)) - np.log(kde(grid - delta))) / (2.0 * delta)
    oracle_score = gaussian_oracle(SCHED, m, s)(grid, t)
    rel = np.mean(np.abs(fd_score - oracle_score)) / np.mean(np.abs(oracle_score))
    assert rel < 0.02


def test_oracle_validation():
    with pytest.raises(DomainError):
        gaussian_oracle(SCHED, 0.0, 0.0)
