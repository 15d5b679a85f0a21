import numpy as np
import pytest

from sgdboot.model import (
    gaussian_oracle,
    gradient,
    hessian,
    hessian_at_min,
    logistic_data_oracle,
    logistic_ridge_problem,
    noise_block,
    objective_value,
    quadratic_problem,
    remainder_h,
    replay_noise,
    sample_noise,
    scalar_unit_problem,
    truncated_gaussian_oracle,
    zero_noise_oracle,
)
from sgdboot.rng import derive_key, stream


@pytest.fixture(scope="module")
def logistic():
    return logistic_ridge_problem(dim=3, n_atoms=24, design_radius=2.0, ridge=0.1, design_seed=5)


@pytest.fixture(scope="module")
def quad():
    return quadratic_problem(np.array([[2.0, 0.0], [0.0, 2.0]]), minimizer=np.zeros(2))


def fd_gradient(problem, theta, h=1e-6):
    d = theta.size
    out = np.empty(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[j] = (objective_value(problem, theta + e) - objective_value(problem, theta - e)) / (2 * h)
    return out


def fd_hessian(problem, theta, h=1e-5):
    d = theta.size
    out = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[:, j] = (gradient(problem, theta + e) - gradient(problem, theta - e)) / (2 * h)
    return 0.5 * (out + out.T)


def test_quadratic_gradient_is_linear_map(quad):
    np.testing.assert_allclose(gradient(quad, np.array([1.0, 0.0])), [2.0, 0.0])


def test_gradient_zero_at_minimizer(quad, logistic):
    for p in (quad, logistic, scalar_unit_problem()):
        assert np.max(np.abs(gradient(p, p.minimizer))) <= 1e-10


def test_logistic_gradient_matches_finite_differences(logistic):
    gen = stream(derive_key(0, "fd-test"))
    for _ in range(5):
        theta = logistic.minimizer + 0.5 * gen.standard_normal(logistic.dim)
        g = gradient(logistic, theta)
        fd = fd_gradient(logistic, theta)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_hessian_at_min(quad, logistic):
    np.testing.assert_array_equal(hessian_at_min(quad), quad.a_matrix)
    np.testing.assert_array_equal(hessian_at_min(scalar_unit_problem()), np.eye(1))
    fd = fd_hessian(logistic, logistic.minimizer)
    g = hessian_at_min(logistic)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_hessian_eigenvalues_within_moduli(quad, logistic):
    gen = stream(derive_key(1, "hess-test"))
    for p in (quad, logistic):
        for _ in range(20):
            theta = p.minimizer + gen.standard_normal(p.dim)
            eigs = np.linalg.eigvalsh(hessian(p, theta))
            assert eigs[0] >= p.mu - 1e-12
            assert eigs[-1] <= p.l1 + 1e-12


def test_remainder_quadratic_is_zero(quad):
    gen = stream(derive_key(2, "rem-test"))
    for _ in range(5):
        theta = gen.standard_normal(2)
        np.testing.assert_array_equal(remainder_h(quad, theta), np.zeros(2))


def test_remainder_zero_at_minimizer(logistic):
    assert np.max(np.abs(remainder_h(logistic, logistic.minimizer))) <= 1e-12


def test_remainder_quadratic_bound(logistic):
    # ||H(theta)|| <= L_H ||theta - theta*||^2 with L_H = max(L3, 2 L1 / beta)
    l_h = max(logistic.l3, 2 * logistic.l1 / logistic.beta_radius)
    gen = stream(derive_key(3, "rem-bound"))
    for _ in range(100):
        u = gen.standard_normal(logistic.dim)
        u /= np.linalg.norm(u)
        r = logistic.beta_radius * gen.random() ** (1.0 / logistic.dim)
        theta = logistic.minimizer + r * u
        h = remainder_h(logistic, theta)
        assert np.linalg.norm(h) <= l_h * r**2 + 1e-12


def test_strong_convexity_and_smoothness(quad, logistic):
    gen = stream(derive_key(4, "convex-test"))
    for p in (quad, logistic):
        for _ in range(100):
            t1 = p.minimizer + gen.standard_normal(p.dim)
            t2 = p.minimizer + gen.standard_normal(p.dim)
            gap = (
                objective_value(p, t1)
                - objective_value(p, t2)
                - gradient(p, t2) @ (t1 - t2)
            )
            dist_sq = float(np.sum((t1 - t2) ** 2))
            assert gap >= p.mu / 2 * dist_sq - 1e-9 * max(1.0, dist_sq)
            grad_gap = np.linalg.norm(gradient(p, t1) - gradient(p, t2))
            assert grad_gap <= p.l1 * np.sqrt(dist_sq) + 1e-9


# ---------------------------------------------------------------------------
# noise oracles
# ---------------------------------------------------------------------------


def test_truncation_bound_holds_on_every_draw(quad):
    oracle = truncated_gaussian_oracle(quad, 0.25 * np.eye(2), mult_scale=0.2)
    gen = stream(derive_key(5, "noise-test"))
    for _ in range(500):
        s = sample_noise(oracle, gen)
        assert np.linalg.norm(s.eta) <= oracle.c1_xi
        assert np.all(np.abs(s.b_matrix) <= 0.2)


def test_additive_oracle_g_is_zero(quad):
    oracle = truncated_gaussian_oracle(quad, 0.25 * np.eye(2))
    gen = stream(derive_key(6, "noise-test"))
    s = sample_noise(oracle, gen)
    np.testing.assert_array_equal(s.g_at(np.array([3.0, -1.0])), np.zeros(2))


def test_g_vanishes_at_minimizer_exactly(quad, logistic):
    oracles = [
        truncated_gaussian_oracle(quad, 0.25 * np.eye(2), mult_scale=0.3),
        logistic_data_oracle(logistic),
    ]
    for oracle in oracles:
        gen = stream(derive_key(7, "g-test"))
        for _ in range(50):
            s = sample_noise(oracle, gen)
            np.testing.assert_array_equal(
                s.g_at(oracle.problem.minimizer), np.zeros(oracle.dim)
            )


def test_g_bounded_and_lipschitz(quad, logistic):
    oracles = [
        truncated_gaussian_oracle(quad, 0.25 * np.eye(2), mult_scale=0.3),
        logistic_data_oracle(logistic),
    ]
    gen = stream(derive_key(8, "g-lip"))
    for oracle in oracles:
        p = oracle.problem
        for _ in range(20):
            s = sample_noise(oracle, gen)
            t1 = p.minimizer + 3.0 * gen.standard_normal(p.dim)
            t2 = p.minimizer + 3.0 * gen.standard_normal(p.dim)
            g1, g2 = s.g_at(t1), s.g_at(t2)
            assert np.linalg.norm(g1) <= oracle.c2_xi + 1e-12
            assert np.linalg.norm(g1 - g2) <= oracle.l2 * np.linalg.norm(t1 - t2) + 1e-9


def test_eta_mean_is_small(quad):
    oracle = truncated_gaussian_oracle(quad, 0.25 * np.eye(2))
    block = noise_block(oracle, derive_key(9, "mean-test"), 100_001)
    mean = block.eta.mean(axis=0)
    assert np.linalg.norm(mean) <= 5 * oracle.c1_xi / np.sqrt(100_000)


def test_eta_empirical_covariance_matches(quad):
    # Monte Carlo oracle: Frobenius error of the sample covariance over 1e6
    # draws stays within 1% of ||Sigma_xi||_F.
    sigma = np.array([[0.3, 0.1], [0.1, 0.5]])
    oracle = truncated_gaussian_oracle(quad, sigma)
    block = noise_block(oracle, derive_key(10, "cov-test"), 1_000_001)
    emp = block.eta.T @ block.eta / block.eta.shape[0]
    assert np.linalg.norm(emp - sigma, "fro") <= 0.01 * np.linalg.norm(sigma, "fro")


def test_stochastic_gradient_is_unbiased(quad):
    # MC mean of grad f + eta + g deviates from grad f by <= 5 standard errors
    oracle = truncated_gaussian_oracle(quad, 0.25 * np.eye(2), mult_scale=0.3)
    theta = np.array([0.7, -0.4])
    block = noise_block(oracle, derive_key(11, "unbiased"), 100_001)
    gvals = np.einsum("kij,j->ki", block.b, theta - quad.minimizer)
    norms = np.linalg.norm(gvals, axis=1)
    over = norms > oracle.c2_xi
    gvals[over] *= (oracle.c2_xi / norms[over])[:, None]
    noise = block.eta + gvals
    mean_dev = noise.mean(axis=0)
    se = np.sqrt(np.trace(np.cov(noise.T)) / noise.shape[0])
    assert np.linalg.norm(mean_dev) <= 5 * se


def test_logistic_eta_covariance_exact(logistic):
    oracle = logistic_data_oracle(logistic)
    block = noise_block(oracle, derive_key(12, "logcov"), 400_001)
    emp = block.eta.T @ block.eta / block.eta.shape[0]
    assert np.linalg.norm(emp - oracle.sigma_xi, "fro") <= 0.02 * np.linalg.norm(
        oracle.sigma_xi, "fro"
    )
    assert np.linalg.norm(block.eta.mean(axis=0)) <= 5 * oracle.c1_xi / np.sqrt(400_000)


def test_replay_matches_block(quad, logistic):
    oracles = [
        truncated_gaussian_oracle(quad, 0.25 * np.eye(2), mult_scale=0.3),
        logistic_data_oracle(logistic),
        gaussian_oracle(scalar_unit_problem(), 1.0),
    ]
    for oracle in oracles:
        key = derive_key(13, "replay", oracle.dim)
        block = noise_block(oracle, key, 12)
        for k in (1, 5, 11):
            s = replay_noise(oracle, key, k)
            np.testing.assert_array_equal(s.eta, block.eta[k - 1])
            if block.b is not None:
                np.testing.assert_array_equal(s.b_matrix, block.b[k - 1])
            if block.atom_index is not None:
                assert s.atom_index == int(block.atom_index[k - 1])


def test_replay_is_deterministic(quad):
    oracle = truncated_gaussian_oracle(quad, 0.25 * np.eye(2))
    key = derive_key(14, "replay-det")
    a = replay_noise(oracle, key, 5)
    b = replay_noise(oracle, key, 5)
    np.testing.assert_array_equal(a.eta, b.eta)


def test_distinct_keys_give_distinct_sequences(quad):
    oracle = truncated_gaussian_oracle(quad, 0.25 * np.eye(2))
    b1 = noise_block(oracle, derive_key(15, "a"), 101)
    b2 = noise_block(oracle, derive_key(16, "a"), 101)
    assert not np.allclose(b1.eta, b2.eta)


def test_scalar_unit_oracle_flagged_unbounded():
    oracle = gaussian_oracle(scalar_unit_problem(), 1.0)
    assert oracle.unbounded
    assert np.isinf(oracle.c1_xi)


def test_zero_noise_oracle(quad):
    oracle = zero_noise_oracle(quad)
    block = noise_block(oracle, derive_key(17, "zero"), 10)
    np.testing.assert_array_equal(block.eta, np.zeros((9, 2)))
    s = sample_noise(oracle, stream(derive_key(17, "zero")))
    np.testing.assert_array_equal(s.g_at(np.ones(2)), np.zeros(2))


def test_sigma_p_monotone_bounds(quad):
    oracle = truncated_gaussian_oracle(quad, 0.25 * np.eye(2))
    s2 = oracle.sigma_p(2)
    assert s2 == pytest.approx(np.sqrt(np.trace(oracle.sigma_xi)))
    assert oracle.sigma_p(4) >= s2
    assert oracle.sigma_p(8) <= oracle.c1_xi


def test_dimension_mismatch_raises(quad):
    with pytest.raises(ValueError):
        gradient(quad, np.zeros(3))
    with pytest.raises(ValueError):
        remainder_h(quad, np.zeros(5))
