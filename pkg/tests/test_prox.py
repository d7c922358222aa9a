"""Proximity operators and the projected Newton coefficient solver."""

import numpy as np
import pytest
import scipy.optimize

from dctl.prox import (
    CoeffQuadratics,
    NewtonSettings,
    NumericalConditioningError,
    TransformUpdateInputs,
    coeff_gradient,
    coeff_objective,
    projected_newton_coeffs,
    prox_logdet_svd,
    prox_nonneg_l1,
    update_transform,
)
from oracles import (
    coeff_objective_direct,
    coeff_pg_oracle,
    fd_gradient,
    golden_section,
    grid_search_scalar_prox,
    transform_gd_oracle,
    transform_objective,
)


def random_transform_instance(rng, k):
    """A well-posed random transform subproblem of size k."""
    a = rng.standard_normal((2 * k, k))
    gram = a.T @ a
    cross = rng.standard_normal((k, k))
    while True:
        anchor = np.eye(k) + 0.3 * rng.standard_normal((k, k))
        if np.linalg.svd(anchor, compute_uv=False).min() > 0.05:
            break
    mu = float(rng.uniform(0.0, 0.5))
    lam = float(rng.uniform(0.1, 2.0))
    gamma1 = float(rng.uniform(0.5, 5.0))
    return TransformUpdateInputs(gram, cross, anchor, mu, lam, gamma1)


def random_coeff_instance(rng, m, n, k):
    below = rng.standard_normal((m, n, k))
    bank = rng.standard_normal((k, k)) / np.sqrt(k)
    above = np.maximum(rng.standard_normal((m, n, k)), 0.0)
    quad = CoeffQuadratics(below, bank, above)
    z0 = np.maximum(rng.standard_normal((m, n, k)), 0.0)
    beta = float(rng.uniform(0.0, 0.3))
    gamma2 = float(rng.uniform(0.5, 5.0))
    return z0, quad, beta, gamma2


# ---------------------------------------------------------------- scalar prox


def test_prox_nonneg_l1_boundary():
    assert prox_nonneg_l1(0.0, 0.5, 1.0) == 0.0


def test_prox_nonneg_l1_interior_shift():
    assert prox_nonneg_l1(2.0, 0.5, 1.0) == 1.5


def test_prox_nonneg_l1_matches_grid_oracle():
    rng = np.random.default_rng(20)
    for trial in range(150):
        v = float(rng.uniform(-2.0, 8.0))
        beta = float(rng.uniform(0.01, 2.0))
        weight = float(rng.uniform(0.1, 5.0))
        closed = prox_nonneg_l1(v, beta, weight)
        assert abs(closed - grid_search_scalar_prox(v, beta, weight)) <= 1e-4


def test_prox_nonneg_l1_vectorized():
    out = prox_nonneg_l1(np.array([-1.0, 0.2, 3.0]), 0.5, 2.0)
    assert np.array_equal(out, [0.0, 0.0, 2.75])


def test_prox_nonneg_l1_monotone_and_nonexpansive():
    rng = np.random.default_rng(21)
    for trial in range(200):
        u1, u2 = rng.uniform(-5.0, 5.0, size=2)
        beta = float(rng.uniform(0.01, 2.0))
        weight = float(rng.uniform(0.1, 5.0))
        p1 = prox_nonneg_l1(u1, beta, weight)
        p2 = prox_nonneg_l1(u2, beta, weight)
        if u1 <= u2:
            assert p1 <= p2
        else:
            assert p1 >= p2
        assert abs(p1 - p2) <= abs(u1 - u2) + 1e-15


def test_prox_nonneg_l1_descent():
    rng = np.random.default_rng(22)
    for trial in range(100):
        v = float(rng.uniform(-3.0, 6.0))
        z_start = float(rng.uniform(0.0, 6.0))
        beta = float(rng.uniform(0.01, 1.0))
        weight = float(rng.uniform(0.1, 5.0))
        z_new = prox_nonneg_l1(v, beta, weight)

        def value(z):
            return 0.5 * weight * (z - v) ** 2 + beta * z

        assert value(z_new) <= value(z_start) + 1e-12


def test_prox_nonneg_l1_rejects_bad_parameters():
    for beta, weight in ((0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0),
                         (np.inf, 1.0), (1.0, np.nan)):
        with pytest.raises(ValueError):
            prox_nonneg_l1(1.0, beta, weight)


# ------------------------------------------------------------- log-det  prox


def test_prox_logdet_zero_input():
    out = prox_logdet_svd(np.zeros((2, 2)), 1.0)
    svals = np.linalg.svd(out, compute_uv=False)
    assert np.allclose(svals, [1.0, 1.0], atol=1e-12)


def test_prox_logdet_vanishing_lambda_limit():
    y = 3.0 * np.eye(3)
    assert np.allclose(prox_logdet_svd(y, 1e-14), y, atol=1e-16)


def test_prox_logdet_stationarity_per_singular_value():
    rng = np.random.default_rng(23)
    for trial in range(50):
        k = int(rng.integers(1, 5))
        y = rng.standard_normal((k, k))
        lam = float(rng.uniform(0.05, 3.0))
        s = np.linalg.svd(y, compute_uv=False)
        s_new = np.linalg.svd(prox_logdet_svd(y, lam), compute_uv=False)
        assert np.max(np.abs(s_new - s - lam / s_new)) < 1e-10
        assert s_new.min() >= np.sqrt(lam) - 1e-12


def test_prox_logdet_matches_numerical_minimizer():
    rng = np.random.default_rng(24)
    y = rng.standard_normal((3, 3))
    lam = 0.7

    def value(flat):
        x = flat.reshape(3, 3)
        svals = np.linalg.svd(x, compute_uv=False)
        if svals.min() <= 0:
            return np.inf
        return 0.5 * np.sum((x - y) ** 2) - lam * np.sum(np.log(svals))

    out = prox_logdet_svd(y, lam)
    best = np.inf
    for start in (out + 0.05 * rng.standard_normal((3, 3)), y + np.eye(3)):
        res = scipy.optimize.minimize(value, start.ravel(), method="BFGS",
                                      options={"maxiter": 2000})
        best = min(best, float(res.fun))
    assert value(out.ravel()) <= best + 1e-6


def test_prox_logdet_rejects_bad_input():
    with pytest.raises(ValueError):
        prox_logdet_svd(np.zeros((2, 3)), 1.0)
    with pytest.raises(ValueError):
        prox_logdet_svd(np.zeros((2, 2)), 0.0)
    with pytest.raises(ValueError):
        prox_logdet_svd(np.zeros((2, 2)), -1.0)


# ------------------------------------------------------------ bank subproblem


def test_update_transform_scalar_golden_section():
    inputs = TransformUpdateInputs([[1.0]], [[1.0]], [[1.0]], 0.0, 0.5, 1e12)
    t = float(update_transform(inputs)[0, 0])

    def phi(scalar):
        return transform_objective(np.array([[scalar]]), inputs.gram,
                                   inputs.cross, inputs.anchor, 0.0, 0.5, 1e12)

    reference = golden_section(phi, 1e-6, 5.0)
    assert abs(t - reference) <= 1e-6
    # gamma1 -> inf limit solves t^2 - t - 0.5 = 0
    assert abs(t - (1.0 + np.sqrt(3.0)) / 2.0) < 1e-9


def test_update_transform_least_squares_limit():
    rng = np.random.default_rng(25)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    cross = q @ np.diag([1.0, 1.5, 2.0]) @ q.T
    inputs = TransformUpdateInputs(np.eye(3), cross, np.zeros((3, 3)),
                                   0.0, 1e-12, 1e12)
    assert np.allclose(update_transform(inputs), cross, atol=1e-5)


def test_update_transform_beats_gd_oracle():
    rng = np.random.default_rng(26)
    for trial in range(5):
        inputs = random_transform_instance(rng, 3)
        t = update_transform(inputs)
        f_closed = transform_objective(t, inputs.gram, inputs.cross, inputs.anchor,
                                       inputs.mu, inputs.lam, inputs.gamma1)
        f_oracle, _ = transform_gd_oracle(inputs.gram, inputs.cross, inputs.anchor,
                                          inputs.mu, inputs.lam, inputs.gamma1,
                                          iters=3000, n_starts=3, seed=trial)
        assert f_closed <= f_oracle + 1e-6


def test_update_transform_stationarity():
    rng = np.random.default_rng(27)
    for trial in range(30):
        k = int(rng.integers(1, 6))
        inputs = random_transform_instance(rng, k)
        t = update_transform(inputs)
        w = inputs.gram + (1.0 / inputs.gamma1 + 2.0 * inputs.mu) * np.eye(k)
        g = inputs.cross + inputs.anchor / inputs.gamma1
        residual = w @ t - g - inputs.lam * np.linalg.inv(t).T
        assert np.linalg.norm(residual) < 1e-6 * max(np.linalg.norm(g), 1.0)


def test_update_transform_descent_from_anchor():
    rng = np.random.default_rng(28)
    for trial in range(100):
        k = int(rng.integers(1, 4))
        inputs = random_transform_instance(rng, k)
        t = update_transform(inputs)
        f_new = transform_objective(t, inputs.gram, inputs.cross, inputs.anchor,
                                    inputs.mu, inputs.lam, inputs.gamma1)
        f_anchor = transform_objective(inputs.anchor, inputs.gram, inputs.cross,
                                       inputs.anchor, inputs.mu, inputs.lam,
                                       inputs.gamma1)
        assert f_new <= f_anchor + 1e-9


def test_update_transform_singular_values_positive():
    rng = np.random.default_rng(29)
    for trial in range(30):
        inputs = random_transform_instance(rng, 4)
        svals = np.linalg.svd(update_transform(inputs), compute_uv=False)
        assert svals.min() > 0.0


def test_update_transform_jitter_rescues_semidefinite_gram():
    # gram is a hair below zero; the jittered factorization must still work
    inputs = TransformUpdateInputs([[-1e-16]], [[1.0]], [[1.0]], 0.0, 0.5, 1e20)
    t = float(update_transform(inputs)[0, 0])
    assert np.isfinite(t) and t > 0


def test_update_transform_hopeless_gram_raises():
    inputs = TransformUpdateInputs([[-1.0]], [[1.0]], [[1.0]], 0.0, 0.5, 1e12)
    with pytest.raises(NumericalConditioningError):
        update_transform(inputs)


def test_update_transform_requires_inputs_type():
    with pytest.raises(ValueError):
        update_transform({"gram": np.eye(2)})


def test_transform_inputs_validation():
    eye = np.eye(2)
    with pytest.raises(ValueError):
        TransformUpdateInputs([[0.0, 1.0], [0.0, 0.0]], eye, eye, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TransformUpdateInputs(eye, np.zeros((2, 3)), eye, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TransformUpdateInputs(eye, eye, eye, -0.1, 1.0, 1.0)
    with pytest.raises(ValueError):
        TransformUpdateInputs(eye, eye, eye, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        TransformUpdateInputs(eye, eye, eye, 0.0, 1.0, 0.0)


# -------------------------------------------------------- newton coefficients


def test_newton_settings_defaults():
    st = NewtonSettings()
    assert st.max_iters == 50
    assert st.grad_tol == 1e-8
    assert st.armijo_c == 1e-4
    assert st.backtrack_factor == 0.5
    assert st.active_set_eps == 1e-10


def test_newton_settings_validation():
    with pytest.raises(ValueError):
        NewtonSettings(max_iters=0)
    with pytest.raises(ValueError):
        NewtonSettings(grad_tol=0.0)
    with pytest.raises(ValueError):
        NewtonSettings(armijo_c=1.0)
    with pytest.raises(ValueError):
        NewtonSettings(backtrack_factor=0.0)
    with pytest.raises(ValueError):
        NewtonSettings(active_set_eps=-1.0)


def test_projected_newton_decoupled_closed_form():
    rng = np.random.default_rng(30)
    below = rng.standard_normal((3, 10, 2))
    quad = CoeffQuadratics(below, np.zeros((2, 2)), np.zeros((3, 10, 2)))
    z0 = np.maximum(rng.standard_normal((3, 10, 2)), 0.0)
    gamma2 = 0.8
    result = projected_newton_coeffs(z0, quad, 0.0, gamma2)
    inv_g2 = 1.0 / gamma2
    expected = np.maximum((inv_g2 * z0 + below) / (inv_g2 + 1.0), 0.0)
    assert result.converged
    assert np.max(np.abs(result.coeffs - expected)) < 1e-10


def test_projected_newton_huge_beta_zeroes_everything():
    rng = np.random.default_rng(31)
    z0, quad, _, gamma2 = random_coeff_instance(rng, 2, 8, 2)
    result = projected_newton_coeffs(z0, quad, 1e6, gamma2)
    assert not np.any(result.coeffs)


def test_projected_newton_matches_pg_oracle():
    rng = np.random.default_rng(32)
    for trial in range(2):
        z0, quad, beta, gamma2 = random_coeff_instance(rng, 2, 8, 2)
        result = projected_newton_coeffs(z0, quad, beta, gamma2)
        z_ref = coeff_pg_oracle(z0, quad.below, quad.bank_above, quad.above,
                                beta, gamma2, iters=50_000)
        f_newton = coeff_objective(result.coeffs, z0, quad, beta, gamma2)
        f_ref = coeff_objective(z_ref, z0, quad, beta, gamma2)
        assert f_newton <= f_ref + 1e-6


def test_projected_newton_output_nonnegative_exactly():
    rng = np.random.default_rng(33)
    for trial in range(10):
        z0, quad, beta, gamma2 = random_coeff_instance(rng, 2, 6, 3)
        result = projected_newton_coeffs(z0, quad, beta, gamma2)
        assert result.coeffs.min() >= 0.0


def test_projected_newton_descent():
    rng = np.random.default_rng(34)
    for trial in range(100):
        z0, quad, beta, gamma2 = random_coeff_instance(rng, 2, 6, 2)
        result = projected_newton_coeffs(z0, quad, beta, gamma2)
        f_new = coeff_objective(result.coeffs, z0, quad, beta, gamma2)
        f_old = coeff_objective(z0, z0, quad, beta, gamma2)
        assert f_new <= f_old + 1e-9


def test_projected_newton_iteration_cap_returns_flag():
    rng = np.random.default_rng(35)
    z0, quad, beta, gamma2 = random_coeff_instance(rng, 2, 10, 2)
    settings = NewtonSettings(max_iters=1, grad_tol=1e-14)
    result = projected_newton_coeffs(z0, quad, beta, gamma2, settings)
    assert not result.converged
    f_new = coeff_objective(result.coeffs, z0, quad, beta, gamma2)
    assert f_new <= coeff_objective(z0, z0, quad, beta, gamma2) + 1e-9


def test_projected_newton_first_order_optimality():
    rng = np.random.default_rng(36)
    for trial in range(10):
        z0, quad, beta, gamma2 = random_coeff_instance(rng, 2, 8, 2)
        result = projected_newton_coeffs(z0, quad, beta, gamma2)
        grad = coeff_gradient(result.coeffs, z0, quad, beta, gamma2)
        tol = 10 * NewtonSettings().grad_tol
        interior = result.coeffs > NewtonSettings().active_set_eps
        assert np.all(np.abs(grad[interior]) <= tol)
        assert np.all(grad[~interior] >= -tol)


def test_projected_newton_validates_arguments():
    rng = np.random.default_rng(37)
    z0, quad, beta, gamma2 = random_coeff_instance(rng, 2, 6, 2)
    with pytest.raises(ValueError):
        projected_newton_coeffs(z0, {"below": quad.below}, beta, gamma2)
    with pytest.raises(ValueError):
        projected_newton_coeffs(z0[:, :-1, :], quad, beta, gamma2)
    with pytest.raises(ValueError):
        projected_newton_coeffs(z0, quad, -0.1, gamma2)
    with pytest.raises(ValueError):
        projected_newton_coeffs(z0, quad, beta, 0.0)
    with pytest.raises(ValueError):
        projected_newton_coeffs(z0, quad, beta, gamma2, settings={"max_iters": 3})


def test_coeff_quadratics_validation():
    with pytest.raises(ValueError):
        CoeffQuadratics(np.zeros((2, 8)), np.zeros((2, 2)), np.zeros((2, 8, 2)))
    with pytest.raises(ValueError):
        CoeffQuadratics(np.zeros((2, 8, 2)), np.zeros((3, 3)), np.zeros((2, 8, 2)))
    with pytest.raises(ValueError):
        CoeffQuadratics(np.zeros((2, 8, 2)), np.zeros((2, 2)), np.zeros((2, 7, 2)))
    with pytest.raises(ValueError):
        CoeffQuadratics(np.zeros((2, 1, 2)), np.zeros((2, 2)), np.zeros((2, 1, 2)))


def test_coeff_objective_matches_direct_oracle():
    rng = np.random.default_rng(38)
    for trial in range(10):
        z0, quad, beta, gamma2 = random_coeff_instance(rng, 2, 8, 2)
        z = np.maximum(rng.standard_normal(z0.shape), 0.0)
        ours = coeff_objective(z, z0, quad, beta, gamma2)
        ref = coeff_objective_direct(z, z0, quad.below, quad.bank_above,
                                     quad.above, beta, gamma2)
        assert abs(ours - ref) < 1e-10 * max(1.0, abs(ref))


def test_coeff_gradient_matches_finite_differences():
    rng = np.random.default_rng(39)
    for trial in range(3):
        z0, quad, beta, gamma2 = random_coeff_instance(rng, 2, 6, 2)
        z = np.maximum(rng.standard_normal(z0.shape), 0.0) + 0.1
        grad = coeff_gradient(z, z0, quad, beta, gamma2)
        ref = fd_gradient(lambda zz: coeff_objective(zz, z0, quad, beta, gamma2),
                          z, step=1e-6)
        assert np.linalg.norm(grad - ref) < 1e-5 * max(np.linalg.norm(ref), 1.0)
