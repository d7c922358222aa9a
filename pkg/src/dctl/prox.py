"""Proximity operators and the bound-constrained Newton solver used in training.

The three building blocks here are the exact minimizers of the three
subproblems the alternating trainer cycles through:

* ``update_transform`` -- ridge + log-det regularized quadratic over a
  square transform, solved in closed form through a Cholesky change of
  variable and an SVD-based log-det prox.
* ``prox_nonneg_l1`` -- scalar prox of ``beta * |z| + indicator(z >= 0)``
  against a single quadratic, used by the last-layer coefficient update.
* ``projected_newton_coeffs`` -- coefficient update for layers that are
  coupled to the layer above; decomposes into independent per-(sample,
  channel) strictly convex quadratics over the nonnegative orthant and
  solves each with an active-set projected Newton method.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .conv import conv_same_matrix

__all__ = [
    "NumericalConditioningError",
    "NewtonSettings",
    "TransformUpdateInputs",
    "CoeffQuadratics",
    "NewtonResult",
    "prox_nonneg_l1",
    "prox_logdet_svd",
    "update_transform",
    "coeff_objective",
    "coeff_gradient",
    "projected_newton_coeffs",
]


class NumericalConditioningError(RuntimeError):
    """An inner solve hit a numerically hopeless matrix or value."""


@dataclass(frozen=True)
class NewtonSettings:
    """Knobs for the projected Newton coefficient solver."""

    max_iters: int = 50
    grad_tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    active_set_eps: float = 1e-10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.active_set_eps < 0:
            raise ValueError("active_set_eps must be >= 0")


def prox_nonneg_l1(v, beta, weight):
    """Prox of ``(beta * |z| + indicator(z >= 0)) / weight`` at ``v``.

    Minimizes (weight / 2) * (z - v)^2 + beta * z over z >= 0, which has
    the one-sided soft-threshold solution max(v - beta / weight, 0).
    ``v`` may be a scalar or an array (applied entrywise).
    """
    beta = float(beta)
    weight = float(weight)
    if not (np.isfinite(beta) and beta > 0):
        raise ValueError("beta must be finite and positive")
    if not (np.isfinite(weight) and weight > 0):
        raise ValueError("weight must be finite and positive")
    v = np.asarray(v, dtype=np.float64)
    out = np.maximum(v - beta / weight, 0.0)
    return float(out) if out.ndim == 0 else out


def prox_logdet_svd(y, lam):
    """Prox of ``-lam * sum_i log s_i(X)`` at the square matrix ``y``.

    With y = U diag(s) V^T, each singular value moves to the positive root
    of s'^2 - s s' - lam = 0, i.e. s' = (s + sqrt(s^2 + 4 lam)) / 2, and the
    singular vectors are kept.  All output singular values are >= sqrt(lam).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise ValueError(f"y must be square, got shape {y.shape}")
    lam = float(lam)
    if not (np.isfinite(lam) and lam > 0):
        raise ValueError("lam must be finite and positive")
    u, s, vh = np.linalg.svd(y)
    s_new = 0.5 * (s + np.sqrt(s * s + 4.0 * lam))
    return (u * s_new) @ vh


@dataclass(frozen=True)
class TransformUpdateInputs:
    """Data defining one transform subproblem.

    The objective minimized is

        0.5 * tr(T' gram T) - tr(cross' T) + mu * ||T||_F^2
        - lam * sum_i log s_i(T) + (1 / (2 gamma1)) * ||T - anchor||_F^2

    where ``gram`` is the summed Gram matrix of the layer inputs and
    ``cross`` the summed input-output cross matrix.
    """

    gram: np.ndarray
    cross: np.ndarray
    anchor: np.ndarray
    mu: float
    lam: float
    gamma1: float

    def __post_init__(self):
        gram = np.asarray(self.gram, dtype=np.float64)
        cross = np.asarray(self.cross, dtype=np.float64)
        anchor = np.asarray(self.anchor, dtype=np.float64)
        k = gram.shape[0] if gram.ndim == 2 else -1
        if gram.ndim != 2 or gram.shape != (k, k):
            raise ValueError(f"gram must be square, got shape {gram.shape}")
        if cross.shape != (k, k) or anchor.shape != (k, k):
            raise ValueError("gram, cross and anchor must share one square shape")
        if not np.allclose(gram, gram.T, atol=1e-10 * (1.0 + np.abs(gram).max())):
            raise ValueError("gram must be symmetric")
        if not (np.isfinite(self.mu) and self.mu >= 0):
            raise ValueError("mu must be finite and >= 0")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lam must be finite and positive")
        if not (np.isfinite(self.gamma1) and self.gamma1 > 0):
            raise ValueError("gamma1 must be finite and positive")
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "cross", cross)
        object.__setattr__(self, "anchor", anchor)


def _cholesky_with_jitter(w):
    """Lower factor L with L L^T = w, adding diagonal jitter on failure."""
    k = w.shape[0]
    jitter = 1e-10 * np.trace(w) / k
    if jitter <= 0:
        jitter = 1e-10
    for attempt in range(4):
        try:
            lower = np.linalg.cholesky(w + (attempt * jitter) * np.eye(k))
        except np.linalg.LinAlgError:
            continue
        return lower
    raise NumericalConditioningError(
        "transform update: regularized gram matrix is not positive definite"
    )


def update_transform(inputs):
    """Closed-form global minimizer of the transform subproblem.

    Steps: W = gram + (1/gamma1 + 2 mu) Id is factored as W = L L^T; the
    change of variable S = L^T T turns the quadratic part into
    0.5 * ||S - Y||_F^2 with Y = L^{-1} (cross + anchor / gamma1) while the
    log-det term only shifts by a constant, so S is the SVD log-det prox of
    Y and T = L^{-T} S.  The result satisfies the stationarity equation
    W T - (cross + anchor / gamma1) - lam * T^{-T} = 0 and has all singular
    values strictly positive.
    """
    if not isinstance(inputs, TransformUpdateInputs):
        raise ValueError("inputs must be a TransformUpdateInputs instance")
    k = inputs.gram.shape[0]
    w = inputs.gram + (1.0 / inputs.gamma1 + 2.0 * inputs.mu) * np.eye(k)
    lower = _cholesky_with_jitter(w)
    g = inputs.cross + inputs.anchor / inputs.gamma1
    y = scipy.linalg.solve_triangular(lower, g, lower=True)
    u, s, vh = np.linalg.svd(y)
    s_new = 0.5 * (s + np.sqrt(s * s + 4.0 * inputs.lam))
    return scipy.linalg.solve_triangular(lower.T, (u * s_new) @ vh, lower=False)


@dataclass(frozen=True)
class CoeffQuadratics:
    """Quadratic data for one coefficient update, all of shape (M, N, K).

    ``below`` is the forward response of the previous layer through the
    current bank (the target the coefficients should match), ``bank_above``
    the (K, K) kernel bank of the next layer, and ``above`` the next
    layer's coefficients that the convolved output should reproduce.
    """

    below: np.ndarray
    bank_above: np.ndarray
    above: np.ndarray

    def __post_init__(self):
        below = np.asarray(self.below, dtype=np.float64)
        bank = np.asarray(self.bank_above, dtype=np.float64)
        above = np.asarray(self.above, dtype=np.float64)
        if below.ndim != 3:
            raise ValueError(f"below must be (M, N, K), got shape {below.shape}")
        k = below.shape[2]
        if bank.shape != (k, k):
            raise ValueError(f"bank_above must be ({k}, {k}), got shape {bank.shape}")
        if above.shape != below.shape:
            raise ValueError("above must have the same shape as below")
        if below.shape[1] < k:
            raise ValueError("signal length must be >= kernel count")
        object.__setattr__(self, "below", below)
        object.__setattr__(self, "bank_above", bank)
        object.__setattr__(self, "above", above)


class NewtonResult(NamedTuple):
    coeffs: np.ndarray
    converged: bool
    iterations: int


def _bank_matrices(bank, n):
    return np.stack([conv_same_matrix(bank[:, k], n) for k in range(bank.shape[1])])


def _check_coeff_args(z, anchor, quad, beta, gamma2):
    z = np.asarray(z, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if z.shape != quad.below.shape or anchor.shape != quad.below.shape:
        raise ValueError("coefficient arrays must match the quadratic data shape")
    if not (np.isfinite(beta) and beta >= 0):
        raise ValueError("beta must be finite and >= 0")
    if not (np.isfinite(gamma2) and gamma2 > 0):
        raise ValueError("gamma2 must be finite and positive")
    return z, anchor


def coeff_objective(z, anchor, quad, beta, gamma2):
    """Smooth part of the coefficient objective, summed over all blocks.

    0.5/gamma2 * ||z - anchor||^2 + 0.5 * ||z - below||^2
    + 0.5 * ||conv(z) - above||^2 + beta * sum(z), where conv applies
    bank_above channel-wise.
    """
    z, anchor = _check_coeff_args(z, anchor, quad, beta, gamma2)
    mats = _bank_matrices(quad.bank_above, z.shape[1])
    coupled = np.einsum("knj,mjk->mnk", mats, z)
    return float(
        0.5 / gamma2 * np.sum((z - anchor) ** 2)
        + 0.5 * np.sum((z - quad.below) ** 2)
        + 0.5 * np.sum((coupled - quad.above) ** 2)
        + beta * np.sum(z)
    )


def coeff_gradient(z, anchor, quad, beta, gamma2):
    """Gradient of :func:`coeff_objective` with respect to ``z``."""
    z, anchor = _check_coeff_args(z, anchor, quad, beta, gamma2)
    mats = _bank_matrices(quad.bank_above, z.shape[1])
    residual = np.einsum("knj,mjk->mnk", mats, z) - quad.above
    return (
        (z - anchor) / gamma2
        + (z - quad.below)
        + np.einsum("kjn,mjk->mnk", mats, residual)
        + beta
    )


def _newton_block(z0, a, b, cmat, hess, beta, inv_g2, st):
    """Minimize one strictly convex block over z >= 0 by projected Newton.

    f(z) = inv_g2/2 ||z - z0||^2 + 1/2 ||z - a||^2 + 1/2 ||C z - b||^2
           + beta * sum(z)
    """

    def value(zv, czv):
        return (
            0.5 * inv_g2 * np.dot(zv - z0, zv - z0)
            + 0.5 * np.dot(zv - a, zv - a)
            + 0.5 * np.dot(czv - b, czv - b)
            + beta * zv.sum()
        )

    z = np.maximum(z0, 0.0)
    cz = cmat @ z
    f = value(z, cz)
    if not np.isfinite(f):
        raise NumericalConditioningError("coefficient block objective is not finite")
    for it in range(st.max_iters):
        grad = inv_g2 * (z - z0) + (z - a) + cmat.T @ (cz - b) + beta
        free = (z > st.active_set_eps) | (grad < 0.0)
        viol = np.abs(np.where(free, grad, 0.0)).max()
        if viol <= st.grad_tol:
            return z, True, it
        direction = np.where(free, 0.0, grad)
        idx = np.flatnonzero(free)
        if idx.size:
            sub = hess[np.ix_(idx, idx)]
            direction[idx] = np.linalg.solve(sub, grad[idx])
        step = 1.0
        while True:
            z_new = np.maximum(z - step * direction, 0.0)
            cz_new = cmat @ z_new
            f_new = value(z_new, cz_new)
            if not np.isfinite(f_new):
                raise NumericalConditioningError(
                    "coefficient line search produced a non-finite value"
                )
            decrease = float(np.dot(grad, z - z_new))
            if f_new <= f - st.armijo_c * max(decrease, 0.0) and f_new <= f:
                break
            step *= st.backtrack_factor
            if step < 1e-14:
                # direction numerically exhausted; keep the current iterate
                return z, False, it + 1
        z, cz, f = z_new, cz_new, f_new
    return z, False, st.max_iters


def projected_newton_coeffs(z0, quad, beta, gamma2, settings=None):
    """Solve every (sample, channel) coefficient block over the orthant.

    The coupled coefficient objective decomposes per sample m and channel k
    because the channel-wise convolution with bank_above never mixes
    channels; each block shares the Hessian C_k^T C_k + (1 + 1/gamma2) Id.
    Blocks whose start point already satisfies first-order optimality are
    left untouched.  Returns the updated (M, N, K) array plus a flag that
    is False when some block hit ``max_iters`` before reaching ``grad_tol``
    (the best iterate is still returned; the line search never accepts an
    increase, so the objective never exceeds its value at ``z0``).
    """
    if not isinstance(quad, CoeffQuadratics):
        raise ValueError("quad must be a CoeffQuadratics instance")
    st = settings if settings is not None else NewtonSettings()
    if not isinstance(st, NewtonSettings):
        raise ValueError("settings must be a NewtonSettings instance")
    z0, _ = _check_coeff_args(z0, z0, quad, beta, gamma2)
    n_samples, n, k = z0.shape
    inv_g2 = 1.0 / gamma2
    out = np.maximum(z0, 0.0)
    converged = True
    iterations = 0
    eye = np.eye(n)
    for chan in range(k):
        cmat = conv_same_matrix(quad.bank_above[:, chan], n)
        hess = cmat.T @ cmat + (1.0 + inv_g2) * eye
        zc = out[:, :, chan]
        a = quad.below[:, :, chan]
        b = quad.above[:, :, chan]
        # batched first-order screen: skip blocks that are already optimal
        grad = inv_g2 * (zc - z0[:, :, chan]) + (zc - a) + (zc @ cmat.T - b) @ cmat + beta
        free = (zc > st.active_set_eps) | (grad < 0.0)
        viol = np.abs(np.where(free, grad, 0.0)).max(axis=1)
        for m in np.flatnonzero(viol > st.grad_tol):
            z_new, ok, used = _newton_block(
                z0[m, :, chan], a[m], b[m], cmat, hess, beta, inv_g2, st
            )
            out[m, :, chan] = z_new
            converged = converged and ok
            iterations = max(iterations, used)
    return NewtonResult(out, converged, iterations)
