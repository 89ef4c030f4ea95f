"""Transition laws and stochastic-integral samplers used along one branch.

All samplers broadcast over array arguments, so a whole level of a tree (or
a batch of Monte Carlo draws) is one call. Scalar inputs give a float back.

Notation: ``t`` is the branch length, ``alpha_y`` the pull of the response
towards its optimum, ``alpha_tau``/``tau_tilde``/``sigma_tau`` the CIR rate
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import exprel

DEFAULT_N_STEPS = 100

_GL_NODES, _GL_WEIGHTS = leggauss(48)


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _check_finite(**kw):
    for name, val in kw.items():
        if not np.all(np.isfinite(val)):
            raise ValueError(f"{name} must be finite")


def _check_nonneg(**kw):
    for name, val in kw.items():
        if np.any(np.asarray(val) < 0):
            raise ValueError(f"{name} must be non-negative")


def _check_pos(**kw):
    for name, val in kw.items():
        if np.any(np.asarray(val) <= 0):
            raise ValueError(f"{name} must be positive")


def _shape(*args) -> tuple[int, ...]:
    return np.broadcast(*[np.asarray(a) for a in args]).shape


def exp_integral(rate, t):
    """``(exp(rate * t) - 1) / rate``, equal to ``t`` in the ``rate -> 0`` limit."""
    rate, t = np.asarray(rate, float), np.asarray(t, float)
    return t * exprel(rate * t)


# -- elementary transitions ---------------------------------------------------

def bm_transition(x_parent, sigma, t, rng: np.random.Generator):
    """Draw ``x_child ~ N(x_parent, sigma**2 * t)``."""
    _check_finite(x_parent=x_parent, sigma=sigma, t=t)
    _check_nonneg(sigma=sigma, t=t)
    x_parent, sigma, t = np.broadcast_arrays(*(np.asarray(a, float) for a in (x_parent, sigma, t)))
    z = rng.standard_normal(x_parent.shape)
    draw = x_parent + sigma * np.sqrt(t) * z
    return _out(np.where((t == 0) | (sigma == 0), x_parent, draw))


def ou_moments(x_parent, alpha, theta, sigma, t):
    """Conditional mean and variance of an OU transition.

    Stable as ``alpha -> 0`` (reduces to the BM moments there).
    """
    decay = np.exp(-alpha * t)
    mean = theta + (x_parent - theta) * decay
    var = sigma ** 2 * exp_integral(-2.0 * np.asarray(alpha, float), t)
    return mean, var


def ou_transition(x_parent, alpha, theta, sigma, t, rng: np.random.Generator):
    """Draw from the OU transition law over time ``t``.

    Mean ``x e^{-alpha t} + theta (1 - e^{-alpha t})``, variance
    ``sigma^2 (1 - e^{-2 alpha t}) / (2 alpha)``. ``alpha`` must be positive;
    route ``alpha == 0`` to :func:`bm_transition`.
    """
    _check_finite(x_parent=x_parent, alpha=alpha, theta=theta, sigma=sigma, t=t)
    _check_pos(alpha=alpha)
    _check_nonneg(sigma=sigma, t=t)
    x_parent, alpha, theta, sigma, t = np.broadcast_arrays(
        *(np.asarray(a, float) for a in (x_parent, alpha, theta, sigma, t)))
    mean, var = ou_moments(x_parent, alpha, theta, sigma, t)
    draw = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    return _out(np.where(t == 0, x_parent, draw))


@dataclass(frozen=True)
class CirTransitionParams:
    """Scaled noncentral chi-squared law ``c * chi2(k, lam)`` of a CIR step."""

    c: float
    k: float
    lam: float


def _cir_params(tau_parent, alpha_tau, tau_tilde, sigma_tau, t):
    decay = np.exp(-alpha_tau * t)
    one_minus = -np.expm1(-alpha_tau * t)
    c = sigma_tau ** 2 * one_minus / (4.0 * alpha_tau)
    k = 4.0 * tau_tilde * alpha_tau / sigma_tau ** 2
    lam = 4.0 * tau_parent * alpha_tau * decay / (sigma_tau ** 2 * one_minus)
    return c, k, lam


def cir_transition_params(tau_parent, alpha_tau, tau_tilde, sigma_tau, t) -> CirTransitionParams:
    """Return ``(c, k, lam)`` for a CIR transition over time ``t``."""
    vals = dict(tau_parent=tau_parent, alpha_tau=alpha_tau, tau_tilde=tau_tilde,
                sigma_tau=sigma_tau, t=t)
    _check_finite(**vals)
    _check_pos(**vals)
    c, k, lam = _cir_params(tau_parent, alpha_tau, tau_tilde, sigma_tau, t)
    return CirTransitionParams(float(c), float(k), float(lam))


def sample_noncentral_chisq(k, lam, rng: np.random.Generator, size=None):
    """Draw from the noncentral chi-squared law with ``k`` degrees of freedom."""
    _check_finite(k=k, lam=lam)
    _check_pos(k=k)
    _check_nonneg(lam=lam)
    return _out(rng.noncentral_chisquare(k, lam, size=size))


def cir_transition(tau_parent, alpha_tau, tau_tilde, sigma_tau, t, rng: np.random.Generator):
    """Exact CIR step: ``tau_child ~ c * chi2(k, lam)``; identity when ``t == 0``."""
    _check_finite(tau_parent=tau_parent, t=t)
    _check_nonneg(tau_parent=tau_parent, t=t)
    _check_pos(alpha_tau=alpha_tau, tau_tilde=tau_tilde, sigma_tau=sigma_tau)
    tau_parent, t = np.broadcast_arrays(np.asarray(tau_parent, float), np.asarray(t, float))
    return _out(_cir_step(tau_parent, alpha_tau, tau_tilde, sigma_tau, t, rng))


def _cir_step(tau, alpha_tau, tau_tilde, sigma_tau, dt, rng):
    moving = dt > 0
    if not np.any(moving):
        return tau.copy()
    safe_dt = np.where(moving, dt, 1.0)
    c, k, lam = _cir_params(tau, alpha_tau, tau_tilde, sigma_tau, safe_dt)
    draw = c * rng.noncentral_chisquare(k, lam)
    return np.where(moving, draw, tau)


# -- optimum integrals (term 1 of the response solution) ----------------------

def bm_theta_integral(theta_parent, theta_child, alpha_y, sigma_theta, t, rng: np.random.Generator):
    """Sample ``e^{-a t} * int_0^t a e^{a s} theta_s ds`` for a BM optimum.

    Integration by parts gives ``theta_t - theta_0 e^{-a t}`` minus an Ito
    integral; with both optimum endpoints known the draw is normal with that
    mean and variance ``sigma_theta^2 (1 - e^{-2 a t}) / (2 a)``.
    """
    theta_parent, theta_child, alpha_y, sigma_theta, t = np.broadcast_arrays(
        *(np.asarray(a, float) for a in (theta_parent, theta_child, alpha_y, sigma_theta, t)))
    mean = theta_child - theta_parent * np.exp(-alpha_y * t)
    var = sigma_theta ** 2 * exp_integral(-2.0 * alpha_y, t)
    return _out(mean + np.sqrt(var) * rng.standard_normal(mean.shape))


def bm_theta_integral_variance(alpha_y, sigma_theta, t, form: str = "exact"):
    """Unconditional variance of ``e^{-a t} int_0^t a e^{a s} sigma W_s ds``.

    ``form="exact"`` is ``sigma^2 int_0^t (1 - e^{-a u})^2 du``. ``form="printed"``
    evaluates the expression as it appears in the source derivation, kept
    only so the discrepancy can be demonstrated against Monte Carlo.
    """
    a, s2, t = (np.asarray(v, float) for v in (alpha_y, sigma_theta ** 2, t))
    if form == "exact":
        return _out(s2 * (t - 2.0 * exp_integral(-a, t) + exp_integral(-2.0 * a, t)))
    if form == "printed":
        e1, e2 = np.exp(a * t), np.exp(2 * a * t)
        return _out(s2 * (t * e2 - 2.0 * (e2 - e1) + a / 2.0 * (e2 - 1.0)))
    raise ValueError(f"unknown form {form!r}")


C_VARIANCE_FORMS = ("exact", "linear", "printed")


def ouou_c_variance(alpha_y, alpha_theta, sigma_theta, t, form: str = "exact"):
    """Variance of the stochastic part of the OU-optimum integral.

    The term is ``sigma a_y int_0^t e^{(a_y - a_th) s} M_s ds`` with
    ``M_s = int_0^s e^{a_th v} dW_v``; it is Gaussian with mean zero.

    ``exact``
        ``sigma^2 a_y^2 int_0^t e^{2 a_th v} g(v)^2 dv`` with
        ``g(v) = int_v^t e^{(a_y - a_th) s} ds``, by Gauss-Legendre quadrature.
    ``linear``
        integrand variance linearised as ``b s`` with ``b = sigma^2 a_y^2``,
        giving ``b t^3 / 3``.
    ``printed``
        ``(b t)^3 / (3 b)``, the expression as printed in the source.
    """
    ay, ath, s, t = np.broadcast_arrays(*(np.asarray(v, float) for v in (alpha_y, alpha_theta, sigma_theta, t)))
    b = s ** 2 * ay ** 2
    if form == "linear":
        return _out(b * t ** 3 / 3.0)
    if form == "printed":
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(b > 0, (b * t) ** 3 / (3.0 * b), 0.0)
        return _out(out)
    if form != "exact":
        raise ValueError(f"unknown form {form!r}")
    delta = (ay - ath)[..., None]
    half = (t / 2.0)[..., None]
    v = half * (_GL_NODES + 1.0)
    g = np.exp(delta * v) * exp_integral(delta, half * 2.0 - v)
    integrand = np.exp(2.0 * ath[..., None] * v) * g ** 2
    return _out(b * (half[..., 0] * (integrand @ _GL_WEIGHTS)))


def ouou_theta_integral(theta_0, theta_1, alpha_y, alpha_theta, sigma_theta, t,
                        rng: np.random.Generator, c_variance: str = "exact"):
    """Sample ``int_0^t a_y e^{a_y s} theta_s ds`` for an OU optimum.

    ``theta_0`` is the optimum at the branch start, ``theta_1`` its long-run
    value and ``alpha_theta`` its pull. Returns the sum of the two
    deterministic parts and a normal draw for the stochastic part (variance
    per ``c_variance``, see :func:`ouou_c_variance`). The caller multiplies by
    ``e^{-a_y t}``. Coincident rates use the analytic limit.
    """
    _check_finite(theta_0=theta_0, theta_1=theta_1, alpha_y=alpha_y,
                  alpha_theta=alpha_theta, sigma_theta=sigma_theta, t=t)
    _check_pos(alpha_y=alpha_y, t=t)
    _check_nonneg(sigma_theta=sigma_theta)
    return _out(_ouou_theta_integral(theta_0, theta_1, alpha_y, alpha_theta, sigma_theta, t,
                                     rng, c_variance))


def _ouou_theta_integral(theta_0, theta_1, alpha_y, alpha_theta, sigma_theta, t, rng, c_variance):
    theta_0, theta_1, alpha_y, alpha_theta, sigma_theta, t = np.broadcast_arrays(
        *(np.asarray(a, float) for a in (theta_0, theta_1, alpha_y, alpha_theta, sigma_theta, t)))
    shifted = exp_integral(alpha_y - alpha_theta, t)
    part_a = alpha_y * theta_0 * shifted
    part_b = theta_1 * np.expm1(alpha_y * t) - alpha_y * theta_1 * shifted
    var_c = np.asarray(ouou_c_variance(alpha_y, alpha_theta, sigma_theta, t, c_variance))
    part_c = np.sqrt(var_c) * rng.standard_normal(t.shape)
    return part_a + part_b + part_c


# -- rate integrals (term 2 of the response solution) -------------------------

TRAJECTORY_MODES = ("median", "endpoint")


def ito_bm_weighted_integral(sigma_tau, alpha_y, t, n_steps: int, rng: np.random.Generator,
                             trajectory: str = "median"):
    """Sample ``int_0^t sigma W^tau_s e^{a (s - t)} dW^y_s`` for a BM rate.

    ``W^tau`` and ``W^y`` are independent. The running integral is built by
    a left-point Euler sum on ``n_steps`` equal subintervals. With
    ``trajectory="median"`` the sample is the median of the running-integral
    values on the grid (including the initial zero); ``"endpoint"`` returns
    the value at ``t``.
    """
    _check_finite(sigma_tau=sigma_tau, alpha_y=alpha_y, t=t)
    _check_pos(t=t)
    _check_nonneg(sigma_tau=sigma_tau, alpha_y=alpha_y)
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    return _out(_ito_bm_weighted_integral(sigma_tau, alpha_y, t, n_steps, rng, trajectory))


def _ito_bm_weighted_integral(sigma_tau, alpha_y, t, n_steps, rng, trajectory):
    if trajectory not in TRAJECTORY_MODES:
        raise ValueError(f"unknown trajectory mode {trajectory!r}")
    sigma_tau, alpha_y, t = np.broadcast_arrays(*(np.asarray(a, float) for a in (sigma_tau, alpha_y, t)))
    shape = t.shape
    dt = (t / n_steps)[..., None]
    s = dt * np.arange(n_steps)
    root_dt = np.sqrt(dt)
    d_tau = rng.standard_normal(shape + (n_steps,)) * root_dt
    d_y = rng.standard_normal(shape + (n_steps,)) * root_dt
    w_tau = np.cumsum(d_tau, axis=-1) - d_tau  # W^tau at left grid points
    integrand = sigma_tau[..., None] * w_tau * np.exp(alpha_y[..., None] * (s - t[..., None]))
    running = np.cumsum(integrand * d_y, axis=-1)
    if trajectory == "endpoint":
        return running[..., -1]
    path = np.concatenate([np.zeros(shape + (1,)), running], axis=-1)
    return np.median(path, axis=-1)


COUPLING_MODES = ("independent", "shared")


def cir_weighted_ito_integral(tau_0, alpha_y, alpha_tau, tau_tilde, sigma_tau, t, n_steps: int,
                              rng: np.random.Generator, coupling: str = "independent"):
    """Sample ``int_0^t tau_s e^{a_y s} dW^y_s`` with ``tau`` a CIR process.

    Split along the CIR solution into a stationary part, a decaying part and
    a noise part. The first two are Gaussian with closed-form variances.
    The noise part is built on the grid: the CIR path is advanced by exact
    noncentral chi-squared sub-steps, ``x_j = sum_{i<j} e^{a_tau s_i}
    sqrt(tau_i) W_i`` and the term is ``sigma_tau sum_j e^{(a_y - a_tau) s_j}
    x_j v_j`` with independent ``W_i, v_j ~ N(0, dt)``.

    ``coupling="independent"`` draws the three parts with separate noise.
    ``coupling="shared"`` drives all of them by the same grid increments
    ``v_j`` (a single Euler sum), so the first two are no longer exact.

    The caller multiplies the result by ``e^{-a_y t}``.
    """
    _check_finite(tau_0=tau_0, alpha_y=alpha_y, alpha_tau=alpha_tau, tau_tilde=tau_tilde,
                  sigma_tau=sigma_tau, t=t)
    _check_pos(tau_0=tau_0, alpha_y=alpha_y, alpha_tau=alpha_tau, tau_tilde=tau_tilde, t=t)
    _check_nonneg(sigma_tau=sigma_tau)
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    total, _ = cir_integral_with_rate(tau_0, alpha_y, alpha_tau, tau_tilde, sigma_tau, t,
                                      n_steps, rng, coupling)
    return _out(total)


def cir_integral_with_rate(tau_0, alpha_y, alpha_tau, tau_tilde, sigma_tau, t, n_steps, rng,
                           coupling="independent"):
    """Vectorised core of :func:`cir_weighted_ito_integral`.

    Returns ``(integral, tau_end)`` where ``tau_end`` is the CIR value at the
    end of the grid, itself an exact draw of the rate after time ``t``.
    Zero-length entries return ``(0, tau_0)``.
    """
    if coupling not in COUPLING_MODES:
        raise ValueError(f"unknown coupling {coupling!r}")
    tau_0, t = np.broadcast_arrays(np.asarray(tau_0, float), np.asarray(t, float))
    shape = t.shape
    dt = t / n_steps
    dtc = dt[..., None]
    s = dtc * np.arange(n_steps)
    root_dt = np.sqrt(dtc)
    offset = tau_0 - tau_tilde

    if sigma_tau > 0:
        path = np.empty(shape + (n_steps + 1,))
        path[..., 0] = tau_0
        for i in range(n_steps):
            path[..., i + 1] = _cir_step(path[..., i], alpha_tau, tau_tilde, sigma_tau, dt, rng)
        w = rng.standard_normal(shape + (n_steps,)) * root_dt
        x = np.cumsum(np.exp(alpha_tau * s) * np.sqrt(path[..., :-1]) * w, axis=-1)
        x = np.concatenate([np.zeros(shape + (1,)), x[..., :-1]], axis=-1)
        tau_end = path[..., -1]
    else:
        x = np.zeros(shape + (n_steps,))
        tau_end = tau_tilde + offset * np.exp(-alpha_tau * t)

    v = rng.standard_normal(shape + (n_steps,)) * root_dt
    weight_c = sigma_tau * np.exp((alpha_y - alpha_tau) * s) * x
    if coupling == "shared":
        weight = (tau_tilde * np.exp(alpha_y * s)
                  + offset[..., None] * np.exp((alpha_y - alpha_tau) * s) + weight_c)
        total = np.sum(weight * v, axis=-1)
    else:
        var_a = tau_tilde ** 2 * exp_integral(2.0 * alpha_y, t)
        var_b = offset ** 2 * exp_integral(2.0 * (alpha_y - alpha_tau), t)
        z = rng.standard_normal((2,) + shape)
        total = np.sqrt(var_a) * z[0] + np.sqrt(var_b) * z[1] + np.sum(weight_c * v, axis=-1)
    zero = t == 0
    return np.where(zero, 0.0, total), np.where(zero, tau_0, tau_end)


def weighted_ito_integral(rate, t, n_steps: int, rng: np.random.Generator, size=None):
    """Left-point Euler sample of ``int_0^t e^{rate s} dW_s``."""
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    dt = t / n_steps
    s = dt * np.arange(n_steps)
    dw = rng.standard_normal(shape + (n_steps,)) * np.sqrt(dt)
    return _out(dw @ np.exp(rate * s))
