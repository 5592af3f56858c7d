"""AR(p) and Gaussian-process baselines with Gaussian step-ahead predictives."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .errors import NumericalError

__all__ = [
    "GaussianForecast",
    "ArModel",
    "fit_ar",
    "ar_forecast",
    "GpModel",
    "kernel_eval",
    "kernel_and_grads",
    "log_marginal_likelihood",
    "fit_gp_hypers",
    "fit_gp",
    "gp_forecast",
    "KERNELS",
]

log = logging.getLogger(__name__)

KERNELS = ("matern52", "rq")


@dataclass
class GaussianForecast:
    """Independent per-step normals."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)

    @property
    def horizon(self):
        return self.means.size

    def mean(self):
        return self.means

    def quantile(self, q):
        sd = np.sqrt(np.maximum(self.variances, 0.0))
        qs = np.asarray(q, dtype=float)
        if np.any((qs <= 0) | (qs >= 1)):
            raise ValueError("quantile levels must lie strictly inside (0, 1)")
        if qs.ndim == 0:
            return self.means + sd * stats.norm.ppf(qs)
        return self.means[:, None] + sd[:, None] * stats.norm.ppf(qs)[None, :]

    def density(self, truth):
        return stats.norm.pdf(truth, self.means, np.sqrt(self.variances))

    def logpdf(self, truth):
        return stats.norm.logpdf(truth, self.means, np.sqrt(self.variances))

    def cdf(self, truth):
        return stats.norm.cdf(truth, self.means, np.sqrt(self.variances))


# --------------------------------------------------------------------------
# AR(p)
# --------------------------------------------------------------------------


@dataclass
class ArModel:
    p: int
    coeffs: np.ndarray
    intercept: float
    innovation_variance: float


def fit_ar(series, p) -> ArModel:
    """Conditional least squares of ``x_t`` on ``(x_{t-1}, ..., x_{t-p}, 1)``.

    The innovation variance is the mean squared residual. A rank-deficient
    design (e.g. a constant series) falls back to an intercept-only model.
    """
    x = np.asarray(getattr(series, "values", series), dtype=float)
    if p < 1:
        raise ValueError("AR order must be positive")
    if x.size <= p + 1:
        raise ValueError(f"AR({p}) needs more than {p + 1} observations, got {x.size}")
    n = x.size - p
    lags = np.column_stack([x[p - j - 1:p - j - 1 + n] for j in range(p)])
    X = np.column_stack([lags, np.ones(n)])
    y = x[p:]
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p + 1:
        coeffs = np.zeros(p)
        intercept = float(np.mean(y))
    else:
        coeffs, intercept = beta[:p], float(beta[p])
    resid = y - lags @ coeffs - intercept
    return ArModel(p, np.asarray(coeffs, dtype=float), intercept, float(np.mean(resid ** 2)))


def ar_forecast(model: ArModel, context, horizon) -> GaussianForecast:
    """Multi-step predictive normals from the companion-form state recursion.

    The state is the last ``p`` values, known exactly at the forecast origin;
    its covariance evolves as ``P <- F P F' + sigma^2 e1 e1'``.
    """
    if horizon < 1:
        raise ValueError("horizon must be positive")
    ctx = np.asarray(context, dtype=float)
    p = model.p
    if ctx.size < p:
        raise ValueError(f"context needs at least {p} values")
    F = np.zeros((p, p))
    F[0] = model.coeffs
    F[1:, :-1] = np.eye(p - 1)
    state = ctx[-p:][::-1].copy()
    P = np.zeros((p, p))
    means, variances = np.empty(horizon), np.empty(horizon)
    for h in range(horizon):
        state = F @ state
        state[0] += model.intercept
        P = F @ P @ F.T
        P[0, 0] += model.innovation_variance
        means[h], variances[h] = state[0], P[0, 0]
    return GaussianForecast(means, variances)


# --------------------------------------------------------------------------
# Gaussian processes
# --------------------------------------------------------------------------

_SQRT5 = np.sqrt(5.0)


def kernel_and_grads(kind, log_params, r):
    """Kernel values at distances ``r`` and their derivatives w.r.t. the log-hypers.

    ``log_params`` holds ``log sigma^2, log lengthscale`` and, for ``rq``,
    ``log alpha``.
    """
    r = np.asarray(r, dtype=float)
    s2 = np.exp(log_params[0])
    ell = np.exp(log_params[1])
    if kind == "matern52":
        u = _SQRT5 * r / ell
        e = np.exp(-u)
        k = s2 * (1.0 + u + u * u / 3.0) * e
        # d/d log ell of (1+u+u^2/3)e^{-u}, with du/dlog ell = -u
        dell = s2 * e * u * u * (1.0 + u) / 3.0
        return k, [k, dell]
    if kind == "rq":
        alpha = np.exp(log_params[2])
        base = 1.0 + r * r / (2.0 * alpha * ell * ell)
        k = s2 * base ** (-alpha)
        dell = s2 * base ** (-alpha - 1.0) * r * r / (ell * ell)
        z = r * r / (2.0 * alpha * ell * ell)
        dalpha = k * alpha * (z / base - np.log(base))
        return k, [k, dell, dalpha]
    raise ValueError(f"unknown kernel {kind!r}; expected one of {KERNELS}")


def kernel_eval(kind, hyperparams, r):
    """Covariance at distance ``r`` for positive ``(sigma^2, lengthscale[, alpha])``."""
    hp = np.asarray(hyperparams, dtype=float)
    if np.any(hp <= 0):
        raise ValueError("kernel hyperparameters must be strictly positive")
    if np.any(np.asarray(r) < 0):
        raise ValueError("distance must be non-negative")
    k, _ = kernel_and_grads(kind, np.log(hp), r)
    return k


def _n_kernel_params(kind):
    return 3 if kind == "rq" else 2


def log_marginal_likelihood(kind, log_hypers, x, y, grad=True):
    """Log marginal likelihood of a zero-mean GP and its gradient in log-hyper space.

    ``log_hypers`` is the kernel's log-parameters followed by ``log noise variance``.
    Raises ``np.linalg.LinAlgError`` if the covariance is not positive definite.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nk = _n_kernel_params(kind)
    r = np.abs(x[:, None] - x[None, :])
    K, dK = kernel_and_grads(kind, log_hypers[:nk], r)
    noise = np.exp(log_hypers[nk])
    n = y.size
    Ky = K + noise * np.eye(n)
    L = np.linalg.cholesky(Ky)
    alpha = linalg.cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    if not grad:
        return lml
    Kinv = linalg.cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    g = np.array([0.5 * np.sum(W * D) for D in dK] + [0.5 * noise * np.trace(W)])
    return lml, g


@dataclass
class GpModel:
    kind: str
    hyperparams: dict
    x: np.ndarray
    y: np.ndarray
    x_scale: float = 1.0
    y_mean: float = 0.0
    y_std: float = 1.0
    lml: float = float("nan")

    def log_hypers(self):
        keys = ["signal_variance", "lengthscale"] + (["alpha"] if self.kind == "rq" else []) + ["noise_variance"]
        return np.log([self.hyperparams[k] for k in keys])


# log-space box keeps the optimiser away from numerically degenerate corners
_LOG_BOUNDS = {"signal": (-7.0, 7.0), "lengthscale": (-5.0, 6.0), "alpha": (-4.0, 9.0)}


def _bounds(kind, noise_floor):
    b = [_LOG_BOUNDS["signal"], _LOG_BOUNDS["lengthscale"]]
    if kind == "rq":
        b.append(_LOG_BOUNDS["alpha"])
    b.append((np.log(noise_floor), 2.0))
    lo, hi = np.array(b).T
    return lo, hi


def _ascend(kind, theta, x, y, lo, hi, max_iter, tol=1e-6):
    """Projected gradient ascent with backtracking (Armijo) line search."""
    f, g = log_marginal_likelihood(kind, theta, x, y)
    step = 1.0
    for _ in range(max_iter):
        accepted = False
        while step > 1e-10:
            cand = np.clip(theta + step * g, lo, hi)
            try:
                fc = log_marginal_likelihood(kind, cand, x, y, grad=False)
            except np.linalg.LinAlgError:
                fc = -np.inf
            if np.isfinite(fc) and fc >= f + 1e-4 * g @ (cand - theta):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        moved = np.max(np.abs(cand - theta))
        theta = cand
        f_old = f
        f, g = log_marginal_likelihood(kind, theta, x, y)
        step = min(step * 2.0, 10.0)
        if moved < tol or abs(f - f_old) < tol * (1.0 + abs(f)):
            break
    return theta, f


def fit_gp_hypers(kind, x, y, restarts=5, max_iter=200, seed=0, noise_floor=1e-6):
    """Maximise the log marginal likelihood from ``restarts`` random starts.

    Returns ``(log_hypers, lml)`` for the best start. If every start fails
    the Cholesky factorisation the noise floor is raised 100-fold once.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind not in KERNELS:
        raise ValueError(f"unknown kernel {kind!r}")
    for floor in (noise_floor, noise_floor * 100):
        rng = np.random.default_rng(seed)
        lo, hi = _bounds(kind, floor)
        span = max(np.ptp(x), 1e-12)
        var = max(float(np.var(y)), 1e-12)
        best = None
        for i in range(restarts):
            theta = [np.log(var), np.log(span * (0.2 if i == 0 else rng.uniform(0.05, 1.0)))]
            if kind == "rq":
                theta.append(rng.uniform(-1.0, 2.0))
            theta.append(np.log(var * (0.1 if i == 0 else 10 ** rng.uniform(-3, -0.5))))
            theta = np.clip(np.array(theta), lo, hi)
            try:
                th, f = _ascend(kind, theta, x, y, lo, hi, max_iter)
            except np.linalg.LinAlgError:
                continue
            if best is None or f > best[1]:
                best = (th, f)
        if best is not None:
            return best
        log.warning("all GP restarts failed Cholesky with noise floor %g; retrying", floor)
    raise NumericalError(f"GP fit ({kind}) failed: covariance never positive definite")


def fit_gp(series, kind, restarts=5, max_iter=200, seed=0) -> GpModel:
    """Fit a GP to a series on integer time indices.

    Inputs are scaled to ``[0, 1]`` and targets standardised before fitting;
    :func:`gp_forecast` undoes both.
    """
    yv = np.asarray(getattr(series, "values", series), dtype=float)
    n = yv.size
    if n < 3:
        raise ValueError("GP fit needs at least 3 observations")
    x_scale = float(n - 1)
    x = np.arange(n) / x_scale
    y_mean = float(yv.mean())
    y_std = float(yv.std()) or 1.0
    y = (yv - y_mean) / y_std
    theta, lml = fit_gp_hypers(kind, x, y, restarts, max_iter, seed)
    e = np.exp(theta)
    hp = {"signal_variance": e[0], "lengthscale": e[1]}
    if kind == "rq":
        hp["alpha"] = e[2]
    hp["noise_variance"] = e[-1]
    return GpModel(kind, hp, x, y, x_scale, y_mean, y_std, float(lml))


def gp_predict(model: GpModel, x_new, include_noise=True):
    """Posterior mean and variance in standardised units at scaled inputs."""
    th = model.log_hypers()
    nk = _n_kernel_params(model.kind)
    noise = np.exp(th[nk])
    K, _ = kernel_and_grads(model.kind, th[:nk], np.abs(model.x[:, None] - model.x[None, :]))
    L = np.linalg.cholesky(K + noise * np.eye(model.x.size))
    Ks, _ = kernel_and_grads(model.kind, th[:nk], np.abs(np.asarray(x_new)[:, None] - model.x[None, :]))
    mean = Ks @ linalg.cho_solve((L, True), model.y)
    v = linalg.solve_triangular(L, Ks.T, lower=True)
    var = np.exp(th[0]) - np.sum(v * v, axis=0)
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + noise
    return mean, var


def gp_forecast(model: GpModel, horizon) -> GaussianForecast:
    """Predictive normals at the next ``horizon`` integer time points."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    n = model.x.size
    x_new = np.arange(n, n + horizon) / model.x_scale
    mean, var = gp_predict(model, x_new)
    return GaussianForecast(model.y_mean + model.y_std * mean, var * model.y_std ** 2)
