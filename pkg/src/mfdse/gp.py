"""Exact Gaussian-process regression with a Matérn-5/2 kernel.

Hyperparameters live on an unconstrained log scale.  The log marginal
likelihood carries an additive Gamma log-density on the lengthscale and is
differentiable with respect to the hyperparameters and the training
inputs, which is what lets an encoder be trained through the kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.special import gammaln

from .nn import AdamState, adam_step

SQRT5 = math.sqrt(5.0)
NOISE_FLOOR = 1e-6
JITTER_START = 1e-8
JITTER_MAX = 1e-3
PRIOR_SHAPE = 3.0
PRIOR_RATE = 6.0


@dataclass(frozen=True)
class KernelParams:
    log_lengthscale: float = math.log(0.5)
    log_outputscale: float = 0.0
    log_noise: float = math.log(0.1)  # of the part above the floor

    @classmethod
    def create(cls, lengthscale=0.5, outputscale=1.0, noise=0.1) -> "KernelParams":
        if lengthscale <= 0 or outputscale <= 0 or noise < 0:
            raise ValueError("kernel parameters must be positive")
        return cls(
            math.log(lengthscale),
            math.log(outputscale),
            math.log(max(noise - NOISE_FLOOR, 1e-300)),
        )

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_lengthscale)

    @property
    def outputscale(self) -> float:
        return math.exp(self.log_outputscale)

    @property
    def noise(self) -> float:
        return NOISE_FLOOR + math.exp(self.log_noise)

    def vector(self) -> np.ndarray:
        return np.array([self.log_lengthscale, self.log_outputscale, self.log_noise])

    @classmethod
    def from_vector(cls, v) -> "KernelParams":
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def to_dict(self) -> dict:
        return {
            "log_lengthscale": self.log_lengthscale,
            "log_outputscale": self.log_outputscale,
            "log_noise": self.log_noise,
        }

    @classmethod
    def from_dict(cls, obj) -> "KernelParams":
        return cls(obj["log_lengthscale"], obj["log_outputscale"], obj["log_noise"])


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def matern52(a, b, lengthscale: float, outputscale: float) -> np.ndarray:
    """Matérn-5/2 covariance matrix between row sets ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    r = np.sqrt(_sqdist(a, b)) / lengthscale
    return outputscale * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def matern_kernel(a, b, params: KernelParams) -> float:
    return float(matern52(a, b, params.lengthscale, params.outputscale)[0, 0])


def log_gamma_prior(x: float, shape=PRIOR_SHAPE, rate=PRIOR_RATE) -> float:
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * math.log(x) - rate * x


class GpState:
    """Training data, hyperparameters and a lazily built Cholesky factor.

    States are treated as immutable: :meth:`with_data` and
    :meth:`with_params` return new objects, so a cached factor can never
    go stale.
    """

    def __init__(self, x, y, params: KernelParams | None = None, prior=(PRIOR_SHAPE, PRIOR_RATE)):
        self.x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self.y = np.asarray(y, dtype=np.float64).ravel()
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("inputs and targets differ in length")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ValueError("non-finite training data")
        self.params = params or KernelParams()
        self.prior = prior
        self._factor = None

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def with_data(self, x, y) -> "GpState":
        return GpState(x, y, self.params, self.prior)

    def with_params(self, params: KernelParams) -> "GpState":
        return GpState(self.x, self.y, params, self.prior)

    def gram(self) -> np.ndarray:
        p = self.params
        return matern52(self.x, self.x, p.lengthscale, p.outputscale)

    def factor(self):
        """``(L, alpha, jitter)`` for ``K + (noise + jitter) I``."""
        if self._factor is None:
            if self.n == 0:
                raise ValueError("GP has no training data")
            kf = self.gram()
            base = kf + self.params.noise * np.eye(self.n)
            # a clean factorisation first, then the jitter ladder
            jitter = 0.0
            while True:
                try:
                    chol = cholesky(base + jitter * np.eye(self.n), lower=True, check_finite=False)
                    break
                except LinAlgError:
                    jitter = JITTER_START if jitter == 0.0 else 10.0 * jitter
                    if jitter > JITTER_MAX * (1 + 1e-9):
                        raise LinAlgError("kernel matrix not positive definite at maximum jitter")
            alpha = cho_solve((chol, True), self.y, check_finite=False)
            self._factor = (chol, alpha, jitter, kf)
        return self._factor[:3]

    def log_prior(self) -> float:
        return log_gamma_prior(self.params.lengthscale, *self.prior)


def _inverse_from_cholesky(chol: np.ndarray) -> np.ndarray:
    inv, info = dpotri(chol, lower=1)
    if info != 0:
        raise LinAlgError(f"matrix inversion failed (info={info})")
    lower = np.tril(inv)
    return lower + np.tril(lower, -1).T


def mll(state: GpState) -> float:
    """Log marginal likelihood plus the lengthscale log-prior."""
    chol, alpha, _ = state.factor()
    n = state.n
    data = -0.5 * state.y @ alpha - np.log(np.diag(chol)).sum() - 0.5 * n * math.log(2 * math.pi)
    value = float(data) + state.log_prior()
    if not math.isfinite(value):
        raise FloatingPointError("non-finite marginal likelihood")
    return value


def mll_and_grad(state: GpState, wrt_inputs: bool = False):
    """Return ``(mll, d mll / d log-params, d mll / d x or None)``."""
    value = mll(state)
    chol, alpha, _ = state.factor()
    kf = state._factor[3]
    p = state.params
    n = state.n
    kinv = _inverse_from_cholesky(chol)
    w = np.outer(alpha, alpha) - kinv

    ell, s = p.lengthscale, p.outputscale
    r = np.sqrt(_sqdist(state.x, state.x)) / ell
    e = np.exp(-SQRT5 * r)
    dk_dlogell = (5.0 / 3.0) * s * r * r * (1.0 + SQRT5 * r) * e
    shape, rate = state.prior
    g = np.empty(3)
    g[0] = 0.5 * np.sum(w * dk_dlogell) + (shape - 1.0) - rate * ell
    g[1] = 0.5 * np.sum(w * kf)
    g[2] = 0.5 * math.exp(p.log_noise) * np.trace(w)

    gx = None
    if wrt_inputs:
        coef = w * (-(5.0 / 3.0) * s / (ell * ell)) * (1.0 + SQRT5 * r) * e
        gx = state.x * coef.sum(1)[:, None] - coef @ state.x
    return value, g, gx


def fit(state: GpState, steps: int = 100, lr: float = 0.05) -> GpState:
    """Adam ascent on the log-hyperparameters."""
    if steps <= 0:
        return state
    theta = state.params.vector()
    opt = AdamState.for_arrays([theta], lr=lr)
    cur = state
    for _ in range(steps):
        _, g, _ = mll_and_grad(cur)
        adam_step([theta], [-g], opt)
        cur = cur.with_params(KernelParams.from_vector(theta))
    mll(cur)
    return cur


def posterior(state: GpState, xq, chunk: int = 8192):
    """Predictive mean and (latent) variance at query rows ``xq``."""
    chol, alpha, _ = state.factor()
    xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
    p = state.params
    mean = np.empty(len(xq))
    var = np.empty(len(xq))
    for start in range(0, len(xq), chunk):
        q = xq[start : start + chunk]
        ks = matern52(q, state.x, p.lengthscale, p.outputscale)
        mean[start : start + chunk] = ks @ alpha
        v = solve_triangular(chol, ks.T, lower=True, check_finite=False)
        var[start : start + chunk] = p.outputscale - (v * v).sum(0)
    return mean, np.maximum(var, 1e-12)
