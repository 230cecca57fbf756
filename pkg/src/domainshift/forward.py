"""Forward domain-shift diffusion.

The forward process interpolates the mean from the clean target sample
x0 toward a source point xhat0 while adding variance-preserving noise:

    x_t = alpha_t (eta_t xhat0 + (1 - eta_t) x0) + sigma_t eps,
    eps ~ N(0, I).

This module implements the mean interpolation, marginal and transition
sampling, an Euler-Maruyama simulation of the equivalent SDE, training
pairs for noise-prediction models, and the closed-form marginal moments
of a diagonal-Gaussian target, which serve as the main analytic oracle
throughout the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularTimeError
from .schedule import DomainShiftSchedule
from .state import as_batch, match_source

__all__ = [
    "GaussianSpec",
    "domain_shift_mean",
    "sample_marginal",
    "training_pair",
    "sample_transition",
    "euler_maruyama_forward",
    "marginal_moments",
]


@dataclass(frozen=True)
class GaussianSpec:
    """Diagonal Gaussian target distribution N(mean, diag(cov_diag)).

    Diagonal covariance keeps every oracle coordinatewise closed-form,
    which is all the verification story needs.
    """

    mean: np.ndarray
    cov_diag: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_1d(np.asarray(self.cov_diag, dtype=np.float64))
        if mean.ndim != 1 or cov.shape != mean.shape:
            raise ValueError("mean and cov_diag must be matching 1-D arrays")
        if np.any(cov <= 0):
            raise ValueError("cov_diag entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_diag", cov)

    @property
    def d(self) -> int:
        return self.mean.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.sqrt(self.cov_diag) * rng.standard_normal((n, self.d))


def domain_shift_mean(x0, xhat0, eta: float) -> np.ndarray:
    """Interpolated mean eta * xhat0 + (1 - eta) * x0.

    eta = 0 returns x0 exactly; eta = 1 returns xhat0 exactly.
    """
    x0 = as_batch(x0, "x0")
    xhat0 = match_source(x0, xhat0, "xhat0")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    return eta * xhat0 + (1.0 - eta) * x0


def sample_marginal(x0, xhat0, t: float, sched: DomainShiftSchedule,
                    rng: np.random.Generator):
    """Draw x_t from the forward marginal; returns (x_t, eps).

    The drawn standard-normal eps is returned alongside x_t because it
    is the regression target of the noise-prediction objective.
    """
    x0 = as_batch(x0, "x0")
    xhat0 = match_source(x0, xhat0, "xhat0")
    alpha, sigma = sched.eval_noise(t)
    eta = sched.eta(t)
    eps = rng.standard_normal(x0.shape)
    x_t = alpha * (eta * xhat0 + (1.0 - eta) * x0) + sigma * eps
    return x_t, eps


def training_pair(x0, xhat0, t: float, sched: DomainShiftSchedule,
                  rng: np.random.Generator):
    """Training pair (x_t, eps_target) for the noise-matching objective.

    Identical sampling to :func:`sample_marginal`; the second element is
    the noise the predictor must regress onto.
    """
    return sample_marginal(x0, xhat0, t, sched, rng)


def sample_transition(x_prev, x0, xhat0, t_prev: float, t: float,
                      sched: DomainShiftSchedule,
                      rng: np.random.Generator) -> np.ndarray:
    """One forward transition from time t_prev to t > t_prev.

    x_t = (alpha_t/alpha_prev) x_prev
          + alpha_t (eta_t - eta_prev) (xhat0 - x0)
          + sqrt(1 - alpha_t^2 / alpha_prev^2) z,   z ~ N(0, I).

    Composing transitions along any increasing grid reproduces the
    marginal of :func:`sample_marginal` exactly in distribution.
    t == t_prev is the degenerate identity step.
    """
    if t < t_prev:
        raise ValueError("transition requires t >= t_prev")
    x_prev = as_batch(x_prev, "x_prev")
    x0 = as_batch(x0, "x0")
    if x0.shape != x_prev.shape:
        raise ValueError("x0 shape must match x_prev")
    xhat0 = match_source(x_prev, xhat0, "xhat0")
    a_prev = sched.alpha(t_prev)
    a_t = sched.alpha(t)
    ratio = a_t / a_prev
    shift = a_t * (sched.eta(t) - sched.eta(t_prev)) * (xhat0 - x0)
    std = np.sqrt(max(1.0 - ratio**2, 0.0))
    z = rng.standard_normal(x_prev.shape)
    return ratio * x_prev + shift + std * z


def euler_maruyama_forward(x0, xhat0, grid_times, sched: DomainShiftSchedule,
                           rng: np.random.Generator, *,
                           with_noise: bool = True,
                           x_start=None) -> np.ndarray:
    """Simulate the forward SDE along an increasing time grid.

    Per step: x <- x + (f x + h xhat0) dt + g sqrt(dt) z.

    The trajectory starts from ``x_start`` if given, otherwise from a
    marginal draw at ``grid_times[0]`` (or the marginal mean when
    ``with_noise`` is false, so the zero-noise variant follows the mean
    ODE).  Returns an array of shape (len(grid), n, d).
    """
    x0 = as_batch(x0, "x0")
    xhat0 = match_source(x0, xhat0, "xhat0")
    grid = np.asarray(grid_times, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid_times must be strictly increasing")
    if np.any(np.asarray(sched.eta(grid)) >= 1.0):
        raise SingularTimeError(
            "forward simulation grid touches the eta = 1 region where the "
            "SDE coefficients are singular"
        )

    if x_start is not None:
        x = as_batch(x_start, "x_start").copy()
    elif with_noise:
        x, _ = sample_marginal(x0, xhat0, grid[0], sched, rng)
    else:
        eta0 = sched.eta(grid[0])
        x = sched.alpha(grid[0]) * (eta0 * xhat0 + (1.0 - eta0) * x0) \
            * np.ones_like(x0)

    out = np.empty((grid.size,) + x.shape)
    out[0] = x
    for k in range(grid.size - 1):
        t = grid[k]
        dt = grid[k + 1] - t
        f, h, g = sched.sde_coefficients(t)
        x = x + (f * x + h * xhat0) * dt
        if with_noise:
            x = x + g * np.sqrt(dt) * rng.standard_normal(x.shape)
        out[k + 1] = x
    return out


def marginal_moments(q0: GaussianSpec, xhat0, t: float,
                     sched: DomainShiftSchedule):
    """Closed-form marginal mean and diagonal variance for a Gaussian target.

    mean = alpha_t (eta_t xhat0 + (1 - eta_t) mu0)
    var  = alpha_t^2 (1 - eta_t)^2 cov_diag + sigma_t^2
    """
    xhat0 = np.asarray(xhat0, dtype=np.float64)
    if xhat0.shape != q0.mean.shape:
        raise ValueError("xhat0 must match the target dimension")
    alpha, sigma = sched.eval_noise(t)
    eta = sched.eta(t)
    mean = alpha * (eta * xhat0 + (1.0 - eta) * q0.mean)
    var = (alpha * (1.0 - eta)) ** 2 * q0.cov_diag + sigma**2
    return mean, var
