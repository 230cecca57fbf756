"""Time parameterization of the domain-shift diffusion process.

This module owns everything that is a pure function of time:

* the variance-preserving noise schedule (alpha_t, sigma_t) with
  alpha_t^2 + sigma_t^2 = 1,
* the shifting sequence eta_t that moves the process mean from the
  target domain (eta = 0) to the source domain (eta = 1 at the pivot
  t1 and beyond),
* the monotone reparameterization lambda_t = sigma_t / (alpha_t (1 - eta_t))
  along which the reverse-time solvers are expressed, and
* construction of decreasing solver time grids.

Internally time is continuous on [0, T] with T = 1 by default; an
integer display scale (1000 steps per unit time) is provided for
reporting only.  All objects are immutable after construction and all
evaluations are pure, so they are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    GridError,
    ScheduleConsistencyError,
    SingularTimeError,
    TimeDomainError,
)

__all__ = [
    "NoiseSchedule",
    "ShiftingSequence",
    "DomainShiftSchedule",
    "TimeGrid",
    "make_time_grid",
]

_COSINE_S = 0.008

# Negative g^2 radicand smaller than this magnitude is treated as
# floating-point noise and clamped to zero.
_G2_GUARD = 1e-12

# Fraction of t1 used as the finite stand-in for the pivot when a grid
# is spaced in lambda (lambda diverges at t1 itself).
_PIVOT_CLAMP = 1e-4


def _as_time(t):
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise TimeDomainError("time values must be finite")
    return t


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving noise schedule (alpha_t, sigma_t) on [0, T].

    Two families are supported:

    * ``"linear-beta"``: the instantaneous noise rate grows linearly
      from ``beta_min`` to ``beta_max`` over the horizon, so
      log alpha_t = -0.25 tau^2 (beta_max - beta_min) - 0.5 tau beta_min
      with tau = t / T.  The defaults (0.1, 20.0) are the per-unit-time
      equivalents of the common discrete limits 1e-4 and 2e-2 at a
      1000-step display scale.  They are a stand-in: pretrained
      latent-diffusion backbones do not publish a canonical continuous
      schedule, so treat these constants as configurable.
    * ``"cosine"``: log alpha_t follows a shifted cosine,
      log cos(((tau + s)/(1 + s)) pi/2) normalized to alpha_0 = 1,
      with s = 0.008.

    sigma_t = sqrt(1 - alpha_t^2) in both cases, so the
    variance-preserving identity holds by construction.
    """

    kind: str = "linear-beta"
    T: float = 1.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    display_steps: int = 1000

    def __post_init__(self):
        if self.kind not in ("linear-beta", "cosine"):
            raise ValueError(f"unknown noise schedule kind: {self.kind!r}")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.kind == "linear-beta":
            if self.beta_min < 0 or self.beta_max <= self.beta_min:
                raise ValueError("need 0 <= beta_min < beta_max")

    def _check_domain(self, t):
        t = _as_time(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise TimeDomainError(
                f"t must lie in [0, {self.T}] for this schedule"
            )
        return t

    def log_alpha(self, t):
        t = self._check_domain(t)
        tau = t / self.T
        if self.kind == "linear-beta":
            out = -0.25 * tau**2 * (self.beta_max - self.beta_min) \
                - 0.5 * tau * self.beta_min
        else:
            u = (tau + _COSINE_S) / (1.0 + _COSINE_S)
            out = np.log(np.cos(u * np.pi / 2.0)) - math.log(
                math.cos(_COSINE_S / (1.0 + _COSINE_S) * math.pi / 2.0)
            )
        return out[()]

    def dlog_alpha(self, t):
        """Analytic d(log alpha)/dt."""
        t = self._check_domain(t)
        tau = t / self.T
        if self.kind == "linear-beta":
            out = (-0.5 * tau * (self.beta_max - self.beta_min)
                   - 0.5 * self.beta_min) / self.T
        else:
            u = (tau + _COSINE_S) / (1.0 + _COSINE_S)
            out = -(np.pi / 2.0) * np.tan(u * np.pi / 2.0) \
                / (1.0 + _COSINE_S) / self.T
        return out[()]

    def alpha(self, t):
        return np.exp(self.log_alpha(t))

    def sigma(self, t):
        # 1 - exp(2 log alpha) via expm1 keeps precision near t = 0.
        return np.sqrt(-np.expm1(2.0 * self.log_alpha(t)))

    def eval(self, t):
        """Return the pair (alpha_t, sigma_t)."""
        la = self.log_alpha(t)
        return np.exp(la), np.sqrt(-np.expm1(2.0 * la))

    def dalpha(self, t):
        return self.alpha(t) * self.dlog_alpha(t)

    def dsigma2(self, t):
        """Analytic d(sigma^2)/dt = -2 alpha^2 dlog_alpha."""
        return -2.0 * self.alpha(t) ** 2 * self.dlog_alpha(t)

    def dsigma(self, t):
        """Analytic d(sigma)/dt; only defined where sigma > 0."""
        return self.dsigma2(t) / (2.0 * self.sigma(t))

    def beta(self, t):
        """Instantaneous noise rate -2 dlog_alpha (the classic beta(t))."""
        return -2.0 * self.dlog_alpha(t)

    def display_step(self, t):
        """Map continuous t to the integer display index."""
        t = self._check_domain(t)
        return np.rint(self.display_steps * t / self.T).astype(int)[()]


@dataclass(frozen=True)
class ShiftingSequence:
    """Shift weight eta_t: 0 at t = 0, 1 on [t1, infinity).

    On [0, t1] the weight follows the half-cosine
    eta_t = (1 - cos(pi t / t1)) / 2, which is monotone, continuous,
    and has the exact derivative (pi / (2 t1)) sin(pi t / t1).

    ``t1 = math.inf`` is the degenerate no-shift variant (eta identically
    zero); it exists so the plain variance-preserving process is a
    special case that can be exercised by the same code paths.
    """

    t1: float

    def __post_init__(self):
        if not (self.t1 > 0):
            raise ValueError("t1 must be positive (math.inf for no shift)")

    def eta(self, t):
        t = _as_time(t)
        if np.any(t < 0):
            raise TimeDomainError("t must be nonnegative")
        if math.isinf(self.t1):
            return np.zeros_like(t)[()]
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.minimum(t, self.t1) / self.t1))
        return np.where(t >= self.t1, 1.0, ramp)[()]

    def deta(self, t):
        """Analytic d(eta)/dt (zero beyond t1)."""
        t = _as_time(t)
        if np.any(t < 0):
            raise TimeDomainError("t must be nonnegative")
        if math.isinf(self.t1):
            return np.zeros_like(t)[()]
        slope = (np.pi / (2.0 * self.t1)) * np.sin(np.pi * np.minimum(t, self.t1) / self.t1)
        return np.where(t >= self.t1, 0.0, slope)[()]

    @classmethod
    def none(cls) -> "ShiftingSequence":
        """The degenerate eta = 0 sequence used for reduction tests."""
        return cls(t1=math.inf)


@dataclass(frozen=True)
class DomainShiftSchedule:
    """A noise schedule paired with a shifting sequence.

    Derived quantities:

    * ``mean_scale(t)`` = alpha_t (1 - eta_t), the coefficient of the
      clean target sample in the forward mean,
    * ``shift_scale(t)`` = alpha_t eta_t, the coefficient of the source
      point,
    * ``lam(t)`` = sigma_t / mean_scale(t), finite and strictly
      increasing on [0, t1), diverging at the pivot,
    * the linear-SDE coefficients (f, h, g) of the forward process.
    """

    noise: NoiseSchedule
    shift: ShiftingSequence

    def __post_init__(self):
        if not math.isinf(self.shift.t1) and self.shift.t1 > self.noise.T:
            raise ValueError("t1 must not exceed the horizon T")

    @property
    def T(self) -> float:
        return self.noise.T

    @property
    def t1(self) -> float:
        return self.shift.t1

    # -- pass-throughs ---------------------------------------------------
    def alpha(self, t):
        return self.noise.alpha(t)

    def sigma(self, t):
        return self.noise.sigma(t)

    def eval_noise(self, t):
        return self.noise.eval(t)

    def eta(self, t):
        self.noise._check_domain(t)
        return self.shift.eta(t)

    def deta(self, t):
        self.noise._check_domain(t)
        return self.shift.deta(t)

    # -- derived coefficients ---------------------------------------------
    def mean_scale(self, t):
        """alpha_t (1 - eta_t); zero at and beyond the pivot."""
        return self.noise.alpha(t) * (1.0 - self.eta(t))

    def dmean_scale(self, t):
        return self.noise.dalpha(t) * (1.0 - self.eta(t)) \
            - self.noise.alpha(t) * self.deta(t)

    def shift_scale(self, t):
        """alpha_t eta_t, the source-point coefficient of the mean."""
        return self.noise.alpha(t) * self.eta(t)

    def _check_before_pivot(self, t):
        t = self.noise._check_domain(t)
        if np.any(np.asarray(self.eta(t)) >= 1.0):
            raise SingularTimeError(
                "operation undefined at or beyond the pivot t1 "
                "(eta = 1, lambda diverges); use the pivot-limit path"
            )
        return t

    def lam(self, t):
        """lambda_t = sigma_t / (alpha_t (1 - eta_t)) for t < t1."""
        t = self._check_before_pivot(t)
        return self.noise.sigma(t) / self.mean_scale(t)

    def dlam(self, t):
        """Analytic d(lambda)/dt on (0, t1)."""
        t = self._check_before_pivot(t)
        ms = self.mean_scale(t)
        return (self.noise.dsigma(t) - self.lam(t) * self.dmean_scale(t)) / ms

    def lambda_to_time(self, lam_target):
        """Invert lambda(t) on (0, t1); scalar or 1-D array input."""
        hi = self.t1 * (1.0 - _PIVOT_CLAMP) if not math.isinf(self.t1) \
            else self.T
        lam_hi = self.lam(hi)

        def solve_one(lv):
            if lv <= 0 or lv > lam_hi:
                raise GridError(
                    f"lambda value {lv} outside invertible range (0, {lam_hi}]"
                )
            return brentq(lambda u: self.lam(u) - lv, 0.0, hi, xtol=1e-15,
                          rtol=1e-15)

        arr = np.asarray(lam_target, dtype=np.float64)
        out = np.array([solve_one(v) for v in np.atleast_1d(arr)])
        return out.reshape(arr.shape)[()]

    # -- SDE coefficients ---------------------------------------------------
    def f(self, t):
        """Drift coefficient d log[alpha_t (1 - eta_t)] / dt."""
        t = self._check_before_pivot(t)
        return self.noise.dlog_alpha(t) - self.deta(t) / (1.0 - self.eta(t))

    def h(self, t):
        """Source-point drift coefficient (alpha_t / (1 - eta_t)) deta/dt."""
        t = self._check_before_pivot(t)
        return self.noise.alpha(t) * self.deta(t) / (1.0 - self.eta(t))

    def g2(self, t):
        """Squared diffusion coefficient d(sigma^2)/dt - 2 f sigma^2."""
        t = self._check_before_pivot(t)
        sig2 = -np.expm1(2.0 * self.noise.log_alpha(t))
        val = np.asarray(self.noise.dsigma2(t) - 2.0 * self.f(t) * sig2)
        if np.any(val < -_G2_GUARD):
            raise ScheduleConsistencyError(
                f"negative diffusion radicand {float(np.min(val))}; "
                "the schedule is inconsistent"
            )
        return np.maximum(val, 0.0)[()]

    def g(self, t):
        return np.sqrt(self.g2(t))

    def sde_coefficients(self, t):
        """Return the forward-SDE coefficient triple (f, h, g) at t."""
        return self.f(t), self.h(t), self.g(t)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing solver times, pivot first, t_end last."""

    times: np.ndarray = field(repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        if times.ndim != 1 or times.size < 2:
            raise GridError("a grid needs at least two times")
        if np.any(np.diff(times) >= 0):
            raise GridError("grid times must be strictly decreasing")
        if times[-1] <= 0:
            raise GridError("the terminal time must be positive")
        object.__setattr__(self, "times", times)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def __iter__(self):
        return iter(self.times)


def make_time_grid(sched: DomainShiftSchedule, n_steps: int, t_end: float,
                   spacing: str = "uniform-t",
                   t_start: float | None = None) -> TimeGrid:
    """Build a decreasing grid of ``n_steps + 1`` times.

    The grid runs from ``t_start`` (the schedule pivot t1 by default)
    down to ``t_end``.  Two spacings are available:

    * ``"uniform-t"``: equal steps in t (default),
    * ``"uniform-lambda"``: nodes equispaced in log lambda, so the
      lambda increments grow toward the pivot where lambda diverges.
      Because lambda(t1) is infinite, the pivot's lambda target is
      evaluated at (1 - 1e-4) t1; the first grid entry is still t1
      itself and the solvers handle it through the pivot-limit path.

    The paper-scale protocol never fixes a spacing, so both are kept
    and compared by the harness.
    """
    if n_steps < 1:
        raise GridError("n_steps must be >= 1")
    if t_start is None:
        t_start = sched.t1
    if math.isinf(t_start):
        raise GridError("grids need a finite start; give t_start explicitly")
    if not (0 < t_end < t_start):
        raise GridError("need 0 < t_end < start time")

    if spacing == "uniform-t":
        times = np.linspace(t_start, t_end, n_steps + 1)
    elif spacing == "uniform-lambda":
        # Surrogate for the (infinite) lambda at an exact-pivot start.
        lo_t = min(t_start, sched.t1 * (1.0 - _PIVOT_CLAMP))
        lam_hi = float(sched.lam(lo_t))
        lam_lo = float(sched.lam(t_end))
        lam_nodes = np.exp(np.linspace(math.log(lam_hi), math.log(lam_lo),
                                       n_steps + 1))
        interior = sched.lambda_to_time(lam_nodes[1:])
        times = np.concatenate(([t_start], np.atleast_1d(interior)))
    else:
        raise GridError(f"unknown spacing {spacing!r}")
    return TimeGrid(times=times)
