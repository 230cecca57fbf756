"""Reverse-time solvers for the domain-shift SDE.

Each solver step moves the state from a source time s down to a target
time t < s and is the sum of four named components:

* linear term: contraction of the current state,
* shift guidance: the source-point injection that distinguishes this
  process from a plain variance-preserving reverse step,
* prediction term: the integrated contribution of the data predictor,
  approximated at order 1, 2 or 3 in the reparameterization lambda,
* noise term: a fresh Gaussian draw with the exact conditional std.

At the pivot start (s = t1, where lambda diverges) every coefficient is
replaced by its exact analytic limit; no clamping is involved.  A
clamped evaluation (eta_s = 1 - 1e-8) exists in the test-suite purely
as a cross-check of those limits.

The module also provides a quadrature oracle that evaluates the exact
solution of the reverse SDE (its deterministic part) to high accuracy,
and a plain Euler-Maruyama reverse integrator used as a model-agnostic
reference sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GridError, QuadratureError, SingularTimeError
from .prediction import Predictor, data_to_score
from .schedule import DomainShiftSchedule, TimeGrid
from .state import as_batch, match_source

__all__ = [
    "SolverConfig",
    "SolverState",
    "init_state",
    "dosg_term",
    "step_order1",
    "step_order2",
    "step_order3",
    "sample",
    "exact_step_quadrature",
    "euler_maruyama_reverse",
    "CountingPredictor",
    "StepTrace",
]


# ---------------------------------------------------------------------------
# Configuration and per-run state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    """Reverse-solve configuration.

    ``final_output`` selects what a run returns: ``"data_prediction"``
    (default) returns the predictor's clean-sample estimate made during
    the final step, which keeps the number of predictor calls equal to
    the step count; ``"state"`` returns the terminal state itself,
    noise included.
    """

    order: int
    grid: TimeGrid
    seed: int = 0
    final_output: str = "data_prediction"

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")
        if self.final_output not in ("data_prediction", "state"):
            raise ValueError("final_output must be 'data_prediction' or 'state'")


@dataclass
class SolverState:
    """State threaded through a multi-step solve.

    ``prev_data`` holds the predictor output of the previous step and
    ``prev_lam`` the lambda it was evaluated at (None when that point
    was the pivot, where lambda is infinite, so the difference quotient
    is unavailable).  ``prev_diff`` and ``prev_diff_lam_lo`` hold the
    previous first-derivative estimate and the lambda of its older node,
    needed by the third-order correction.
    """

    x: np.ndarray
    t: float
    prev_data: np.ndarray | None = None
    prev_lam: float | None = None
    prev_diff: np.ndarray | None = None
    prev_diff_lam_lo: float | None = None


@dataclass(frozen=True)
class StepTrace:
    """Per-step record: target time, lambda there, component norms."""

    step: int
    t: float
    lam: float
    linear_norm: float
    dosg_norm: float
    pat_norm: float
    noise_norm: float


class CountingPredictor(Predictor):
    """Wrapper that counts predictor invocations (the NFE meter)."""

    def __init__(self, inner: Predictor):
        super().__init__(inner.schedule)
        self.inner = inner
        self.calls = 0

    def predict_noise(self, x_t, xhat0, t):
        self.calls += 1
        return self.inner.predict_noise(x_t, xhat0, t)

    def predict_data(self, x_t, xhat0, t):
        self.calls += 1
        return self.inner.predict_data(x_t, xhat0, t)


# ---------------------------------------------------------------------------
# Step coefficients, with the exact pivot limits
# ---------------------------------------------------------------------------

def _at_pivot(sched: DomainShiftSchedule, s: float) -> bool:
    return bool(np.asarray(sched.eta(s)) >= 1.0)


def _order1_coeffs(sched: DomainShiftSchedule, s: float, t: float):
    """(linear, dosg, pat, noise_std) coefficients for a step s -> t.

    At the pivot start all lambda_t^2 / lambda_s^2 factors vanish in the
    limit: the linear coefficient is 0, the guidance becomes
    alpha_t eta_t, the prediction coefficient alpha_t (1 - eta_t), and
    the noise std sigma_t exactly.
    """
    if not t < s:
        raise ValueError("step requires t < s")
    ms_t = sched.mean_scale(t)
    if _at_pivot(sched, t):
        raise SingularTimeError("step target must lie strictly below the pivot")
    if _at_pivot(sched, s):
        return 0.0, float(sched.shift_scale(t)), float(ms_t), \
            float(sched.sigma(t))
    lam_s = sched.lam(s)
    lam_t = sched.lam(t)
    rho = (lam_t / lam_s) ** 2
    eta_s = sched.eta(s)
    linear = ms_t / sched.mean_scale(s) * rho
    dosg = sched.shift_scale(t) - ms_t * (eta_s / (1.0 - eta_s)) * rho
    pat = ms_t * (1.0 - rho)
    noise_std = sched.sigma(t) * math.sqrt(max(1.0 - rho, 0.0))
    return float(linear), float(dosg), float(pat), float(noise_std)


def dosg_term(t: float, s_from: float, xhat0, sched: DomainShiftSchedule,
              n: int | None = None) -> np.ndarray:
    """Shift-guidance component of a step from s_from down to t.

    alpha_t (1 - eta_t) (eta_t / (1 - eta_t)
        - (eta_s / (1 - eta_s)) lambda_t^2 / lambda_s^2) * xhat0,

    with the exact limit alpha_t eta_t * xhat0 when s_from is the pivot.
    Identically zero whenever the shift is degenerate (eta = 0).
    """
    if not 0 < t < s_from:
        raise ValueError("need 0 < t < s_from")
    _, dosg, _, _ = _order1_coeffs(sched, s_from, t)
    xhat0 = np.asarray(xhat0, dtype=np.float64)
    if xhat0.ndim == 1 and n is not None:
        xhat0 = np.broadcast_to(xhat0, (n, xhat0.size))
    return dosg * xhat0


def _diff_coeff(sched: DomainShiftSchedule, s: float, t: float) -> float:
    """Coefficient of the first-derivative correction: -(lam_t-lam_s)^2/lam_s
    scaled by alpha_t (1 - eta_t)."""
    lam_s, lam_t = sched.lam(s), sched.lam(t)
    return float(-sched.mean_scale(t) * (lam_t - lam_s) ** 2 / lam_s)


def _curv_coeff(sched: DomainShiftSchedule, s: float, t: float) -> float:
    """Coefficient of the second-derivative correction:
    (lam_s - 3 lam_t)(lam_s - lam_t)/2 - lam_t^2 ln(lam_t/lam_s),
    scaled by alpha_t (1 - eta_t).  Vanishes as t -> s."""
    lam_s, lam_t = sched.lam(s), sched.lam(t)
    bracket = (lam_s - 3.0 * lam_t) * (lam_s - lam_t) / 2.0 \
        - lam_t**2 * math.log(lam_t / lam_s)
    return float(sched.mean_scale(t) * bracket)


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------

def _core_step(state: SolverState, t: float, order: int,
               predictor: Predictor, xhat0, sched: DomainShiftSchedule,
               rng: np.random.Generator | None, *, add_noise: bool = True,
               data_pred: np.ndarray | None = None):
    """Shared body of the order-1/2/3 steps.

    Returns (x_t, new_state, terms, data_pred).  Higher-order
    corrections fall back gracefully whenever a difference buffer is
    unavailable, which covers both the run start and steps whose
    previous node was the pivot (lambda infinite).
    """
    s = state.t
    x_s = as_batch(state.x, "state.x")
    xhat0 = match_source(x_s, xhat0, "xhat0")
    linear_c, dosg_c, pat_c, noise_std = _order1_coeffs(sched, s, t)

    if data_pred is None:
        data_pred = predictor.predict_data(x_s, xhat0, s)
    m_s = as_batch(data_pred, "data_pred")
    lam_s = None if _at_pivot(sched, s) else float(sched.lam(s))

    pat = pat_c * m_s
    diff = None
    if order >= 2 and lam_s is not None and state.prev_lam is not None:
        denom = lam_s - state.prev_lam
        if denom == 0.0:
            raise GridError("degenerate lambda spacing in derivative estimate")
        diff = (m_s - state.prev_data) / denom
        pat = pat + _diff_coeff(sched, s, t) * diff
        if order >= 3 and state.prev_diff is not None:
            half_span = (lam_s - state.prev_diff_lam_lo) / 2.0
            if half_span == 0.0:
                raise GridError("degenerate lambda spacing in curvature estimate")
            curv = (diff - state.prev_diff) / half_span
            pat = pat + _curv_coeff(sched, s, t) * curv

    terms = {
        "linear": linear_c * x_s,
        "dosg": dosg_c * xhat0 * np.ones_like(x_s),
        "pat": pat,
    }
    if add_noise:
        if rng is None:
            raise ValueError("rng required when add_noise is true")
        terms["noise"] = noise_std * rng.standard_normal(x_s.shape)
    else:
        terms["noise"] = np.zeros_like(x_s)
    x_t = terms["linear"] + terms["dosg"] + terms["pat"] + terms["noise"]

    new_state = SolverState(
        x=x_t, t=t,
        prev_data=m_s, prev_lam=lam_s,
        prev_diff=diff,
        prev_diff_lam_lo=state.prev_lam if diff is not None else None,
    )
    return x_t, new_state, terms, m_s


def step_order1(x_s, s_from: float, t: float, predictor: Predictor, xhat0,
                sched: DomainShiftSchedule,
                rng: np.random.Generator | None, *,
                add_noise: bool = True, return_terms: bool = False):
    """First-order step from (x_s, s_from) to t < s_from."""
    state = SolverState(x=as_batch(x_s, "x_s"), t=s_from)
    x_t, _, terms, _ = _core_step(state, t, 1, predictor, xhat0, sched, rng,
                                  add_noise=add_noise)
    return (x_t, terms) if return_terms else x_t


def step_order2(state: SolverState, t: float, predictor: Predictor, xhat0,
                sched: DomainShiftSchedule,
                rng: np.random.Generator | None, *,
                add_noise: bool = True):
    """Second-order step; first-order form when no derivative buffer exists.

    Returns (x_t, updated state)."""
    x_t, new_state, _, _ = _core_step(state, t, 2, predictor, xhat0, sched,
                                      rng, add_noise=add_noise)
    return x_t, new_state


def step_order3(state: SolverState, t: float, predictor: Predictor, xhat0,
                sched: DomainShiftSchedule,
                rng: np.random.Generator | None, *,
                add_noise: bool = True):
    """Third-order step; degrades to order 2 then 1 while buffers fill.

    Returns (x_t, updated state)."""
    x_t, new_state, _, _ = _core_step(state, t, 3, predictor, xhat0, sched,
                                      rng, add_noise=add_noise)
    return x_t, new_state


# ---------------------------------------------------------------------------
# Multi-step driver
# ---------------------------------------------------------------------------

def init_state(xhat0, t1: float, sched: DomainShiftSchedule,
               rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw the reverse start state alpha_t1 * xhat0 + sigma_t1 * eps."""
    xhat0 = np.asarray(xhat0, dtype=np.float64)
    if xhat0.ndim == 1:
        rows = n if n is not None else 1
        xhat0 = np.broadcast_to(xhat0, (rows, xhat0.size))
    xhat0 = as_batch(xhat0, "xhat0")
    alpha, sigma = sched.eval_noise(t1)
    return alpha * xhat0 + sigma * rng.standard_normal(xhat0.shape)


def sample(predictor: Predictor, xhat0, cfg: SolverConfig,
           sched: DomainShiftSchedule, *,
           rng: np.random.Generator | None = None,
           n: int | None = None,
           trace: list[StepTrace] | None = None) -> np.ndarray:
    """Run a full reverse solve and return the configured output.

    The predictor is evaluated exactly once per step (at the step's
    source time); with ``final_output="data_prediction"`` the run
    returns the evaluation made during the final step, so the predictor
    call count always equals ``cfg.grid.n_steps``.  Fixed seeds give
    bit-identical outputs.
    """
    times = cfg.grid.times
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    x = init_state(xhat0, float(times[0]), sched, rng, n=n)
    xhat0_b = match_source(x, xhat0, "xhat0")

    state = SolverState(x=x, t=float(times[0]))
    m_last = None
    for k in range(cfg.grid.n_steps):
        t_next = float(times[k + 1])
        last = k == cfg.grid.n_steps - 1
        add_noise = not (last and cfg.final_output == "data_prediction")
        x, state, terms, m_last = _core_step(
            state, t_next, cfg.order, predictor, xhat0_b, sched, rng,
            add_noise=add_noise,
        )
        if trace is not None:
            trace.append(StepTrace(
                step=k + 1,
                t=t_next,
                lam=float(sched.lam(t_next)),
                linear_norm=float(np.linalg.norm(terms["linear"])),
                dosg_norm=float(np.linalg.norm(terms["dosg"])),
                pat_norm=float(np.linalg.norm(terms["pat"])),
                noise_norm=float(np.linalg.norm(terms["noise"])),
            ))
    if cfg.final_output == "data_prediction":
        return m_last
    return x


# ---------------------------------------------------------------------------
# Quadrature oracle for the exact solution (deterministic part)
# ---------------------------------------------------------------------------

def _deterministic_path(x_s, s: float, t: float, predictor: Predictor,
                        xhat0, sched: DomainShiftSchedule, n_nodes: int):
    """Zero-noise reverse path on a uniform time grid from s down to t.

    Integrated with classical RK4; returns (times, states) where states
    has shape (n_nodes, n, d).
    """
    times = np.linspace(s, t, n_nodes)
    x = as_batch(x_s, "x_s").copy()
    out = np.empty((n_nodes,) + x.shape)
    out[0] = x

    def drift(xv, tv):
        f, h, g = sched.sde_coefficients(tv)
        score = data_to_score(predictor.predict_data(xv, xhat0, tv), xv,
                              xhat0, tv, sched)
        return f * xv + h * xhat0 - g**2 * score

    for k in range(n_nodes - 1):
        t0, t1_ = times[k], times[k + 1]
        dtau = t1_ - t0
        k1 = drift(x, t0)
        k2 = drift(x + 0.5 * dtau * k1, 0.5 * (t0 + t1_))
        k3 = drift(x + 0.5 * dtau * k2, 0.5 * (t0 + t1_))
        k4 = drift(x + dtau * k3, t1_)
        x = x + dtau / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return times, out


def _simpson(values: np.ndarray, dx: float) -> np.ndarray:
    """Composite Simpson along axis 0 (odd number of equispaced nodes)."""
    n = values.shape[0]
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson needs an odd node count >= 3")
    weights = np.ones(n)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return dx / 3.0 * np.tensordot(weights, values, axes=(0, 0))


def exact_step_quadrature(x_s, s_from: float, t: float,
                          predictor: Predictor, xhat0,
                          sched: DomainShiftSchedule, *,
                          quad_points: int = 256, tol: float = 1e-10,
                          max_doublings: int = 8):
    """Evaluate the exact one-step solution by adaptive quadrature.

    The deterministic part is

        linear + guidance
        - alpha_t (1 - eta_t) * int_{lam_s}^{lam_t} (2 lam_t^2 / lam^3)
              x_pred(x_lam, lam) d lam,

    with the predictor evaluated along the finely integrated zero-noise
    path.  The node count doubles until the result changes by less than
    ``tol`` in relative terms; the noise std of the full solution is
    returned separately (the step itself is not randomized here).

    Returns (deterministic_part, noise_std).
    """
    if quad_points < 64:
        raise ValueError("quad_points must be >= 64")
    if not 0 < t < s_from:
        raise ValueError("need 0 < t < s_from")
    if _at_pivot(sched, s_from):
        raise SingularTimeError("quadrature oracle needs a finite lambda start")
    x_s = as_batch(x_s, "x_s")
    xhat0 = match_source(x_s, xhat0, "xhat0")

    linear_c, dosg_c, _, noise_std = _order1_coeffs(sched, s_from, t)
    lam_t = float(sched.lam(t))
    ms_t = float(sched.mean_scale(t))

    def evaluate(n_nodes: int) -> np.ndarray:
        times, path = _deterministic_path(x_s, s_from, t, predictor, xhat0,
                                          sched, n_nodes)
        lam = np.asarray(sched.lam(times))
        dlam = np.asarray(sched.dlam(times))
        preds = np.stack([
            predictor.predict_data(path[k], xhat0, times[k])
            for k in range(n_nodes)
        ])
        weight = 2.0 * lam_t**2 / lam**3 * dlam
        integrand = weight[:, None, None] * preds
        integral = _simpson(integrand, float(times[1] - times[0]))
        return linear_c * x_s + dosg_c * xhat0 - ms_t * integral

    n_nodes = quad_points + 1 if quad_points % 2 == 0 else quad_points
    prev = evaluate(n_nodes)
    for _ in range(max_doublings):
        n_nodes = 2 * (n_nodes - 1) + 1
        cur = evaluate(n_nodes)
        change = np.max(np.abs(cur - prev)) / (1.0 + np.max(np.abs(cur)))
        if change < tol:
            return cur, noise_std
        prev = cur
    raise QuadratureError(
        f"quadrature did not converge below {tol} within the refinement budget"
    )


# ---------------------------------------------------------------------------
# Euler-Maruyama reverse reference integrator
# ---------------------------------------------------------------------------

def euler_maruyama_reverse(predictor: Predictor, xhat0, grid_times,
                           sched: DomainShiftSchedule,
                           rng: np.random.Generator, *,
                           x_start=None, init_moments=None, n: int = 1,
                           with_noise: bool = True,
                           score_fn=None) -> np.ndarray:
    """Integrate the reverse-time SDE directly on a fine decreasing grid.

    Per step (dt = t_k - t_{k+1} > 0):

        x <- x - (f x + h xhat0 - g^2 score) dt + g sqrt(dt) z.

    The start state is ``x_start`` if supplied, otherwise a Gaussian
    draw from ``init_moments = (mean, var_diag)`` at the first grid
    time.  ``score_fn(x, t)`` overrides the predictor-derived score
    (used by degenerate-input tests).  This is the model-agnostic
    reference sampler: slow, first-order, but assumption-free.
    """
    grid = np.asarray(grid_times, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) >= 0):
        raise GridError("grid_times must be strictly decreasing")
    if np.any(np.asarray(sched.eta(grid)) >= 1.0):
        raise SingularTimeError(
            "reverse integration grid touches the eta = 1 singularity"
        )

    if x_start is not None:
        x = as_batch(x_start, "x_start").copy()
    elif init_moments is not None:
        mean, var = init_moments
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        std = np.sqrt(np.atleast_1d(np.asarray(var, dtype=np.float64)))
        x = mean + std * rng.standard_normal((n, mean.size))
    else:
        raise ValueError("supply x_start or init_moments")
    xhat0 = match_source(x, xhat0, "xhat0")

    for k in range(grid.size - 1):
        t = float(grid[k])
        dt = t - float(grid[k + 1])
        f, h, g = sched.sde_coefficients(t)
        if score_fn is not None:
            score = score_fn(x, t)
        else:
            score = data_to_score(predictor.predict_data(x, xhat0, t), x,
                                  xhat0, t, sched)
        x = x - (f * x + h * xhat0 - g**2 * score) * dt
        if with_noise:
            x = x + g * math.sqrt(dt) * rng.standard_normal(x.shape)
    return x
