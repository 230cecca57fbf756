"""Prediction interfaces, conversions, and a trainable toy predictor.

Three equivalent parameterizations of the same object are used
throughout: the noise estimate eps_hat, the data estimate x_pred of the
clean target sample, and the score of the forward marginal.  Their
closed-form conversions are implemented here, together with

* an analytic Gaussian test problem whose exact posterior mean is the
  best possible data predictor (the main solver oracle), and
* a small two-hidden-layer MLP noise predictor trained with exact
  hand-derived reverse-mode gradients, standing in for a full-scale
  network.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularTimeError, TrainingError
from .forward import GaussianSpec, marginal_moments, training_pair
from .schedule import DomainShiftSchedule
from .state import as_batch, match_source

__all__ = [
    "noise_to_data",
    "data_to_noise",
    "data_to_score",
    "noise_loss",
    "Predictor",
    "DataPredictor",
    "GaussianTask",
    "oracle_data_prediction",
    "GaussianOraclePredictor",
    "ZeroPredictor",
    "TinyMLP",
    "MLPPredictor",
    "TrainConfig",
    "TrainHistory",
    "train_noise_predictor",
    "save_predictor",
    "load_predictor",
]


# ---------------------------------------------------------------------------
# Conversions between the three prediction parameterizations
# ---------------------------------------------------------------------------

def _coeffs(sched: DomainShiftSchedule, t: float):
    """(a, b, sigma) with forward mean a * x0 + b * xhat0."""
    alpha, sigma = sched.eval_noise(t)
    eta = sched.eta(t)
    return alpha * (1.0 - eta), alpha * eta, sigma


def noise_to_data(eps_hat, x_t, xhat0, t: float,
                  sched: DomainShiftSchedule) -> np.ndarray:
    """Invert the marginal construction: data estimate from a noise estimate.

    x_pred = (x_t - alpha_t eta_t xhat0 - sigma_t eps_hat)
             / (alpha_t (1 - eta_t))

    Undefined at and beyond the pivot, where the data coefficient is zero.
    """
    x_t = as_batch(x_t, "x_t")
    eps_hat = as_batch(eps_hat, "eps_hat")
    xhat0 = match_source(x_t, xhat0, "xhat0")
    a, b, sigma = _coeffs(sched, t)
    if a <= 0.0:
        raise SingularTimeError(
            "data prediction undefined at or beyond the pivot (eta = 1)"
        )
    return (x_t - b * xhat0 - sigma * eps_hat) / a


def data_to_noise(x_pred, x_t, xhat0, t: float,
                  sched: DomainShiftSchedule) -> np.ndarray:
    """Noise estimate implied by a data estimate; needs sigma_t > 0."""
    x_t = as_batch(x_t, "x_t")
    x_pred = as_batch(x_pred, "x_pred")
    xhat0 = match_source(x_t, xhat0, "xhat0")
    a, b, sigma = _coeffs(sched, t)
    if sigma <= 0.0:
        raise SingularTimeError("noise conversion undefined where sigma = 0")
    return (x_t - a * x_pred - b * xhat0) / sigma


def data_to_score(x_pred, x_t, xhat0, t: float,
                  sched: DomainShiftSchedule) -> np.ndarray:
    """Score of the forward marginal implied by a data estimate.

    score = -(x_t - a x_pred - b xhat0) / sigma_t^2, which equals
    -eps_hat / sigma_t for the matching noise estimate.
    """
    x_t = as_batch(x_t, "x_t")
    x_pred = as_batch(x_pred, "x_pred")
    xhat0 = match_source(x_t, xhat0, "xhat0")
    a, b, sigma = _coeffs(sched, t)
    if sigma <= 0.0:
        raise SingularTimeError("score undefined where sigma = 0")
    return -(x_t - a * x_pred - b * xhat0) / sigma**2


def noise_loss(eps_hat, eps_target) -> float:
    """Noise-matching objective: mean Euclidean norm of the residual."""
    eps_hat = as_batch(eps_hat, "eps_hat")
    eps_target = as_batch(eps_target, "eps_target")
    if eps_hat.shape != eps_target.shape:
        raise ValueError("prediction and target shapes differ")
    return float(np.mean(np.linalg.norm(eps_hat - eps_target, axis=1)))


# ---------------------------------------------------------------------------
# Predictor interfaces
# ---------------------------------------------------------------------------

class Predictor(ABC):
    """A conditional predictor eps_hat(x_t, xhat0, t).

    Subclasses implement :meth:`predict_noise`; the data-space view is
    derived through the closed-form conversion by default and may be
    overridden where a direct estimate exists.  Predictors are immutable
    after construction and both methods are pure, so instances may be
    shared freely across threads.
    """

    def __init__(self, schedule: DomainShiftSchedule):
        self.schedule = schedule

    @abstractmethod
    def predict_noise(self, x_t, xhat0, t) -> np.ndarray:
        """Estimate the forward noise; output shape equals x_t's."""

    def predict_data(self, x_t, xhat0, t) -> np.ndarray:
        """Estimate the clean target sample (default: via conversion)."""
        eps_hat = self.predict_noise(x_t, xhat0, t)
        return noise_to_data(eps_hat, x_t, xhat0, t, self.schedule)


class DataPredictor(Predictor):
    """Base for predictors that natively estimate the clean sample."""

    @abstractmethod
    def predict_data(self, x_t, xhat0, t) -> np.ndarray:
        ...

    def predict_noise(self, x_t, xhat0, t) -> np.ndarray:
        x_pred = self.predict_data(x_t, xhat0, t)
        return data_to_noise(x_pred, x_t, xhat0, t, self.schedule)


class ZeroPredictor(Predictor):
    """Predicts zero noise everywhere; the loss baseline."""

    def predict_noise(self, x_t, xhat0, t) -> np.ndarray:
        return np.zeros_like(as_batch(x_t, "x_t"))


# ---------------------------------------------------------------------------
# Analytic Gaussian task and its exact posterior-mean predictor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianTask:
    """Fully analytic test problem: Gaussian target, fixed source point.

    Everything about this task is closed-form: marginal moments, the
    marginal score, and the posterior mean of the clean sample given a
    noisy observation, which is the optimal data predictor.
    """

    q0: GaussianSpec
    xhat0: np.ndarray
    schedule: DomainShiftSchedule

    def __post_init__(self):
        xhat0 = np.atleast_1d(np.asarray(self.xhat0, dtype=np.float64))
        if xhat0.shape != self.q0.mean.shape:
            raise ValueError("xhat0 must match the target dimension")
        object.__setattr__(self, "xhat0", xhat0)

    @property
    def d(self) -> int:
        return self.q0.d

    def moments(self, t: float):
        return marginal_moments(self.q0, self.xhat0, t, self.schedule)

    def score(self, x_t, t: float) -> np.ndarray:
        """Exact marginal score -(x - mean_t) / var_t."""
        x_t = as_batch(x_t, "x_t")
        mean, var = self.moments(t)
        return -(x_t - mean) / var

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.q0.sample(n, rng)


def oracle_data_prediction(task: GaussianTask, x_t, t: float) -> np.ndarray:
    """Exact coordinatewise posterior mean of x0 given x_t for the task.

    With a = alpha_t (1 - eta_t), b = alpha_t eta_t xhat0 and prior
    N(mu0, c):

        E[x0 | x_t] = mu0 + c a / (a^2 c + sigma_t^2) (x_t - b - a mu0)

    The expression is continuous through a -> 0, where it returns mu0
    (the observation carries no information there), so the pivot itself
    is allowed; times beyond it are not.
    """
    x_t = as_batch(x_t, "x_t")
    sched = task.schedule
    if t > sched.t1:
        raise SingularTimeError("oracle prediction undefined beyond the pivot")
    a, b_scale, sigma = _coeffs(sched, t)
    b = b_scale * task.xhat0
    c = task.q0.cov_diag
    gain = c * a / (a**2 * c + sigma**2)
    return task.q0.mean + gain * (x_t - b - a * task.q0.mean)


class GaussianOraclePredictor(DataPredictor):
    """Posterior-mean predictor for the analytic Gaussian task."""

    def __init__(self, task: GaussianTask):
        super().__init__(task.schedule)
        self.task = task

    def predict_data(self, x_t, xhat0, t) -> np.ndarray:
        return oracle_data_prediction(self.task, x_t, t)


# ---------------------------------------------------------------------------
# Tiny MLP noise predictor with hand-derived reverse-mode gradients
# ---------------------------------------------------------------------------

class TinyMLP:
    """Two-hidden-layer tanh MLP mapping (x_t, xhat0, time features) to eps_hat.

    The input is the concatenation of x_t, xhat0 and a sinusoidal time
    embedding at ``n_freq`` geometrically spaced frequencies.  Gradients
    of the squared-error objective are computed by exact reverse-mode
    differentiation of the three dense layers; no autodiff framework is
    involved, which keeps the finite-difference gradient check honest.
    """

    def __init__(self, d: int, width: int = 64, n_freq: int = 8,
                 seed: int = 0):
        self.d = int(d)
        self.width = int(width)
        self.n_freq = int(n_freq)
        self.seed = int(seed)
        self.freqs = np.pi * 2.0 ** np.arange(self.n_freq)
        in_dim = 2 * self.d + 2 * self.n_freq
        rng = np.random.default_rng(seed)

        def init(n_in, n_out):
            return rng.standard_normal((n_in, n_out)) / math.sqrt(n_in)

        self.W1 = init(in_dim, width)
        self.b1 = np.zeros(width)
        self.W2 = init(width, width)
        self.b2 = np.zeros(width)
        self.W3 = init(width, self.d)
        self.b3 = np.zeros(self.d)

    # -- parameter vector ----------------------------------------------------
    @property
    def _param_refs(self):
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self._param_refs)

    def get_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._param_refs])

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError("parameter vector has the wrong length")
        pos = 0
        for p in self._param_refs:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    # -- forward / backward ----------------------------------------------------
    def _features(self, x_t, xhat0, t) -> np.ndarray:
        x_t = as_batch(x_t, "x_t")
        xhat0 = match_source(x_t, xhat0, "xhat0")
        xhat0 = np.broadcast_to(xhat0, x_t.shape)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x_t.shape[0],))
        phase = t[:, None] * self.freqs[None, :]
        return np.concatenate(
            [x_t, xhat0, np.sin(phase), np.cos(phase)], axis=1
        )

    def forward(self, x_t, xhat0, t) -> np.ndarray:
        u = self._features(x_t, xhat0, t)
        a1 = np.tanh(u @ self.W1 + self.b1)
        a2 = np.tanh(a1 @ self.W2 + self.b2)
        return a2 @ self.W3 + self.b3

    def loss_and_grad(self, x_t, xhat0, t, eps_target):
        """Mean squared residual norm and its exact parameter gradient."""
        u = self._features(x_t, xhat0, t)
        eps_target = as_batch(eps_target, "eps_target")
        n = u.shape[0]
        a1 = np.tanh(u @ self.W1 + self.b1)
        a2 = np.tanh(a1 @ self.W2 + self.b2)
        out = a2 @ self.W3 + self.b3

        resid = out - eps_target
        loss = float(np.sum(resid**2) / n)

        # Reverse pass: delta_k carries dL/d(pre-activation of layer k).
        d_out = 2.0 * resid / n
        gW3 = a2.T @ d_out
        gb3 = d_out.sum(axis=0)
        d2 = (d_out @ self.W3.T) * (1.0 - a2**2)
        gW2 = a1.T @ d2
        gb2 = d2.sum(axis=0)
        d1 = (d2 @ self.W2.T) * (1.0 - a1**2)
        gW1 = u.T @ d1
        gb1 = d1.sum(axis=0)

        grad = np.concatenate(
            [gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3]
        )
        return loss, grad


class MLPPredictor(Predictor):
    """Noise predictor backed by a :class:`TinyMLP`.

    ``predict_data`` falls back to the source point at the fully shifted
    start (eta = 1), where the noise-to-data inversion carries no
    information about the clean sample: the substitution error is damped
    by the vanishing data coefficient of the following solver step.
    """

    def __init__(self, mlp: TinyMLP, schedule: DomainShiftSchedule,
                 final_loss: float = math.nan):
        super().__init__(schedule)
        self.mlp = mlp
        self.final_loss = final_loss

    def predict_noise(self, x_t, xhat0, t) -> np.ndarray:
        return self.mlp.forward(x_t, xhat0, t)

    def predict_data(self, x_t, xhat0, t) -> np.ndarray:
        if np.asarray(self.schedule.eta(t)) >= 1.0:
            x_t = as_batch(x_t, "x_t")
            return np.broadcast_to(
                match_source(x_t, xhat0, "xhat0"), x_t.shape
            ).copy()
        return super().predict_data(x_t, xhat0, t)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4000
    batch: int = 256
    lr: float = 2e-3
    seed: int = 0
    width: int = 64
    n_freq: int = 8

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1 or self.lr <= 0:
            raise ValueError("invalid training configuration")


@dataclass
class TrainHistory:
    losses: np.ndarray
    running: np.ndarray = field(repr=False)

    @property
    def final_running_loss(self) -> float:
        return float(self.running[-1])


def train_noise_predictor(x0, xhat0, sched: DomainShiftSchedule,
                          cfg: TrainConfig = TrainConfig()):
    """Fit a TinyMLP noise predictor on (x0, xhat0) pairs.

    Each step draws a data minibatch, times uniform on (0, t1], and
    fresh noise; the squared-residual objective is minimized with Adam
    on the exact reverse-mode gradients.  Times beyond the pivot are
    never sampled because the reverse solvers never query there.

    Returns (MLPPredictor, TrainHistory).  Raises TrainingError with the
    diverging step index if the loss goes non-finite.
    """
    x0 = as_batch(x0, "x0")
    xhat0 = match_source(x0, xhat0, "xhat0")
    xhat0 = np.broadcast_to(xhat0, x0.shape)
    if math.isinf(sched.t1):
        raise ValueError("training needs a finite pivot t1")

    rng = np.random.default_rng(cfg.seed)
    mlp = TinyMLP(x0.shape[1], width=cfg.width, n_freq=cfg.n_freq,
                  seed=cfg.seed)

    # Adam state on the flat parameter vector.
    theta = mlp.get_params()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8

    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        idx = rng.integers(0, x0.shape[0], size=cfg.batch)
        t_batch = sched.t1 * (1.0 - rng.random(cfg.batch))
        xb, hb = x0[idx], xhat0[idx]
        alpha, sigma = sched.eval_noise(t_batch)
        eta = sched.eta(t_batch)
        a = (alpha * (1.0 - eta))[:, None]
        b = (alpha * eta)[:, None]
        eps = rng.standard_normal(xb.shape)
        x_t = a * xb + b * hb + sigma[:, None] * eps

        loss, grad = mlp.loss_and_grad(x_t, hb, t_batch, eps)
        if not math.isfinite(loss):
            raise TrainingError(
                f"training loss diverged at step {step} (loss={loss})"
            )
        losses[step] = loss

        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad**2
        mhat = m / (1.0 - beta1 ** (step + 1))
        vhat = v / (1.0 - beta2 ** (step + 1))
        theta = theta - cfg.lr * mhat / (np.sqrt(vhat) + eps_adam)
        mlp.set_params(theta)

    window = min(20, cfg.steps)
    kernel = np.ones(window) / window
    running = np.convolve(losses, kernel, mode="valid")
    history = TrainHistory(losses=losses, running=running)
    return MLPPredictor(mlp, sched, final_loss=history.final_running_loss), \
        history


# ---------------------------------------------------------------------------
# Predictor file format: one JSON header line + raw float64 parameters
# ---------------------------------------------------------------------------

def save_predictor(path, predictor: MLPPredictor) -> None:
    """Write an MLP predictor to a small binary file.

    Layout: a single JSON header line {d, width, n_freq, seed, loss}
    terminated by a newline, followed by the flat float64 parameter
    vector in raw little-endian bytes.  Loading is bit-exact.
    """
    mlp = predictor.mlp
    header = {
        "d": mlp.d,
        "width": mlp.width,
        "n_freq": mlp.n_freq,
        "seed": mlp.seed,
        "loss": predictor.final_loss,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(mlp.get_params().astype("<f8").tobytes())


def load_predictor(path, schedule: DomainShiftSchedule) -> MLPPredictor:
    """Reconstruct a predictor saved by :func:`save_predictor`."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    mlp = TinyMLP(header["d"], width=header["width"],
                  n_freq=header["n_freq"], seed=header["seed"])
    params = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    mlp.set_params(params)
    return MLPPredictor(mlp, schedule, final_loss=header["loss"])
