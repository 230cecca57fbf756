"""Experiment commands: forward demos, sampling runs, sweeps, training.

Every command consumes an :class:`ExperimentConfig`, writes CSV files
for array-like results plus one ``summary.json`` (validated against the
schema shipped in ``schemas/summary.schema.json``), and returns the
summary dict.  Under a fixed seed every output file is reproduced
bit-for-bit except the ``wall_time_s`` field of the summary.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .forward import marginal_moments, sample_marginal
from .metrics import energy_distance, moment_errors
from .prediction import (
    GaussianOraclePredictor,
    GaussianTask,
    Predictor,
    TrainConfig,
    ZeroPredictor,
    data_to_score,
    load_predictor,
    noise_loss,
    save_predictor,
    train_noise_predictor,
)
from .schedule import (
    DomainShiftSchedule,
    NoiseSchedule,
    ShiftingSequence,
    make_time_grid,
)
from .solver import (
    CountingPredictor,
    SolverConfig,
    SolverState,
    StepTrace,
    _core_step,
    exact_step_quadrature,
    init_state,
    sample,
)
from .tasks import ToyTask

__all__ = [
    "ExperimentConfig",
    "cmd_forward",
    "cmd_sample",
    "cmd_sweep_t1",
    "cmd_sweep_order",
    "cmd_scorefield",
    "cmd_train",
    "DEFAULT_T1_FRACTIONS",
]

DEFAULT_T1_FRACTIONS = (1.0, 2.0 / 3.0, 0.5, 1.0 / 3.0)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed experiment configuration.

    The JSON layout mirrors the constructor arguments:

    * ``task``: ToyTask fields (kind, d, contraction, offset, ...),
    * ``schedule``: {kind, beta_min, beta_max, t1, T_display}; ``t1`` is
      a fraction of the horizon,
    * ``solver``: {order, steps, t_end, spacing, final_output},
    * ``predictor``: "oracle" (Gaussian tasks only) or a predictor file
      path written by the train command,
    * ``n_samples``, ``seed``, and per-command sections ``train``,
      ``scorefield``, ``sweep_t1``.
    """

    task: ToyTask = field(default_factory=ToyTask)
    schedule_kind: str = "linear-beta"
    beta_min: float = 0.1
    beta_max: float = 20.0
    t1_fraction: float = 0.5
    display_steps: int = 1000
    order: int = 3
    steps: int = 5
    t_end: float = 1e-3
    spacing: str = "uniform-t"
    final_output: str = "data_prediction"
    predictor: str = "oracle"
    n_samples: int = 4096
    seed: int = 0
    train: dict = field(default_factory=dict)
    scorefield: dict = field(default_factory=dict)
    sweep_t1: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None) -> "ExperimentConfig":
        try:
            task = ToyTask(**raw.get("task", {}))
        except TypeError as exc:
            raise ConfigError(f"bad task section: {exc}") from exc
        sched = raw.get("schedule", {})
        solver = raw.get("solver", {})
        known = {
            "task", "schedule", "solver", "predictor", "n_samples", "seed",
            "train", "scorefield", "sweep_t1",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            task=task,
            schedule_kind=sched.get("kind", "linear-beta"),
            beta_min=float(sched.get("beta_min", 0.1)),
            beta_max=float(sched.get("beta_max", 20.0)),
            t1_fraction=float(sched.get("t1", 0.5)),
            display_steps=int(sched.get("T_display", 1000)),
            order=int(solver.get("order", 3)),
            steps=int(solver.get("steps", 5)),
            t_end=float(solver.get("t_end", 1e-3)),
            spacing=solver.get("spacing", "uniform-t"),
            final_output=solver.get("final_output", "data_prediction"),
            predictor=raw.get("predictor", "oracle"),
            n_samples=int(raw.get("n_samples", 4096)),
            seed=int(seed if seed is not None else raw.get("seed", 0)),
            train=dict(raw.get("train", {})),
            scorefield=dict(raw.get("scorefield", {})),
            sweep_t1=dict(raw.get("sweep_t1", {})),
        )

    def build_schedule(self, t1_fraction: float | None = None) -> DomainShiftSchedule:
        noise = NoiseSchedule(kind=self.schedule_kind, beta_min=self.beta_min,
                              beta_max=self.beta_max,
                              display_steps=self.display_steps)
        frac = self.t1_fraction if t1_fraction is None else t1_fraction
        if not 0.0 < frac <= 1.0:
            raise ConfigError("t1 must be a fraction in (0, 1]")
        return DomainShiftSchedule(noise=noise,
                                   shift=ShiftingSequence(t1=frac * noise.T))

    def build_predictor(self, sched: DomainShiftSchedule) -> Predictor:
        if self.predictor == "oracle":
            task = GaussianTask(self.task.gaussian_spec(),
                                self.fixed_source(), sched)
            return GaussianOraclePredictor(task)
        path = Path(self.predictor)
        if not path.exists():
            raise ConfigError(f"predictor file not found: {path}")
        return load_predictor(path, sched)

    def fixed_source(self) -> np.ndarray:
        """The task's degraded center: the fixed conditioning point."""
        return self.task.degrade(self.task.center[None, :])[0]


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_summary(out: Path, command: str, cfg: ExperimentConfig,
                   metrics: dict, files: list[str],
                   wall_time: float) -> dict:
    summary = {
        "command": command,
        "seed": cfg.seed,
        "config": {
            "task_kind": cfg.task.kind,
            "d": cfg.task.d,
            "schedule_kind": cfg.schedule_kind,
            "t1_fraction": cfg.t1_fraction,
            "order": cfg.order,
            "steps": cfg.steps,
            "spacing": cfg.spacing,
            "n_samples": cfg.n_samples,
        },
        "metrics": metrics,
        "files": sorted(files),
        "wall_time_s": wall_time,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _prepare_out(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_forward(cfg: ExperimentConfig, out) -> dict:
    """Forward-process curves and Monte Carlo marginal samples.

    ``curves.csv`` tabulates eta, alpha, sigma, lambda and the analytic
    marginal moments of the task over a fine time grid (lambda is blank
    at and beyond the pivot).  ``samples.csv`` holds marginal draws at a
    handful of times for scatter plots.
    """
    out = _prepare_out(out)
    start = time.perf_counter()
    sched = cfg.build_schedule()
    q0 = cfg.task.gaussian_spec()
    xhat0 = cfg.fixed_source()
    rng = np.random.default_rng(cfg.seed)

    ts = np.linspace(0.0, sched.T, 201)
    rows = []
    for t in ts:
        eta = float(sched.eta(t))
        alpha, sigma = sched.eval_noise(t)
        lam = _fmt(sched.lam(t)) if eta < 1.0 else ""
        mean, var = marginal_moments(q0, xhat0, t, sched)
        rows.append([_fmt(t), _fmt(eta), _fmt(alpha), _fmt(sigma), lam]
                    + [_fmt(v) for v in mean] + [_fmt(v) for v in var])
    d = cfg.task.d
    header = ["t", "eta", "alpha", "sigma", "lambda"] \
        + [f"mean_{j}" for j in range(d)] + [f"var_{j}" for j in range(d)]
    _write_csv(out / "curves.csv", header, rows)

    sample_times = np.linspace(0.05, 1.0, 6) * sched.t1
    n_mc = min(cfg.n_samples, 2000)
    x0 = q0.sample(n_mc, rng)
    sample_rows = []
    for t in sample_times:
        x_t, _ = sample_marginal(x0, xhat0, float(t), sched, rng)
        for row in x_t:
            sample_rows.append([_fmt(t)] + [_fmt(v) for v in row])
    _write_csv(out / "samples.csv", ["t"] + [f"x_{j}" for j in range(d)],
               sample_rows)

    metrics = {"n_curve_points": len(ts), "n_mc_samples": n_mc,
               "n_sample_times": len(sample_times)}
    return _write_summary(out, "forward", cfg, metrics,
                          ["curves.csv", "samples.csv"],
                          time.perf_counter() - start)


def _target_reference(cfg: ExperimentConfig, rng: np.random.Generator):
    """Reference clean draws + analytic moments when available."""
    ref = cfg.task.sample_clean(cfg.n_samples, rng)
    if cfg.task.kind == "gaussian":
        q0 = cfg.task.gaussian_spec()
        return ref, q0.mean, q0.cov_diag
    return ref, ref.mean(axis=0), ref.var(axis=0)


def _run_sampler(cfg: ExperimentConfig, sched: DomainShiftSchedule,
                 predictor: Predictor, rng: np.random.Generator,
                 trace: list[StepTrace] | None = None):
    """One counted sampling run; returns (samples, nfe)."""
    counted = CountingPredictor(predictor)
    grid = make_time_grid(sched, cfg.steps, cfg.t_end, spacing=cfg.spacing)
    solver_cfg = SolverConfig(order=cfg.order, grid=grid, seed=cfg.seed,
                              final_output=cfg.final_output)
    if cfg.predictor == "oracle":
        xhat0 = cfg.fixed_source()
        n = cfg.n_samples
    else:
        x0_star = cfg.task.sample_clean(cfg.n_samples, rng)
        xhat0 = cfg.task.degrade(x0_star)
        n = None
    out = sample(counted, xhat0, solver_cfg, sched, rng=rng, n=n, trace=trace)
    return out, counted.calls


def cmd_sample(cfg: ExperimentConfig, out) -> dict:
    """A reverse-sampling run with quality metrics and a step trace."""
    out = _prepare_out(out)
    start = time.perf_counter()
    sched = cfg.build_schedule()
    predictor = cfg.build_predictor(sched)
    rng = np.random.default_rng(cfg.seed)

    trace: list[StepTrace] = []
    samples, nfe = _run_sampler(cfg, sched, predictor, rng, trace=trace)
    ref, ref_mean, ref_var = _target_reference(cfg, rng)

    d = samples.shape[1]
    _write_csv(out / "samples.csv", [f"x_{j}" for j in range(d)],
               [[_fmt(v) for v in row] for row in samples])
    _write_csv(
        out / "trace.csv",
        ["step", "t", "lambda", "linear_norm", "dosg_norm", "pat_norm",
         "noise_norm"],
        [[tr.step, _fmt(tr.t), _fmt(tr.lam), _fmt(tr.linear_norm),
          _fmt(tr.dosg_norm), _fmt(tr.pat_norm), _fmt(tr.noise_norm)]
         for tr in trace],
    )

    mean_err, var_err = moment_errors(samples, ref_mean, ref_var)
    metrics = {
        "energy_distance": energy_distance(samples, ref),
        "mean_error": mean_err,
        "var_error": var_err,
        "nfe": nfe,
    }
    return _write_summary(out, "sample", cfg, metrics,
                          ["samples.csv", "trace.csv"],
                          time.perf_counter() - start)


def cmd_sweep_t1(cfg: ExperimentConfig, out, fractions=None) -> dict:
    """Sampling quality across pivot choices t1 = fraction * T.

    The quality pattern across fractions is reported, not asserted:
    which pivot wins is an empirical question.  The oracle predictor is
    reused across fractions (it is exact for every t1); configure
    ``predictor`` as a file path to sweep a trained model instead, or
    set ``sweep_t1.train`` to retrain per fraction.
    """
    out = _prepare_out(out)
    start = time.perf_counter()
    if fractions is None:
        fractions = cfg.sweep_t1.get("fractions", DEFAULT_T1_FRACTIONS)
    fractions = [float(f) for f in fractions]
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ConfigError("t1 fractions must lie in (0, 1]")
    retrain = bool(cfg.sweep_t1.get("train", False))

    rows = []
    per_t1 = []
    for frac in fractions:
        sched = cfg.build_schedule(t1_fraction=frac)
        rng = np.random.default_rng(cfg.seed)
        if retrain:
            predictor, _ = _train_for(cfg, sched, rng)
        else:
            predictor = cfg.build_predictor(sched)
        samples, nfe = _run_sampler(cfg, sched, predictor, rng)
        ref, ref_mean, ref_var = _target_reference(cfg, rng)
        ed = energy_distance(samples, ref)
        mean_err, var_err = moment_errors(samples, ref_mean, ref_var)
        rows.append([_fmt(frac), _fmt(ed), _fmt(mean_err), _fmt(var_err),
                     nfe])
        per_t1.append({"t1_fraction": frac, "energy_distance": ed,
                       "mean_error": mean_err, "var_error": var_err,
                       "nfe": nfe})
    _write_csv(out / "sweep_t1.csv",
               ["t1_fraction", "energy_distance", "mean_error", "var_error",
                "nfe"], rows)
    metrics = {"rows": per_t1}
    return _write_summary(out, "sweep-t1", cfg, metrics, ["sweep_t1.csv"],
                          time.perf_counter() - start)


def _deterministic_step_error(cfg: ExperimentConfig,
                              sched: DomainShiftSchedule,
                              predictor: Predictor, order: int,
                              n_probe: int = 8) -> float:
    """Mean per-step deviation of the zero-noise solver from the
    quadrature oracle along the configured grid (pivot step excluded)."""
    grid = make_time_grid(sched, cfg.steps, cfg.t_end, spacing=cfg.spacing)
    rng = np.random.default_rng(cfg.seed)
    xhat0 = np.broadcast_to(cfg.fixed_source(), (n_probe, cfg.task.d))
    x = init_state(xhat0, grid.t_start, sched, rng)
    state = SolverState(x=x, t=grid.t_start)
    errs = []
    for k in range(grid.n_steps):
        t_next = float(grid.times[k + 1])
        if np.asarray(sched.eta(state.t)) < 1.0:
            exact, _ = exact_step_quadrature(
                state.x, state.t, t_next, predictor, xhat0, sched,
                quad_points=128, tol=1e-9,
            )
        else:
            exact = None
        x_det, state, _, _ = _core_step(state, t_next, order, predictor,
                                        xhat0, sched, None, add_noise=False)
        if exact is not None:
            errs.append(float(np.mean(np.linalg.norm(x_det - exact, axis=1))))
    return float(np.mean(errs)) if errs else math.nan


def cmd_sweep_order(cfg: ExperimentConfig, out) -> dict:
    """Orders 1-3 at a fixed step budget, same seed, paired comparison."""
    out = _prepare_out(out)
    start = time.perf_counter()
    sched = cfg.build_schedule()
    predictor = cfg.build_predictor(sched)

    rows = []
    per_order = []
    for order in (1, 2, 3):
        run_cfg = replace(cfg, order=order)
        rng = np.random.default_rng(cfg.seed)
        samples, nfe = _run_sampler(run_cfg, sched, predictor, rng)
        ref, ref_mean, ref_var = _target_reference(run_cfg, rng)
        ed = energy_distance(samples, ref)
        mean_err, var_err = moment_errors(samples, ref_mean, ref_var)
        det_err = _deterministic_step_error(run_cfg, sched, predictor, order)
        rows.append([order, _fmt(det_err), _fmt(ed), _fmt(mean_err),
                     _fmt(var_err), nfe])
        per_order.append({"order": order, "det_step_error": det_err,
                          "energy_distance": ed, "mean_error": mean_err,
                          "var_error": var_err, "nfe": nfe})
    _write_csv(out / "sweep_order.csv",
               ["order", "det_step_error", "energy_distance", "mean_error",
                "var_error", "nfe"], rows)
    metrics = {"rows": per_order}
    return _write_summary(out, "sweep-order", cfg, metrics,
                          ["sweep_order.csv"],
                          time.perf_counter() - start)


def cmd_scorefield(cfg: ExperimentConfig, out) -> dict:
    """Score field of the configured predictor on a 2-D grid."""
    out = _prepare_out(out)
    start = time.perf_counter()
    if cfg.task.d != 2:
        raise ConfigError("score fields require a 2-D task")
    sched = cfg.build_schedule()
    predictor = cfg.build_predictor(sched)
    sf = cfg.scorefield
    bounds = sf.get("bounds", [-3.0, 3.0, -3.0, 3.0])
    resolution = int(sf.get("resolution", 25))
    t = float(sf.get("t", 0.5 * sched.t1))
    if len(bounds) != 4 or resolution < 2:
        raise ConfigError("scorefield needs bounds [x0,x1,y0,y1] and resolution >= 2")

    xs = np.linspace(bounds[0], bounds[1], resolution)
    ys = np.linspace(bounds[2], bounds[3], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    xhat0 = cfg.fixed_source()
    score = data_to_score(predictor.predict_data(points, xhat0, t), points,
                          xhat0, t, sched)
    _write_csv(out / "scorefield.csv", ["x", "y", "score_x", "score_y"],
               [[_fmt(p[0]), _fmt(p[1]), _fmt(s[0]), _fmt(s[1])]
                for p, s in zip(points, score)])
    metrics = {"t": t, "resolution": resolution,
               "max_score_norm": float(np.max(np.linalg.norm(score, axis=1)))}
    return _write_summary(out, "scorefield", cfg, metrics,
                          ["scorefield.csv"], time.perf_counter() - start)


def _train_for(cfg: ExperimentConfig, sched: DomainShiftSchedule,
               rng: np.random.Generator):
    tr = cfg.train
    n_data = int(tr.get("n_data", 8192))
    x0, xhat0 = cfg.task.sample_pairs(n_data, rng)
    train_cfg = TrainConfig(
        steps=int(tr.get("steps", 4000)),
        batch=int(tr.get("batch", 256)),
        lr=float(tr.get("lr", 2e-3)),
        seed=cfg.seed,
        width=int(tr.get("width", 64)),
        n_freq=int(tr.get("n_freq", 8)),
    )
    return train_noise_predictor(x0, xhat0, sched, train_cfg)


def cmd_train(cfg: ExperimentConfig, out) -> dict:
    """Train the toy noise predictor and persist it.

    Writes ``predictor.bin`` (reloadable bit-exactly), ``loss.csv``, and
    a summary containing the held-out objective of the trained model and
    of the zero predictor for comparison.
    """
    out = _prepare_out(out)
    start = time.perf_counter()
    sched = cfg.build_schedule()
    rng = np.random.default_rng(cfg.seed)
    predictor, history = _train_for(cfg, sched, rng)
    save_predictor(out / "predictor.bin", predictor)

    window = history.losses.size - history.running.size
    rows = []
    for step, loss in enumerate(history.losses):
        run = history.running[step - window] if step >= window else ""
        rows.append([step, _fmt(loss), _fmt(run) if run != "" else ""])
    _write_csv(out / "loss.csv", ["step", "loss", "running_loss"], rows)

    # Held-out comparison against the zero predictor.
    x0, xhat0 = cfg.task.sample_pairs(4096, rng)
    t_eval = sched.t1 * (1.0 - rng.random(x0.shape[0]))
    alpha, sigma = sched.eval_noise(t_eval)
    eta = sched.eta(t_eval)
    eps = rng.standard_normal(x0.shape)
    x_t = (alpha * (1 - eta))[:, None] * x0 \
        + (alpha * eta)[:, None] * xhat0 + sigma[:, None] * eps
    trained_loss = noise_loss(predictor.predict_noise(x_t, xhat0, t_eval), eps)
    zero_loss = noise_loss(ZeroPredictor(sched).predict_noise(x_t, xhat0,
                                                              t_eval), eps)
    metrics = {
        "final_running_loss": history.final_running_loss,
        "heldout_loss": trained_loss,
        "heldout_zero_loss": zero_loss,
        "n_parameters": predictor.mlp.n_params,
    }
    return _write_summary(out, "train", cfg, metrics,
                          ["predictor.bin", "loss.csv"],
                          time.perf_counter() - start)
