"""Domain-shift diffusion processes and their fast reverse-time solvers.

The forward process interpolates its mean from a clean target sample
toward a degraded source point while adding variance-preserving noise;
reverse sampling therefore starts from the (noised) source point at a
pivot time instead of from pure noise.  The package provides the
schedule machinery, forward simulation, prediction interfaces with an
analytic Gaussian oracle and a trainable toy network, customized
reverse solvers of orders 1 to 3 with a quadrature reference, and an
experiment harness with a CLI.
"""

from .errors import (
    ConfigError,
    DomainShiftError,
    GridError,
    QuadratureError,
    ScheduleConsistencyError,
    SingularTimeError,
    TimeDomainError,
    TrainingError,
)
from .forward import (
    GaussianSpec,
    domain_shift_mean,
    euler_maruyama_forward,
    marginal_moments,
    sample_marginal,
    sample_transition,
    training_pair,
)
from .metrics import energy_distance, mean_pairwise_distance, moment_errors
from .prediction import (
    DataPredictor,
    GaussianOraclePredictor,
    GaussianTask,
    MLPPredictor,
    Predictor,
    TinyMLP,
    TrainConfig,
    ZeroPredictor,
    data_to_noise,
    data_to_score,
    load_predictor,
    noise_loss,
    noise_to_data,
    oracle_data_prediction,
    save_predictor,
    train_noise_predictor,
)
from .schedule import (
    DomainShiftSchedule,
    NoiseSchedule,
    ShiftingSequence,
    TimeGrid,
    make_time_grid,
)
from .solver import (
    CountingPredictor,
    SolverConfig,
    SolverState,
    dosg_term,
    euler_maruyama_reverse,
    exact_step_quadrature,
    init_state,
    sample,
    step_order1,
    step_order2,
    step_order3,
)
from .tasks import ToyTask

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DomainShiftError", "GridError", "QuadratureError",
    "ScheduleConsistencyError", "SingularTimeError", "TimeDomainError",
    "TrainingError",
    "GaussianSpec", "domain_shift_mean", "euler_maruyama_forward",
    "marginal_moments", "sample_marginal", "sample_transition",
    "training_pair",
    "energy_distance", "mean_pairwise_distance", "moment_errors",
    "DataPredictor", "GaussianOraclePredictor", "GaussianTask",
    "MLPPredictor", "Predictor", "TinyMLP", "TrainConfig", "ZeroPredictor",
    "data_to_noise", "data_to_score", "load_predictor", "noise_loss",
    "noise_to_data", "oracle_data_prediction", "save_predictor",
    "train_noise_predictor",
    "DomainShiftSchedule", "NoiseSchedule", "ShiftingSequence", "TimeGrid",
    "make_time_grid",
    "CountingPredictor", "SolverConfig", "SolverState", "dosg_term",
    "euler_maruyama_reverse", "exact_step_quadrature", "init_state",
    "sample", "step_order1", "step_order2", "step_order3",
    "ToyTask",
    "__version__",
]
