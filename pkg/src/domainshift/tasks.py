"""Toy source/target domain pairs for experiments.

A task owns a clean target distribution (Gaussian, Gaussian mixture, or
ring) and a deterministic degradation map producing the source point
xhat0 from a clean sample: a contraction toward the task mean composed
with a fixed offset (optionally a full affine map).  The contraction is
the desk-scale analog of a resolution loss; being invertible keeps the
domain gap controlled and the conditional target well-defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .forward import GaussianSpec
from .state import as_batch

__all__ = ["ToyTask"]

_KINDS = ("gaussian", "gaussian-mixture", "ring")


@dataclass(frozen=True)
class ToyTask:
    """A named clean-sample distribution plus its degradation map.

    kind:
      * ``gaussian``: N(mean, diag cov); supports the analytic oracle.
      * ``gaussian-mixture``: equal-weight mixture unless weights given.
      * ``ring``: radius ``ring_radius`` with radial std, d = 2 only.

    Degradation: x -> task_mean + contraction * (x - task_mean) + offset,
    or A x + offset when a full matrix is supplied.
    """

    kind: str = "gaussian"
    d: int = 2
    mean: np.ndarray | None = None
    cov_diag: np.ndarray | None = None
    mixture_means: np.ndarray | None = None
    mixture_cov_diags: np.ndarray | None = None
    mixture_weights: np.ndarray | None = None
    ring_radius: float = 1.5
    ring_width: float = 0.15
    contraction: float = 0.3
    offset: np.ndarray | None = None
    matrix: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if not 0.0 < self.contraction <= 1.0:
            raise ConfigError("contraction must lie in (0, 1]")

        def vec(value, default):
            out = np.full(self.d, default, dtype=np.float64) \
                if value is None else np.asarray(value, dtype=np.float64)
            if out.shape != (self.d,):
                raise ConfigError(f"expected a length-{self.d} vector")
            return out

        object.__setattr__(self, "mean", vec(self.mean, 0.0))
        object.__setattr__(self, "cov_diag", vec(self.cov_diag, 1.0))
        object.__setattr__(self, "offset", vec(self.offset, 0.0))
        if np.any(self.cov_diag <= 0):
            raise ConfigError("cov_diag entries must be positive")

        if self.kind == "gaussian-mixture":
            means = self.mixture_means
            if means is None:
                means = np.array([[-1.5] + [0.0] * (self.d - 1),
                                  [1.5] + [0.0] * (self.d - 1)])
            means = np.asarray(means, dtype=np.float64)
            if means.ndim != 2 or means.shape[1] != self.d:
                raise ConfigError("mixture_means must have shape (K, d)")
            covs = self.mixture_cov_diags
            covs = np.full_like(means, 0.25) if covs is None \
                else np.asarray(covs, dtype=np.float64)
            if covs.shape != means.shape or np.any(covs <= 0):
                raise ConfigError("mixture_cov_diags must be positive (K, d)")
            w = self.mixture_weights
            w = np.full(means.shape[0], 1.0 / means.shape[0]) if w is None \
                else np.asarray(w, dtype=np.float64)
            if w.shape != (means.shape[0],) or np.any(w <= 0):
                raise ConfigError("mixture_weights must be positive (K,)")
            w = w / w.sum()
            object.__setattr__(self, "mixture_means", means)
            object.__setattr__(self, "mixture_cov_diags", covs)
            object.__setattr__(self, "mixture_weights", w)

        if self.kind == "ring" and self.d != 2:
            raise ConfigError("ring tasks are 2-D only")
        if self.matrix is not None:
            mat = np.asarray(self.matrix, dtype=np.float64)
            if mat.shape != (self.d, self.d):
                raise ConfigError("matrix must have shape (d, d)")
            object.__setattr__(self, "matrix", mat)

    # -- clean-sample distribution -------------------------------------------
    @property
    def center(self) -> np.ndarray:
        """Mean of the clean distribution (degradation anchor)."""
        if self.kind == "gaussian":
            return self.mean
        if self.kind == "gaussian-mixture":
            return self.mixture_weights @ self.mixture_means
        return np.zeros(self.d)

    def sample_clean(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return GaussianSpec(self.mean, self.cov_diag).sample(n, rng)
        if self.kind == "gaussian-mixture":
            comp = rng.choice(self.mixture_weights.size, size=n,
                              p=self.mixture_weights)
            z = rng.standard_normal((n, self.d))
            return self.mixture_means[comp] \
                + np.sqrt(self.mixture_cov_diags[comp]) * z
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        radius = self.ring_radius + self.ring_width * rng.standard_normal(n)
        return np.stack([radius * np.cos(theta), radius * np.sin(theta)],
                        axis=1)

    def gaussian_spec(self) -> GaussianSpec:
        if self.kind != "gaussian":
            raise ConfigError(
                "analytic oracles require a gaussian task, got "
                f"{self.kind!r}"
            )
        return GaussianSpec(self.mean, self.cov_diag)

    # -- degradation -----------------------------------------------------------
    def degrade(self, x0) -> np.ndarray:
        """Deterministic source points for a batch of clean samples."""
        x0 = as_batch(x0, "x0")
        if x0.shape[1] != self.d:
            raise ConfigError("sample dimension does not match the task")
        if self.matrix is not None:
            return x0 @ self.matrix.T + self.offset
        return self.center + self.contraction * (x0 - self.center) \
            + self.offset

    def sample_pairs(self, n: int, rng: np.random.Generator):
        """(x0, xhat0) training pairs."""
        x0 = self.sample_clean(n, rng)
        return x0, self.degrade(x0)
