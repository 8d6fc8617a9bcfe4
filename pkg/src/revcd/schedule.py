"""Noise schedules and sinusoidal time embeddings.

Tables are indexed by timestep t in [1, T]; index 0 holds the anchors
(beta=0, alpha=1, alpha_bar=1) so the t=1 posterior collapses cleanly to
zero variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha tables of length T+1 (entry 0 is the anchor)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    def validate(self) -> None:
        assert self.beta.shape == (self.T + 1,)
        assert np.all(self.beta[1:] > 0) and np.all(self.beta[1:] < 1)
        assert np.all(np.diff(self.alpha_bar) < 0)
        assert self.posterior_var[1] == 0.0


def build_linear_schedule(T: int = DEFAULT_T,
                          beta_start: float = DEFAULT_BETA_START,
                          beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Linearly interpolated beta schedule, endpoints inclusive."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.zeros(T + 1, dtype=np.float64)
    beta[1:] = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    posterior_var = np.zeros(T + 1, dtype=np.float64)
    posterior_var[1:] = (beta[1:] * (1.0 - alpha_bar[:-1])
                         / (1.0 - alpha_bar[1:]))
    schedule = NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar,
                             posterior_var=posterior_var)
    schedule.validate()
    return schedule


@dataclass(frozen=True)
class TimeEmbeddingSpec:
    """Even embedding dimension plus strictly decreasing frequencies."""

    d: int
    frequencies: np.ndarray

    @classmethod
    def default(cls, d: int) -> "TimeEmbeddingSpec":
        if d % 2 != 0:
            raise ValueError(f"embedding dimension must be even, got {d}")
        i = np.arange(d // 2, dtype=np.float64)
        return cls(d=d, frequencies=10000.0 ** (-2.0 * i / d))


def time_embedding(t, spec: TimeEmbeddingSpec, T: int | None = None,
                   dtype=np.float64) -> np.ndarray:
    """Interleaved [cos(t f0), sin(t f0), cos(t f1), sin(t f1), ...].

    Accepts a scalar step (returns [d]) or a vector of steps (returns
    [len(t), d]).
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if T is not None and (np.any(t_arr < 0) or np.any(t_arr > T)):
        raise ValueError(f"timestep out of range [0, {T}]")
    angles = t_arr[..., None] * spec.frequencies
    out = np.empty(t_arr.shape + (spec.d,), dtype=dtype)
    out[..., 0::2] = np.cos(angles)
    out[..., 1::2] = np.sin(angles)
    return out


def prior_kl_diagnostic(schedule: NoiseSchedule, s0: np.ndarray) -> float:
    """KL( N(sqrt(abar_T) s0, (1-abar_T) I) || N(0, I) ), closed form.

    Diagnostic only: the term carries no trainable parameters.
    """
    s0 = np.asarray(s0, dtype=np.float64)
    abar = schedule.alpha_bar[schedule.T]
    var = 1.0 - abar
    if var <= 0.0:
        # Degenerate schedule where no noise survives; KL of a point mass
        # is unbounded, but abar_T < 1 always holds for valid betas.
        raise ValueError("alpha_bar[T] must be < 1")
    mean_sq = abar * float(np.sum(s0 ** 2))
    d = s0.size
    return 0.5 * (mean_sq + d * (var - 1.0 - np.log(var)))
