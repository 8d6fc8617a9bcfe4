"""Diffusion mathematics: forward noising, ground-truth posterior, the two
loss parameterizations, affine preconditioning, and total-loss assembly.

Functions accept either plain ndarrays or autodiff Tensors for the model
prediction argument, so the same formulas serve the training graph and the
numpy-only oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .schedule import NoiseSchedule

CLAMP_TOL = 1e-6


@dataclass
class LossWeights:
    """Balancing factors for the three objectives plus condition-mask rate."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.01
    w_mode: str = "unit"  # or "analytic"
    p_conditional: float = 0.1

    def __post_init__(self):
        if self.w_mode not in ("unit", "analytic"):
            raise ValueError(f"unknown w_mode '{self.w_mode}'")
        if not 0.0 <= self.p_conditional < 1.0:
            raise ValueError("p_conditional must be in [0, 1)")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


def precondition(s: np.ndarray) -> np.ndarray:
    """Map semantics from [0, 1] to [-1, 1] via s' = 2s - 1."""
    s = np.asarray(s)
    if np.any(s < -CLAMP_TOL) or np.any(s > 1 + CLAMP_TOL):
        s = np.clip(s, 0.0, 1.0)
    return 2.0 * s - 1.0


def unmap(s_prime: np.ndarray) -> np.ndarray:
    """Inverse of precondition: (s' + 1) / 2."""
    return (np.asarray(s_prime) + 1.0) / 2.0


def _coeffs(t, schedule: NoiseSchedule):
    """Per-row (sqrt(abar_t), sqrt(1 - abar_t)), shaped for broadcasting."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"timestep out of range [1, {schedule.T}]")
    abar = schedule.alpha_bar[t]
    if t.ndim > 0:
        abar = abar[:, None]
    return np.sqrt(abar), np.sqrt(1.0 - abar)


def forward_noise(s0, t, eps, schedule: NoiseSchedule):
    """Closed-form forward kernel: s_t = sqrt(abar_t) s0 + sqrt(1-abar_t) eps."""
    a, b = _coeffs(t, schedule)
    return a * s0 + b * eps


def posterior_mean_var(s_t, s0, t, schedule: NoiseSchedule):
    """Ground-truth denoising posterior q(s_{t-1} | s_t, s0): (mean, var)."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"timestep out of range [1, {schedule.T}]")
    alpha = schedule.alpha[t]
    abar = schedule.alpha_bar[t]
    abar_prev = schedule.alpha_bar[t - 1]
    var = schedule.posterior_var[t]
    if t.ndim > 0:
        alpha, abar, abar_prev = alpha[:, None], abar[:, None], abar_prev[:, None]
    mean = (np.sqrt(alpha) * (1.0 - abar_prev) * s_t
            + np.sqrt(abar_prev) * (1.0 - alpha) * s0) / (1.0 - abar)
    return mean, var


def eps_from_x0(s_t, s0_hat, t, schedule: NoiseSchedule):
    """Invert the forward kernel: eps_hat = (s_t - sqrt(abar_t) s0_hat) / sqrt(1-abar_t)."""
    a, b = _coeffs(t, schedule)
    if np.any(b == 0.0):
        raise ValueError("eps_from_x0 undefined where alpha_bar == 1")
    if isinstance(s0_hat, Tensor):
        return (s_t - s0_hat * a) / b
    return (s_t - a * s0_hat) / b


def posterior_mean_from_eps(s_t, eps_hat, t, schedule: NoiseSchedule):
    """Posterior mean in the eps-parameterization (equivalent to the x0 form)."""
    t = np.asarray(t)
    alpha = schedule.alpha[t]
    abar = schedule.alpha_bar[t]
    if t.ndim > 0:
        alpha, abar = alpha[:, None], abar[:, None]
    if isinstance(eps_hat, Tensor):
        return (s_t - eps_hat * ((1.0 - alpha) / np.sqrt(1.0 - abar))) / np.sqrt(alpha)
    return (s_t - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)


def _analytic_rec_weight(t, schedule: NoiseSchedule) -> np.ndarray:
    t = np.asarray(t)
    if np.any(t < 2):
        raise ValueError("analytic weights need t >= 2 (posterior variance is "
                         "zero at t=1)")
    alpha = schedule.alpha[t]
    abar = schedule.alpha_bar[t]
    abar_prev = schedule.alpha_bar[t - 1]
    var = schedule.posterior_var[t]
    return abar_prev * (1.0 - alpha) ** 2 / (2.0 * var * (1.0 - abar) ** 2)


def _analytic_noise_weight(t, schedule: NoiseSchedule) -> np.ndarray:
    t = np.asarray(t)
    if np.any(t < 2):
        raise ValueError("analytic weights need t >= 2")
    alpha = schedule.alpha[t]
    abar = schedule.alpha_bar[t]
    var = schedule.posterior_var[t]
    return (1.0 - alpha) ** 2 / (2.0 * var * (1.0 - abar) ** 2 * alpha)


def _weighted_sq_norm(diff, w) -> "Tensor | float":
    """w_t * ||diff||^2 summed over features, averaged over the batch."""
    if isinstance(diff, Tensor):
        if diff.ndim == 1:
            return (diff ** 2).sum() * float(np.mean(w))
        per_row = (diff ** 2).sum(axis=1)
        return (per_row * w).mean()
    diff = np.asarray(diff)
    if diff.ndim == 1:
        return float(np.sum(diff ** 2) * np.mean(w))
    return float(np.mean(np.sum(diff ** 2, axis=1) * w))


def loss_reconstruction(s0, s0_hat, t, weights: LossWeights,
                        schedule: NoiseSchedule):
    """Clean-sample loss: w_t ||s0 - s0_hat||^2, batch-averaged."""
    w = 1.0 if weights.w_mode == "unit" else _analytic_rec_weight(t, schedule)
    diff = s0_hat - s0 if isinstance(s0_hat, Tensor) else np.asarray(s0_hat) - s0
    return _weighted_sq_norm(diff, w)


def loss_noise(eps, s_t, s0_hat, t, weights: LossWeights,
               schedule: NoiseSchedule):
    """Source-noise loss: w'_t ||eps - eps_hat(s0_hat)||^2, batch-averaged."""
    w = 1.0 if weights.w_mode == "unit" else _analytic_noise_weight(t, schedule)
    eps_hat = eps_from_x0(s_t, s0_hat, t, schedule)
    diff = eps_hat - eps
    return _weighted_sq_norm(diff, w)


def total_loss(rec, noise, cls, weights: LossWeights):
    """lambda1 * rec + lambda2 * noise + lambda3 * cls."""
    for name, part in (("rec", rec), ("noise", noise), ("cls", cls)):
        value = part.item() if isinstance(part, Tensor) else float(part)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite {name} loss component: {value}")
    return (weights.lambda1 * rec + weights.lambda2 * noise
            + weights.lambda3 * cls)
