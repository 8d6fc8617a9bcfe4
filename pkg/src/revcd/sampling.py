"""Classifier-free-guided ancestral sampling of semantic vectors.

Starting from Gaussian noise, each step runs the denoiser twice
(conditional and null-conditioned), combines the clean-sample estimates as
(1+g)*cond - g*uncond, and takes one reverse posterior step. The final
estimate is affinely unmapped back to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffusion
from .autodiff import no_grad
from .model import Denoiser
from .rng import RngState
from .schedule import NoiseSchedule

NOISE_MODES = ("posterior_sqrt", "beta_sqrt", "beta_literal")


@dataclass
class GuidanceConfig:
    g: float = 1.0
    noise_mode: str = "posterior_sqrt"
    steps: int | None = None  # None means all T steps
    seed: int = 0

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("guidance strength must be >= 0")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")


def cfg_combine(pred_cond, pred_uncond, g: float):
    """(1 + g) * conditional - g * unconditional."""
    pred_cond = np.asarray(pred_cond)
    pred_uncond = np.asarray(pred_uncond)
    if pred_cond.shape != pred_uncond.shape:
        raise ValueError(
            f"shape mismatch: {pred_cond.shape} vs {pred_uncond.shape}")
    if g == 0.0:
        return pred_cond
    return (1.0 + g) * pred_cond - g * pred_uncond


def _noise_scale(t: int, schedule: NoiseSchedule, mode: str) -> float:
    if mode == "posterior_sqrt":
        return float(np.sqrt(schedule.posterior_var[t]))
    if mode == "beta_sqrt":
        return float(np.sqrt(schedule.beta[t]))
    return float(schedule.beta[t])  # beta_literal


def reverse_step(s_t: np.ndarray, s0_hat_guided: np.ndarray, t: int,
                 schedule: NoiseSchedule, guidance: GuidanceConfig,
                 z: np.ndarray) -> np.ndarray:
    """One ancestral step: posterior mean of the clipped estimate plus noise.

    No noise is injected at t=1 regardless of mode.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep out of range [1, {schedule.T}]")
    s0_clipped = np.clip(s0_hat_guided, -1.0, 1.0)
    mean, _var = diffusion.posterior_mean_var(s_t, s0_clipped, t, schedule)
    if t == 1:
        return mean
    return mean + _noise_scale(t, schedule, guidance.noise_mode) * z


def _reverse_step_between(s_t, s0_hat_guided, t: int, t_prev: int,
                          schedule: NoiseSchedule, guidance: GuidanceConfig,
                          z: np.ndarray) -> np.ndarray:
    """Generalized posterior step from t down to t_prev < t (subsampled
    trajectories); with t_prev = t-1 this is exactly ``reverse_step``."""
    s0 = np.clip(s0_hat_guided, -1.0, 1.0)
    abar_t = schedule.alpha_bar[t]
    abar_prev = schedule.alpha_bar[t_prev]
    alpha_eff = abar_t / abar_prev
    mean = (np.sqrt(alpha_eff) * (1.0 - abar_prev) * s_t
            + np.sqrt(abar_prev) * (1.0 - alpha_eff) * s0) / (1.0 - abar_t)
    if t_prev == 0:
        return mean
    var = (1.0 - alpha_eff) * (1.0 - abar_prev) / (1.0 - abar_t)
    if guidance.noise_mode == "posterior_sqrt":
        scale = np.sqrt(var)
    elif guidance.noise_mode == "beta_sqrt":
        scale = np.sqrt(1.0 - alpha_eff)
    else:
        scale = 1.0 - alpha_eff
    return mean + scale * z


def _timestep_path(schedule: NoiseSchedule, steps: int | None) -> np.ndarray:
    if steps is None or steps >= schedule.T:
        return np.arange(schedule.T, 0, -1)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return np.unique(np.linspace(1, schedule.T, steps).round().astype(int))[::-1]


def sample(x: np.ndarray, model: Denoiser, schedule: NoiseSchedule,
           guidance: GuidanceConfig, rng: RngState | None = None,
           trajectory_ref: np.ndarray | None = None):
    """Sample semantic estimates in [0, 1] for a batch of visual features.

    When ``trajectory_ref`` (the true [0,1] attribute per row) is given, the
    mean cosine distance between the evolving chain state and the
    preconditioned reference is logged per step and returned alongside the
    samples.
    """
    from .evaluation import cosine_distance_rows

    if rng is None:
        rng = RngState(guidance.seed)
    x = np.asarray(x, dtype=model.dtype)
    b = x.shape[0]
    d_s = model.config.d_s

    trajectory: list[tuple[int, float]] = []
    if trajectory_ref is not None:
        # distances are measured in the chain's working space: at t=T the
        # state is pure noise (distance ~1); cosine between the [0,1]
        # unmapped vectors would compress the whole trajectory into ~0.3
        ref_centered = diffusion.precondition(
            np.asarray(trajectory_ref, dtype=model.dtype))
    with no_grad():
        cond = model.encode_condition(x, training=False)
        cond_null = model.null_condition(b)

        s = rng.normal((b, d_s), dtype=model.dtype)
        path = _timestep_path(schedule, guidance.steps)
        for i, t in enumerate(path):
            t_vec = np.full(b, int(t), dtype=np.int64)
            t_emb = model.time_embed(t_vec)
            pred_c = model.denoise(s, t_emb, cond, training=False).data
            pred_u = model.denoise(s, t_emb, cond_null, training=False).data
            s0_hat = cfg_combine(pred_c, pred_u, guidance.g)

            t_prev = int(path[i + 1]) if i + 1 < len(path) else 0
            z = rng.normal((b, d_s), dtype=model.dtype) if t > 1 \
                else np.zeros((b, d_s), dtype=model.dtype)
            if t_prev == t - 1 or t == 1:
                s = reverse_step(s, s0_hat, int(t), schedule, guidance, z)
            else:
                s = _reverse_step_between(s, s0_hat, int(t), t_prev, schedule,
                                          guidance, z)
            if not np.all(np.isfinite(s)):
                raise FloatingPointError(f"sampling diverged at t={t}")
            if trajectory_ref is not None:
                dist = cosine_distance_rows(s, ref_centered)
                trajectory.append((t_prev, float(np.mean(dist))))

    out = np.clip(diffusion.unmap(s), 0.0, 1.0)
    if trajectory_ref is not None:
        return out, trajectory
    return out


def cfg_equivalence_check(s_t, pred_cond, pred_uncond, g: float, t: int,
                          schedule: NoiseSchedule,
                          coefficients: tuple[float, float] | None = None) -> float:
    """Max deviation between guiding in s0-space and in eps-space.

    The default coefficients (1+g, -g) sum to one, so the affine
    eps <-> s0 conversion commutes with the combination and the deviation
    vanishes. Passing coefficients that do not sum to one (negative
    control) breaks the identity.
    """
    ca, cb = coefficients if coefficients is not None else (1.0 + g, -g)

    s0_combined = ca * np.asarray(pred_cond) + cb * np.asarray(pred_uncond)
    eps_of_s0 = diffusion.eps_from_x0(s_t, s0_combined, t, schedule)

    eps_c = diffusion.eps_from_x0(s_t, pred_cond, t, schedule)
    eps_u = diffusion.eps_from_x0(s_t, pred_uncond, t, schedule)
    eps_combined = ca * eps_c + cb * eps_u

    return float(np.max(np.abs(eps_of_s0 - eps_combined)))
