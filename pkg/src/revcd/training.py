"""Batched joint optimization of the denoiser and classifier head.

One step: draw a timestep per row, noise the preconditioned semantics,
mask the condition per row for classifier-free guidance, run the denoiser,
combine the three losses, and take one Adam step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diffusion
from .autodiff import Tensor, zero_grads
from .model import Denoiser, DenoiserConfig, loss_classification
from .optim import AdamState, adam_step
from .rng import RngState
from .schedule import NoiseSchedule


@dataclass
class LossReport:
    step: int
    rec: float
    noise: float
    cls: float
    total: float

    def line(self) -> str:
        return (f"step={self.step} rec={self.rec:.6f} noise={self.noise:.6f} "
                f"cls={self.cls:.6f} total={self.total:.6f}")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    weights: diffusion.LossWeights = field(default_factory=diffusion.LossWeights)
    seed: int = 0
    checkpoint_interval: int = 0  # epochs between checkpoints; 0 disables
    deterministic: bool = True
    log_every: int = 50

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (batch norm)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def train_step(batch: tuple[np.ndarray, np.ndarray, np.ndarray],
               model: Denoiser, opt: AdamState, schedule: NoiseSchedule,
               rng: RngState, weights: diffusion.LossWeights,
               step: int = 0) -> LossReport:
    """One gradient step on a (semantics, features, labels) batch.

    Semantics arrive in [0, 1] and are preconditioned here.
    """
    s_raw, x, y = batch
    b = s_raw.shape[0]
    y = np.asarray(y, dtype=np.int64)

    t = rng.integers(1, schedule.T, (b,))
    eps = rng.normal((b, s_raw.shape[1]), dtype=model.dtype)
    mask = (rng.uniform((b,)) < weights.p_conditional).astype(model.dtype)

    s0 = diffusion.precondition(np.asarray(s_raw, dtype=model.dtype))
    s_t = diffusion.forward_noise(s0, t, eps, schedule).astype(model.dtype)

    cond = model.encode_condition(x, training=True, rng=rng)
    cond = model.apply_condition_mask(cond, mask)
    s0_hat = model.denoise(s_t, model.time_embed(t), cond,
                           training=True, rng=rng)

    rec = diffusion.loss_reconstruction(s0, s0_hat, t, weights, schedule)
    noise = diffusion.loss_noise(eps, s_t, s0_hat, t, weights, schedule)
    logits = model.classify_head(s0_hat)
    cls = loss_classification(logits, y)
    total = diffusion.total_loss(rec, noise, cls, weights)

    report = LossReport(step=step, rec=rec.item(), noise=noise.item(),
                        cls=cls.item(), total=float(total.item()))
    if not np.isfinite(report.total):
        raise FloatingPointError(f"training diverged at {report.line()}")

    zero_grads(model.params.values())
    total.backward()
    adam_step(model.params, opt)
    return report


def train(dataset, config: TrainConfig, schedule: NoiseSchedule,
          model: Denoiser | None = None, opt: AdamState | None = None,
          rng: RngState | None = None, checkpoint_fn=None,
          log=None, start_step: int = 0) -> tuple[Denoiser, list[LossReport]]:
    """Shuffled epochs over the seen-train split only.

    ``dataset`` is a GzslDataset (see data module); unseen rows never enter
    a batch because batches are drawn from the train_seen index view.
    """
    if len(dataset.train_seen) == 0:
        raise ValueError("dataset has an empty seen-train split")

    if rng is None:
        rng = RngState(config.seed)
    if model is None:
        model = Denoiser(
            DenoiserConfig(d_s=dataset.d_s, d_x=dataset.d_x,
                           n_seen_classes=len(dataset.seen_classes)),
            rng=rng.spawn(1))
    if opt is None:
        opt = AdamState(lr=config.learning_rate)

    # Labels are remapped to the dense seen-class index space for the head.
    seen_index = {c: i for i, c in enumerate(sorted(dataset.seen_classes))}

    rows = dataset.train_seen
    features = dataset.features[rows]
    labels = np.array([seen_index[c] for c in dataset.labels[rows]],
                      dtype=np.int64)
    semantics = dataset.attributes[dataset.labels[rows]]

    history: list[LossReport] = []
    step = start_step
    for _epoch in range(config.epochs):
        order = rng.permutation(len(rows))
        for lo in range(0, len(rows), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs >= 2 rows
            step += 1
            report = train_step(
                (semantics[idx], features[idx], labels[idx]),
                model, opt, schedule, rng, config.weights, step=step)
            history.append(report)
            if log is not None and step % config.log_every == 0:
                log(report.line())
        if (checkpoint_fn is not None and config.checkpoint_interval > 0
                and (_epoch + 1) % config.checkpoint_interval == 0):
            checkpoint_fn(model, opt, rng, step)
    return model, history


def lambda3_sweep(dataset, config: TrainConfig, schedule: NoiseSchedule,
                  grid, evaluate_fn, model_fn=None, log=None) -> list[dict]:
    """Train one model per lambda3 value and evaluate it.

    ``evaluate_fn(model) -> metrics`` supplies the S/U/H computation so the
    sweep stays decoupled from guidance settings. ``model_fn(rng) -> Denoiser``
    builds each fresh model; None falls back to train()'s default
    architecture.
    """
    rows = []
    for i, lam3 in enumerate(grid):
        cfg = replace(config,
                      weights=replace(config.weights, lambda3=float(lam3)))
        rng = RngState(config.seed).spawn(1000 + i)
        model = None if model_fn is None else model_fn(rng.spawn(1))
        model, _ = train(dataset, cfg, schedule, model=model, rng=rng, log=log)
        metrics = evaluate_fn(model)
        rows.append({"lambda3": float(lam3), "S": metrics.S, "U": metrics.U,
                     "H": metrics.H})
        if log is not None:
            log(f"lambda3={lam3} S={metrics.S:.4f} U={metrics.U:.4f} "
                f"H={metrics.H:.4f}")
    return rows
