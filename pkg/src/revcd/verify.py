"""Self-contained 64-bit verification suites behind the `verify` subcommand.

Each suite recomputes a core identity against an independent oracle:
finite differences for gradients, Monte-Carlo chains for the forward
kernel, the dual posterior-mean formulas, the guidance-space commutation,
and the closed-form prior KL.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import diffusion, sampling
from .autodiff import check_finite, zero_grads
from .model import Denoiser, DenoiserConfig, loss_classification
from .rng import RngState
from .schedule import build_linear_schedule, prior_kl_diagnostic


@dataclass
class SuiteResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _finite_difference_grads(loss_fn, params, h: float = 1e-5):
    """Central finite differences of a scalar loss over every parameter."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def max_relative_grad_error(model: Denoiser, loss_fn, h: float = 1e-5) -> float:
    """Autodiff vs central differences; relative to a per-tensor scale."""
    zero_grads(model.params.values())
    loss = loss_fn(graph=True)
    loss.backward()
    auto = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in model.params.items()}
    numeric = _finite_difference_grads(lambda: loss_fn(graph=False),
                                       model.params, h=h)
    # central differences carry cancellation noise ~ eps * |loss| / h;
    # analytically-zero gradients (e.g. biases ahead of the batch-norm mean
    # subtraction) need an absolute floor so that noise is not divided by
    # zero. Floor = atol / rtol with atol = 100x the noise estimate.
    rtol = 1e-4
    atol = 100.0 * np.finfo(np.float64).eps * abs(loss.item()) / h
    worst = 0.0
    for name in model.params:
        a, n = auto[name], numeric[name]
        scale = max(np.max(np.abs(a)), np.max(np.abs(n)), atol / rtol, 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n)) / scale))
    return worst


def build_test_model(d_s: int = 8, d_x: int = 16,
                     hidden=(32, 16, 8), n_classes: int = 5,
                     seed: int = 3, dtype=np.float64) -> Denoiser:
    cfg = DenoiserConfig(d_s=d_s, d_x=d_x, n_seen_classes=n_classes,
                         hidden=hidden, d_t=16, d_c=12, n_heads=2,
                         n_tokens=4, dropout=0.0)
    return Denoiser(cfg, rng=RngState(seed), dtype=dtype)


def full_model_loss_fn(model: Denoiser, schedule, batch_size: int = 6,
                       seed: int = 11):
    """A fixed (data, noise, t) tuple; returns a loss closure for gradcheck."""
    rng = RngState(seed)
    cfg = model.config
    weights = diffusion.LossWeights(lambda1=1.0, lambda2=1.0, lambda3=1.0,
                                    p_conditional=0.0)
    s_raw = rng.uniform((batch_size, cfg.d_s))
    x = rng.normal((batch_size, cfg.d_x))
    y = rng.integers(0, cfg.n_seen_classes - 1, (batch_size,))
    t = rng.integers(2, schedule.T, (batch_size,))
    eps = rng.normal((batch_size, cfg.d_s))
    mask = np.zeros(batch_size)
    mask[0] = 1.0  # one masked row so the null embedding gets gradient

    s0 = diffusion.precondition(s_raw)
    s_t = diffusion.forward_noise(s0, t, eps, schedule)

    def loss_fn(graph: bool = True):
        cond = model.encode_condition(x, training=True)
        cond = model.apply_condition_mask(cond, mask)
        s0_hat = model.denoise(s_t, model.time_embed(t), cond, training=True)
        rec = diffusion.loss_reconstruction(s0, s0_hat, t, weights, schedule)
        noise = diffusion.loss_noise(eps, s_t, s0_hat, t, weights, schedule)
        cls = loss_classification(model.classify_head(s0_hat), y)
        total = diffusion.total_loss(rec, noise, cls, weights)
        return total if graph else float(total.item())

    return loss_fn


# -- suites -------------------------------------------------------------


def suite_gradient_check() -> SuiteResult:
    start = time.time()
    model = build_test_model()
    schedule = build_linear_schedule(T=50)
    err = max_relative_grad_error(model, full_model_loss_fn(model, schedule))
    ok = err <= 1e-4
    return SuiteResult("gradient_check", ok,
                       f"max relative error {err:.3e} (tol 1e-4)",
                       time.time() - start)


def suite_kernel_identities(n_chains: int = 20_000) -> SuiteResult:
    start = time.time()
    schedule = build_linear_schedule(T=60)
    rng = RngState(5)
    t_target, d = 50, 4
    s0 = rng.uniform((d,)) * 2 - 1

    # Monte-Carlo composition of single forward steps
    s = np.tile(s0, (n_chains, 1))
    for t in range(1, t_target + 1):
        z = rng.normal((n_chains, d))
        s = np.sqrt(schedule.alpha[t]) * s + np.sqrt(schedule.beta[t]) * z
    abar = schedule.alpha_bar[t_target]
    mean_err = float(np.max(np.abs(s.mean(axis=0) - np.sqrt(abar) * s0)))
    var_err = float(np.max(np.abs(s.var(axis=0) - (1 - abar)) / (1 - abar)))

    # dual posterior-mean formulas on random tuples
    dual_err = 0.0
    for _ in range(1000):
        t = int(rng.integers(2, schedule.T, ()))
        s_t = rng.normal((d,))
        s0_hat = rng.normal((d,))
        mu_x0, _ = diffusion.posterior_mean_var(s_t, s0_hat, t, schedule)
        eps_hat = diffusion.eps_from_x0(s_t, s0_hat, t, schedule)
        mu_eps = diffusion.posterior_mean_from_eps(s_t, eps_hat, t, schedule)
        dual_err = max(dual_err, float(np.max(np.abs(mu_x0 - mu_eps))))

    ok = mean_err <= 1e-2 and var_err <= 0.02 and dual_err <= 1e-10
    return SuiteResult(
        "kernel_identities", ok,
        f"MC mean err {mean_err:.3e} (tol 1e-2), var rel err {var_err:.3e} "
        f"(tol 2e-2), dual-formula err {dual_err:.3e} (tol 1e-10)",
        time.time() - start)


def suite_cfg_equivalence(negate: bool = False) -> SuiteResult:
    start = time.time()
    schedule = build_linear_schedule(T=100)
    rng = RngState(9)
    worst = 0.0
    for g in (0.5, 1.0, 4.0):
        for _ in range(50):
            t = int(rng.integers(2, schedule.T, ()))
            s_t = rng.normal((6,))
            c = rng.normal((6,))
            u = rng.normal((6,))
            coeffs = (g, g) if negate else None
            dev = sampling.cfg_equivalence_check(s_t, c, u, g, t, schedule,
                                                 coefficients=coeffs)
            worst = max(worst, dev)
    ok = worst <= 1e-10
    return SuiteResult("cfg_equivalence", ok,
                       f"max deviation {worst:.3e} (tol 1e-10)",
                       time.time() - start)


def suite_prior_kl() -> SuiteResult:
    start = time.time()
    schedule = build_linear_schedule()
    rng = RngState(13)
    d = 85
    worst = 0.0
    for _ in range(20):
        s0 = rng.uniform((d,)) * 2 - 1  # ||s0||_inf <= 1
        worst = max(worst, prior_kl_diagnostic(schedule, s0) / d)
    ok = worst <= 1e-2
    return SuiteResult("prior_kl", ok,
                       f"max per-dim KL {worst:.3e} (tol 1e-2)",
                       time.time() - start)


def run_all(negate: str | None = None):
    """Run every suite; ``negate`` injects a fault into the named suite."""
    with check_finite():
        return [
            suite_kernel_identities(),
            suite_cfg_equivalence(negate=(negate == "cfg")),
            suite_prior_kl(),
            suite_gradient_check(),
        ]
