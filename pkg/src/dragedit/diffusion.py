"""Noise schedule, denoising training objective, and deterministic
DDIM sampling / inversion for the toy pixel-space model.

The schedule covers ``t_train`` fine-grained steps; sampling walks a
K-step subsequence ``tau`` of it.  All sampling and inversion here is
the eta=0 deterministic variant: given the same model and inputs, every
trajectory is bitwise reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .autodiff import (
    AdamState,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    backward,
    mean_all,
    mul,
    sub,
    zero_grads,
)
from .unet import TapState, UNet

__all__ = [
    "NoiseSchedule",
    "DdimSchedule",
    "TrainConfig",
    "make_linear_schedule",
    "make_ddim_schedule",
    "q_sample",
    "ddim_step",
    "ddim_invert_step",
    "ddim_sample",
    "ddim_invert",
    "train_step",
    "train",
]

DEFAULT_T_TRAIN = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_DDIM_STEPS = 50


@dataclass
class NoiseSchedule:
    """Forward-process coefficients over the fine training grid."""

    t_train: int
    beta: np.ndarray        # float64 [t_train]
    alpha: np.ndarray       # 1 - beta
    alpha_bar: np.ndarray   # cumulative product of alpha


def make_linear_schedule(t_train: int = DEFAULT_T_TRAIN,
                         beta_start: float = DEFAULT_BETA_START,
                         beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})")
    if t_train < 2:
        raise ValueError(f"t_train must be >= 2, got {t_train}")
    beta = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
    alpha = 1.0 - beta
    return NoiseSchedule(t_train, beta, alpha, np.cumprod(alpha))


@dataclass
class DdimSchedule:
    """K-step subsequence of the training grid; tau[0] = 0."""

    k_steps: int
    tau: np.ndarray  # int64 [k_steps + 1], strictly increasing


def make_ddim_schedule(t_train: int = DEFAULT_T_TRAIN,
                       k_steps: int = DEFAULT_DDIM_STEPS) -> DdimSchedule:
    if not (1 <= k_steps <= t_train):
        raise ValueError(f"k_steps must be in [1, {t_train}], got {k_steps}")
    tau = np.rint(np.arange(k_steps + 1) * (t_train / k_steps)).astype(np.int64)
    tau[-1] = min(tau[-1], t_train - 1)
    if np.any(np.diff(tau) <= 0):
        raise ValueError(f"ddim schedule degenerate for k_steps={k_steps}")
    return DdimSchedule(k_steps, tau)


def q_sample(x0: Tensor, t: int, noise: Tensor, sched: NoiseSchedule) -> Tensor:
    """Forward diffusion: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) noise."""
    if not 0 <= t < sched.t_train:
        raise ValueError(f"timestep {t} outside [0, {sched.t_train})")
    if noise.shape != x0.shape:
        raise ShapeError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    ab = sched.alpha_bar[t]
    out = np.sqrt(ab) * x0.data + np.sqrt(1.0 - ab) * noise.data
    return Tensor(out.astype(x0.dtype, copy=False))


def _check_k(k: int, ddim: DdimSchedule) -> None:
    if not 1 <= k <= ddim.k_steps:
        raise ValueError(f"ddim index {k} outside [1, {ddim.k_steps}]")


def ddim_step(x_k: Tensor, eps_hat: Tensor, k: int, sched: NoiseSchedule,
              ddim: DdimSchedule) -> Tensor:
    """One deterministic denoising step x_k -> x_{k-1}."""
    _check_k(k, ddim)
    ab_k = sched.alpha_bar[ddim.tau[k]]
    ab_prev = sched.alpha_bar[ddim.tau[k - 1]]
    x0_pred = (x_k.data - np.sqrt(1.0 - ab_k) * eps_hat.data) / np.sqrt(ab_k)
    out = np.sqrt(ab_prev) * x0_pred + np.sqrt(1.0 - ab_prev) * eps_hat.data
    return Tensor(out.astype(x_k.dtype, copy=False))


def ddim_invert_step(model: UNet, x_prev: Tensor, k: int, sched: NoiseSchedule,
                     ddim: DdimSchedule) -> Tensor:
    """One first-order inversion step x_{k-1} -> x_k.

    Uses eps(x_{k-1}, tau_{k-1}) as the noise estimate, i.e. the
    denoising recurrence run in reverse with the model evaluated at the
    point we already have.
    """
    _check_k(k, ddim)
    eps = model.forward(x_prev, int(ddim.tau[k - 1]))
    ab_prev = sched.alpha_bar[ddim.tau[k - 1]]
    ab_k = sched.alpha_bar[ddim.tau[k]]
    x0_pred = (x_prev.data - np.sqrt(1.0 - ab_prev) * eps.data) / np.sqrt(ab_prev)
    out = np.sqrt(ab_k) * x0_pred + np.sqrt(1.0 - ab_k) * eps.data
    return Tensor(out.astype(x_prev.dtype, copy=False))


def ddim_invert(model: UNet, x0: Tensor, k_target: int, sched: NoiseSchedule,
                ddim: DdimSchedule) -> Tensor:
    """Map a clean image to its noisy state at ddim index ``k_target``."""
    if not 0 <= k_target <= ddim.k_steps:
        raise ValueError(f"k_target {k_target} outside [0, {ddim.k_steps}]")
    x = x0
    for k in range(1, k_target + 1):
        x = ddim_invert_step(model, x, k, sched, ddim)
    return x


def ddim_sample(model: UNet, x_start: Tensor, k_start: int, k_end: int,
                sched: NoiseSchedule, ddim: DdimSchedule,
                taps_per_step: Mapping[int, TapState] | None = None) -> Tensor:
    """Denoise from index k_start down to k_end, applying per-step taps."""
    if not 0 <= k_end <= k_start <= ddim.k_steps:
        raise ValueError(
            f"need k_steps >= k_start >= k_end >= 0, got ({k_start}, {k_end})")
    x = x_start
    for k in range(k_start, k_end, -1):
        taps = taps_per_step.get(k) if taps_per_step else None
        eps = model.forward(x, int(ddim.tau[k]), taps)
        x = ddim_step(x, eps, k, sched, ddim)
    return x


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    steps: int = 4000
    batch_size: int = 16
    lr: float = 2e-4
    seed: int = 0
    log_every: int = 50
    ckpt_every: int = 0        # 0 = only at the end
    skip_dropout: float = 0.25  # per-skip zeroing probability during training

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("TrainConfig requires steps >= 0, batch_size >= 1, lr > 0")
        if not 0.0 <= self.skip_dropout < 1.0:
            raise ValueError("skip_dropout must be in [0, 1)")


def train_step(model: UNet, opt: AdamState, batch: Tensor, sched: NoiseSchedule,
               rng: np.random.Generator, lr: float,
               skip_dropout: float = 0.0) -> float:
    """One denoising-objective step: predict the injected noise, MSE, Adam.

    With ``skip_dropout`` > 0, each encoder skip is zeroed independently
    with that probability (inverted scaling keeps the expectation), so
    the decoder cannot learn to bypass the bottleneck.
    """
    t = int(rng.integers(0, sched.t_train))
    noise = Tensor(rng.standard_normal(batch.shape).astype(np.float32))
    x_t = q_sample(batch, t, noise, sched)
    skip_scales = None
    if skip_dropout > 0.0:
        keep = rng.random(3) >= skip_dropout
        skip_scales = tuple(float(k) / (1.0 - skip_dropout) for k in keep)
    params = model.parameters()
    with Tape() as tape:
        eps_hat = model.forward(x_t, t, skip_scales=skip_scales)
        diff = sub(eps_hat, noise)
        loss = mean_all(mul(diff, diff))
        if not np.isfinite(loss.data):
            raise NonFiniteError(f"training loss diverged at t={t}")
        backward(loss, tape)
    adam_step(params, opt, lr)
    zero_grads(params)
    return float(loss.data)


def train(model: UNet, dataset: np.ndarray, cfg: TrainConfig, sched: NoiseSchedule,
          log_fn: Callable[[int, float, float], None] | None = None,
          ckpt_fn: Callable[[int], None] | None = None) -> list[float]:
    """Full training loop; returns the per-step loss sequence.

    ``dataset`` is [n, C, H, W] in [-1, 1].  The RNG stream (batch
    selection, timestep, noise) is fully determined by ``cfg.seed``.
    """
    if dataset.ndim != 4:
        raise ShapeError(f"dataset must be [n,C,H,W], got shape {dataset.shape}")
    rng = np.random.default_rng(cfg.seed)
    model.set_requires_grad(True)
    opt = AdamState(model.parameters())
    losses: list[float] = []
    start = time.monotonic()
    try:
        for step in range(cfg.steps):
            idx = rng.integers(0, dataset.shape[0], size=cfg.batch_size)
            batch = Tensor(dataset[idx])
            loss = train_step(model, opt, batch, sched, rng, cfg.lr,
                              skip_dropout=cfg.skip_dropout)
            losses.append(loss)
            if log_fn and (step % cfg.log_every == 0 or step == cfg.steps - 1):
                log_fn(step, loss, time.monotonic() - start)
            if ckpt_fn and cfg.ckpt_every and step and step % cfg.ckpt_every == 0:
                ckpt_fn(step)
    finally:
        model.set_requires_grad(False)
    return losses
