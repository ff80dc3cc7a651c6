"""Feature-replacement study: freeze one tap's activation at a chosen
step of the denoising trajectory and inject it into every later step,
then measure how well the image still reconstructs.

The baseline reconstructs each image by full inversion followed by
plain denoising; every (tap, start step) cell replays that denoising
with the frozen feature and reports MSE against the original input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .diffusion import DdimSchedule, NoiseSchedule, ddim_invert, ddim_sample
from .unet import FeatureTap, TapState, UNet

__all__ = ["ProbeConfig", "capture_series", "replay_with_replacement", "probe_report"]


@dataclass
class ProbeConfig:
    taps: list[FeatureTap] = field(
        default_factory=lambda: [FeatureTap.BOTTLENECK, FeatureTap.ENCODER_BLOCK1])
    start_steps: list[int] = field(default_factory=lambda: [45, 35, 25])
    n_images: int = 16
    image_seed: int = 99

    def validate(self, k_steps: int) -> None:
        for t0 in self.start_steps:
            if not 1 <= t0 <= k_steps:
                raise ValueError(f"start step {t0} outside [1, {k_steps}]")
        if not self.taps:
            raise ValueError("at least one tap required")


def capture_series(model: UNet, x0: Tensor, tap: FeatureTap, sched: NoiseSchedule,
                   ddim: DdimSchedule) -> tuple[dict[int, Tensor], Tensor, Tensor]:
    """Invert fully, denoise back, recording the tap at every step.

    Returns (step -> feature, baseline reconstruction, fully inverted state).
    """
    z = ddim_invert(model, x0, ddim.k_steps, sched, ddim)
    taps_per_step = {k: TapState.capture(tap) for k in range(1, ddim.k_steps + 1)}
    recon = ddim_sample(model, z, ddim.k_steps, 0, sched, ddim, taps_per_step)
    series = {k: taps_per_step[k].captured[tap] for k in taps_per_step}
    return series, recon, z


def _replay(model: UNet, z: Tensor, frozen: Tensor, tap: FeatureTap, t0: int,
            sched: NoiseSchedule, ddim: DdimSchedule) -> Tensor:
    taps = {k: TapState.override(tap, frozen) for k in range(1, t0 + 1)}
    return ddim_sample(model, z, ddim.k_steps, 0, sched, ddim, taps)


def replay_with_replacement(model: UNet, x0: Tensor, tap: FeatureTap, t0: int,
                            sched: NoiseSchedule, ddim: DdimSchedule) -> Tensor:
    """Denoise with the tap frozen at step t0 and injected at all k <= t0."""
    if not 1 <= t0 <= ddim.k_steps:
        raise ValueError(f"t0 {t0} outside [1, {ddim.k_steps}]")
    series, _, z = capture_series(model, x0, tap, sched, ddim)
    return _replay(model, z, series[t0], tap, t0, sched, ddim)


def mse(a: Tensor | np.ndarray, b: Tensor | np.ndarray) -> float:
    da = a.data if isinstance(a, Tensor) else a
    db = b.data if isinstance(b, Tensor) else b
    return float(((da.astype(np.float64) - db.astype(np.float64)) ** 2).mean())


def probe_report(model: UNet, images: np.ndarray, config: ProbeConfig,
                 sched: NoiseSchedule, ddim: DdimSchedule,
                 ) -> tuple[list[dict], dict[tuple[int, str, int], np.ndarray],
                            dict[int, np.ndarray]]:
    """Full (tap x start step x image) sweep.

    Returns (records, reconstructions keyed by (image, tap, t0),
    baselines keyed by image).  One record per cell:
    image_id, tap, t0, mse, baseline_mse.
    """
    config.validate(ddim.k_steps)
    records: list[dict] = []
    recon_images: dict[tuple[int, str, int], np.ndarray] = {}
    baselines: dict[int, np.ndarray] = {}
    for img_id in range(images.shape[0]):
        x0 = Tensor(images[img_id:img_id + 1])
        z = ddim_invert(model, x0, ddim.k_steps, sched, ddim)
        baseline = None
        for tap in config.taps:
            taps_per_step = {k: TapState.capture(tap)
                             for k in range(1, ddim.k_steps + 1)}
            recon = ddim_sample(model, z, ddim.k_steps, 0, sched, ddim, taps_per_step)
            if baseline is None:
                baseline = recon
                baselines[img_id] = baseline.data[0, 0].copy()
            base_mse = mse(baseline, x0)
            for t0 in config.start_steps:
                frozen = taps_per_step[t0].captured[tap]
                replay = _replay(model, z, frozen, tap, t0, sched, ddim)
                records.append({
                    "image_id": img_id,
                    "tap": tap.value,
                    "t0": t0,
                    "mse": mse(replay, x0),
                    "baseline_mse": base_mse,
                })
                recon_images[(img_id, tap.value, t0)] = replay.data[0, 0].copy()
    return records, recon_images, baselines
