"""Point-drag editing engine.

The edit proceeds in three phases:

1. **Capture** — the source image is inverted to its noisy state at the
   edit step, one forward pass records the feature to be optimized
   (bottleneck by default), the supervision feature map, the encoder
   skip activations, and the initial feature vector of every anchor.

2. **Optimization** — the captured feature is treated as a free
   variable.  Each iteration recomputes the supervision map from it
   (decoder-only when optimizing the bottleneck, so the backward chain
   is short), pulls the features around every anchor one normalized
   step toward its objective under an L1 alignment loss (plus an
   optional L1 mask penalty at the optimized feature's resolution),
   applies one Adam update, and relocates each anchor to the nearest
   match of its initial feature within a small search window.  A
   post-update forward doubles as the next iteration's loss input, so
   each iteration costs a single forward/backward.

3. **Propagation** — denoising resumes from the captured noisy state
   with the optimized feature substituted at every step of the editing
   stage (down to the refinement step), then runs free so fine detail
   can settle.

Coordinates are (x=column, y=row) pixels.  The supervision map is at
image resolution, so points index it directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autodiff import (
    AdamState,
    ShapeError,
    Tape,
    Tensor,
    abs_sum,
    adam_step,
    add,
    backward,
    bilinear_sample,
    mul,
    reshape,
    scale,
    sub,
)
from .diffusion import DdimSchedule, NoiseSchedule, ddim_invert, ddim_sample
from .unet import FeatureTap, TapState, UNet, tap_shape

__all__ = [
    "DragInstruction",
    "DragParams",
    "EditSession",
    "SessionStatus",
    "DegenerateDragError",
    "normalized_direction",
    "alignment_loss",
    "mask_loss",
    "downsample_mask",
    "track_anchors",
    "capture_state",
    "optimize_iteration",
    "run_drag_optimization",
    "propagate_and_denoise",
    "drag_edit",
]


class DegenerateDragError(ValueError):
    """Anchor and objective coincide, leaving the drag direction undefined."""


@dataclass
class DragInstruction:
    """User point pairs plus an optional editable-region mask.

    ``pairs`` holds ((ax, ay), (bx, by)) anchor/objective pixel
    coordinates; ``mask`` is an [H, W] array over the image where 1
    marks the editable region.
    """

    pairs: list[tuple[tuple[float, float], tuple[float, float]]]
    mask: np.ndarray | None = None

    def validate(self, image_size: int) -> None:
        if not self.pairs:
            raise ValueError("at least one drag pair is required")
        for i, (a, b) in enumerate(self.pairs):
            for (x, y) in (a, b):
                if not (0 <= x <= image_size - 1 and 0 <= y <= image_size - 1):
                    raise ValueError(
                        f"pair {i}: point ({x},{y}) outside {image_size}x{image_size} image")
            if float(np.hypot(b[0] - a[0], b[1] - a[1])) == 0.0:
                raise DegenerateDragError("degenerate drag pair")
        if self.mask is not None:
            if self.mask.shape != (image_size, image_size):
                raise ShapeError(
                    f"mask shape {self.mask.shape} != ({image_size},{image_size})")
            vals = np.unique(self.mask)
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise ValueError("mask values must be 0 or 1")

    def anchors(self) -> np.ndarray:
        return np.array([a for a, _ in self.pairs], dtype=np.float32)

    def objectives(self) -> np.ndarray:
        return np.array([b for _, b in self.pairs], dtype=np.float32)


@dataclass
class DragParams:
    """Editing hyperparameters (drag loop, optimizer, propagation window)."""

    t_edit: int = 35
    t_refine: int = 10
    r1: int = 1
    r2: int = 3
    lam: float = 0.1
    lr: float = 0.01
    max_steps: int = 80
    stop_dist_px: float = 1.0
    supervision_tap: FeatureTap = FeatureTap.DECODER_BLOCK3
    optimized_tap: FeatureTap = FeatureTap.BOTTLENECK
    propagate: bool = True

    def __post_init__(self):
        if not 0 <= self.t_refine < self.t_edit:
            raise ValueError(f"need 0 <= t_refine < t_edit, got ({self.t_refine}, {self.t_edit})")
        if self.r1 < 0 or self.r2 < 1 or self.lam < 0 or self.max_steps < 0:
            raise ValueError("invalid drag parameters: r1 >= 0, r2 >= 1, lam >= 0, max_steps >= 0")


class SessionStatus(Enum):
    RUNNING = "running"
    CONVERGED = "converged"
    MAX_STEPS = "max-steps"
    FAILED = "failed"


@dataclass
class EditSession:
    """State of one drag edit from capture through optimization."""

    z_t: Tensor                      # inverted noisy image at the edit step
    skips: list[Tensor]              # cached encoder activations
    s_t: Tensor                      # captured feature at the optimized tap
    s_hat: Tensor                    # the optimized feature (requires_grad)
    f0: list[np.ndarray]             # initial anchor feature vectors [C]
    anchors: np.ndarray              # current anchor positions [m, 2]
    objectives: np.ndarray           # objective positions [m, 2]
    mask_small: np.ndarray | None    # mask at the optimized tap's resolution
    t_model: int                     # fine-grid timestep of the edit step
    loss_history: list[tuple[int, float, float]] = field(default_factory=list)
    trajectory: list[np.ndarray] = field(default_factory=list)
    status: SessionStatus = SessionStatus.RUNNING
    iterations: int = 0
    adam: AdamState | None = None
    # post-update forward reused as the next iteration's loss input
    pending_tape: Tape | None = None
    pending_feature: Tensor | None = None
    last_tape: Tape | None = None  # tape consumed by the most recent backward

    def max_remaining_distance(self) -> float:
        return float(np.linalg.norm(self.anchors - self.objectives, axis=1).max())

    def latest_losses(self) -> tuple[float, float]:
        if not self.loss_history:
            return 0.0, 0.0
        _, a, m = self.loss_history[-1]
        return a, m


def normalized_direction(a: tuple[float, float] | np.ndarray,
                         b: tuple[float, float] | np.ndarray) -> tuple[float, float]:
    """Unit vector pointing from a to b."""
    dx, dy = float(b[0] - a[0]), float(b[1] - a[1])
    n = float(np.hypot(dx, dy))
    if n == 0.0:
        raise DegenerateDragError("degenerate drag pair")
    return dx / n, dy / n


def _window_center(p: np.ndarray) -> tuple[int, int]:
    return int(np.rint(p[0])), int(np.rint(p[1]))


def alignment_loss(fmap: Tensor, anchors: np.ndarray, directions: np.ndarray,
                   r1: int) -> Tensor:
    """L1 pull of each anchor neighborhood one unit step along its direction.

    For every integer grid point p in the Chebyshev-r1 square around the
    rounded anchor, the term is ||stop_grad(F_p) - F_{p+v}||_1: the
    anchored feature is a plain lookup excluded from gradient flow, the
    moved feature is bilinearly sampled and differentiable.
    """
    if fmap.data.ndim != 3:
        raise ShapeError(f"alignment_loss expects a CHW map, got {fmap.shape}")
    _, h, w = fmap.shape
    data = fmap.data
    total: Tensor | None = None
    for p, v in zip(anchors, directions):
        cx, cy = _window_center(p)
        if cx - r1 - 1 < 0 or cy - r1 - 1 < 0 or cx + r1 + 1 > w - 1 or cy + r1 + 1 > h - 1:
            raise ShapeError(
                f"alignment window of anchor ({p[0]},{p[1]}) with r1={r1} leaves the "
                f"{w}x{h} feature map")
        for dy in range(-r1, r1 + 1):
            for dx in range(-r1, r1 + 1):
                px, py = cx + dx, cy + dy
                anchored = Tensor(data[:, py, px].copy())
                moved = bilinear_sample(fmap, px + float(v[0]), py + float(v[1]))
                term = abs_sum(sub(moved, anchored))
                total = term if total is None else add(total, term)
    assert total is not None
    return total


def mask_loss(s_t: Tensor, s_hat: Tensor, mask_small: np.ndarray) -> Tensor:
    """L1 change of the optimized feature outside the editable region."""
    if s_t.shape != s_hat.shape:
        raise ShapeError(f"feature shapes differ: {s_t.shape} vs {s_hat.shape}")
    if mask_small.shape != s_t.shape[-2:]:
        raise ShapeError(
            f"mask shape {mask_small.shape} != feature spatial {s_t.shape[-2:]}")
    keep = np.broadcast_to((1.0 - mask_small).astype(s_hat.dtype), s_t.shape).copy()
    return abs_sum(mul(sub(s_t.detach(), s_hat), Tensor(keep)))


def downsample_mask(mask: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Area-average pool a binary [H, W] mask, then threshold at 0.5."""
    hh, ww = mask.shape
    th, tw = target
    if hh % th or ww % tw:
        raise ShapeError(f"mask {mask.shape} not divisible into {target}")
    pooled = mask.reshape(th, hh // th, tw, ww // tw).mean(axis=(1, 3))
    return (pooled >= 0.5).astype(np.float32)


def track_anchors(fmap: np.ndarray, anchors: np.ndarray, f0: list[np.ndarray],
                  r2: int, margin: int = 0) -> np.ndarray:
    """Move each anchor to the best L1 match of its initial feature.

    The search covers integer grid points within Chebyshev distance r2
    of the rounded anchor, clipped at the map border (or ``margin``
    pixels inside it, so a caller can keep anchors where its loss stays
    defined).  Ties resolve in row-major scan order (smallest y, then
    smallest x).
    """
    _, h, w = fmap.shape
    out = anchors.copy()
    for i, p in enumerate(anchors):
        cx, cy = _window_center(p)
        x0, x1 = max(margin, cx - r2), min(w - 1 - margin, cx + r2)
        y0, y1 = max(margin, cy - r2), min(h - 1 - margin, cy + r2)
        window = fmap[:, y0:y1 + 1, x0:x1 + 1]
        dist = np.abs(window - f0[i][:, None, None]).sum(axis=0)
        dy, dx = divmod(int(np.argmin(dist)), dist.shape[1])
        out[i] = (x0 + dx, y0 + dy)
    return out


def _clamp_anchors(anchors: np.ndarray, size: int, r1: int) -> np.ndarray:
    """Clamp anchors so the alignment window (plus the unit drag step)
    always samples inside the supervision map."""
    margin = r1 + 1
    return np.clip(anchors, margin, size - 1 - margin).astype(np.float32)


def capture_state(model: UNet, x0: Tensor, instruction: DragInstruction,
                  dp: DragParams, sched: NoiseSchedule, ddim: DdimSchedule) -> EditSession:
    """Invert the image to the edit step and snapshot everything the
    optimization loop needs."""
    size = model.config.image_size
    instruction.validate(size)
    if dp.t_edit > ddim.k_steps:
        raise ValueError(f"t_edit {dp.t_edit} exceeds schedule length {ddim.k_steps}")
    sup_c, sup_h, sup_w = tap_shape(dp.supervision_tap, model.config)
    if (sup_h, sup_w) != (size, size):
        raise ValueError(
            f"supervision tap {dp.supervision_tap.value} is {sup_w}x{sup_h}; point "
            f"coordinates require an image-resolution map ({size}x{size})")

    z_t = ddim_invert(model, x0, dp.t_edit, sched, ddim)
    t_model = int(ddim.tau[dp.t_edit])
    taps = TapState.capture(FeatureTap.ENCODER_BLOCK1, FeatureTap.ENCODER_BLOCK2,
                            FeatureTap.ENCODER_BLOCK3, dp.optimized_tap,
                            dp.supervision_tap)
    model.forward(z_t, t_model, taps)
    skips = [taps.captured[t] for t in (FeatureTap.ENCODER_BLOCK1,
                                        FeatureTap.ENCODER_BLOCK2,
                                        FeatureTap.ENCODER_BLOCK3)]
    s_t = taps.captured[dp.optimized_tap]
    sup_map = taps.captured[dp.supervision_tap].data[0]

    anchors = _clamp_anchors(instruction.anchors(), size, dp.r1)
    objectives = instruction.objectives()
    for a, b in zip(anchors, objectives):
        if float(np.hypot(b[0] - a[0], b[1] - a[1])) == 0.0:
            raise DegenerateDragError("degenerate drag pair")
    f0: list[np.ndarray] = []
    fmap = Tensor(sup_map)
    for ax, ay in anchors:
        f0.append(bilinear_sample(fmap, float(ax), float(ay)).data.copy())

    mask_small = None
    if instruction.mask is not None:
        _, th, tw = tap_shape(dp.optimized_tap, model.config)
        mask_small = downsample_mask(instruction.mask.astype(np.float32), (th, tw))

    s_hat = Tensor(s_t.data.copy(), requires_grad=True)
    session = EditSession(
        z_t=z_t, skips=skips, s_t=s_t, s_hat=s_hat, f0=f0,
        anchors=anchors, objectives=objectives, mask_small=mask_small,
        t_model=t_model, adam=AdamState([s_hat]),
    )
    session.trajectory.append(anchors.copy())
    return session


def _supervision_forward(model: UNet, session: EditSession, dp: DragParams,
                         tape: Tape) -> Tensor:
    """Differentiable supervision map [C,H,W] reflecting the current s_hat.

    Bottleneck optimization reuses the cached skips and walks only the
    decoder; any other optimized tap re-runs the full forward with the
    tap overridden (upstream layers carry no gradient, so they are not
    recorded).
    """
    with tape:
        if dp.optimized_tap is FeatureTap.BOTTLENECK \
                and dp.supervision_tap in (FeatureTap.DECODER_BLOCK1,
                                           FeatureTap.DECODER_BLOCK2,
                                           FeatureTap.DECODER_BLOCK3):
            taps = TapState.capture(dp.supervision_tap)
            model.decoder_forward(session.s_hat, session.skips, session.t_model, taps)
        else:
            taps = TapState(captures={dp.supervision_tap},
                            overrides={dp.optimized_tap: session.s_hat})
            model.forward(session.z_t, session.t_model, taps)
        fmap = taps.captured[dp.supervision_tap]
        return reshape(fmap, fmap.shape[1:])


def optimize_iteration(model: UNet, session: EditSession, dp: DragParams) -> None:
    """One drag step: loss, backward, Adam update, anchor tracking.

    The loss consumes the supervision map computed right after the
    previous update (or a fresh one on the first call); the post-update
    map computed here both relocates the anchors and becomes the next
    iteration's loss input, so every iteration runs exactly one
    decoder pass.
    """
    if session.status is not SessionStatus.RUNNING:
        raise RuntimeError(f"session is {session.status.value}, not running")
    if session.pending_feature is None:
        session.pending_tape = Tape()
        session.pending_feature = _supervision_forward(model, session, dp,
                                                       session.pending_tape)
    tape, fmap = session.pending_tape, session.pending_feature

    dists = np.linalg.norm(session.anchors - session.objectives, axis=1)
    active = dists > dp.stop_dist_px
    if not active.any():
        raise RuntimeError("all drag pairs already satisfied; nothing to optimize")
    # pairs already at their objective contribute no pull this iteration
    act_anchors = session.anchors[active]
    act_dirs = np.array([
        normalized_direction(a, b)
        for a, b in zip(session.anchors[active], session.objectives[active])
    ], dtype=np.float64)

    with tape:
        loss = alignment_loss(fmap, act_anchors, act_dirs, dp.r1)
        align_val = float(loss.data)
        mask_val = 0.0
        if session.mask_small is not None and dp.lam > 0:
            m_loss = mask_loss(session.s_t, session.s_hat, session.mask_small)
            mask_val = float(m_loss.data)
            loss = add(loss, scale(m_loss, dp.lam))
    if not np.isfinite(loss.data):
        session.status = SessionStatus.FAILED
        return
    backward(loss, tape)
    session.last_tape = tape
    assert session.adam is not None
    adam_step([session.s_hat], session.adam, dp.lr)
    session.s_hat.zero_grad()
    session.iterations += 1
    session.loss_history.append((session.iterations, align_val, mask_val))

    # post-update forward: tracks anchors now, feeds the next loss
    session.pending_tape = Tape()
    session.pending_feature = _supervision_forward(model, session, dp,
                                                   session.pending_tape)
    # the search stays inside the alignment-valid margin so the next loss
    # window never leaves the map
    session.anchors = track_anchors(session.pending_feature.data, session.anchors,
                                    session.f0, dp.r2, margin=dp.r1 + 1)
    session.trajectory.append(session.anchors.copy())


def run_drag_optimization(model: UNet, session: EditSession, dp: DragParams,
                          progress=None) -> EditSession:
    """Iterate until every anchor sits within the stop distance of its
    objective, or the step budget runs out."""
    while session.status is SessionStatus.RUNNING:
        if session.max_remaining_distance() <= dp.stop_dist_px:
            session.status = SessionStatus.CONVERGED
            break
        if session.iterations >= dp.max_steps:
            session.status = SessionStatus.MAX_STEPS
            break
        optimize_iteration(model, session, dp)
        if progress is not None:
            progress(session)
    session.pending_tape = None
    session.pending_feature = None
    return session


def propagate_and_denoise(model: UNet, session: EditSession, dp: DragParams,
                          sched: NoiseSchedule, ddim: DdimSchedule) -> Tensor:
    """Denoise from the edit step with the optimized feature substituted.

    The substitution covers every step of the editing stage
    (t_edit >= k > t_refine); the remaining refinement steps run
    untouched.  With ``propagate`` off, only the edit step itself is
    substituted (the single-step ablation).
    """
    s_hat = session.s_hat.detach()
    if dp.propagate:
        override_steps = range(dp.t_edit, dp.t_refine, -1)
    else:
        override_steps = (dp.t_edit,)
    taps = {k: TapState.override(dp.optimized_tap, s_hat) for k in override_steps}
    x = ddim_sample(model, session.z_t, dp.t_edit, 0, sched, ddim, taps)
    return Tensor(np.clip(x.data, -1.0, 1.0))


def drag_edit(model: UNet, x0: Tensor, instruction: DragInstruction, dp: DragParams,
              sched: NoiseSchedule, ddim: DdimSchedule,
              progress=None) -> tuple[EditSession, Tensor]:
    """Capture, optimize, and propagate in one call."""
    session = capture_state(model, x0, instruction, dp, sched, ddim)
    run_drag_optimization(model, session, dp, progress=progress)
    edited = propagate_and_denoise(model, session, dp, sched, ddim)
    return session, edited
