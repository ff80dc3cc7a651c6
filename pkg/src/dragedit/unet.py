"""Toy U-Net noise predictor with named, observable feature taps.

The network runs at three resolutions.  Each block is two
[conv3x3 -> group_norm -> silu] units with a per-block time-embedding
bias between them; avg-pool halves the resolution between encoder
blocks and nearest-neighbor upsampling restores it in the decoder,
whose blocks concatenate the matching encoder skip.  A final 1x1 conv
maps back to the input channel count.

Every block output is a *tap*: it can be captured for inspection and
replaced by an externally supplied tensor.  An override substitutes the
computed activation entirely — downstream layers (and, for encoder
taps, the skip connection fed from that activation) consume the
override.  Substituting a tap with its own captured value therefore
reproduces the original output bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    concat_channels,
    conv2d,
    downsample_avg2,
    group_norm,
    linear,
    scale,
    silu,
    upsample_nearest2,
)

__all__ = ["ArchConfig", "FeatureTap", "TapState", "UNet", "timestep_embedding"]


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters of the toy noise predictor."""

    image_size: int = 32
    in_channels: int = 1
    channel_widths: tuple[int, ...] = (32, 64, 128)
    time_embed_dim: int = 128
    groups: int = 8

    def __post_init__(self):
        if len(self.channel_widths) != 3:
            raise ValueError("channel_widths must list exactly three resolution levels")
        levels = len(self.channel_widths)
        if self.image_size % (1 << (levels - 1)):
            raise ValueError(
                f"image_size {self.image_size} not divisible by {1 << (levels - 1)}")
        for w in self.channel_widths:
            if w % self.groups:
                raise ValueError(f"channel width {w} not divisible by groups {self.groups}")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "in_channels": self.in_channels,
            "channel_widths": list(self.channel_widths),
            "time_embed_dim": self.time_embed_dim,
            "groups": self.groups,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            image_size=int(d["image_size"]),
            in_channels=int(d["in_channels"]),
            channel_widths=tuple(int(w) for w in d["channel_widths"]),
            time_embed_dim=int(d["time_embed_dim"]),
            groups=int(d["groups"]),
        )


class FeatureTap(Enum):
    """Observable/replaceable internal activations, one per block."""

    ENCODER_BLOCK1 = "encoder_block1"
    ENCODER_BLOCK2 = "encoder_block2"
    ENCODER_BLOCK3 = "encoder_block3"
    BOTTLENECK = "bottleneck"
    DECODER_BLOCK1 = "decoder_block1"
    DECODER_BLOCK2 = "decoder_block2"
    DECODER_BLOCK3 = "decoder_block3"

    @classmethod
    def parse(cls, name: str) -> "FeatureTap":
        key = name.strip().lower().replace("-", "_")
        for tap in cls:
            if tap.value == key:
                return tap
        raise ValueError(f"unknown feature tap {name!r}; expected one of "
                         + ", ".join(t.value for t in cls))


def tap_shape(tap: FeatureTap, config: ArchConfig) -> tuple[int, int, int]:
    """(C, H, W) of a tap's activation for one sample."""
    s, w = config.image_size, config.channel_widths
    table = {
        FeatureTap.ENCODER_BLOCK1: (w[0], s, s),
        FeatureTap.ENCODER_BLOCK2: (w[1], s // 2, s // 2),
        FeatureTap.ENCODER_BLOCK3: (w[2], s // 4, s // 4),
        FeatureTap.BOTTLENECK: (w[2], s // 4, s // 4),
        FeatureTap.DECODER_BLOCK1: (w[2], s // 4, s // 4),
        FeatureTap.DECODER_BLOCK2: (w[1], s // 2, s // 2),
        FeatureTap.DECODER_BLOCK3: (w[0], s, s),
    }
    return table[tap]


_ENCODER_TAPS = (FeatureTap.ENCODER_BLOCK1, FeatureTap.ENCODER_BLOCK2,
                 FeatureTap.ENCODER_BLOCK3)
_DECODER_TAPS = (FeatureTap.DECODER_BLOCK1, FeatureTap.DECODER_BLOCK2,
                 FeatureTap.DECODER_BLOCK3)


@dataclass
class TapState:
    """Capture requests and overrides for one forward pass."""

    captures: set[FeatureTap] = field(default_factory=set)
    overrides: dict[FeatureTap, Tensor] = field(default_factory=dict)
    captured: dict[FeatureTap, Tensor] = field(default_factory=dict)

    @classmethod
    def capture(cls, *taps: FeatureTap) -> "TapState":
        return cls(captures=set(taps))

    @classmethod
    def override(cls, tap: FeatureTap, value: Tensor) -> "TapState":
        return cls(overrides={tap: value})


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding: sin half then cos half, frequencies 1 .. 1/10000."""
    if t < 0:
        raise ValueError(f"timestep must be non-negative, got {t}")
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)]).astype(np.float32)


_BLOCKS = ("enc1", "enc2", "enc3", "mid", "dec1", "dec2", "dec3")


def _block_channels(config: ArchConfig) -> dict[str, tuple[int, int]]:
    """(in_channels, out_channels) of each block's first conv."""
    w = config.channel_widths
    return {
        "enc1": (config.in_channels, w[0]),
        "enc2": (w[0], w[1]),
        "enc3": (w[1], w[2]),
        "mid": (w[2], w[2]),
        "dec1": (w[2] + w[2], w[2]),
        "dec2": (w[2] + w[1], w[1]),
        "dec3": (w[1] + w[0], w[0]),
    }


class UNet:
    """Noise predictor eps(x_t, t) built from the primitive tensor ops."""

    def __init__(self, config: ArchConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    # -- construction -----------------------------------------------------

    @classmethod
    def init(cls, config: ArchConfig, seed: int) -> "UNet":
        """Deterministic fan-in-scaled uniform initialization from ``seed``."""
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}

        def conv_param(name: str, c_out: int, c_in: int, k: int, gain: float = 1.0):
            fan_in = c_in * k * k
            bound = gain * math.sqrt(3.0 / fan_in)
            params[f"{name}.w"] = Tensor(
                rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(np.float32))
            params[f"{name}.b"] = Tensor(np.zeros(c_out, dtype=np.float32))

        def norm_param(name: str, c: int):
            params[f"{name}.g"] = Tensor(np.ones(c, dtype=np.float32))
            params[f"{name}.b"] = Tensor(np.zeros(c, dtype=np.float32))

        def time_param(name: str, c: int):
            d = config.time_embed_dim
            bound = math.sqrt(3.0 / d)
            params[f"{name}.w"] = Tensor(
                rng.uniform(-bound, bound, size=(d, c)).astype(np.float32))
            params[f"{name}.b"] = Tensor(np.zeros(c, dtype=np.float32))

        for blk in _BLOCKS:
            c_in, c_out = _block_channels(config)[blk]
            conv_param(f"{blk}.conv1", c_out, c_in, 3)
            norm_param(f"{blk}.norm1", c_out)
            conv_param(f"{blk}.conv2", c_out, c_out, 3)
            norm_param(f"{blk}.norm2", c_out)
            time_param(f"{blk}.time", c_out)
        # damped output projection: the untrained predictor starts near zero,
        # which both stabilizes early training and makes the initial denoising
        # loss sit at the variance of the target noise
        conv_param("out.conv", config.in_channels, config.channel_widths[0], 1,
                   gain=0.01)
        return cls(config, params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- forward ----------------------------------------------------------

    def _block(self, name: str, x: Tensor, emb: Tensor) -> Tensor:
        # timestep bias lands between the two conv units so the second
        # convolution can shape the conditioning
        p = self.params
        h = silu(group_norm(conv2d(x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"], pad=1),
                            self.config.groups, p[f"{name}.norm1.g"], p[f"{name}.norm1.b"]))
        tb = linear(emb, p[f"{name}.time.w"], p[f"{name}.time.b"])
        h = add(h, tb)
        return silu(group_norm(conv2d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"], pad=1),
                               self.config.groups, p[f"{name}.norm2.g"], p[f"{name}.norm2.b"]))

    def _apply_tap(self, tap: FeatureTap, value: Tensor, taps: TapState | None) -> Tensor:
        if taps is None:
            return value
        override = taps.overrides.get(tap)
        if override is not None:
            want = (value.shape[0],) + tap_shape(tap, self.config)
            if override.shape != want:
                raise ShapeError(
                    f"override for {tap.value} has shape {override.shape}, expected {want}")
            value = override  # computed activation is discarded
        if tap in taps.captures:
            # captures observe the effective value downstream layers consume
            taps.captured[tap] = value
        return value

    def _embed(self, t: int) -> Tensor:
        return Tensor(timestep_embedding(t, self.config.time_embed_dim))

    def forward(self, x: Tensor, t: int, taps: TapState | None = None,
                skip_scales: tuple[float, float, float] | None = None) -> Tensor:
        """Predict the noise component of x_t; fills requested tap captures.

        ``skip_scales`` rescales each encoder skip before the decoder
        consumes it (the encoder's own downstream path is untouched).
        Training uses it for skip dropout, which keeps the decoder from
        leaning on the skips alone and forces semantic content through
        the bottleneck; inference leaves it unset.
        """
        n, c, h, w = x.shape if x.data.ndim == 4 else (None,) * 4
        s = self.config.image_size
        if n is None or c != self.config.in_channels or h != s or w != s:
            raise ShapeError(
                f"unet input shape {x.shape} does not match configured "
                f"(N,{self.config.in_channels},{s},{s})")
        emb = self._embed(t)
        enc1 = self._apply_tap(FeatureTap.ENCODER_BLOCK1, self._block("enc1", x, emb), taps)
        enc2 = self._apply_tap(FeatureTap.ENCODER_BLOCK2,
                               self._block("enc2", downsample_avg2(enc1), emb), taps)
        enc3 = self._apply_tap(FeatureTap.ENCODER_BLOCK3,
                               self._block("enc3", downsample_avg2(enc2), emb), taps)
        mid = self._apply_tap(FeatureTap.BOTTLENECK, self._block("mid", enc3, emb), taps)
        skips = [enc1, enc2, enc3]
        if skip_scales is not None:
            skips = [sk if f == 1.0 else scale(sk, f)
                     for sk, f in zip(skips, skip_scales)]
        return self._decode(mid, skips, emb, taps)

    def _decode(self, bottleneck: Tensor, skips: list[Tensor], emb: Tensor,
                taps: TapState | None) -> Tensor:
        enc1, enc2, enc3 = skips
        d1 = self._apply_tap(
            FeatureTap.DECODER_BLOCK1,
            self._block("dec1", concat_channels(bottleneck, enc3), emb), taps)
        d2 = self._apply_tap(
            FeatureTap.DECODER_BLOCK2,
            self._block("dec2", concat_channels(upsample_nearest2(d1), enc2), emb), taps)
        d3 = self._apply_tap(
            FeatureTap.DECODER_BLOCK3,
            self._block("dec3", concat_channels(upsample_nearest2(d2), enc1), emb), taps)
        return conv2d(d3, self.params["out.conv.w"], self.params["out.conv.b"])

    def decoder_forward(self, bottleneck: Tensor, skips: list[Tensor], t: int,
                        taps: TapState | None = None) -> Tensor:
        """Decoder-only pass from a (possibly substituted) bottleneck feature.

        ``skips`` must be the cached encoder activations from a prior
        :meth:`forward` on the same input and timestep; the result then
        matches a full forward with the same bottleneck override bitwise.
        Only decoder ops land on the tape, so a loss backpropagated from
        here never touches encoder parameters.
        """
        want = tap_shape(FeatureTap.BOTTLENECK, self.config)
        if bottleneck.data.ndim != 4 or bottleneck.shape[1:] != want:
            raise ShapeError(
                f"bottleneck shape {bottleneck.shape} does not match (N,)+{want}")
        if len(skips) != 3:
            raise ShapeError(f"expected 3 encoder skips, got {len(skips)}")
        for tap, sk in zip(_ENCODER_TAPS, skips):
            want_sk = (bottleneck.shape[0],) + tap_shape(tap, self.config)
            if sk.shape != want_sk:
                raise ShapeError(
                    f"skip for {tap.value} has shape {sk.shape}, expected {want_sk}")
        return self._decode(bottleneck, list(skips), self._embed(t), taps)
