"""Dense tensor library with tape-based reverse-mode autodiff.

Tensors wrap a flat float32 (or float64, for high-precision gradient
checks) numpy buffer.  Differentiable operations record themselves onto
the innermost active :class:`Tape`; ``backward`` replays the tape in
reverse, visiting every record exactly once.  Gradients accumulate
additively into ``Tensor.grad`` — callers zero them between iterations.

Conventions used throughout the package:
  * row-major storage, NCHW image layout
  * coordinates are (x=column, y=row)
  * ops run outside any tape (or on non-grad inputs) record nothing,
    so inference paths carry no bookkeeping cost
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "MissingGradientError",
    "tensor",
    "conv2d",
    "group_norm",
    "silu",
    "add",
    "sub",
    "mul",
    "scale",
    "concat_channels",
    "downsample_avg2",
    "upsample_nearest2",
    "linear",
    "bilinear_sample",
    "detach",
    "reshape",
    "sum_all",
    "mean_all",
    "abs_sum",
    "backward",
    "AdamState",
    "adam_step",
    "set_finite_checks",
]


class ShapeError(ValueError):
    """Operand shapes do not conform; the message names the offenders."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where the finite-check guard is enabled."""


class MissingGradientError(RuntimeError):
    """An optimizer step was asked to consume a gradient that is absent."""


_FLOAT_TYPES = (np.float32, np.float64)

# Debug guard: when enabled, every op output is checked for NaN/Inf.
# Off by default to keep the training hot path lean.
_CHECK_FINITE = os.environ.get("DRAGEDIT_CHECK_FINITE", "") not in ("", "0")


def set_finite_checks(enabled: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """A dense n-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        """Value-identical tensor excluded from gradient flow (shares the buffer)."""
        return Tensor(self.data, requires_grad=False)

    def copy(self, requires_grad: bool | None = None) -> "Tensor":
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data.copy(), requires_grad=rg)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


class OpRecord:
    """One executed differentiable op: inputs, output, and its pullback."""

    __slots__ = ("name", "inputs", "output", "pullback")

    def __init__(self, name: str, inputs: tuple[Tensor, ...], output: Tensor,
                 pullback: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]):
        self.name = name
        self.inputs = inputs
        self.output = output
        # pullback maps d(loss)/d(output) to per-input gradients
        # (None for inputs that do not receive gradient).
        self.pullback = pullback


class Tape:
    """Ordered record of differentiable ops, replayed in reverse by backward."""

    def __init__(self):
        self.records: list[OpRecord] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self.records)

    def op_names(self) -> list[str]:
        return [r.name for r in self.records]


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _finish(name: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            pullback: Callable) -> Tensor:
    """Wrap an op result, recording it when gradient flow is possible."""
    if _CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{name}: non-finite values in output")
    tape = _active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    if needs_grad:
        tape.records.append(OpRecord(name, inputs, out, pullback))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate grads of every requires_grad leaf reachable from ``loss``.

    Gradients accumulate additively into ``Tensor.grad`` across calls;
    the caller zeroes them between iterations.  Replaying the same tape
    on identical inputs is bitwise deterministic.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    partials: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records):
        g_out = partials.pop(id(rec.output), None)
        holders.pop(id(rec.output), None)
        if g_out is None:
            continue  # this output does not feed the loss
        grads_in = rec.pullback(g_out)
        for t, g in zip(rec.inputs, grads_in):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in partials:
                partials[key] += g
            else:
                partials[key] = g
                holders[key] = t
    # Whatever was never consumed as an op output is a leaf.
    for key, t in holders.items():
        g = partials[key]
        if t.grad is None:
            t.grad = np.array(g, dtype=t.dtype, copy=True)
        else:
            t.grad += g


# ---------------------------------------------------------------------------
# elementwise / structural ops


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b; also accepts a rank-1 per-channel bias for NCHW a."""
    if a.shape == b.shape:
        def pull(g):
            return g, g
        return _finish("add", (a, b), a.data + b.data, pull)
    if a.data.ndim == 4 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        def pull_bias(g):
            return g, g.sum(axis=(0, 2, 3))
        return _finish("add_bias", (a, b), a.data + b.data[None, :, None, None], pull_bias)
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not conform")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def pull(g):
        return g, -g
    return _finish("sub", (a, b), a.data - b.data, pull)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def pull(g):
        return g * bd, g * ad
    return _finish("mul", (a, b), ad * bd, pull)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def pull(g):
        return (g * s,)
    return _finish("scale", (x,), x.data * x.dtype.type(s), pull)


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    xd = x.data

    def pull(g):
        return (g * (sig * (1.0 + xd * (1.0 - sig))),)
    return _finish("silu", (x,), xd * sig, pull)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] \
            or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: shapes {a.shape} and {b.shape} do not conform")
    ca = a.shape[1]

    def pull(g):
        return g[:, :ca], g[:, ca:]
    return _finish("concat_channels", (a, b), np.concatenate([a.data, b.data], axis=1), pull)


def downsample_avg2(x: Tensor) -> Tensor:
    n, c, h, w = _nchw(x, "downsample_avg2")
    if h % 2 or w % 2:
        raise ShapeError(f"downsample_avg2: spatial dims ({h},{w}) must be even")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def pull(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
        return (gx * g.dtype.type(0.25),)
    return _finish("downsample_avg2", (x,), out, pull)


def upsample_nearest2(x: Tensor) -> Tensor:
    n, c, h, w = _nchw(x, "upsample_nearest2")
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def pull(g):
        # nearest upsample routes gradient back by summation over each 2x2 block
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)
    return _finish("upsample_nearest2", (x,), out, pull)


def _nchw(x: Tensor, op: str) -> tuple[int, int, int, int]:
    if x.data.ndim != 4:
        raise ShapeError(f"{op}: expected NCHW input, got shape {x.shape}")
    return x.shape  # type: ignore[return-value]


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b); x is [D] or [N,D], w is [D,O], b is [O]."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: x {x.shape} incompatible with w {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} incompatible with w {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data
    single = xd.ndim == 1
    inputs = (x, w) if b is None else (x, w, b)

    def pull(g):
        if single:
            gx = wd @ g
            gw = np.outer(xd, g)
            gb = g
        else:
            gx = g @ wd.T
            gw = xd.T @ g
            gb = g.sum(axis=0)
        return (gx, gw) if b is None else (gx, gw, gb)
    return _finish("linear", inputs, out, pull)


def sum_all(x: Tensor) -> Tensor:
    shape, dt = x.shape, x.dtype

    def pull(g):
        return (np.full(shape, g, dtype=dt),)
    return _finish("sum_all", (x,), x.data.sum(dtype=x.dtype), pull)


def mean_all(x: Tensor) -> Tensor:
    shape, dt, n = x.shape, x.dtype, x.size

    def pull(g):
        return (np.full(shape, g / n, dtype=dt),)
    return _finish("mean_all", (x,), x.data.mean(dtype=x.dtype), pull)


def abs_sum(x: Tensor) -> Tensor:
    """L1 mass of x; the subgradient at 0 is taken as 0."""
    sgn = np.sign(x.data)

    def pull(g):
        return (g * sgn,)
    return _finish("abs_sum", (x,), np.abs(x.data).sum(dtype=x.dtype), pull)


def detach(x: Tensor) -> Tensor:
    return x.detach()


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {old} -> {shape}: {exc}") from None

    def pull(g):
        return (g.reshape(old),)
    return _finish("reshape", (x,), out, pull)


# ---------------------------------------------------------------------------
# convolution and normalization


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """[N,C,Hp,Wp] -> [N*Ho*Wo, C*kh*kw] patch matrix (copies)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N, C, Ho, Wo, kh, kw]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of NCHW input x with OCkk kernel w."""
    n, c, h, wd_ = _nchw(x, "conv2d")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-d, got {w.shape}")
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel dims must be odd, got ({kh},{kw})")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d: bias {b.shape} incompatible with {o} output channels")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd_ + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1 or (h + 2 * pad - kh) % stride or (wd_ + 2 * pad - kw) % stride:
        raise ShapeError(
            f"conv2d: input ({h},{wd_}) with pad={pad}, stride={stride} does not tile "
            f"kernel ({kh},{kw})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride)
    w_mat = w.data.reshape(o, -1)
    out = cols @ w_mat.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))
    inputs = (x, w) if b is None else (x, w, b)

    def pull(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gw = (g_mat.T @ cols).reshape(o, c, kh, kw)
        if stride == 1 and pad <= kh - 1 and pad <= kw - 1:
            # grad wrt x is a full correlation with the flipped kernel,
            # expressed as one more im2col + matmul to stay BLAS-bound
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1 - pad,) * 2, (kw - 1 - pad,) * 2))
            gcols = _im2col(gp, kh, kw, 1)
            wf = w.data[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(o * kh * kw, c)
            gx = np.ascontiguousarray(
                (gcols @ wf).reshape(n, h, wd_, c).transpose(0, 3, 1, 2))
        else:
            gcols = (g_mat @ w_mat).reshape(n, ho, wo, c, kh, kw)
            gcols = gcols.transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gxp[:, :, u:u + stride * ho:stride,
                        v:v + stride * wo:stride] += gcols[:, :, u, v]
            gx = gxp[:, :, pad:pad + h, pad:pad + wd_] if pad else gxp
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw) if b is None else (gx, gw, gb)
    return _finish("conv2d", inputs, out, pull)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    n, c, h, w = _nchw(x, "group_norm")
    if c % groups:
        raise ShapeError(f"group_norm: channels {c} not divisible by groups {groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    dt = x.dtype
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + dt.type(eps))
    xhat = ((xg - mu) * inv_std).reshape(n, c, h, w)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    gamma_d = gamma.data

    def pull(g):
        dxhat = (g * gamma_d[None, :, None, None]).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        m1 = dxhat.mean(axis=2, keepdims=True)
        m2 = (dxhat * xh).mean(axis=2, keepdims=True)
        gx = ((dxhat - m1 - xh * m2) * inv_std).reshape(n, c, h, w)
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta
    return _finish("group_norm", (x, gamma, beta), out, pull)


def bilinear_sample(fmap: Tensor, x: float, y: float) -> Tensor:
    """Channel vector of [C,H,W] map at continuous (x=column, y=row).

    Gradient flows to the four contributing grid values, never to the
    coordinates.  Coordinates outside [0, W-1] x [0, H-1] are an error;
    callers clamp drag geometry before sampling.
    """
    if fmap.data.ndim != 3:
        raise ShapeError(f"bilinear_sample: expected CHW map, got shape {fmap.shape}")
    c, h, w = fmap.shape
    x, y = float(x), float(y)
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise ShapeError(
            f"bilinear_sample: point ({x},{y}) outside map extent {w}x{h}")
    x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
    y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
    fx = fmap.dtype.type(x - x0)
    fy = fmap.dtype.type(y - y0)
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    d = fmap.data
    out = (w00 * d[:, y0, x0] + w01 * d[:, y0, x0 + 1]
           + w10 * d[:, y0 + 1, x0] + w11 * d[:, y0 + 1, x0 + 1])

    def pull(g):
        gf = np.zeros((c, h, w), dtype=d.dtype)
        gf[:, y0, x0] += w00 * g
        gf[:, y0, x0 + 1] += w01 * g
        gf[:, y0 + 1, x0] += w10 * g
        gf[:, y0 + 1, x0 + 1] += w11 * g
        return (gf,)
    return _finish("bilinear_sample", (fmap,), out, pull)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers plus step counter for a parameter list."""

    def __init__(self, params: Sequence[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard Adam update with bias correction; consumes ``p.grad`` in place."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradientError(f"adam_step: parameter {i} has no gradient")
        g = p.grad
        m, v = state.m[i], state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
