"""Grayscale image codecs: binary PGM (P5) and 8-bit PNG.

Pixel values map linearly between the model's [-1, 1] range and 8-bit:
u8 = round((v + 1) * 127.5), v = u8 / 127.5 - 1.  Encode/decode round
trips are pixel-identical at the 8-bit level.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "ImageFormatError",
    "to_u8",
    "from_u8",
    "encode_pgm",
    "decode_pgm",
    "encode_png",
    "decode_png",
    "save_image",
    "load_image",
]


class ImageFormatError(ValueError):
    """Malformed or unsupported image data."""


def to_u8(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img)
    while arr.ndim > 2 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ImageFormatError(f"expected a single-channel image, got shape {img.shape}")
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_u8(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float32) / 127.5) - 1.0


def encode_pgm(img: np.ndarray) -> bytes:
    u8 = to_u8(img)
    h, w = u8.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + u8.tobytes()


def _pgm_tokens(data: bytes, n: int) -> tuple[list[bytes], int]:
    """First n whitespace-separated header tokens (skipping # comments)
    and the offset just past the single whitespace after the last one."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < n:
        if i >= len(data):
            raise ImageFormatError("truncated PGM header")
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= len(data) or not data[i:i + 1].isspace():
        raise ImageFormatError("PGM header not terminated by whitespace")
    return tokens, i + 1


def decode_pgm(data: bytes) -> np.ndarray:
    """Binary P5, maxval 255, to a float image in [-1, 1]."""
    if data[:2] in (b"P2", b"P1", b"P3", b"P6"):
        raise ImageFormatError(f"unsupported PGM variant {data[:2].decode('ascii')}")
    if data[:2] != b"P5":
        raise ImageFormatError("not a PGM file (missing P5 magic)")
    (magic, w_s, h_s, maxval_s), offset = _pgm_tokens(data, 4)
    try:
        w, h, maxval = int(w_s), int(h_s), int(maxval_s)
    except ValueError:
        raise ImageFormatError("non-numeric PGM header fields") from None
    if maxval != 255:
        raise ImageFormatError(f"unsupported PGM maxval {maxval}, expected 255")
    if w < 1 or h < 1:
        raise ImageFormatError(f"bad PGM dimensions {w}x{h}")
    pixels = data[offset:offset + w * h]
    if len(pixels) != w * h:
        raise ImageFormatError("truncated PGM pixel data")
    return from_u8(np.frombuffer(pixels, dtype=np.uint8).reshape(h, w))


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_u8(img), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """8-bit PNG to a float image in [-1, 1]; color inputs collapse to gray."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            gray = im.convert("L")
            return from_u8(np.asarray(gray, dtype=np.uint8))
    except Exception as exc:
        raise ImageFormatError(f"cannot decode PNG: {exc}") from None


def save_image(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        path.write_bytes(encode_pgm(img))
    elif path.suffix.lower() == ".png":
        path.write_bytes(encode_png(img))
    else:
        raise ImageFormatError(f"unsupported image extension {path.suffix!r}")


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".pgm":
        return decode_pgm(data)
    if path.suffix.lower() == ".png":
        return decode_png(data)
    raise ImageFormatError(f"unsupported image extension {path.suffix!r}")
