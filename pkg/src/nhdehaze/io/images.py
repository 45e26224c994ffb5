"""8-bit RGB image codecs: PNG through Pillow, binary PPM by hand."""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

PathLike = Union[str, Path]

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """Unsupported, malformed or truncated image file."""


def _to_tensor_layout(rgb: np.ndarray) -> np.ndarray:
    return (rgb.astype(np.float64) / 255.0).transpose(2, 0, 1)[None]


def _to_uint8(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError("can only save a single image")
        a = a[0]
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] or [1, 3, H, W], got {a.shape}")
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def read_ppm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise ImageFormatError(f"{path}: only binary P6 PPM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported PPM maxval {maxval} (8-bit only)")
    pos += 1
    body = data[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise ImageFormatError(f"{path}: truncated PPM data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def write_ppm(path: PathLike, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())


def load_image(path: PathLike) -> np.ndarray:
    """Load an 8-bit RGB PNG or PPM as ``[1, 3, H, W]`` floats in ``[0, 1]``."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return _to_tensor_layout(read_ppm(path))
    head = path.read_bytes()[:33]
    if head[:8] == _PNG_SIGNATURE:
        if len(head) < 26:
            raise ImageFormatError(f"{path}: truncated PNG header")
        if head[24] != 8:
            raise ImageFormatError(f"{path}: unsupported PNG bit depth {head[24]} (8-bit only)")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("RGB", "RGBA", "L", "P"):
                raise ImageFormatError(f"{path}: unsupported image mode {im.mode!r} (8-bit RGB only)")
            if im.mode == "P" or im.mode == "RGBA" or im.mode == "L":
                im = im.convert("RGB")
            rgb = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        if isinstance(exc, ImageFormatError):
            raise
        raise ImageFormatError(f"{path}: unreadable or truncated image ({exc})") from exc
    return _to_tensor_layout(rgb)


def save_image(img: np.ndarray, path: PathLike) -> None:
    """Save ``[1, 3, H, W]`` or ``[3, H, W]`` floats, rounded to the 1/255 grid."""
    path = Path(path)
    rgb = _to_uint8(img)
    if path.suffix.lower() in (".ppm", ".pnm"):
        write_ppm(path, rgb)
    else:
        Image.fromarray(rgb).save(path)
