"""Image representation, PNG I/O, bicubic resampling and patch extraction.

Images are float32 rasters in [0,1], shaped (H, W, C) with C of 1 or 3.
Resampling uses the Keys cubic-convolution kernel (a = -0.5) with
half-pixel-center coordinate mapping and edge-clamped sampling; colour images
are processed per channel in RGB with no colour-space conversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import ContractViolation

_KEYS_A = -0.5


@dataclass(frozen=True)
class Image:
    """Immutable float32 raster in [0,1], shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ContractViolation(f"image data must be (H,W,C) with C in {{1,3}}, got {d.shape}")
        if d.dtype != np.float32:
            raise ContractViolation(f"image dtype must be float32, got {d.dtype}")
        d = d.view()
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @staticmethod
    def from_array(arr: np.ndarray, clamp: bool = True) -> "Image":
        """Build an Image from any float array, clamping into [0,1]."""
        a = np.asarray(arr, dtype=np.float32)
        if a.ndim == 2:
            a = a[:, :, None]
        if not np.isfinite(a).all():
            raise ContractViolation("image data contains non-finite values")
        if clamp:
            a = np.clip(a, 0.0, 1.0)
        elif a.min() < 0.0 or a.max() > 1.0:
            raise ContractViolation("image values outside [0,1] and clamping disabled")
        return Image(np.ascontiguousarray(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_rgb(self) -> "Image":
        """Replicate a grayscale image into 3 channels; RGB passes through."""
        if self.channels == 3:
            return self
        return Image(np.ascontiguousarray(np.repeat(self.data, 3, axis=2)))


def load_png(path) -> Image:
    """Load an 8- or 16-bit RGB or grayscale PNG and scale values to [0,1]."""
    p = Path(path)
    if not p.is_file():
        raise IOError(f"cannot load {p}: file does not exist")
    raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot load {p}: not a readable image file")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise IOError(f"cannot load {p}: unsupported sample type {raw.dtype}")
    if raw.ndim == 2:
        data = raw[:, :, None].astype(np.float32)
    elif raw.ndim == 3 and raw.shape[2] == 3:
        data = raw[:, :, ::-1].astype(np.float32)  # BGR -> RGB
    else:
        raise IOError(f"cannot load {p}: unsupported channel layout {raw.shape}")
    return Image(np.ascontiguousarray(data / np.float32(scale)))


def save_png(image: Image, path) -> None:
    """Write an 8-bit PNG, rounding each value to the nearest level."""
    p = Path(path)
    quantized = np.rint(image.data * 255.0).astype(np.uint8)
    if image.channels == 3:
        payload = quantized[:, :, ::-1]  # RGB -> BGR
    else:
        payload = quantized[:, :, 0]
    ok = cv2.imwrite(str(p), payload)
    if not ok:
        raise IOError(f"cannot save {p}: PNG encoder failed (is the directory writable?)")


def _keys_weights(t: np.ndarray) -> np.ndarray:
    """Cubic convolution weights for the 4 taps around fractional offsets t."""
    a = _KEYS_A
    # distances of taps (-1, 0, +1, +2) relative to the sample position
    d = np.abs(t[:, None] - np.array([-1.0, 0.0, 1.0, 2.0])[None, :])
    w = np.where(
        d <= 1.0,
        (a + 2.0) * d**3 - (a + 3.0) * d**2 + 1.0,
        np.where(d < 2.0, a * d**3 - 5.0 * a * d**2 + 8.0 * a * d - 4.0 * a, 0.0),
    )
    return w / w.sum(axis=1, keepdims=True)


def _resize_axis(arr: np.ndarray, out_n: int, scale: float, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    src = (np.arange(out_n, dtype=np.float64) + 0.5) / scale - 0.5
    base = np.floor(src).astype(np.int64)
    w = _keys_weights(src - base)
    idx = np.clip(base[:, None] + np.array([-1, 0, 1, 2])[None, :], 0, n - 1)
    moved = np.moveaxis(arr, axis, 0)
    gathered = moved[idx]  # (out_n, 4, ...)
    out = np.einsum("ot...,ot->o...", gathered, w)
    return np.moveaxis(out, 0, axis)


def bicubic_resize(image: Image, scale: float) -> Image:
    """Resample by a positive rational factor with the Keys cubic kernel."""
    if scale <= 0:
        raise ContractViolation(f"scale must be positive, got {scale}")
    out_w = int(np.floor(image.width * scale + 0.5))
    out_h = int(np.floor(image.height * scale + 0.5))
    if out_w < 1 or out_h < 1:
        raise ContractViolation(
            f"scale {scale} collapses {image.width}x{image.height} to {out_w}x{out_h}"
        )
    work = image.data.astype(np.float64)
    work = _resize_axis(work, out_h, scale, axis=0)
    work = _resize_axis(work, out_w, scale, axis=1)
    return Image.from_array(work)


def extract_patch(image: Image, x: int, y: int, w: int, h: int) -> Image:
    """Exact crop with top-left corner (x, y); must lie fully inside."""
    if w < 1 or h < 1:
        raise ContractViolation(f"patch size must be positive, got {w}x{h}")
    if x < 0 or y < 0 or x + w > image.width or y + h > image.height:
        raise ContractViolation(
            f"patch {w}x{h} at ({x},{y}) exceeds image {image.width}x{image.height}"
        )
    return Image(np.ascontiguousarray(image.data[y : y + h, x : x + w, :]))


def random_patch(image: Image, size: int, rng: np.random.Generator) -> Image:
    """Uniformly placed square crop drawn from the supplied generator."""
    if size > image.width or size > image.height:
        raise ContractViolation(
            f"patch size {size} exceeds image {image.width}x{image.height}"
        )
    x = int(rng.integers(0, image.width - size + 1))
    y = int(rng.integers(0, image.height - size + 1))
    return extract_patch(image, x, y, size, size)


def image_to_tensor(image: Image, dtype=np.float32) -> np.ndarray:
    """Layout conversion (H,W,C) -> (1,C,H,W)."""
    return np.ascontiguousarray(image.data.transpose(2, 0, 1)[None], dtype=dtype)


def tensor_to_image(tensor: np.ndarray) -> Image:
    """Layout conversion (1,C,H,W) -> Image, clamping values into [0,1]."""
    if tensor.ndim != 4 or tensor.shape[0] != 1:
        raise ContractViolation(f"expected tensor shape (1,C,H,W), got {tensor.shape}")
    return Image.from_array(tensor[0].transpose(1, 2, 0))
