"""Degradation-kernel synthesis and application.

A blur kernel here models the antialiasing filter assumed in the HR -> LR
downscaling chain. Random kernels are anisotropic Gaussians: two axis scales
drawn uniformly from a sigma range plus a uniform rotation, evaluated on the
kernel grid and normalized to unit sum. Downsampling convolves with reflect
padding and keeps the top-left sample of every scale x scale block, so the
LR and the further-downscaled LR share the exact same operator.

Kernel seed ranges are split by convention: 0-37999 train, 38000-38999
validation, 39000-39999 test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractViolation, FormatError
from .imaging import Image, bicubic_resize, extract_patch
from .util import derive_seed

KERNEL_FILE_MAGIC = "SRKERNEL"
KERNEL_FILE_VERSION = 1

TRAIN_KERNEL_SEEDS = range(0, 38_000)
VAL_KERNEL_SEEDS = range(38_000, 39_000)
TEST_KERNEL_SEEDS = range(39_000, 40_000)

DEFAULT_SIGMA_RANGE = (0.35, 2.0)


@dataclass(frozen=True)
class SRKernel:
    """Normalized 2-D blur kernel: nonnegative, unit sum, centered."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ContractViolation(f"kernel must be square with odd size, got {w.shape}")
        if (w < 0).any():
            raise ContractViolation("kernel weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-6:
            raise ContractViolation(f"kernel weights must sum to 1 (got {total:.9g})")
        center = (w.shape[0] - 1) / 2.0
        grid = np.arange(w.shape[0], dtype=np.float64)
        com_y = float((w.sum(axis=1) * grid).sum())
        com_x = float((w.sum(axis=0) * grid).sum())
        if abs(com_y - center) > 0.5 or abs(com_x - center) > 0.5:
            raise ContractViolation(
                f"kernel center of mass ({com_x:.3f},{com_y:.3f}) further than 0.5px "
                f"from center {center}"
            )
        w = w.view()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def radius(self) -> int:
        return self.size // 2


def delta_kernel(size: int = 5) -> SRKernel:
    w = np.zeros((size, size))
    w[size // 2, size // 2] = 1.0
    return SRKernel(w)


@dataclass(frozen=True)
class KernelSpec:
    """How the LR degradation is produced: ideal bicubic, a random Gaussian
    drawn from a seed, or a kernel loaded from a file."""

    mode: str = "bicubic"
    seed: int = 0
    sigma_range: tuple[float, float] = DEFAULT_SIGMA_RANGE
    path: Optional[Path] = None

    def __post_init__(self):
        if self.mode not in ("bicubic", "random_gaussian", "from_file"):
            raise ConfigError(f"kernel mode must be bicubic|random_gaussian|from_file, got {self.mode!r}")
        lo, hi = self.sigma_range
        if lo > hi:
            raise ConfigError(f"kernel sigma range must satisfy lo <= hi, got [{lo}, {hi}]")
        if self.mode == "random_gaussian" and lo <= 0:
            raise ConfigError(f"kernel sigma range must satisfy lo > 0, got lo={lo}")
        if self.mode == "from_file" and self.path is None:
            raise ConfigError("kernel mode from_file requires a path")

    def resolve(self) -> Optional[SRKernel]:
        """Materialize the kernel, or None for the bicubic marker."""
        if self.mode == "bicubic":
            return None
        if self.mode == "random_gaussian":
            return generate_random_kernel(self.seed, sigma_range=self.sigma_range)
        return load_kernel(self.path)


@dataclass(frozen=True)
class TaskSample:
    """One meta-task triplet: the HR patch, its LR rendering, and the LR
    rendered once more with the identical operator."""

    hr: Image
    lr: Image
    lr_down: Image
    kernel: Optional[SRKernel]  # None marks ideal bicubic degradation
    scale: int
    cropped_from: Optional[tuple[int, int]] = field(default=None)

    def __post_init__(self):
        s = self.scale
        if self.lr.width != self.hr.width // s or self.lr.height != self.hr.height // s:
            raise ContractViolation(
                f"lr {self.lr.width}x{self.lr.height} is not hr/{s} of "
                f"{self.hr.width}x{self.hr.height}"
            )
        if self.lr_down.width != self.lr.width // s or self.lr_down.height != self.lr.height // s:
            raise ContractViolation(
                f"lr_down {self.lr_down.width}x{self.lr_down.height} is not lr/{s}"
            )


def generate_random_kernel(
    seed: int,
    size: int = 5,
    sigma_range: tuple[float, float] = DEFAULT_SIGMA_RANGE,
) -> SRKernel:
    """Draw an anisotropic Gaussian kernel from the given seed.

    sigma1, sigma2 ~ U[sigma_range], rotation ~ U[0, pi); the density is
    evaluated on the size x size grid and normalized to unit sum.
    """
    if size % 2 == 0 or size < 1:
        raise ContractViolation(f"kernel size must be odd and positive, got {size}")
    lo, hi = sigma_range
    if lo <= 0 or lo > hi:
        raise ContractViolation(f"sigma range must satisfy 0 < lo <= hi, got [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    s1, s2 = rng.uniform(lo, hi, size=2)
    theta = rng.uniform(0.0, math.pi)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([s1**2, s2**2]) @ rot.T
    prec = np.linalg.inv(cov)
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    xx, yy = np.meshgrid(coords, coords)
    quad = prec[0, 0] * xx**2 + (prec[0, 1] + prec[1, 0]) * xx * yy + prec[1, 1] * yy**2
    w = np.exp(-0.5 * quad)
    return SRKernel(w / w.sum())


def train_kernel_spec(root_seed: int, *counters: int, sigma_range=DEFAULT_SIGMA_RANGE) -> KernelSpec:
    """A fresh random-Gaussian spec whose seed lands in the train range."""
    seed = TRAIN_KERNEL_SEEDS.start + derive_seed(root_seed, *counters) % len(TRAIN_KERNEL_SEEDS)
    return KernelSpec(mode="random_gaussian", seed=seed, sigma_range=sigma_range)


def apply_kernel_downsample(image: Image, kernel: SRKernel, scale: int) -> Image:
    """Convolve with reflect padding ("same"), then keep samples at indices
    scale*i per axis (top-left phase)."""
    if scale < 1:
        raise ContractViolation(f"scale must be >= 1, got {scale}")
    r = kernel.radius
    if image.width < max(scale * r, r + 1) or image.height < max(scale * r, r + 1):
        raise ContractViolation(
            f"image {image.width}x{image.height} too small for kernel radius {r} "
            f"at scale {scale}"
        )
    padded = np.pad(image.data.astype(np.float64), ((r, r), (r, r), (0, 0)), mode="reflect")
    win = sliding_window_view(padded, (kernel.size, kernel.size), axis=(0, 1))
    blurred = np.einsum("hwcuv,uv->hwc", win, kernel.weights, optimize=True)
    return Image.from_array(blurred[::scale, ::scale, :])


def center_crop_multiple(image: Image, multiple: int) -> Image:
    """Center crop to the largest size divisible by `multiple` on both axes."""
    w = (image.width // multiple) * multiple
    h = (image.height // multiple) * multiple
    if w < multiple or h < multiple:
        raise ContractViolation(
            f"image {image.width}x{image.height} smaller than one {multiple}px block"
        )
    if (w, h) == (image.width, image.height):
        return image
    x = (image.width - w) // 2
    y = (image.height - h) // 2
    return extract_patch(image, x, y, w, h)


def make_task_sample(hr: Image, spec: KernelSpec, scale: int) -> TaskSample:
    """Build the (HR, LR, LR-down) triplet with one shared degradation."""
    if scale < 2:
        raise ContractViolation(f"task scale must be >= 2, got {scale}")
    original = (hr.width, hr.height)
    cropped = center_crop_multiple(hr, scale * scale)
    kernel = spec.resolve()
    if kernel is None:
        lr = bicubic_resize(cropped, 1.0 / scale)
        lr_down = bicubic_resize(lr, 1.0 / scale)
    else:
        lr = apply_kernel_downsample(cropped, kernel, scale)
        lr_down = apply_kernel_downsample(lr, kernel, scale)
    recorded = original if (cropped.width, cropped.height) != original else None
    return TaskSample(
        hr=cropped, lr=lr, lr_down=lr_down, kernel=kernel, scale=scale, cropped_from=recorded
    )


def degrade(image: Image, spec: KernelSpec, scale: int) -> Image:
    """One downscaling step under the spec's operator (used for LR -> LR-down
    at adaptation time)."""
    kernel = spec.resolve()
    if kernel is None:
        return bicubic_resize(image, 1.0 / scale)
    return apply_kernel_downsample(image, kernel, scale)


def save_kernel(kernel: SRKernel, path) -> None:
    """Write the text format: header line, then one row of weights per line
    at 9 significant digits."""
    lines = [f"{KERNEL_FILE_MAGIC} {KERNEL_FILE_VERSION} {kernel.size}"]
    for row in kernel.weights:
        lines.append(" ".join(f"{v:.9g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_kernel(path) -> SRKernel:
    """Parse the kernel text format, reporting the offending line on error."""
    p = Path(path)
    if not p.is_file():
        raise IOError(f"cannot load kernel {p}: file does not exist")
    lines = p.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{p}:1: empty kernel file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != KERNEL_FILE_MAGIC:
        raise FormatError(f"{p}:1: expected header '{KERNEL_FILE_MAGIC} <version> <size>'")
    try:
        version, size = int(header[1]), int(header[2])
    except ValueError:
        raise FormatError(f"{p}:1: non-integer version/size in header") from None
    if version != KERNEL_FILE_VERSION:
        raise FormatError(f"{p}:1: unsupported version {version} (expected {KERNEL_FILE_VERSION})")
    if size < 1 or size % 2 == 0:
        raise FormatError(f"{p}:1: kernel size must be odd and positive, got {size}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != size:
        raise FormatError(f"{p}: expected {size} weight rows, found {len(body)}")
    rows = []
    for i, ln in enumerate(body, start=2):
        parts = ln.split()
        if len(parts) != size:
            raise FormatError(f"{p}:{i}: expected {size} values, found {len(parts)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise FormatError(f"{p}:{i}: non-numeric weight value") from None
    return SRKernel(np.array(rows))
