"""Parallel-beam Radon transform, its exact adjoint and filtered backprojection.

Lengths are measured in units of ``pixel_size`` (1.0 by default, so line
integrals are in pixel units and the offset grid has one-pixel spacing).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .core import AngleRange, Image, Sinogram, disk_image, is_power_of_two
from .exceptions import InvalidArgumentError

#: Ray sampling step in pixels.
RAY_STEP = 0.5


def default_n_offsets(image_size: int) -> int:
    """Smallest odd count covering the image diagonal (363 for 256)."""
    n = int(np.ceil(image_size * np.sqrt(2.0)))
    return n if n % 2 else n + 1


@dataclass(frozen=True)
class RadonGeometry:
    image_size: int
    n_angles: int
    n_offsets: int
    angle_range: AngleRange = AngleRange.HALF_TURN
    fbp_calibration: float | None = None
    pixel_size: float = 1.0

    def __post_init__(self):
        if not is_power_of_two(self.image_size) or self.image_size < 8:
            raise InvalidArgumentError(f"image_size must be 2^p, p >= 3: {self.image_size}")
        if int(self.n_angles) < 2:
            raise InvalidArgumentError("n_angles must be >= 2")
        if int(self.n_offsets) < 1 or int(self.n_offsets) % 2 == 0:
            raise InvalidArgumentError("n_offsets must be odd")
        if not self.pixel_size > 0:
            raise InvalidArgumentError("pixel_size must be positive")
        object.__setattr__(self, "image_size", int(self.image_size))
        object.__setattr__(self, "n_angles", int(self.n_angles))
        object.__setattr__(self, "n_offsets", int(self.n_offsets))
        object.__setattr__(self, "angle_range", AngleRange(self.angle_range))
        if self.fbp_calibration is None:
            cal = _calibrate(
                self.image_size, self.n_angles, self.n_offsets, self.angle_range.value
            )
            object.__setattr__(self, "fbp_calibration", cal)
        else:
            object.__setattr__(self, "fbp_calibration", float(self.fbp_calibration))

    @classmethod
    def for_size(cls, image_size, n_angles=None, n_offsets=None, angle_range="half_turn"):
        """Geometry with the default grid: 2*size angles, diagonal offsets."""
        return cls(
            image_size,
            2 * image_size if n_angles is None else n_angles,
            default_n_offsets(image_size) if n_offsets is None else n_offsets,
            AngleRange(angle_range),
        )

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_angles) * (self.angle_range.span / self.n_angles)

    @property
    def offset_spacing(self) -> float:
        return self.pixel_size

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "n_angles": self.n_angles,
            "n_offsets": self.n_offsets,
            "angle_range": self.angle_range.value,
            "fbp_calibration": self.fbp_calibration,
            "pixel_size": self.pixel_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RadonGeometry":
        return cls(
            d["image_size"],
            d["n_angles"],
            d["n_offsets"],
            AngleRange(d.get("angle_range", "half_turn")),
            d.get("fbp_calibration"),
            d.get("pixel_size", 1.0),
        )


def _index_grid(image_size, n_angles, n_offsets, angle_range):
    theta = np.arange(n_angles) * (AngleRange(angle_range).span / n_angles)
    offsets = np.arange(n_offsets) - (n_offsets - 1) / 2.0
    reach = np.sqrt(2.0) * image_size / 2.0 + 2.0
    n_samples = 2 * int(np.ceil(reach / RAY_STEP)) + 1
    return np.cos(theta), np.sin(theta), offsets, RAY_STEP, n_samples


def _grid(g: RadonGeometry):
    return _index_grid(g.image_size, g.n_angles, g.n_offsets, g.angle_range)


@functools.lru_cache(maxsize=32)
def _calibrate(image_size, n_angles, n_offsets, angle_range) -> float:
    # plateau of the uncalibrated FBP of a disk with radius size/4
    radius = image_size / 4.0
    disk = disk_image(image_size, radius).pixels
    grid = _index_grid(image_size, n_angles, n_offsets, angle_range)
    sino = _kernels.forward_project(disk, *grid)
    rec = _kernels.back_project(_ramp(sino, 1.0), image_size, *grid) / (2.0 * n_angles)
    c = (image_size - 1) / 2.0
    yy, xx = np.mgrid[:image_size, :image_size] - c
    inside = np.hypot(xx, yy) < 0.8 * radius
    return float(1.0 / rec[inside].mean())


def _check_image(x: Image, g: RadonGeometry):
    if not isinstance(x, Image):
        x = Image(x, g.pixel_size)
    if x.width != g.image_size:
        raise InvalidArgumentError(
            f"image is {x.width}x{x.height}, geometry expects {g.image_size}"
        )
    return x


def _check_sinogram(y: Sinogram, g: RadonGeometry):
    if not isinstance(y, Sinogram):
        y = Sinogram(y, g.angle_range, g.offset_spacing)
    if (y.n_angles, y.n_offsets) != (g.n_angles, g.n_offsets):
        raise InvalidArgumentError(
            f"sinogram is {y.n_angles}x{y.n_offsets}, "
            f"geometry expects {g.n_angles}x{g.n_offsets}"
        )
    return y


def radon_forward(x: Image, g: RadonGeometry) -> Sinogram:
    """Line integrals of the bilinearly interpolated image along every ray."""
    x = _check_image(x, g)
    vals = _kernels.forward_project(np.ascontiguousarray(x.pixels), *_grid(g))
    return Sinogram(vals * g.pixel_size, g.angle_range, g.offset_spacing)


def radon_adjoint(y: Sinogram, g: RadonGeometry) -> Image:
    """Transpose of :func:`radon_forward` under plain Euclidean inner products."""
    y = _check_sinogram(y, g)
    px = _kernels.back_project(
        np.ascontiguousarray(y.values), g.image_size, *_grid(g)
    )
    return Image(px * g.pixel_size, g.pixel_size)


def _pad_length(n_offsets: int) -> int:
    return 1 << int(np.ceil(np.log2(2 * n_offsets)))


def _ramp_multiplier(m: int, spacing: float) -> np.ndarray:
    return 2.0 * np.pi * np.abs(np.fft.rfftfreq(m, d=spacing))


def _ramp(values: np.ndarray, spacing: float) -> np.ndarray:
    # Pads each row with its edge values (zeros for sinograms that vanish at
    # the border), so a row constant in offset is mapped to exactly zero.
    na, no = values.shape
    m = _pad_length(no)
    k = (m - no) // 2
    padded = np.empty((na, m))
    padded[:, :no] = values
    padded[:, no : no + k] = values[:, -1:]
    padded[:, no + k :] = values[:, :1]
    spec = np.fft.rfft(padded, axis=1) * _ramp_multiplier(m, spacing)
    return np.fft.irfft(spec, n=m, axis=1)[:, :no]


def _ramp_transpose(values: np.ndarray, spacing: float) -> np.ndarray:
    na, no = values.shape
    m = _pad_length(no)
    k = (m - no) // 2
    padded = np.zeros((na, m))
    padded[:, :no] = values
    spec = np.fft.rfft(padded, axis=1) * _ramp_multiplier(m, spacing)
    full = np.fft.irfft(spec, n=m, axis=1)
    out = full[:, :no].copy()
    out[:, -1] += full[:, no : no + k].sum(axis=1)
    out[:, 0] += full[:, no + k :].sum(axis=1)
    return out


def riesz_filter(y: Sinogram) -> Sinogram:
    """Apply the multiplier ``|sigma|`` along the offset axis of every angle."""
    return y.with_values(_ramp(np.asarray(y.values), y.offset_spacing))


def fbp(y: Sinogram, g: RadonGeometry) -> Image:
    """Ramp-filtered backprojection scaled by the geometry's calibration constant."""
    y = _check_sinogram(y, g)
    q = _ramp(np.asarray(y.values), g.offset_spacing)
    px = _kernels.back_project(q, g.image_size, *_grid(g))
    return Image(px * (g.fbp_calibration / (2.0 * g.n_angles)), g.pixel_size)


def fbp_transpose(x: Image, g: RadonGeometry) -> Sinogram:
    """Exact transpose of the linear map :func:`fbp`."""
    x = _check_image(x, g)
    sino = _kernels.forward_project(np.ascontiguousarray(x.pixels), *_grid(g))
    sino = _ramp_transpose(sino, g.offset_spacing)
    return Sinogram(
        sino * (g.fbp_calibration / (2.0 * g.n_angles)), g.angle_range, g.offset_spacing
    )


def with_calibration(g: RadonGeometry, value: float) -> RadonGeometry:
    return replace(g, fbp_calibration=float(value))
