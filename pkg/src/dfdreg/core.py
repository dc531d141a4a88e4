"""Grid data types, phantoms and seeded randomness."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import InvalidArgumentError

#: Number of disks drawn by ``make_phantom("disks", ...)``.
DISK_COUNT = 5


class AngleRange(str, Enum):
    HALF_TURN = "half_turn"
    FULL_TURN = "full_turn"

    @property
    def span(self) -> float:
        return np.pi if self is AngleRange.HALF_TURN else 2.0 * np.pi

    @property
    def flag(self) -> int:
        return 0 if self is AngleRange.HALF_TURN else 1

    @classmethod
    def from_flag(cls, flag: int) -> "AngleRange":
        return cls.HALF_TURN if flag == 0 else cls.FULL_TURN


def is_power_of_two(n) -> bool:
    n = int(n)
    return n > 0 and (n & (n - 1)) == 0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Image:
    """Square grayscale image on a power-of-two grid.

    ``pixels`` is a ``(height, width)`` float64 array; row index grows with
    the second world coordinate. ``pixel_size`` is the length unit the Radon
    transform integrates in (1.0 means line integrals are in pixel units).
    """

    pixels: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise InvalidArgumentError(f"image must be 2-D, got shape {px.shape}")
        h, w = px.shape
        if h != w or not is_power_of_two(w) or w < 8:
            raise InvalidArgumentError(
                f"image must be square with side 2^p, p >= 3; got {w}x{h}"
            )
        if not np.all(np.isfinite(px)):
            raise InvalidArgumentError("image contains non-finite values")
        if not self.pixel_size > 0:
            raise InvalidArgumentError("pixel_size must be positive")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> int:
        return self.width

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.pixels, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixel_size == other.pixel_size and np.array_equal(
            self.pixels, other.pixels
        )

    __hash__ = None


@dataclass(frozen=True)
class Sinogram:
    """Parallel-beam sinogram, ``values`` has shape ``(n_angles, n_offsets)``.

    Offsets are symmetric about zero:
    ``offset_i = (i - (n_offsets - 1) / 2) * offset_spacing``.
    """

    values: np.ndarray
    angle_range: AngleRange = AngleRange.HALF_TURN
    offset_spacing: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidArgumentError(f"sinogram must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("sinogram contains non-finite values")
        if not self.offset_spacing > 0:
            raise InvalidArgumentError("offset_spacing must be positive")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "angle_range", AngleRange(self.angle_range))

    @property
    def n_angles(self) -> int:
        return self.values.shape[0]

    @property
    def n_offsets(self) -> int:
        return self.values.shape[1]

    @property
    def offsets(self) -> np.ndarray:
        n = self.n_offsets
        return (np.arange(n) - (n - 1) / 2.0) * self.offset_spacing

    def with_values(self, values) -> "Sinogram":
        return Sinogram(values, self.angle_range, self.offset_spacing)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, Sinogram):
            return NotImplemented
        return (
            self.angle_range == other.angle_range
            and self.offset_spacing == other.offset_spacing
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class RngSeed:
    seed: int = 0

    def __post_init__(self):
        s = int(self.seed)
        if not 0 <= s < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", s)

    def generator(self, *stream) -> np.random.Generator:
        """Independent PCG64 stream for the cell identified by ``stream``."""
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(int(s) for s in stream))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(seed, *stream) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, RngSeed):
        seed = RngSeed(0 if seed is None else seed)
    return seed.generator(*stream)


def mse(a, b) -> float:
    """Mean squared difference of two equally shaped grids."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------------------
# phantoms

# (value, semi-axis a, semi-axis b, x0, y0, rotation in degrees)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)

# (value, radius, x0, y0), well separated
_DISKS = (
    (1.0, 0.22, -0.45, -0.40),
    (0.8, 0.18, 0.45, -0.45),
    (0.6, 0.25, 0.0, 0.05),
    (0.9, 0.12, -0.50, 0.50),
    (0.7, 0.15, 0.50, 0.50),
)
assert len(_DISKS) == DISK_COUNT

_SUPERSAMPLE = 4


def _sample_coords(size: int):
    """Supersampled normalized coordinates in [-1, 1]^2 (x along columns)."""
    n = size * _SUPERSAMPLE
    c = -1.0 + (np.arange(n) + 0.5) * (2.0 / n)
    return np.meshgrid(c, c, indexing="xy")


def _box_average(a: np.ndarray, size: int) -> np.ndarray:
    s = _SUPERSAMPLE
    return a.reshape(size, s, size, s).mean(axis=(1, 3))


def _rasterize_ellipses(ellipses, size: int) -> np.ndarray:
    X, Y = _sample_coords(size)
    acc = np.zeros_like(X)
    for value, a, b, x0, y0, deg in ellipses:
        t = np.deg2rad(deg)
        ct, st = np.cos(t), np.sin(t)
        xr = (X - x0) * ct + (Y - y0) * st
        yr = -(X - x0) * st + (Y - y0) * ct
        acc += value * (((xr / a) ** 2 + (yr / b) ** 2) <= 1.0)
    return np.clip(_box_average(acc, size), 0.0, 1.0)


def _check_size(size) -> int:
    if not is_power_of_two(size) or int(size) < 8:
        raise InvalidArgumentError(f"size must be 2^p with p >= 3, got {size}")
    return int(size)


def make_phantom(kind: str, size: int) -> Image:
    """Deterministic test image with values in [0, 1].

    kinds: ``shepp_logan`` (modified Shepp-Logan), ``disks`` (``DISK_COUNT``
    separated disks) and ``checker`` (8x8 checkerboard).
    """
    size = _check_size(size)
    if kind == "shepp_logan":
        px = _rasterize_ellipses(_SHEPP_LOGAN, size)
    elif kind == "disks":
        px = _rasterize_ellipses(
            [(v, r, r, x0, y0, 0.0) for v, r, x0, y0 in _DISKS], size
        )
    elif kind == "checker":
        cells = np.arange(size) * 8 // size
        px = ((cells[:, None] + cells[None, :]) % 2).astype(np.float64)
    else:
        raise InvalidArgumentError(f"unknown phantom kind {kind!r}")
    return Image(px)


def disk_image(size: int, radius: float, value: float = 1.0) -> Image:
    """Centered disk; ``radius`` is given in pixels."""
    size = _check_size(size)
    r = 2.0 * radius / size
    return Image(_rasterize_ellipses([(value, r, r, 0.0, 0.0, 0.0)], size))


def random_phantom(size: int, rng) -> Image:
    """Random ellipse phantom in [0, 1] inside the inscribed disk.

    A body ellipse with a few darker and brighter inclusions, loosely
    mimicking a CT slice.
    """
    size = _check_size(size)
    rng = as_generator(rng)
    ax, ay = rng.uniform(0.65, 0.9), rng.uniform(0.65, 0.9)
    ellipses = [(rng.uniform(0.45, 0.7), ax, ay, 0.0, 0.0, rng.uniform(-30, 30))]
    for _ in range(int(rng.integers(4, 10))):
        r = np.sqrt(rng.uniform(0.0, 0.45))
        t = rng.uniform(0.0, 2 * np.pi)
        ellipses.append(
            (
                rng.uniform(-0.35, 0.45),
                rng.uniform(0.04, 0.25),
                rng.uniform(0.04, 0.25),
                r * np.cos(t) * ax,
                r * np.sin(t) * ay,
                rng.uniform(0.0, 180.0),
            )
        )
    return Image(_rasterize_ellipses(ellipses, size))


def random_phantoms(n: int, size: int, seed=0) -> list:
    return [random_phantom(size, as_generator(seed, 0x50, i)) for i in range(int(n))]
