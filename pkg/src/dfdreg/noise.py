"""Data perturbations calibrated to a root-mean-square noise level."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import RngSeed, Sinogram, as_generator
from .exceptions import CalibrationError, InvalidArgumentError

#: Relative accuracy of the calibrated noise level.
DELTA_RTOL = 0.01
_BISECT_RTOL = 0.004


class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"
    UNIFORM = "uniform"
    SALT_PEPPER = "salt_pepper"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind
    target_delta: float
    seed: object = 0
    stream: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not (np.isfinite(self.target_delta) and self.target_delta > 0):
            raise InvalidArgumentError("target_delta must be positive")

    def generator(self, *extra) -> np.random.Generator:
        return as_generator(self.seed, 0x4E, *self.stream, *extra)


def measured_delta(y, y_delta) -> float:
    """``||y - y_delta||_2 / sqrt(n)``."""
    a = np.asarray(y, dtype=np.float64)
    b = np.asarray(y_delta, dtype=np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _rescaled(y, z, delta):
    norm = np.sqrt(np.mean(z**2))
    if norm == 0:
        raise CalibrationError("noise draw vanished")
    return y + z * (delta / norm)


def _poisson(y, spec):
    pos = np.maximum(y, 0.0)
    if not pos.any():
        raise CalibrationError("poisson noise needs a positive signal")

    def draw(scale):
        # same stream for every trial scale keeps delta(scale) near-monotone
        return spec.generator(1).poisson(scale * pos) / scale

    target = spec.target_delta
    mean = float(pos.mean())
    # delta ~ sqrt(mean / s); bracket around that guess in log-space
    guess = mean / target**2
    lo, hi = np.log(guess) - 8.0, np.log(guess) + 8.0
    d_lo, d_hi = measured_delta(y, draw(np.exp(lo))), measured_delta(y, draw(np.exp(hi)))
    if not d_hi <= target <= d_lo:
        raise CalibrationError(f"poisson noise cannot reach delta={target}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        out = draw(np.exp(mid))
        d = measured_delta(y, out)
        if abs(d - target) <= _BISECT_RTOL * target:
            return out
        if d > target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"poisson calibration did not converge for delta={target}")


def _salt_pepper(y, spec):
    rng = spec.generator(1)
    u = rng.random(y.shape)
    salt = rng.random(y.shape) < 0.5
    vmin, vmax = float(y.min()), float(y.max())
    target = spec.target_delta

    def corrupt(p):
        return np.where(u < p, np.where(salt, vmax, vmin), y)

    if measured_delta(y, corrupt(1.0)) < target * (1 - DELTA_RTOL):
        raise CalibrationError(f"salt and pepper noise cannot reach delta={target}")
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        out = corrupt(mid)
        d = measured_delta(y, out)
        if abs(d - target) <= _BISECT_RTOL * target:
            return out
        if d > target:
            hi = mid
        else:
            lo = mid
    out = corrupt(hi)
    if abs(measured_delta(y, out) - target) <= DELTA_RTOL * target:
        return out
    raise CalibrationError(f"salt and pepper calibration failed for delta={target}")


def add_noise(y, spec: NoiseSpec) -> Sinogram:
    """Perturb ``y`` so that the measured noise level matches ``spec.target_delta``."""
    sino = y if isinstance(y, Sinogram) else Sinogram(y)
    v = np.asarray(sino.values)
    kind = spec.kind
    if kind is NoiseKind.GAUSSIAN:
        out = _rescaled(v, spec.generator(0).standard_normal(v.shape), spec.target_delta)
    elif kind is NoiseKind.UNIFORM:
        out = _rescaled(v, spec.generator(0).uniform(-1.0, 1.0, v.shape), spec.target_delta)
    elif kind is NoiseKind.POISSON:
        out = _poisson(v, spec)
    else:
        out = _salt_pepper(v, spec)
    return sino.with_values(out)


def noisy(y, kind, delta, seed=0, stream=()) -> Sinogram:
    """``add_noise`` shortcut; ``delta == 0`` returns ``y`` unchanged."""
    if delta == 0:
        return y if isinstance(y, Sinogram) else Sinogram(y)
    seed = seed if isinstance(seed, (RngSeed, np.random.Generator)) else RngSeed(seed)
    return add_noise(y, NoiseSpec(kind, delta, seed, tuple(stream)))
