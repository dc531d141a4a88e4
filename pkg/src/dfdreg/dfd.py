"""Orthonormal 2-D Haar transform and the wavelet-vaguelette decomposition of
the Radon transform built on top of it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Image, Sinogram, as_generator
from .exceptions import InvalidArgumentError
from .radon import RadonGeometry, fbp, fbp_transpose, radon_adjoint

ORIENTATIONS = ("horizontal", "vertical", "diagonal")


@dataclass
class WaveletField:
    """Haar coefficients of a ``size`` x ``size`` image.

    ``details[l - 1]`` holds the (horizontal, vertical, diagonal) blocks of
    level ``l``; level 1 is the finest with blocks of side ``size / 2``.
    """

    levels: int
    size: int
    approx: np.ndarray
    details: list = field(default_factory=list)

    def __post_init__(self):
        side = self.size >> self.levels
        self.approx = np.asarray(self.approx, dtype=np.float64)
        if self.approx.shape != (side, side) or len(self.details) != self.levels:
            raise InvalidArgumentError("wavelet field blocks do not match size/levels")
        self.details = [tuple(np.asarray(b, dtype=np.float64) for b in d) for d in self.details]
        for lev, blocks in enumerate(self.details, start=1):
            s = self.size >> lev
            if len(blocks) != 3 or any(b.shape != (s, s) for b in blocks):
                raise InvalidArgumentError(f"detail blocks of level {lev} have wrong shape")

    def to_vector(self) -> np.ndarray:
        parts = [self.approx.ravel()]
        for blocks in self.details:
            parts.extend(b.ravel() for b in blocks)
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, vec, size: int, levels: int) -> "WaveletField":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (size * size,):
            raise InvalidArgumentError(f"expected {size * size} coefficients, got {vec.shape}")
        side = size >> levels
        pos = side * side
        approx = vec[:pos].reshape(side, side)
        details = []
        for lev in range(1, levels + 1):
            s = size >> lev
            blocks = []
            for _ in range(3):
                blocks.append(vec[pos : pos + s * s].reshape(s, s))
                pos += s * s
            details.append(tuple(blocks))
        return cls(levels, size, approx, details)

    def map_blocks(self, fn) -> "WaveletField":
        """Apply ``fn(block, level)`` to every block; the approximation has level ``levels + 1``."""
        return WaveletField(
            self.levels,
            self.size,
            fn(self.approx, self.levels + 1),
            [tuple(fn(b, lev) for b in blocks) for lev, blocks in enumerate(self.details, 1)],
        )

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_vector()))

    def __add__(self, other):
        return WaveletField.from_vector(self.to_vector() + other.to_vector(), self.size, self.levels)

    def __sub__(self, other):
        return WaveletField.from_vector(self.to_vector() - other.to_vector(), self.size, self.levels)

    def __mul__(self, c):
        return self.map_blocks(lambda b, _: b * c)

    __rmul__ = __mul__


def _split(a):
    a00, a01 = a[0::2, 0::2], a[0::2, 1::2]
    a10, a11 = a[1::2, 0::2], a[1::2, 1::2]
    ll = (a00 + a01 + a10 + a11) / 2.0
    h = (a00 + a01 - a10 - a11) / 2.0
    v = (a00 - a01 + a10 - a11) / 2.0
    d = (a00 - a01 - a10 + a11) / 2.0
    return ll, (h, v, d)


def _merge(ll, blocks):
    h, v, d = blocks
    s = ll.shape[0]
    out = np.empty((2 * s, 2 * s))
    out[0::2, 0::2] = (ll + h + v + d) / 2.0
    out[0::2, 1::2] = (ll + h - v - d) / 2.0
    out[1::2, 0::2] = (ll - h + v - d) / 2.0
    out[1::2, 1::2] = (ll - h - v + d) / 2.0
    return out


def haar_analysis(x, levels: int) -> WaveletField:
    """``levels``-step orthonormal separable Haar decomposition."""
    a = np.asarray(x.pixels if isinstance(x, Image) else x, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n or n & (n - 1):
        raise InvalidArgumentError(f"need a square power-of-two image, got {a.shape}")
    p = n.bit_length() - 1
    if not 1 <= int(levels) <= p:
        raise InvalidArgumentError(f"levels must be in [1, {p}], got {levels}")
    details = []
    for _ in range(int(levels)):
        a, blocks = _split(a)
        details.append(blocks)
    return WaveletField(int(levels), n, a, details)


def haar_synthesis(w: WaveletField) -> Image:
    a = w.approx
    for blocks in reversed(w.details):
        a = _merge(a, blocks)
    if w.size < 8:
        raise InvalidArgumentError("synthesis of images smaller than 8x8 is not supported")
    return Image(a)


@dataclass(frozen=True)
class QuasiSingularMap:
    """Per-level quasi-singular values ``kappa(l) = kappa0 * 2**(-(levels - l) / 2)``.

    The approximation block shares the coarsest value ``kappa0``.
    """

    levels: int
    kappa0: float = 1.0

    def __post_init__(self):
        if int(self.levels) < 1 or not self.kappa0 > 0:
            raise InvalidArgumentError("need levels >= 1 and kappa0 > 0")

    def kappa(self, level: int) -> float:
        if level == self.levels + 1:
            return self.approx_kappa
        if not 1 <= level <= self.levels:
            raise InvalidArgumentError(f"no level {level}")
        return float(self.kappa0 * 2.0 ** (-(self.levels - level) / 2.0))

    @property
    def approx_kappa(self) -> float:
        return float(self.kappa0)

    @property
    def values(self) -> np.ndarray:
        """Distinct values, finest first."""
        return np.array([self.kappa(lev) for lev in range(1, self.levels + 1)])

    def field(self, size: int) -> WaveletField:
        """A wavelet field holding ``kappa_lambda`` at every coefficient."""
        side = size >> self.levels
        return WaveletField(
            self.levels,
            size,
            np.full((side, side), self.approx_kappa),
            [
                tuple(np.full((size >> lev,) * 2, self.kappa(lev)) for _ in range(3))
                for lev in range(1, self.levels + 1)
            ],
        )

    def vector(self, size: int) -> np.ndarray:
        return self.field(size).to_vector()

    def scaled(self, factor: float) -> "QuasiSingularMap":
        return QuasiSingularMap(self.levels, self.kappa0 * factor)


@dataclass(frozen=True)
class DfdContext:
    geometry: RadonGeometry
    levels: int
    kappas: QuasiSingularMap = None

    def __post_init__(self):
        p = self.geometry.image_size.bit_length() - 1
        if int(self.levels) < 1 or p < int(self.levels) + 2:
            raise InvalidArgumentError(
                f"image size 2^{p} needs levels <= {p - 2}, got {self.levels}"
            )
        if self.kappas is None:
            object.__setattr__(self, "kappas", QuasiSingularMap(int(self.levels)))
        elif self.kappas.levels != self.levels:
            raise InvalidArgumentError("kappa map and context disagree on levels")

    @classmethod
    def for_geometry(cls, geometry: RadonGeometry, levels=None, kappa0=1.0):
        p = geometry.image_size.bit_length() - 1
        levels = max(1, p - 3) if levels is None else int(levels)
        return cls(geometry, levels, QuasiSingularMap(levels, kappa0))

    @property
    def size(self) -> int:
        return self.geometry.image_size

    def kappa_vector(self) -> np.ndarray:
        return self.kappas.vector(self.size)


def fbp_coefficients(y: Sinogram, ctx: DfdContext) -> WaveletField:
    """``<FBP(y), u_lambda>`` for every lambda."""
    return haar_analysis(fbp(y, ctx.geometry), ctx.levels)


def v_coefficients(y: Sinogram, ctx: DfdContext) -> WaveletField:
    """``<y, v_lambda> := kappa_lambda <FBP(y), u_lambda>``."""
    c = fbp_coefficients(y, ctx)
    kap = ctx.kappas
    return c.map_blocks(lambda b, lev: b * kap.kappa(lev))


def unit_field(size: int, levels: int, index: int) -> WaveletField:
    vec = np.zeros(size * size)
    vec[index] = 1.0
    return WaveletField.from_vector(vec, size, levels)


def coefficient_level(size: int, levels: int, index: int) -> int:
    """Level of the coefficient at flat ``index`` (``levels + 1`` for the approximation)."""
    side = size >> levels
    pos = side * side
    if index < pos:
        return levels + 1
    for lev in range(1, levels + 1):
        pos += 3 * (size >> lev) ** 2
        if index < pos:
            return lev
    raise InvalidArgumentError(f"index {index} out of range")


def verify_quasi_singular(ctx: DfdContext, probes: int, seed=0, levels=None) -> dict:
    """Check ``R* v_lambda = kappa_lambda u_lambda`` at random lambda.

    ``v_lambda`` is materialized as the sinogram representing the functional
    ``y -> kappa_lambda <FBP(y), u_lambda>``.  ``levels`` restricts the
    probed levels (``levels + 1`` is the approximation block).
    """
    rng = as_generator(seed, 0x51)
    n, J = ctx.size, ctx.levels
    allowed = list(range(1, J + 2)) if levels is None else [int(v) for v in levels]
    rows = []
    for _ in range(int(probes)):
        lev = int(allowed[rng.integers(len(allowed))])
        if lev == J + 1:
            side = n >> J
            index = int(rng.integers(side * side))
        else:
            side = n >> J
            start = side * side + sum(3 * (n >> l) ** 2 for l in range(1, lev))
            index = start + int(rng.integers(3 * (n >> lev) ** 2))
        kappa = ctx.kappas.kappa(lev)
        u = haar_synthesis(unit_field(n, J, index))
        v = fbp_transpose(u, ctx.geometry)
        v = v.with_values(kappa * np.asarray(v.values))
        back = radon_adjoint(v, ctx.geometry).pixels
        target = kappa * u.pixels
        res = float(np.linalg.norm(back - target) / np.linalg.norm(target))
        rows.append({"level": lev, "index": index, "kappa": kappa, "residual": res})
    return {
        "probes": rows,
        "max_residual": max((r["residual"] for r in rows), default=None),
    }
