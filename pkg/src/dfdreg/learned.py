"""Learned strictly increasing filters.

Each quasi-singular value gets its own piecewise-linear map ``psi`` with
slopes ``exp(raw_slopes)``, anchored at ``psi(0) = 0`` and extended linearly
outside the knot range.  Because the Haar basis is orthonormal, the image
space training loss splits into independent least-squares problems per
scale block; each is reduced to normal equations once and then minimized by
full-batch gradient descent in the raw-slope coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import Image, RngSeed, random_phantoms
from .dfd import DfdContext, haar_analysis, fbp_coefficients
from .exceptions import FormatError, InvalidArgumentError, TrainingError
from .filters import Filter, FilterKind
from .io import read_json, write_json
from .noise import NoiseKind, noisy
from .radon import radon_forward

log = logging.getLogger(__name__)

_CHUNK = 16384

#: Slope floor factor used when ``TrainConfig.a2_floor`` is set.
A2_MARGIN = 1.02


@dataclass(frozen=True, eq=False)
class ScaleBlock:
    kappa: float
    knots: np.ndarray
    raw_slopes: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=np.float64)
        r = np.asarray(self.raw_slopes, dtype=np.float64)
        if k.ndim != 1 or k.size < 1 or np.any(np.diff(k) <= 0):
            raise InvalidArgumentError(f"knots of block kappa={self.kappa} are not increasing")
        if r.shape != (k.size + 1,):
            raise InvalidArgumentError("need one raw slope per piece (len(knots) + 1)")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(r)) and self.kappa > 0):
            raise InvalidArgumentError("non-finite parameters")
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "raw_slopes", r)

    @property
    def slopes(self) -> np.ndarray:
        return np.exp(self.raw_slopes)

    def features(self, c) -> np.ndarray:
        """Signed overlap of ``[0, c]`` with every piece; ``psi = features @ slopes``."""
        c = np.asarray(c, dtype=np.float64)
        lo = np.concatenate([[-np.inf], self.knots])
        hi = np.concatenate([self.knots, [np.inf]])
        cc = c[..., None]
        return np.clip(cc, lo, hi) - np.clip(0.0, lo, hi)

    def __call__(self, c):
        c = np.asarray(c, dtype=np.float64)
        out = np.zeros(c.shape)
        flat, res = c.ravel(), out.reshape(-1)
        s = self.slopes
        for i in range(0, flat.size, _CHUNK):
            res[i : i + _CHUNK] = self.features(flat[i : i + _CHUNK]) @ s
        return out


@dataclass(frozen=True, eq=False)
class MonotoneFilterParams:
    scales: tuple
    delta: float = 0.0
    noise_kind: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        blocks = tuple(self.scales)
        if not blocks:
            raise InvalidArgumentError("need at least one scale block")
        kap = [b.kappa for b in blocks]
        if len(set(kap)) != len(kap):
            raise InvalidArgumentError("duplicate kappa blocks")
        object.__setattr__(self, "scales", blocks)

    @classmethod
    def identity(cls, kappas, knots, **meta) -> "MonotoneFilterParams":
        kn = np.asarray(knots, dtype=np.float64)
        return cls(tuple(ScaleBlock(k, kn, np.zeros(kn.size + 1)) for k in kappas), **meta)

    @property
    def kappas(self) -> np.ndarray:
        return np.array([b.kappa for b in self.scales])

    def block(self, kappa) -> ScaleBlock:
        for b in self.scales:
            if np.isclose(b.kappa, kappa, rtol=1e-12, atol=0):
                return b
        raise InvalidArgumentError(f"no parameter block for kappa={kappa}")

    def eval(self, kappa, x):
        return self.block(kappa)(x)

    def to_dict(self) -> dict:
        return {
            "scales": [
                {"kappa": b.kappa, "knots": b.knots.tolist(), "raw_slopes": b.raw_slopes.tolist()}
                for b in self.scales
            ],
            "delta": float(self.delta),
            "alpha": float(self.delta),
            "noise_kind": str(self.noise_kind),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d) -> "MonotoneFilterParams":
        if not isinstance(d, dict) or not isinstance(d.get("scales"), list):
            raise FormatError("params JSON needs a 'scales' list", 0)
        blocks = []
        for i, s in enumerate(d["scales"]):
            try:
                blocks.append(
                    ScaleBlock(float(s["kappa"]), np.array(s["knots"], float), np.array(s["raw_slopes"], float))
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"scale block {i}: {exc}", 0) from exc
        try:
            return cls(
                tuple(blocks),
                float(d.get("delta", 0.0)),
                str(d.get("noise_kind", "gaussian")),
                int(d.get("seed", 0)),
            )
        except InvalidArgumentError as exc:
            raise FormatError(str(exc), 0) from exc


def eval_learned(params: MonotoneFilterParams, kappa, x):
    out = params.eval(kappa, x)
    return out if np.ndim(out) else float(out)


def filter_from_learned(params: MonotoneFilterParams) -> Filter:
    """``phi(kappa, x) = kappa * psi(kappa, x / kappa)``; use ``alpha = params.delta``."""
    return Filter(FilterKind.LEARNED, params)


def save_params(params: MonotoneFilterParams, path) -> None:
    write_json(params.to_dict(), path)


def load_params(path) -> MonotoneFilterParams:
    return MonotoneFilterParams.from_dict(read_json(path))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    delta: float
    noise_kind: NoiseKind = NoiseKind.GAUSSIAN
    n_train: int = 32
    n_val: int = 8
    epochs: int = 4000
    learning_rate: float = 0.5
    lr_decay: float = 0.999
    knots: int = 63
    B: float | None = None
    seed: int = 0
    a2_floor: bool = True

    def __post_init__(self):
        object.__setattr__(self, "noise_kind", NoiseKind(self.noise_kind))
        if int(self.epochs) < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise InvalidArgumentError("lr_decay must lie in (0, 1]")
        if not self.learning_rate > 0 or self.delta < 0:
            raise InvalidArgumentError("need learning_rate > 0 and delta >= 0")
        if int(self.knots) < 1 or int(self.n_train) < 0 or int(self.n_val) < 0:
            raise InvalidArgumentError("invalid counts")
        if self.B is not None and not self.B > 0:
            raise InvalidArgumentError("B must be positive")


@dataclass
class TrainingPairs:
    """Per-block lists (one entry per image) of FBP inputs and clean targets."""

    kappas: np.ndarray
    inputs: list = field(default_factory=list)
    targets: list = field(default_factory=list)

    @property
    def n_images(self) -> int:
        return len(self.inputs[0]) if self.inputs else 0

    def subset(self, idx) -> "TrainingPairs":
        return TrainingPairs(
            self.kappas,
            [[blk[i] for i in idx] for blk in self.inputs],
            [[blk[i] for i in idx] for blk in self.targets],
        )


def _block_index(ctx: DfdContext):
    """Per-coefficient block id; the approximation joins the coarsest level."""
    n, J = ctx.size, ctx.levels
    ids = [np.full((n >> J) ** 2, J - 1)]
    for lev in range(1, J + 1):
        ids.append(np.full(3 * (n >> lev) ** 2, lev - 1))
    return np.concatenate(ids)


def build_training_pairs(images, cfg: TrainConfig, ctx: DfdContext, stream=0) -> TrainingPairs:
    """Noisy FBP coefficients and clean Haar coefficients, grouped by scale."""
    kappas = ctx.kappas.values
    ids = _block_index(ctx)
    pairs = TrainingPairs(kappas, [[] for _ in kappas], [[] for _ in kappas])
    seed = RngSeed(cfg.seed)
    for i, x in enumerate(images):
        x = x if isinstance(x, Image) else Image(x)
        if x.width != ctx.size:
            raise InvalidArgumentError(f"image {i} is {x.width}^2, context expects {ctx.size}^2")
        y = radon_forward(x, ctx.geometry)
        yd = noisy(y, cfg.noise_kind, cfg.delta, seed, (stream, i))
        c = fbp_coefficients(yd, ctx).to_vector()
        t = haar_analysis(x, ctx.levels).to_vector()
        for b in range(len(kappas)):
            sel = ids == b
            pairs.inputs[b].append(c[sel])
            pairs.targets[b].append(t[sel])
    return pairs


def pairs_from_data(sinograms, images, ctx: DfdContext) -> TrainingPairs:
    """Training pairs from already measured (noisy) sinograms."""
    if len(sinograms) != len(images):
        raise InvalidArgumentError("need one image per sinogram")
    kappas = ctx.kappas.values
    ids = _block_index(ctx)
    pairs = TrainingPairs(kappas, [[] for _ in kappas], [[] for _ in kappas])
    for y, x in zip(sinograms, images):
        c = fbp_coefficients(y, ctx).to_vector()
        t = haar_analysis(x, ctx.levels).to_vector()
        for b in range(len(kappas)):
            pairs.inputs[b].append(c[ids == b])
            pairs.targets[b].append(t[ids == b])
    return pairs


def _normal_equations(block: ScaleBlock, inputs, targets, n_images):
    m = block.knots.size + 1
    G = np.zeros((m, m))
    b = np.zeros(m)
    tt = 0.0
    for c, t in zip(inputs, targets):
        for i in range(0, c.size, _CHUNK):
            F = block.features(c[i : i + _CHUNK])
            G += F.T @ F
            b += F.T @ t[i : i + _CHUNK]
        tt += float(t @ t)
    scale = 1.0 / max(n_images, 1)
    return G * scale, b * scale, tt * scale


def _loss(G, b, tt, w):
    return float(w @ G @ w - 2.0 * b @ w + tt)


def block_range(inputs, quantile: float = 0.999) -> float:
    c = np.abs(np.concatenate(inputs)) if inputs else np.zeros(0)
    B = float(np.quantile(c, quantile)) if c.size else 0.0
    return B if B > 0 else 1.0


def training_loss(params: MonotoneFilterParams, pairs: TrainingPairs) -> float:
    """``(1/N) sum_i sum_lambda (t - psi(c))^2``."""
    total = 0.0
    for k, ins, tgs in zip(pairs.kappas, pairs.inputs, pairs.targets):
        blk = params.block(k)
        total += sum(float(np.sum((t - blk(c)) ** 2)) for c, t in zip(ins, tgs))
    return total / max(pairs.n_images, 1)


def loss_gradient(G, b, raw):
    """Gradient in raw-slope coordinates of ``w^T G w - 2 b^T w``, ``w = exp(raw)``."""
    w = np.exp(raw)
    return 2.0 * (G @ w - b) * w


@dataclass
class TrainResult:
    params: MonotoneFilterParams
    train_loss: list
    val_loss: list
    best_epoch: int


def train(pairs: TrainingPairs, cfg: TrainConfig, val_pairs: TrainingPairs = None) -> TrainResult:
    """Minimize the per-scale least-squares loss by preconditioned gradient descent.

    Each step is ``raw -= lr * grad / diag`` with ``diag`` the Gauss-Newton
    diagonal ``2 G_ii w_i^2``, capped so the quadratic model decreases.
    """
    if pairs.n_images == 0:
        raise InvalidArgumentError("training needs at least one image")
    K = int(cfg.knots)
    problems = []
    for k, ins, tgs in zip(pairs.kappas, pairs.inputs, pairs.targets):
        B = cfg.B if cfg.B is not None else block_range(ins)
        blk = ScaleBlock(k, np.linspace(-B, B, K), np.zeros(K + 1))
        G, bv, tt = _normal_equations(blk, ins, tgs, pairs.n_images)
        val = None
        if val_pairs is not None and val_pairs.n_images:
            j = list(val_pairs.kappas).index(k)
            val = _normal_equations(blk, val_pairs.inputs[j], val_pairs.targets[j], val_pairs.n_images)
        problems.append((blk, G, bv, tt, val))

    # optional lower bound on the slopes: psi(c) / c >= A2_MARGIN * kappa^2
    floors = [
        np.log(A2_MARGIN * p[0].kappa ** 2) if cfg.a2_floor else -np.inf for p in problems
    ]
    raws = [np.full(K + 1, max(0.0, fl)) for fl in floors]
    lr = float(cfg.learning_rate)

    def losses(rs):
        tr = sum(_loss(G, bv, tt, np.exp(r)) for (_, G, bv, tt, _), r in zip(problems, rs))
        if val_pairs is None or not val_pairs.n_images:
            return tr, tr
        va = sum(_loss(*v, np.exp(r)) for (_, _, _, _, v), r in zip(problems, rs))
        return tr, va

    tr, va = losses(raws)
    train_trace, val_trace = [tr], [va]
    best, best_raws, best_epoch = va, [r.copy() for r in raws], 0
    for epoch in range(1, int(cfg.epochs) + 1):
        for j, (blk, G, bv, tt, _) in enumerate(problems):
            r = raws[j]
            w = np.exp(r)
            g = loss_gradient(G, bv, r)
            diag = 2.0 * np.diag(G) * w**2
            diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
            step = g / diag
            # keep the step inside the region where exp is close to linear
            step *= min(1.0, 1.0 / max(lr * np.abs(step).max(), 1e-300))
            raws[j] = np.maximum(r - lr * step, floors[j])
        tr, va = losses(raws)
        if not (np.isfinite(tr) and np.isfinite(va)):
            raise TrainingError("training loss became non-finite", epoch)
        train_trace.append(tr)
        val_trace.append(va)
        if va < best:
            best, best_raws, best_epoch = va, [r.copy() for r in raws], epoch
        lr *= cfg.lr_decay
    log.debug("trained delta=%s best epoch %d loss %.6g", cfg.delta, best_epoch, best)
    params = MonotoneFilterParams(
        tuple(ScaleBlock(p[0].kappa, p[0].knots, r) for p, r in zip(problems, best_raws)),
        float(cfg.delta),
        cfg.noise_kind.value,
        int(cfg.seed),
    )
    return TrainResult(params, train_trace, val_trace, best_epoch)


def train_on_images(images, cfg: TrainConfig, ctx: DfdContext) -> TrainResult:
    """Split ``images`` (validation from the tail) and train."""
    images = list(images)
    n_val = min(int(cfg.n_val), max(len(images) - 1, 0))
    fit, val = images[: len(images) - n_val], images[len(images) - n_val :]
    pairs = build_training_pairs(fit, cfg, ctx, stream=0)
    val_pairs = build_training_pairs(val, cfg, ctx, stream=1) if val else None
    return train(pairs, cfg, val_pairs)


def default_training_images(cfg: TrainConfig, size: int):
    return random_phantoms(int(cfg.n_train) + int(cfg.n_val), size, seed=cfg.seed)
