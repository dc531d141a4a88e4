"""scikit-learn style wrapper: learn a filter from (sinogram, image) pairs."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import AngleRange, Image, Sinogram
from .dfd import DfdContext
from .exceptions import InvalidArgumentError
from .experiments import reconstruct_learned
from .learned import TrainConfig, pairs_from_data, train
from .radon import RadonGeometry


def _as_stack(a, name, ndim=3) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == ndim - 1:
        a = a[None]
    if a.ndim != ndim or a.shape[0] == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty stack of 2-D arrays")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return a


class FilteredDFD(BaseEstimator):
    """Learned non-linear filtered DFD reconstruction.

    ``fit(X, y)`` takes noisy sinograms ``X`` of shape
    ``(n, n_angles, n_offsets)`` and ground-truth images ``y`` of shape
    ``(n, size, size)``; ``predict(X)`` returns reconstructed images.
    """

    def __init__(
        self,
        image_size=128,
        n_angles=None,
        n_offsets=None,
        angle_range="half_turn",
        levels=None,
        kappa0=1.0,
        delta=8.0,
        epochs=4000,
        learning_rate=0.5,
        lr_decay=0.999,
        knots=63,
        validation_fraction=0.2,
        a2_floor=True,
    ):
        self.image_size = image_size
        self.n_angles = n_angles
        self.n_offsets = n_offsets
        self.angle_range = angle_range
        self.levels = levels
        self.kappa0 = kappa0
        self.delta = delta
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.knots = knots
        self.validation_fraction = validation_fraction
        self.a2_floor = a2_floor

    def _context(self) -> DfdContext:
        g = RadonGeometry.for_size(self.image_size, self.n_angles, self.n_offsets, self.angle_range)
        return DfdContext.for_geometry(g, self.levels, self.kappa0)

    def _sinograms(self, X, ctx):
        X = _as_stack(X, "X")
        g = ctx.geometry
        if X.shape[1:] != (g.n_angles, g.n_offsets):
            raise InvalidArgumentError(
                f"sinograms are {X.shape[1:]}, expected {(g.n_angles, g.n_offsets)}"
            )
        return [Sinogram(v, AngleRange(self.angle_range)) for v in X]

    def fit(self, X, y):
        ctx = self._context()
        sinos = self._sinograms(X, ctx)
        imgs = _as_stack(y, "y")
        if len(imgs) != len(sinos):
            raise InvalidArgumentError("X and y have different lengths")
        if imgs.shape[1:] != (ctx.size, ctx.size):
            raise InvalidArgumentError(f"images must be {ctx.size}x{ctx.size}")
        n_val = int(round(self.validation_fraction * len(sinos)))
        n_val = min(n_val, len(sinos) - 1)
        cut = len(sinos) - n_val
        cfg = TrainConfig(
            delta=self.delta,
            n_train=cut,
            n_val=n_val,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            lr_decay=self.lr_decay,
            knots=self.knots,
            a2_floor=self.a2_floor,
        )
        pairs = pairs_from_data(sinos[:cut], [Image(v) for v in imgs[:cut]], ctx)
        val = pairs_from_data(sinos[cut:], [Image(v) for v in imgs[cut:]], ctx) if n_val else None
        result = train(pairs, cfg, val)
        self.context_ = ctx
        self.learned_params_ = result.params
        self.loss_curve_ = np.asarray(result.train_loss)
        self.best_epoch_ = result.best_epoch
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "learned_params_")
        sinos = self._sinograms(X, self.context_)
        return np.stack([reconstruct_learned(s, self.learned_params_, self.context_).pixels for s in sinos])

    def score(self, X, y) -> float:
        """Negative mean squared error (higher is better)."""
        pred = self.predict(X)
        return -float(np.mean((pred - _as_stack(y, "y")) ** 2))
