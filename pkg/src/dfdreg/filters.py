"""Regularizing filters, their penalties and proximity operators, and the
numeric checks of the filter conditions."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dfd import QuasiSingularMap, WaveletField
from .exceptions import InvalidArgumentError, PreconditionError, RangeError

QUAD_TOL = 1e-9
_MAX_EXPAND = 40
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class FilterKind(str, Enum):
    IDENTITY = "identity"
    EXAMPLE_CUBIC = "example_cubic"
    SOFT_THRESHOLD = "soft_threshold"
    LINEAR_TIKHONOV = "linear_tikhonov"
    LEARNED = "learned"


@dataclass(frozen=True, eq=False)
class Filter:
    """A filter family ``phi_alpha(kappa, x)``.

    ``params`` is only used by learned filters and must provide
    ``eval(kappa, t)`` (the scale function psi).
    """

    kind: FilterKind
    params: object = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FilterKind(self.kind))
        if self.kind is FilterKind.LEARNED and self.params is None:
            raise InvalidArgumentError("learned filters need parameters")

    @property
    def strictly_increasing(self) -> bool:
        return self.kind is not FilterKind.SOFT_THRESHOLD

    def __call__(self, alpha, kappa, x):
        return eval_filter(self, alpha, kappa, x)

    @classmethod
    def named(cls, name: str) -> "Filter":
        kind = FilterKind(name)
        if kind is FilterKind.LEARNED:
            raise InvalidArgumentError("use filter_from_learned for learned filters")
        return cls(kind)


def _check_ak(alpha, kappa):
    if not (np.isfinite(alpha) and alpha > 0):
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    if not (np.isfinite(kappa) and kappa > 0):
        raise InvalidArgumentError(f"kappa must be positive, got {kappa}")


def _cubic(alpha, x):
    ax = np.abs(x)
    inner = np.maximum(3.0 * (1.0 + alpha) * ax / alpha - (2.0 + 3.0 * alpha), 1.0)
    out = np.where(
        ax <= alpha,
        ax**3 / (3.0 * alpha**2),
        (alpha / 3.0) * inner ** (1.0 / (alpha + 1.0)),
    )
    return np.sign(x) * out


def eval_filter(f: Filter, alpha, kappa, x):
    """``phi_alpha(kappa, x)``; vectorized over ``x``."""
    _check_ak(alpha, kappa)
    xa = np.asarray(x, dtype=np.float64)
    k = f.kind
    if k is FilterKind.IDENTITY:
        out = xa.copy()
    elif k is FilterKind.EXAMPLE_CUBIC:
        out = _cubic(float(alpha), xa)
    elif k is FilterKind.SOFT_THRESHOLD:
        out = np.sign(xa) * np.maximum(np.abs(xa) - alpha, 0.0)
    elif k is FilterKind.LINEAR_TIKHONOV:
        out = kappa**2 * xa / (kappa**2 + alpha)
    else:
        out = kappa * np.asarray(f.params.eval(kappa, xa / kappa), dtype=np.float64)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# inversion


def _phi_fn(f, alpha, kappa):
    return lambda t: eval_filter(f, alpha, kappa, t)


def _bracket(fn, y):
    scale = np.maximum(1.0, np.abs(y))
    lo, hi = -scale, scale.copy()
    flo, fhi = fn(lo), fn(hi)
    for _ in range(_MAX_EXPAND + 1):
        low = flo > y
        high = fhi < y
        if not (low.any() or high.any()):
            return lo, hi
        new_lo = np.where(low, 2.0 * lo, lo)
        new_hi = np.where(high, 2.0 * hi, hi)
        f_new_lo, f_new_hi = fn(new_lo), fn(new_hi)
        if np.any(f_new_lo[low] > flo[low]) or np.any(f_new_hi[high] < fhi[high]):
            raise PreconditionError("filter is not monotone on the search bracket")
        lo, hi, flo, fhi = new_lo, new_hi, f_new_lo, f_new_hi
    raise RangeError(f"value outside the filter range after 2^{_MAX_EXPAND} expansion")


def invert_filter(f: Filter, alpha, kappa, y):
    """Solve ``phi_alpha(kappa, x) = y`` by bisection; vectorized over ``y``."""
    _check_ak(alpha, kappa)
    fn = _phi_fn(f, alpha, kappa)
    ya = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if not np.all(np.isfinite(ya)):
        raise InvalidArgumentError("cannot invert non-finite values")
    lo, hi = _bracket(fn, ya)
    for _ in range(1100):
        mid = 0.5 * (lo + hi)
        active = (mid > lo) & (mid < hi)
        if not active.any():
            break
        up = fn(mid) < ya
        lo = np.where(active & up, mid, lo)
        hi = np.where(active & ~up, mid, hi)
    # pick the endpoint with the smaller residual
    x = np.where(np.abs(fn(lo) - ya) <= np.abs(fn(hi) - ya), lo, hi)
    # flat stretches make the inverse ill-defined
    eps = 1e-7 * np.maximum(1.0, np.abs(x))
    fx = fn(x)
    if np.any(fn(x + eps) <= fx) or np.any(fx <= fn(x - eps)):
        raise PreconditionError("filter is not strictly increasing near the solution")
    return x.reshape(np.shape(y)) if np.ndim(y) else float(x[0])


# ---------------------------------------------------------------------------
# quadrature


def integrate(fn, a, b, tol: float = QUAD_TOL, max_depth: int = 60):
    """Adaptive Simpson quadrature of ``fn`` over ``[a_i, b_i]``, vectorized."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64)).ravel()
    b = np.atleast_1d(np.asarray(b, dtype=np.float64)).ravel()
    a, b = np.broadcast_arrays(a, b)
    a, b = a.copy(), b.copy()
    out = np.zeros(a.shape)
    idx = np.arange(a.size)
    m = 0.5 * (a + b)
    fa, fm, fb = fn(a), fn(m), fn(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    tols = tol * np.maximum(1.0, np.abs(whole))
    for depth in range(max_depth):
        if idx.size == 0:
            break
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = fn(lm), fn(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        err = left + right - whole
        done = (np.abs(err) <= 15.0 * tols) | (depth == max_depth - 1)
        np.add.at(out, idx[done], (left + right + err / 15.0)[done])
        k = ~done
        a, m_, b = a[k], m[k], b[k]
        fa, fm_, fb, flm, frm = fa[k], fm[k], fb[k], flm[k], frm[k]
        left, right, tk, ik = left[k], right[k], tols[k] / 2.0, idx[k]
        a, b = np.concatenate([a, m_]), np.concatenate([m_, b])
        fa, fb = np.concatenate([fa, fm_]), np.concatenate([fm_, fb])
        fm = np.concatenate([flm, frm])
        m = 0.5 * (a + b)
        whole = np.concatenate([left, right])
        tols = np.concatenate([tk, tk])
        idx = np.concatenate([ik, ik])
    return out


def _conjugate_parts(f, alpha, kappa, X):
    """``T = phi^-1(X)`` and ``int_0^T phi``.

    Integration by parts gives ``int_0^X phi^-1 = T X - int_0^T phi`` with a
    smooth integrand.
    """
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(invert_filter(f, alpha, kappa, X.ravel()), dtype=np.float64)
    area = integrate(_phi_fn(f, alpha, kappa), np.zeros_like(T), T)
    return T.reshape(X.shape), area.reshape(X.shape)


def penalty_values(f: Filter, alpha, kappa, X) -> np.ndarray:
    """``s(X) = int_0^X phi^-1 - X^2 / 2`` at arbitrary points."""
    X = np.asarray(X, dtype=np.float64)
    T, area = _conjugate_parts(f, alpha, kappa, X)
    return T * X - area - 0.5 * X**2


def penalty_increment(f: Filter, alpha, kappa, x0, x1):
    """``s(x1) - s(x0)`` computed as one integral, accurate for close points."""
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    x1 = np.asarray(x1, dtype=np.float64).ravel()
    t0 = np.asarray(invert_filter(f, alpha, kappa, x0), dtype=np.float64)
    t1 = np.asarray(invert_filter(f, alpha, kappa, x1), dtype=np.float64)
    area = integrate(_phi_fn(f, alpha, kappa), t0, t1)
    return t1 * x1 - t0 * x0 - area - 0.5 * (x1 - x0) * (x1 + x0)


# ---------------------------------------------------------------------------
# penalties and proxes


def penalty_grid(radius: float, n: int = 2000, smallest: float = 1e-9) -> np.ndarray:
    """Symmetric grid through 0, geometrically refined toward the origin.

    Penalties of filters that are flat at 0 have a singular ``s'`` there,
    which a uniform grid resolves poorly.
    """
    u = np.geomspace(smallest * radius, radius, int(n))
    return np.concatenate([-u[::-1], [0.0], u])


@dataclass(frozen=True, eq=False)
class ScalarPenalty:
    alpha: float
    kappa: float
    grid: np.ndarray
    values: np.ndarray
    derivative: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise InvalidArgumentError("penalty grid must be strictly increasing")
        for name in ("values", "derivative"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != g.shape or not np.all(np.isfinite(v)):
                raise InvalidArgumentError(f"penalty {name} must be finite and match the grid")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "grid", g)

    @classmethod
    def from_function(cls, grid, s, ds, alpha=1.0, kappa=1.0) -> "ScalarPenalty":
        g = np.asarray(grid, dtype=np.float64)
        return cls(alpha, kappa, g, s(g), ds(g))

    @property
    def origin(self) -> int:
        return int(np.argmin(np.abs(self.grid)))


def penalty_from_filter(f: Filter, alpha, kappa, grid) -> ScalarPenalty:
    """Sample the weakly convex penalty ``s`` whose proximity operator is ``phi``."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or np.any(np.diff(g) <= 0):
        raise InvalidArgumentError("grid must be strictly increasing")
    zero = np.flatnonzero(g == 0.0)
    if zero.size != 1:
        raise InvalidArgumentError("grid must contain 0")
    o = int(zero[0])
    T = np.asarray(invert_filter(f, alpha, kappa, g), dtype=np.float64)
    T[o] = 0.0
    pieces = integrate(_phi_fn(f, alpha, kappa), T[:-1], T[1:])
    area = np.concatenate([[0.0], np.cumsum(pieces)])
    area -= area[o]
    values = T * g - area - 0.5 * g**2
    values[o] = 0.0
    return ScalarPenalty(float(alpha), float(kappa), g, values, T - g)


def _hermite(p: ScalarPenalty, i: int, t):
    g, v, d = p.grid, p.values, p.derivative
    h = g[i + 1] - g[i]
    u = (t - g[i]) / h
    h00 = 2 * u**3 - 3 * u**2 + 1
    h10 = u**3 - 2 * u**2 + u
    h01 = -2 * u**3 + 3 * u**2
    h11 = u**3 - u**2
    return h00 * v[i] + h10 * h * d[i] + h01 * v[i + 1] + h11 * h * d[i + 1]


def _interp(p: ScalarPenalty, t):
    i = int(np.clip(np.searchsorted(p.grid, t) - 1, 0, p.grid.size - 2))
    return _hermite(p, i, t)


def prox_bruteforce(p: ScalarPenalty, x: float, tol: float = 1e-13) -> float:
    """``argmin_t |x - t|^2 / 2 + s(t)`` by grid search and golden-section refinement."""
    g = p.grid
    x = float(x)
    if not g[0] <= x <= g[-1]:
        raise RangeError(f"x={x} outside the penalty grid [{g[0]}, {g[-1]}]")
    obj = 0.5 * (x - g) ** 2 + p.values
    k = int(np.argmin(obj))
    lo, hi = g[max(k - 1, 0)], g[min(k + 1, g.size - 1)]

    def h(t):
        return 0.5 * (x - t) ** 2 + _interp(p, t)

    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = h(c), h(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = h(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = h(d)
    t = 0.5 * (a + b)
    return t if h(t) <= obj[k] else float(g[k])


# ---------------------------------------------------------------------------
# kappa-regularizer


def _coeffs_and_kappas(kappas, w):
    if isinstance(w, WaveletField):
        vec = w.to_vector()
        if isinstance(kappas, QuasiSingularMap):
            kv = kappas.vector(w.size)
        else:
            kv = np.asarray(kappas, dtype=np.float64)
    else:
        vec = np.asarray(w, dtype=np.float64).ravel()
        kv = np.asarray(kappas, dtype=np.float64).ravel()
    if kv.shape != vec.shape:
        raise InvalidArgumentError("kappa vector does not match the coefficients")
    return vec, kv


def kappa_regularizer(f: Filter, alpha, kappas, w) -> float:
    """``R_alpha(w) = sum_lambda s_{alpha,lambda}(kappa_lambda w_lambda)``."""
    vec, kv = _coeffs_and_kappas(kappas, w)
    total = 0.0
    for k in np.unique(kv):
        sel = kv == k
        total += float(np.sum(penalty_values(f, alpha, k, k * vec[sel])))
    return total


def regularizer_gradient(f: Filter, alpha, kappas, w) -> np.ndarray:
    """``kappa (phi^-1(kappa w) - kappa w)`` per coefficient."""
    vec, kv = _coeffs_and_kappas(kappas, w)
    out = np.empty_like(vec)
    for k in np.unique(kv):
        sel = kv == k
        out[sel] = k * (invert_filter(f, alpha, k, k * vec[sel]) - k * vec[sel])
    return out


def regularizer_gradient_check(
    f: Filter, alpha, kappas, w, h: float = 1e-5, n_coeffs: int = 50, seed=0
) -> float:
    """Max relative error between the analytic gradient and central differences.

    Only the perturbed term of the separable sum changes, so each difference
    quotient is evaluated as a single short integral.
    """
    from .core import as_generator

    vec, kv = _coeffs_and_kappas(kappas, w)
    rng = as_generator(seed, 0x67)
    pick = rng.choice(vec.size, size=min(int(n_coeffs), vec.size), replace=False)
    grad = regularizer_gradient(f, alpha, kv[pick], vec[pick])
    worst = 0.0
    for j, i in enumerate(pick):
        k = kv[i]
        diff = penalty_increment(f, alpha, k, k * (vec[i] - h), k * (vec[i] + h))[0]
        fd = diff / (2.0 * h)
        # differences below the cancellation level of the quotient are noise
        noise = 64.0 * np.finfo(float).eps * max(1.0, (k * abs(vec[i]) + k * h) ** 2) / h
        gap = abs(fd - grad[j])
        err = 0.0 if gap <= noise else gap / max(abs(grad[j]), abs(fd))
        worst = max(worst, err)
    return float(worst)


# ---------------------------------------------------------------------------
# Bregman distances


class QFamily(str, Enum):
    SMALLEST_Q = "smallest_q"
    NORM_Q = "norm_q"


@dataclass(frozen=True)
class NeighbourSpec:
    """Quadratic neighbouring penalties ``q_lambda``.

    ``norm_q``: ``q(t) = max_kappa L t^2 / kappa^2``;
    ``smallest_q``: ``q(t) = (L / kappa - 1 / (2 alpha_tilde)) t^2``.
    """

    L: float = 1.0
    alpha_tilde: float = 1.0
    q_family: QFamily = QFamily.NORM_Q

    def __post_init__(self):
        if not (self.L > 0 and self.alpha_tilde > 0):
            raise InvalidArgumentError("L and alpha_tilde must be positive")
        object.__setattr__(self, "q_family", QFamily(self.q_family))

    def coefficient(self, kappa, max_kappa):
        """``c`` with ``q(t) = c t^2``."""
        kappa = np.asarray(kappa, dtype=np.float64)
        if self.q_family is QFamily.NORM_Q:
            return max_kappa * self.L / kappa**2
        return self.L / kappa - 1.0 / (2.0 * self.alpha_tilde)

    def q(self, kappa, max_kappa, t):
        return self.coefficient(kappa, max_kappa) * np.asarray(t) ** 2

    def dq(self, kappa, max_kappa, t):
        return 2.0 * self.coefficient(kappa, max_kappa) * np.asarray(t)

    def conditions_hold(self, kappas) -> bool:
        """q' linear through 0 with slope at least ``2L/kappa - 1/alpha_tilde``."""
        k = np.asarray(kappas.values if isinstance(kappas, QuasiSingularMap) else kappas)
        slope = 2.0 * self.coefficient(k, float(k.max()))
        need = 2.0 * self.L / k - 1.0 / self.alpha_tilde
        return bool(np.all(slope >= need * (1 - 1e-12)))


def bregman_distance(spec: NeighbourSpec, kappas, x, y) -> float:
    """Absolute symmetric Bregman distance of ``Q(x) = sum q_lambda(kappa_lambda x_lambda)``."""
    xv, kv = _coeffs_and_kappas(kappas, x)
    yv, _ = _coeffs_and_kappas(kappas, y)
    if isinstance(kappas, QuasiSingularMap):
        kmax = float(kappas.values.max())
    else:
        kmax = float(kv.max())
    gx = kv * spec.dq(kv, kmax, kv * xv)
    gy = kv * spec.dq(kv, kmax, kv * yv)
    return float(abs(np.dot(gx - gy, xv - yv)))


# ---------------------------------------------------------------------------
# verification


def _quadratic_prox(alpha, coef, x, grid):
    """Brute-force prox of ``alpha * coef * t^2``; ``inf`` when unbounded below."""
    c = alpha * coef
    if 1.0 + 2.0 * c <= 0:
        return np.inf
    p = ScalarPenalty.from_function(grid, lambda t: c * t**2, lambda t: 2 * c * t)
    return prox_bruteforce(p, x)


def _trapz(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def verify_filter(
    f: Filter,
    alphas,
    kappas,
    xs,
    spec: NeighbourSpec = None,
    g=None,
    c: float = 1.0,
    K: float = 2.0,
    neighbour_points: int = 9,
) -> dict:
    """Numeric check of the filter conditions on the given grids.

    Returns a report keyed by alpha (as a string) with the per-alpha
    summaries, plus ``"per_kappa"`` detail and the tested range.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 1 or xs.size < 3 or np.any(np.diff(xs) <= 0):
        raise InvalidArgumentError("x grid must be strictly increasing")
    if not np.allclose(xs, -xs[::-1], rtol=0, atol=1e-12 * max(1.0, np.abs(xs).max())):
        raise InvalidArgumentError("x grid must be symmetric about 0")
    kap = np.asarray(kappas.values if isinstance(kappas, QuasiSingularMap) else kappas, float)
    if kap.size == 0 or len(alphas) == 0:
        raise InvalidArgumentError("alpha and kappa grids must be non-empty")
    spec = NeighbourSpec() if spec is None else spec
    g = (lambda k, t: k**2 * t) if g is None else g
    kmax = float(kap.max())
    nz = xs != 0.0
    report = {"x_range": [float(xs[0]), float(xs[-1])], "kappas": kap.tolist()}
    for alpha in alphas:
        alpha = float(alpha)
        rows = []
        for k in kap:
            phi = np.asarray(eval_filter(f, alpha, k, xs))
            d = np.diff(phi)
            increasing = bool(np.all(d > 0))
            f3 = abs(float(eval_filter(f, alpha, k, 0.0)))
            f4 = np.sqrt(_trapz((phi - xs) ** 2, xs))
            # A1 on dedicated points inside (0, c alpha / kappa]
            r = c * alpha / k
            a1x = np.concatenate([-np.geomspace(r, r * 1e-6, 200), np.geomspace(r * 1e-6, r, 200)])
            a1 = np.abs(eval_filter(f, alpha, k, a1x)) * np.sqrt(alpha) / (np.abs(a1x) * k)
            a3 = float(np.max(np.abs(phi[nz]) - K * np.abs(xs[nz])))
            a2 = float(np.min(np.abs(phi[nz]) / g(k, np.abs(xs[nz]))))
            slopes = d / np.diff(xs)
            nonexp = bool(np.all(np.abs(slopes) <= 1.0 + 1e-9))
            # neighbouring bracket on a few sample points
            pts = np.linspace(0.0, xs[-1], neighbour_points + 1)[1:]
            coef = float(spec.coefficient(k, kmax))
            lgrid = np.linspace(xs[0], xs[-1], 4001)
            lgrid = np.union1d(lgrid, [0.0])
            nb = True
            for x in pts:
                lo = _quadratic_prox(alpha, coef + spec.L / k, x, lgrid)
                hi = _quadratic_prox(alpha, coef - spec.L / k, x, lgrid)
                v = abs(float(eval_filter(f, alpha, k, x)))
                tol = 1e-6 * max(1.0, abs(x))
                nb = nb and (abs(lo) - tol <= v <= abs(hi) + tol)
            rows.append(
                {
                    "kappa": float(k),
                    "F1": increasing,
                    "F2": increasing,
                    "F3": f3,
                    "F4": float(f4),
                    "A1_ratio": float(np.max(a1)),
                    "A3_margin": a3,
                    "A2_ratio": a2,
                    "nonexpansive": nonexp,
                    "neighbour_ok": bool(nb),
                }
            )
        report[repr(alpha)] = {
            "F1": all(r["F1"] for r in rows),
            "F2": all(r["F2"] for r in rows),
            "F3_max": max(r["F3"] for r in rows),
            "F4_sum": float(sum(r["F4"] for r in rows)),
            "A1_ratio": max(r["A1_ratio"] for r in rows),
            "A3_margin": max(r["A3_margin"] for r in rows),
            "A3_ok": all(r["A3_margin"] < 0 for r in rows),
            "A2_ratio": min(r["A2_ratio"] for r in rows),
            "nonexpansive": all(r["nonexpansive"] for r in rows),
            "neighbour_ok": all(r["neighbour_ok"] for r in rows),
            "per_kappa": rows,
        }
    return report
