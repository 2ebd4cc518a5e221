"""Estimators of the missingness probability p(z).

Four ways to produce a propensity: a user-supplied known function, the
constant (MCAR) estimate, a parametric logistic fit, and a kernel smoother
with leave-one-out cross-validated bandwidth.  All of them return a
``PropensityFit`` whose ``predict`` is clamped below by a positive floor so
inverse-probability weights stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "PropensityFit",
    "fit_logistic",
    "kernel_propensity",
    "cv_bandwidth",
    "auto_bandwidth",
    "constant_propensity",
    "known_propensity",
    "DEFAULT_FLOOR",
]

DEFAULT_FLOOR = 0.01

_NEWTON_TOL = 1e-10
_NEWTON_MAX_ITER = 100
_MAX_HALVINGS = 30
_SEPARATION_NORM = 1e3

# Query-block size for kernel evaluations, keeps the (block x n) kernel
# panels comfortably in cache without quadratic memory blowup.
_BLOCK = 1024


def _as_matrix(z) -> np.ndarray:
    arr = np.asarray(z, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim != 2:
        raise ValueError("z must be a vector or a matrix")
    if not np.all(np.isfinite(arr)):
        raise ValueError("z must be fully observed")
    return arr


def _as_delta(delta) -> np.ndarray:
    arr = np.asarray(delta)
    if arr.ndim != 1:
        raise ValueError("delta must be one-dimensional")
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError("delta must contain only 0 and 1")
    return arr.astype(float)


@dataclass(frozen=True)
class PropensityFit:
    """A fitted (or supplied) propensity.

    method : one of "known", "constant", "logistic", "kernel"
    predict : maps z (scalar, vector, or matrix of query points) to
        probabilities in [floor, 1]
    params : method-specific values (gamma for logistic, bandwidth for
        kernel, the scalar for constant)
    floor : the positive lower clamp applied to every prediction
    """

    method: str
    predict: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    params: dict
    floor: float

    def __post_init__(self):
        if not 0.0 < self.floor <= 1.0:
            raise ValueError("floor must lie in (0, 1]")


def _clamped(raw: Callable[[np.ndarray], np.ndarray], floor: float, k: int):
    """Wrap a matrix-input prediction with shape handling and the clamp."""

    def predict(z):
        zq = np.asarray(z, dtype=float)
        scalar = zq.ndim == 0
        mat = _as_matrix(zq)
        if mat.shape[1] != k:
            # A single k-dim query point may arrive as a flat vector.
            if scalar or zq.ndim == 1 and zq.size == k:
                mat = zq.reshape(1, k)
            else:
                raise ValueError(f"z has {mat.shape[1]} columns, expected {k}")
        out = np.clip(raw(mat), floor, 1.0)
        if scalar or (zq.ndim == 1 and zq.size == k and k > 1):
            return float(out[0])
        return out

    return predict


def known_propensity(
    fn: Callable[[np.ndarray], np.ndarray], k: int = 1, floor: float = DEFAULT_FLOOR
) -> PropensityFit:
    """Wrap a known propensity function, clamping it to [floor, 1].

    ``fn`` receives an (m, k) matrix of query points and must return m
    probabilities.
    """

    def raw(mat):
        return np.asarray(fn(mat), dtype=float).reshape(mat.shape[0])

    return PropensityFit(
        method="known", predict=_clamped(raw, floor, k), params={}, floor=floor
    )


def constant_propensity(delta, floor: float = DEFAULT_FLOOR) -> PropensityFit:
    """MCAR propensity: the observed fraction, floored."""
    d = _as_delta(delta)
    if d.size < 1:
        raise ValueError("delta must be nonempty")
    p_hat = max(float(d.mean()), floor)

    def raw(mat):
        return np.full(mat.shape[0], p_hat)

    return PropensityFit(
        method="constant",
        predict=_clamped(raw, floor, 1),
        params={"p_hat": p_hat},
        floor=floor,
    )


def _log_likelihood(eta: np.ndarray, d: np.ndarray) -> float:
    # sum of d*eta - log(1 + exp(eta)), stably
    return float(d @ eta - np.logaddexp(0.0, eta).sum())


def fit_logistic(z, delta, floor: float = DEFAULT_FLOOR) -> PropensityFit:
    """Maximum-likelihood logistic propensity with intercept.

    Damped Newton iterations (steps halved until the likelihood increases,
    at most 30 halvings) to gradient norm 1e-10, capped at 100 iterations.

    Raises
    ------
    ValueError
        "separation" when the iterates diverge (parameter norm above 1e3);
        also when delta is constant or n < k + 2.
    """
    zm = _as_matrix(z)
    d = _as_delta(delta)
    n, k = zm.shape
    if d.size != n:
        raise ValueError("z and delta must have equal length")
    if d.min() == d.max():
        raise ValueError("all delta equal; logistic fit undefined")
    if n < k + 2:
        raise ValueError("need at least k + 2 observations")

    x = np.column_stack([np.ones(n), zm])
    gamma = np.zeros(k + 1)
    eta = x @ gamma
    ll = _log_likelihood(eta, d)
    for _ in range(_NEWTON_MAX_ITER):
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = x.T @ (d - p)
        if float(np.linalg.norm(grad)) <= _NEWTON_TOL:
            break
        w = p * (1.0 - p)
        hess = x.T @ (x * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            ridge = 1e-10 * (np.trace(hess) / (k + 1) + 1.0)
            step = np.linalg.solve(hess + ridge * np.eye(k + 1), grad)
        scale = 1.0
        for _ in range(_MAX_HALVINGS):
            cand = gamma + scale * step
            eta_cand = x @ cand
            ll_cand = _log_likelihood(eta_cand, d)
            if ll_cand > ll:
                break
            scale *= 0.5
        else:
            # No step length improves the likelihood: we are at the optimum
            # up to floating-point resolution.
            break
        gamma, eta, ll = cand, eta_cand, ll_cand
        if float(np.linalg.norm(gamma)) > _SEPARATION_NORM:
            raise ValueError("separation")

    if float(np.linalg.norm(gamma)) > _SEPARATION_NORM:
        raise ValueError("separation")

    def raw(mat):
        e = gamma[0] + mat @ gamma[1:]
        return 1.0 / (1.0 + np.exp(-e))

    return PropensityFit(
        method="logistic",
        predict=_clamped(raw, floor, k),
        params={"gamma": gamma.copy()},
        floor=floor,
    )


def _epanechnikov_panel(z_train: np.ndarray, z_query: np.ndarray, b_n: float):
    """Product Epanechnikov kernel matrix, shape (len(query), len(train))."""
    t = (z_train[None, :, :] - z_query[:, None, :]) / b_n
    k = np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t), 0.0)
    return k.prod(axis=2)


def kernel_propensity(z, delta, b_n: float, floor: float = DEFAULT_FLOOR) -> PropensityFit:
    """Kernel-smoothed propensity with product Epanechnikov weights.

    predict(z) is the locally weighted observed fraction; query points with
    no training point inside the bandwidth fall back to the overall mean of
    delta, then everything is clamped to [floor, 1].
    """
    if not b_n > 0:
        raise ValueError("bandwidth must be positive")
    zm = _as_matrix(z)
    d = _as_delta(delta)
    n, k = zm.shape
    if d.size != n:
        raise ValueError("z and delta must have equal length")
    if n < 2:
        raise ValueError("need at least two observations")
    d_mean = float(d.mean())

    def raw(mat):
        m = mat.shape[0]
        out = np.empty(m)
        for lo in range(0, m, _BLOCK):
            hi = min(lo + _BLOCK, m)
            panel = _epanechnikov_panel(zm, mat[lo:hi], b_n)
            den = panel.sum(axis=1)
            num = panel @ d
            out[lo:hi] = np.where(den > 0.0, num / np.where(den > 0, den, 1.0), d_mean)
        return out

    return PropensityFit(
        method="kernel",
        predict=_clamped(raw, floor, k),
        params={"bandwidth": float(b_n)},
        floor=floor,
    )


def cv_bandwidth(z, delta, grid) -> float:
    """Grid bandwidth minimizing leave-one-out squared prediction error.

    Each candidate is scored by sum_i (delta_i - p_loo_i)^2 where p_loo_i is
    the kernel estimate at z_i with observation i removed; a point left with
    an empty neighborhood predicts the mean of the remaining deltas.  Ties
    (exact score equality) go to the smaller bandwidth.
    """
    zm = _as_matrix(z)
    d = _as_delta(delta)
    n = zm.shape[0]
    grid_arr = np.asarray(grid, dtype=float)
    if grid_arr.ndim != 1 or grid_arr.size == 0:
        raise ValueError("grid must be a nonempty vector")
    if np.any(grid_arr <= 0):
        raise ValueError("bandwidths must be positive")

    loo_mean = (d.sum() - d) / (n - 1) if n > 1 else np.full(n, d.mean())
    bandwidths = np.sort(grid_arr)
    scores = np.empty(bandwidths.size)
    for j, b in enumerate(bandwidths):
        score = 0.0
        for lo in range(0, n, _BLOCK):
            hi = min(lo + _BLOCK, n)
            panel = _epanechnikov_panel(zm, zm[lo:hi], b)
            idx = np.arange(lo, hi)
            self_k = panel[np.arange(hi - lo), idx]
            den = panel.sum(axis=1) - self_k
            num = panel @ d - self_k * d[idx]
            p_loo = np.where(den > 0.0, num / np.where(den > 0, den, 1.0), loo_mean[idx])
            score += float(((d[idx] - p_loo) ** 2).sum())
        scores[j] = score
    # Scores equal up to rounding noise count as ties, and ties go to the
    # smallest bandwidth.
    cutoff = scores.min() * (1.0 + 1e-10) + 1e-12
    return float(bandwidths[np.argmax(scores <= cutoff)])


def auto_bandwidth(z, delta) -> float:
    """Cross-validated bandwidth over a scale-aware default grid.

    The grid spans 0.3 to 3 times sd(z) * n^(-1/5), the usual smoothing
    order for a univariate kernel regression, and the winner is chosen by
    cv_bandwidth's leave-one-out criterion.
    """
    zm = _as_matrix(z)
    n = zm.shape[0]
    spread = max(float(np.std(zm[:, 0])), 1e-8)
    grid = spread * n ** (-0.2) * np.geomspace(0.3, 3.0, 8)
    return cv_bandwidth(zm, delta, grid)
