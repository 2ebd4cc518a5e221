"""Robust parametric regression on complete cases.

Simplified MM estimation: an S-step searches elemental subsets for a
candidate with the smallest residual S-scale and polishes it by Gauss-Newton
descent on that scale, then an M-step reweights with a wider bisquare at the
fixed scale.  Two mean structures are supported, an exponential-plus-linear
model in two variants and a plain linear model, plus an optional covariate
downweighting hook for the M-step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import ObservedDataset
from .scores import SCALE_B_TARGET, location_bisquare, scale_bisquare

__all__ = [
    "RegressionModel",
    "RegressionFit",
    "exp_linear_model",
    "linear_model",
    "fit_mm",
    "predict",
    "hard_rejection_weights",
]

_RHO0 = scale_bisquare()
_RHO_M = location_bisquare()

_N_SUBSETS = 500
_SN_ITER = 20
_M_ITER = 200
_MAX_HALVINGS = 30
_RIDGE = 1e-8
_M_TOL = 1e-8
# Best candidate scale below this fraction of the response spread means the
# model interpolates the data: no residual spread to standardize by.
_DEGENERATE_REL = 1e-12


@dataclass(frozen=True)
class RegressionModel:
    """A parametric mean structure with its gradient.

    mean(x, beta) and gradient(x, beta) take an (m, 2) covariate matrix and
    return (m,) and (m, dim_beta) arrays.
    """

    id: str
    dim_beta: int
    mean: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(compare=False)
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(compare=False)
    variant: str | None = None


@dataclass(frozen=True)
class RegressionFit:
    """Result of a simplified MM fit.

    ``s_step_beta`` keeps the polished S-step candidate the M-step started
    from, so the descent property of the second stage can be audited.
    """

    beta: np.ndarray
    residual_scale: float
    weights_used: np.ndarray | None
    complete_case_count: int
    converged: bool
    s_step_beta: np.ndarray | None = field(default=None, compare=False)


def exp_linear_model(intercept: bool = False) -> RegressionModel:
    """Exponential-plus-linear mean.

    Without intercept (3 parameters):  m(x, b) = b2*x2 + b3*exp(b1*x1).
    With intercept (4 parameters):     m(x, b) = b1*exp(b2*x1) + b3 + b4*x2.
    """
    if intercept:

        def mean(x, beta):
            b1, b2, b3, b4 = beta
            return b1 * np.exp(b2 * x[:, 0]) + b3 + b4 * x[:, 1]

        def gradient(x, beta):
            b1, b2, _, _ = beta
            e = np.exp(b2 * x[:, 0])
            return np.stack(
                [e, b1 * x[:, 0] * e, np.ones(x.shape[0]), x[:, 1]], axis=1
            )

        return RegressionModel(
            id="exp_linear", dim_beta=4, mean=mean, gradient=gradient,
            variant="intercept",
        )

    def mean(x, beta):
        b1, b2, b3 = beta
        return b2 * x[:, 1] + b3 * np.exp(b1 * x[:, 0])

    def gradient(x, beta):
        b1, _, b3 = beta
        e = np.exp(b1 * x[:, 0])
        return np.stack([b3 * x[:, 0] * e, x[:, 1], e], axis=1)

    return RegressionModel(
        id="exp_linear", dim_beta=3, mean=mean, gradient=gradient,
        variant="no_intercept",
    )


def linear_model() -> RegressionModel:
    """Linear mean m(x, b) = b1*x1 + b2*x2 + b3."""

    def mean(x, beta):
        b1, b2, b3 = beta
        return b1 * x[:, 0] + b2 * x[:, 1] + b3

    def gradient(x, beta):
        return np.stack([x[:, 0], x[:, 1], np.ones(x.shape[0])], axis=1)

    return RegressionModel(id="linear", dim_beta=3, mean=mean, gradient=gradient)


def hard_rejection_weights(x: np.ndarray) -> np.ndarray:
    """Continuous hard-rejection downweighting of the first covariate.

    With t = (x1 - median)/MAD over the rows given, where the MAD carries
    the usual normal-consistency factor 1/0.6745: weight 1 for |t| <= 2,
    (1 - (|t| - 2)^2)^2 for 2 < |t| < 3, and 0 for |t| >= 3.  When the MAD
    is zero no row can be called outlying and all weights are 1.
    """
    x1 = np.asarray(x, dtype=float)
    if x1.ndim == 2:
        x1 = x1[:, 0]
    med = float(np.median(x1))
    mad = float(np.median(np.abs(x1 - med))) / 0.6745
    if mad == 0.0:
        return np.ones(x1.shape[0])
    t = np.abs(x1 - med) / mad
    mid = (1.0 - (t - 2.0) ** 2) ** 2
    return np.where(t <= 2.0, 1.0, np.where(t < 3.0, mid, 0.0))


def predict(model: RegressionModel, fit: RegressionFit, x) -> float | np.ndarray:
    """Evaluate the fitted mean at one covariate vector or a matrix of them."""
    if not fit.converged:
        raise ValueError("regression fit did not converge")
    beta = np.asarray(fit.beta, dtype=float)
    if beta.shape != (model.dim_beta,):
        raise ValueError("dimension mismatch between fit and model")
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    mat = arr[None, :] if single else arr
    if mat.ndim != 2 or mat.shape[1] != 2:
        raise ValueError("dimension mismatch: expected 2 covariate columns")
    out = model.mean(mat, beta)
    return float(out[0]) if single else out


def _solve_step(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
        return np.zeros_like(g)
    try:
        step = np.linalg.solve(a, g)
        if np.all(np.isfinite(step)):
            return step
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.solve(a + _RIDGE * np.eye(g.size), g)
    except np.linalg.LinAlgError:
        return np.zeros_like(g)


def _residual_scale(r: np.ndarray, start: float | None = None) -> float:
    """S-scale of residuals about zero (equal weights).

    Returns 0.0 when at least half the residuals vanish, inf when the
    residuals are not finite.
    """
    if not np.all(np.isfinite(r)):
        return np.inf
    s = float(np.median(np.abs(r))) if start is None else float(start)
    if s <= 0.0:
        return 0.0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(100):
            m_avg = float(np.mean(_RHO0.rho(r / s)))
            if m_avg <= 0.0:
                return 0.0
            s_new = s * float(np.sqrt(m_avg / SCALE_B_TARGET))
            if abs(s_new - s) <= 1e-10 * s_new:
                return s_new
            s = s_new
    return s


def _batch_residual_scale(resid: np.ndarray) -> np.ndarray:
    """Row-wise `_residual_scale` for a (candidates x m) residual matrix."""
    with np.errstate(over="ignore", invalid="ignore"):
        finite = np.all(np.isfinite(resid), axis=1)
        safe = np.where(finite[:, None], resid, 0.0)
        s = np.median(np.abs(safe), axis=1)
        zero = s <= 0.0
        work = np.where(zero | ~finite, 1.0, s)
        for _ in range(100):
            m_avg = np.mean(_RHO0.rho(safe / work[:, None]), axis=1)
            s_new = work * np.sqrt(np.maximum(m_avg, 0.0) / SCALE_B_TARGET)
            if np.all(np.abs(s_new - work) <= 1e-10 * np.maximum(s_new, 1e-300)):
                work = s_new
                break
            work = s_new
    out = np.where(zero, 0.0, work)
    out[~finite | ~np.isfinite(out)] = np.inf
    return out


def _elemental_candidates(model, yc, xc, rng, n_subsets):
    m = yc.size
    q = model.dim_beta + 1
    if m <= 4096:
        idx = np.argsort(rng.random((n_subsets, m)), axis=1)[:, :q]
    else:
        idx = np.empty((n_subsets, q), dtype=np.intp)
        for i in range(n_subsets):
            idx[i] = rng.choice(m, size=q, replace=False)
    ys = yc[idx]
    x1 = xc[idx, 0]
    x2 = xc[idx, 1]

    if model.id == "linear":
        design = np.stack([x1, x2, np.ones_like(x1)], axis=2)
        ata = np.einsum("cqi,cqj->cij", design, design)
        ata += 1e-9 * np.eye(3) * (np.trace(ata, axis1=1, axis2=2) / 3.0 + 1.0)[
            :, None, None
        ]
        aty = np.einsum("cqi,cq->ci", design, ys)
        return np.linalg.solve(ata, aty[:, :, None])[:, :, 0]

    # exp_linear: the exponent enters nonlinearly, so profile it over a grid
    # scaled to the observed x1 span and solve the remaining linear
    # coefficients per (subset, grid point) by least squares.
    span = float(np.ptp(xc[:, 0]))
    if span <= 0.0:
        span = 1.0
    grid = np.linspace(-8.0, 8.0, 25) / span
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(grid[None, None, :] * x1[:, :, None])  # (C, q, G)
        if model.variant == "no_intercept":
            saa = np.sum(x2 * x2, axis=1)[:, None]
            sab = np.einsum("cq,cqg->cg", x2, e)
            sbb = np.sum(e * e, axis=1)
            say = np.sum(x2 * ys, axis=1)[:, None]
            sby = np.einsum("cqg,cq->cg", e, ys)
            det = saa * sbb - sab * sab
            det = np.where(np.abs(det) > 1e-300, det, np.nan)
            coef_x2 = (sbb * say - sab * sby) / det
            coef_e = (saa * sby - sab * say) / det
            fitted = coef_x2[:, None, :] * x2[:, :, None] + coef_e[:, None, :] * e
            sse = np.sum((ys[:, :, None] - fitted) ** 2, axis=1)
            sse = np.where(np.isfinite(sse), sse, np.inf)
            gi = np.argmin(sse, axis=1)
            rows = np.arange(n_subsets)
            betas = np.stack(
                [grid[gi], coef_x2[rows, gi], coef_e[rows, gi]], axis=1
            )
        else:
            ones = np.ones_like(x1)[:, :, None] * np.ones(grid.size)
            design = np.stack(
                [e, ones, x2[:, :, None] * np.ones(grid.size)], axis=3
            )  # (C, q, G, 3)
            ata = np.einsum("cqgi,cqgj->cgij", design, design)
            ata += 1e-9 * np.eye(3) * (
                np.trace(ata, axis1=2, axis2=3) / 3.0 + 1.0
            )[:, :, None, None]
            aty = np.einsum("cqgi,cq->cgi", design, ys)
            ata = np.where(np.isfinite(ata), ata, 0.0)
            aty = np.where(np.isfinite(aty), aty, 0.0)
            coef = np.linalg.solve(ata, aty[..., None])[..., 0]  # (C, G, 3)
            fitted = np.einsum("cqgi,cgi->cqg", design, coef)
            sse = np.sum((ys[:, :, None] - fitted) ** 2, axis=1)
            sse = np.where(np.isfinite(sse), sse, np.inf)
            gi = np.argmin(sse, axis=1)
            rows = np.arange(n_subsets)
            betas = np.column_stack(
                [
                    coef[rows, gi, 0],
                    grid[gi],
                    coef[rows, gi, 1],
                    coef[rows, gi, 2],
                ]
            )
    return betas


def _candidate_residuals(model, yc, xc, betas):
    out = np.empty((betas.shape[0], yc.size))
    with np.errstate(over="ignore", invalid="ignore"):
        for i, beta in enumerate(betas):
            out[i] = yc - model.mean(xc, beta)
    return out


def fit_mm(
    model: RegressionModel,
    data: ObservedDataset,
    covariate_weights: Callable[[np.ndarray], np.ndarray] | None = None,
    seed: int = 0,
    n_subsets: int = _N_SUBSETS,
) -> RegressionFit:
    """Simplified MM regression fit on the complete cases.

    Stage 1 searches ``n_subsets`` random elemental subsets (size
    dim_beta + 1) for the candidate whose full-sample residual S-scale
    (bisquare c0 = 1.54764, b = 0.5) is smallest, then runs 20 Gauss-Newton
    descent iterations on that scale.  Stage 2 minimizes the bisquare
    (c = 4.685) objective at the stage-1 scale by IRWLS Gauss-Newton with
    step halving, to tolerance 1e-8.  The subset draw is deterministic given
    ``seed``.

    ``covariate_weights``, when given, receives the complete-case covariate
    matrix and must return per-row weights in [0, 1] multiplying the M-step
    objective.
    """
    obs = data.delta == 1
    yc = data.y[obs]
    xc = data.x[obs]
    m = yc.size
    p = model.dim_beta
    if m < 5 * p:
        raise ValueError("insufficient complete cases")

    if covariate_weights is None:
        w_cov = np.ones(m)
    else:
        w_cov = np.asarray(covariate_weights(xc), dtype=float)
        if w_cov.shape != (m,):
            raise ValueError("covariate weights must give one value per row")
        if np.any(~np.isfinite(w_cov)) or np.any(w_cov < -1e-9) or np.any(
            w_cov > 1.0 + 1e-9
        ):
            raise ValueError("covariate weights must lie in [0, 1]")
        w_cov = np.clip(w_cov, 0.0, 1.0)
        if not w_cov.sum() > 0:
            raise ValueError("covariate weights are all zero")

    rng = np.random.default_rng(seed)
    betas = _elemental_candidates(model, yc, xc, rng, n_subsets)
    scores = _batch_residual_scale(_candidate_residuals(model, yc, xc, betas))
    best = int(np.argmin(scores))
    if not np.isfinite(scores[best]):
        raise ValueError("no valid elemental candidate found")

    spread = max(float(np.ptp(yc)), 1e-300)
    beta = betas[best].astype(float)
    s = float(scores[best])
    if s <= _DEGENERATE_REL * spread:
        raise ValueError("degenerate scale: residuals have no spread")

    # Stage 1 polish: Gauss-Newton descent on the S-scale itself.
    for _ in range(_SN_ITER):
        if s <= _DEGENERATE_REL * spread:
            break
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r = yc - model.mean(xc, beta)
            wts = _RHO0.weight(r / s)
            jac = model.gradient(xc, beta)
        a = jac.T @ (jac * wts[:, None])
        g = jac.T @ (wts * r)
        step = _solve_step(a, g)
        t, accepted = 1.0, False
        for _ in range(_MAX_HALVINGS):
            cand = beta + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                r_new = yc - model.mean(xc, cand)
            s_new = _residual_scale(r_new, start=s) if np.all(
                np.isfinite(r_new)
            ) else np.inf
            if s_new < s:
                beta, s, accepted = cand, float(s_new), True
                break
            t *= 0.5
        if not accepted:
            break
    if s <= _DEGENERATE_REL * spread:
        raise ValueError("degenerate scale: residuals have no spread")

    # Stage 2: M-step at the fixed stage-1 scale.
    def objective(b):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r = yc - model.mean(xc, b)
            v = float(w_cov @ _RHO_M.rho(r / s))
        return v if np.isfinite(v) else np.inf

    beta_m = beta.copy()
    f = objective(beta_m)
    converged = False
    for _ in range(_M_ITER):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r = yc - model.mean(xc, beta_m)
            wts = w_cov * _RHO_M.weight(r / s)
            jac = model.gradient(xc, beta_m)
        a = jac.T @ (jac * wts[:, None])
        g = jac.T @ (wts * r)
        step = _solve_step(a, g)
        t, accepted = 1.0, False
        for _ in range(_MAX_HALVINGS):
            cand = beta_m + t * step
            fc = objective(cand)
            if fc < f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True
            break
        moved = float(np.max(np.abs(cand - beta_m)))
        beta_m, f = cand, fc
        if moved <= _M_TOL * (1.0 + float(np.max(np.abs(beta_m)))):
            converged = True
            break

    return RegressionFit(
        beta=beta_m,
        residual_scale=s,
        weights_used=None if covariate_weights is None else w_cov,
        complete_case_count=m,
        converged=converged,
        s_step_beta=beta,
    )
