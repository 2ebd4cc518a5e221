"""Weighted empirical distributions and distribution distances.

Every estimator in this package produces a discrete distribution: a vector of
response-space atoms carrying nonnegative weights.  This module gives that
object a type and the operations the rest of the code is built on:
right-continuous CDF evaluation, left-continuous (lower) quantiles, and the
Kolmogorov sup-distance between two weighted samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "WeightedSample",
    "weighted_cdf",
    "weighted_quantile",
    "kolmogorov_distance",
]

# Cumulative weights are accumulated in floating point, so a cumulative sum
# that is mathematically equal to q can land a hair below it.  Quantile
# lookups subtract this slack from q so exact ties resolve to the lower atom.
_Q_SLACK = 1e-12


def _as_1d_float(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class WeightedSample:
    """A discrete distribution: atoms with nonnegative weights.

    Atoms need not be sorted, unique, or normalized.  Zero-weight atoms are
    permitted and ignored by every operation, so inverse-probability weights
    that vanish can be carried along without special casing.

    Parameters
    ----------
    atoms : array_like
        Atom locations, finite reals.
    weights : array_like
        Nonnegative weights, same length as ``atoms``, positive total.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = _as_1d_float(self.atoms, "atoms")
        weights = _as_1d_float(self.weights, "weights")
        if atoms.size == 0:
            raise ValueError("empty distribution")
        if atoms.shape != weights.shape:
            raise ValueError("atoms and weights must have equal length")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if not float(weights.sum()) > 0.0:
            raise ValueError("weights must sum to a positive total")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def total(self) -> float:
        """Raw weight total."""
        return float(self.weights.sum())

    @property
    def normalized_weights(self) -> np.ndarray:
        """Weights rescaled to sum to one."""
        return self.weights / self.weights.sum()

    def mean(self) -> float:
        """Weighted mean of the atoms."""
        return float(self.normalized_weights @ self.atoms)

    @cached_property
    def _sorted(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted positive-weight atoms and cumulative normalized weights.

        The final cumulative entry is forced to exactly 1.0 so quantile
        lookups never fall off the end of the table.
        """
        keep = self.weights > 0
        atoms = self.atoms[keep]
        order = np.argsort(atoms, kind="stable")
        sa = atoms[order]
        cw = np.cumsum(self.weights[keep][order])
        cw /= cw[-1]
        cw[-1] = 1.0
        return sa, cw

    @cached_property
    def _cdf_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted atoms with the cumulative vector padded by a leading 0."""
        sa, cw = self._sorted
        return sa, np.concatenate(([0.0], cw))


def weighted_cdf(ws: WeightedSample, y) -> float | np.ndarray:
    """Right-continuous CDF of ``ws``: total normalized weight of atoms <= y.

    ``y`` may be a scalar or an array; the return type matches.
    """
    sa, cw_pad = ws._cdf_table
    yq = np.asarray(y, dtype=float)
    out = cw_pad[np.searchsorted(sa, yq, side="right")]
    if yq.ndim == 0:
        return float(out)
    return out


def weighted_quantile(ws: WeightedSample, q) -> float | np.ndarray:
    """Left-continuous generalized inverse: smallest atom a with F(a) >= q.

    At q = 0.5 this is the lower median.  ``q`` may be a scalar or an array
    of probabilities, each strictly inside (0, 1).
    """
    sa, cw = ws._sorted
    qarr = np.asarray(q, dtype=float)
    if np.any(~((qarr > 0.0) & (qarr < 1.0))):
        raise ValueError("q must lie strictly between 0 and 1")
    idx = np.searchsorted(cw, qarr - _Q_SLACK, side="left")
    out = sa[np.minimum(idx, sa.size - 1)]
    if qarr.ndim == 0:
        return float(out)
    return out


def kolmogorov_distance(ws1: WeightedSample, ws2: WeightedSample) -> float:
    """Sup-distance between the CDFs of two weighted samples.

    The supremum of |F1 - F2| over the whole line is attained either at an
    atom of one of the samples or immediately to its left, so it suffices to
    compare the two CDFs at every atom of both samples and at the left limits
    there.
    """
    sa1, pad1 = ws1._cdf_table
    sa2, pad2 = ws2._cdf_table
    d = 0.0
    for pts in (sa1, sa2):
        for side in ("right", "left"):
            f1 = pad1[np.searchsorted(sa1, pts, side=side)]
            f2 = pad2[np.searchsorted(sa2, pts, side=side)]
            d = max(d, float(np.max(np.abs(f1 - f2))))
    return d
