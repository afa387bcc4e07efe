"""The (x, y, delta) sample shared by every estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """Covariates on [0, 1], responses and response indicators.

    ``x`` is stored as an ``(n, d_x)`` array.  Missing responses are kept as NaN so
    that any accidental use of an unobserved value propagates loudly.
    """

    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError("x must be a vector or an (n, d_x) matrix")
        delta = np.asarray(self.delta)
        if delta.dtype != bool:
            if not np.all(np.isin(delta, (0, 1))):
                raise ValueError("delta must contain only 0 and 1")
            delta = delta.astype(bool)
        y = np.asarray(self.y, dtype=float).copy()
        n = x.shape[0]
        if y.shape != (n,) or delta.shape != (n,):
            raise ValueError(f"x, y and delta disagree in length: {n}, {y.shape}, {delta.shape}")
        if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
            raise ValueError("covariates must be finite and rescaled to [0, 1]")
        if not np.all(np.isfinite(y[delta])):
            raise ValueError("observed responses must be finite")
        y[~delta] = np.nan
        for name, arr in (("x", x), ("y", y), ("delta", delta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def covariates(self) -> np.ndarray:
        """``x`` as a vector for one covariate, as the matrix otherwise."""
        return self.x[:, 0] if self.d_x == 1 else self.x

    @property
    def respondents(self) -> np.ndarray:
        return np.flatnonzero(self.delta)

    @property
    def missing(self) -> np.ndarray:
        return np.flatnonzero(~self.delta)

    @property
    def missing_rate(self) -> float:
        return float(np.mean(~self.delta))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.x[index], self.y[index], self.delta[index])

    def with_complete(self) -> "Dataset":
        """Same sample with every unit flagged as observed (requires finite y)."""
        return Dataset(self.x, self.y, np.ones(self.n, dtype=bool))


def rescale_unit(v) -> np.ndarray:
    """``(v - min v) / (max v - min v)``."""
    v = np.asarray(v, dtype=float)
    lo, hi = np.min(v), np.max(v)
    if not hi > lo:
        raise ValueError("cannot rescale a constant column")
    return (v - lo) / (hi - lo)
