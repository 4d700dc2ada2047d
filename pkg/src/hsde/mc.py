"""Monte Carlo result containers.

Every Monte Carlo quantity in the package is reported as a value together
with a 95% confidence half-width and the sample count, so downstream checks
can separate estimator noise from model error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Z95 = 1.959963984540054

__all__ = ["Z95", "McEstimate", "from_samples", "vector_from_samples"]


@dataclass(frozen=True)
class McEstimate:
    value: float
    ci_halfwidth: float
    n_samples: int

    def __repr__(self):
        return f"McEstimate({self.value:.6g} ± {self.ci_halfwidth:.2g}, n={self.n_samples})"


def from_samples(samples) -> McEstimate:
    """Sample mean with 95% CI half-width (normal approximation)."""
    s = np.asarray(samples, dtype=float).ravel()
    n = s.size
    if n == 0:
        raise ValueError("empty sample set")
    mean = float(s.mean())
    if n == 1:
        return McEstimate(mean, float("inf"), 1)
    hw = Z95 * float(s.std(ddof=1)) / np.sqrt(n)
    return McEstimate(mean, hw, n)


def vector_from_samples(samples):
    """Per-component mean and CI half-widths for samples of shape (n, d)."""
    s = np.asarray(samples, dtype=float)
    n = s.shape[0]
    mean = s.mean(axis=0)
    if n == 1:
        return mean, np.full(s.shape[1], np.inf)
    hw = Z95 * s.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, hw
