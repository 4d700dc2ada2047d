"""Truncated spectral representation of H = L2(0,1).

The state space is spanned by the first N eigenfunctions of the Dirichlet
Laplacian, e_k(xi) = sqrt(2) sin(k pi xi) with eigenvalues a_k = (k pi)^2 of
the negated operator.  Elements are handled in two representations:

* coefficient vectors, arrays of shape ``(..., n_modes)``;
* collocation values on a uniform interior grid, shape ``(..., grid_points)``.

Observables throughout the package are callables on coefficient arrays of
shape ``(..., n_modes)`` returning shape ``(...,)``.

The reference Gaussian measure has per-mode variance q_k = 1/(2 a_k), which
is the spectral form of the covariance kernel (min(s,t) - s t) / 2.  The
Gibbs reweighting by exp(-V) is realised with self-normalised importance
weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateMeasureError

__all__ = [
    "SpectralModel",
    "build_dirichlet_model",
    "synth",
    "analyze",
    "sample_gamma",
    "NuSample",
    "sample_nu",
]


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Truncated eigen-decomposition with collocation grid.

    Attributes
    ----------
    a : (N,) eigenvalues of the negated generator, strictly increasing.
    q : (N,) Gaussian covariance spectrum, q_k = 1 / (2 a_k).
    xi : (M,) interior collocation points j / (M + 1).
    weights : (M,) quadrature weights, uniformly 1 / (M + 1).
    basis : (M, N) matrix of e_k(xi_j); synthesis is ``x @ basis.T``.
    """

    n_modes: int
    grid_points: int
    a: np.ndarray
    q: np.ndarray
    xi: np.ndarray
    weights: np.ndarray
    basis: np.ndarray
    family: str = "dirichlet"

    def to_manifest(self) -> dict:
        return {
            "family": self.family,
            "n_modes": int(self.n_modes),
            "grid_points": int(self.grid_points),
        }


def build_dirichlet_model(n_modes: int, grid_points: int | None = None) -> SpectralModel:
    """Spectral model for the Dirichlet Laplacian on (0,1).

    ``grid_points`` defaults to ``4 * n_modes``, which makes the quadrature
    exact (to rounding) for products of up to four basis functions, covering
    the quartic nonlinearity used in the reaction-diffusion experiments.
    """
    if n_modes < 1:
        raise ConfigurationError(f"n_modes must be >= 1, got {n_modes}")
    if grid_points is None:
        grid_points = 4 * n_modes
    if grid_points < 2 * n_modes:
        raise ConfigurationError(
            f"grid_points must be >= 2 * n_modes = {2 * n_modes}, got {grid_points}"
        )
    k = np.arange(1, n_modes + 1, dtype=float)
    a = (k * np.pi) ** 2
    q = 1.0 / (2.0 * a)
    m = int(grid_points)
    xi = np.arange(1, m + 1, dtype=float) / (m + 1)
    weights = np.full(m, 1.0 / (m + 1))
    basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(xi, k))
    return SpectralModel(
        n_modes=int(n_modes),
        grid_points=m,
        a=a,
        q=q,
        xi=xi,
        weights=weights,
        basis=basis,
    )


def _check_modes(model: SpectralModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_modes:
        raise ValueError(
            f"expected trailing dimension {model.n_modes}, got {x.shape[-1]}"
        )
    return x


def synth(model: SpectralModel, x) -> np.ndarray:
    """Collocation values of a coefficient vector (linear, batch-transparent)."""
    x = _check_modes(model, x)
    return x @ model.basis.T


def analyze(model: SpectralModel, g) -> np.ndarray:
    """Coefficients of a grid function by quadrature against the basis."""
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != model.grid_points:
        raise ValueError(
            f"expected trailing dimension {model.grid_points}, got {g.shape[-1]}"
        )
    return (g * model.weights) @ model.basis


def sample_gamma(model: SpectralModel, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from the reference Gaussian measure, x_k = sqrt(q_k) * zeta_k."""
    if size is None:
        return np.sqrt(model.q) * rng.standard_normal(model.n_modes)
    return np.sqrt(model.q) * rng.standard_normal((int(size), model.n_modes))


@dataclass(frozen=True)
class NuSample:
    """Gaussian sample set with self-normalised Gibbs weights.

    ``mean_weight`` estimates the normalising constant; ``ess`` is the
    effective sample size (sum w)^2 / sum w^2 of the normalised weights.
    """

    points: np.ndarray
    weights: np.ndarray
    ess: float
    mean_weight: float

    def expectation(self, f) -> float:
        return float(np.sum(self.weights * np.asarray(f(self.points), dtype=float)))


def sample_nu(model: SpectralModel, V, n_samples: int, rng: np.random.Generator) -> NuSample:
    """Importance sample of the Gibbs measure exp(-V) d(gamma) / Z.

    Raises
    ------
    DegenerateMeasureError
        If every weight is zero (V infinite on all draws).
    """
    pts = sample_gamma(model, rng, size=n_samples)
    vals = np.asarray(V.value(pts), dtype=float)
    raw = np.exp(-vals)
    total = raw.sum()
    if not total > 0.0:
        raise DegenerateMeasureError("all Gibbs weights vanished")
    w = raw / total
    ess = float(1.0 / np.sum(w**2))
    return NuSample(points=pts, weights=w, ess=ess, mean_weight=float(raw.mean()))
