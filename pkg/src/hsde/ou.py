"""Exact sampling and functional calculus for the linear dynamics dZ = AZ dt + dW.

The transition is diagonal in the eigenbasis: mode k decays by exp(-a_k t)
and picks up independent Gaussian noise of variance (1 - exp(-2 a_k t)) / (2 a_k),
so one step of any length is exact in distribution.  The semigroup action on
an observable and its resolvent are estimated by plain Monte Carlo; the
resolvent uses an exponentially randomised horizon, which is unbiased:
drawing tau ~ Exp(lambda) and averaging f(Z_tau) / lambda reproduces
integral_0^inf exp(-lambda t) P_t f dt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError
from .mc import McEstimate, from_samples
from .spectral import SpectralModel

__all__ = ["OuTransition", "transition", "ou_step", "mehler_apply", "ou_resolvent"]

_CHUNK = 1 << 16


@dataclass(frozen=True)
class OuTransition:
    """Per-mode decay factors and noise variances for one exact step."""

    t: float
    decay: np.ndarray
    var: np.ndarray


def transition(model: SpectralModel, t: float) -> OuTransition:
    if not t > 0.0:
        raise ValueError(f"transition time must be positive, got {t}")
    decay = np.exp(-model.a * t)
    var = (1.0 - np.exp(-2.0 * model.a * t)) / (2.0 * model.a)
    return OuTransition(t=float(t), decay=decay, var=var)


def ou_step(
    model: SpectralModel,
    x,
    h: float,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """One exact transition of length h from x.

    With ``size`` given, returns that many independent replicates from the
    same start, shape ``(size, n_modes)``.  Otherwise the noise shape follows
    the batch shape of ``x``.
    """
    tr = transition(model, h)
    x = np.asarray(x, dtype=float)
    if size is not None:
        noise = rng.standard_normal((int(size), model.n_modes))
        return tr.decay * x + np.sqrt(tr.var) * noise
    return tr.decay * x + np.sqrt(tr.var) * rng.standard_normal(x.shape)


def _eval_observable(f, points: np.ndarray) -> np.ndarray:
    vals = np.asarray(f(points), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("observable returned non-finite values")
    return vals


def mehler_apply(
    model: SpectralModel,
    f,
    t: float,
    x,
    n_samples: int,
    rng: np.random.Generator,
) -> McEstimate:
    """Monte Carlo estimate of the semigroup action P_t f(x)."""
    tr = transition(model, t)
    x = np.asarray(x, dtype=float)
    mean_part = tr.decay * x
    std = np.sqrt(tr.var)
    samples = np.empty(n_samples)
    done = 0
    while done < n_samples:
        m = min(_CHUNK, n_samples - done)
        pts = mean_part + std * rng.standard_normal((m, model.n_modes))
        samples[done : done + m] = _eval_observable(f, pts)
        done += m
    return from_samples(samples)


def ou_resolvent(
    model: SpectralModel,
    f,
    lam: float,
    x,
    n_samples: int,
    rng: np.random.Generator,
) -> McEstimate:
    """Randomised-horizon estimate of the resolvent at rate lambda.

    Draws tau ~ Exp(lambda), takes one exact step of length tau and averages
    f(Z_tau) / lambda.
    """
    if not lam > 0.0:
        raise ValueError(f"resolvent rate must be positive, got {lam}")
    x = np.asarray(x, dtype=float)
    samples = np.empty(n_samples)
    done = 0
    while done < n_samples:
        m = min(_CHUNK, n_samples - done)
        tau = rng.exponential(scale=1.0 / lam, size=(m, 1))
        decay = np.exp(-model.a * tau)
        var = (1.0 - np.exp(-2.0 * model.a * tau)) / (2.0 * model.a)
        pts = decay * x + np.sqrt(var) * rng.standard_normal((m, model.n_modes))
        samples[done : done + m] = _eval_observable(f, pts) / lam
        done += m
    return from_samples(samples)
