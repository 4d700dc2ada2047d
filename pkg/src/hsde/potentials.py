"""Convex potentials, their Yosida machinery, and bounded measurable drifts.

Potentials expose value / gradient / pointwise resolvent on coefficient
arrays.  The sign convention throughout: the SDE drift contribution is
``-gradient``; the resolvent ``J_alpha = (I + alpha * dV)^{-1}`` is the
non-expansive proximal map of the potential, and the Yosida drift is
``F_alpha(x) = (J_alpha(x) - x) / alpha``, a single-valued Lipschitz
surrogate for ``-gradient`` with ``|F_alpha| <= |gradient|`` and
``F_alpha -> -gradient`` as alpha -> 0.

Every potential carries ``omega_shift``: the quadratic replacement
``V <- V + (omega/2)|x|^2`` that makes the potential grow at least
quadratically, so Gibbs weights exp(-V) stay bounded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mc import Z95
from .spectral import SpectralModel, analyze, synth

__all__ = [
    "ConvexPotential",
    "QuadraticPotential",
    "PowerPotential",
    "ResolventPotential",
    "pointwise_power_resolvent",
    "smoothed_drift",
    "BoundedDrift",
    "ZeroDrift",
    "ConstantDrift",
    "SignDrift",
    "TanhDrift",
]


def pointwise_power_resolvent(m: float, omega: float, alpha, g) -> np.ndarray:
    """Solve y + alpha*(m+1)*|y|^(m-1)*y + alpha*omega*y = g elementwise.

    The map is strictly increasing in y, so the root is unique, has the sign
    of g and magnitude at most |g|.  m = 1 and m = 3 use closed forms
    (linear / Cardano); other exponents use safeguarded Newton with the
    bracket [0, |g|] on the folded equation, converging to residuals below
    1e-12 relative to max(1, |g|).

    ``alpha`` may be a scalar or an array broadcastable against ``g``.
    """
    g = np.asarray(g, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    lin = 1.0 + alpha * omega
    if m == 1.0:
        return g / (lin + 2.0 * alpha)
    if m == 3.0:
        # depressed cubic c3 y^3 + lin y = |g| via the stable Cardano branch
        # (argument of cbrt stays positive), sign restored afterwards; one
        # Newton polish lands at ~1e-15 relative residual.
        c3 = 4.0 * alpha
        gg = np.abs(g)
        p3 = (lin / c3) ** 3 / 27.0
        q2 = 0.5 * gg / c3
        u = np.cbrt(q2 + np.sqrt(q2 * q2 + p3))
        y = u - (lin / c3) / (3.0 * u)
        y -= (c3 * y**3 + lin * y - gg) / (3.0 * c3 * y * y + lin)
        return np.sign(g) * y
    # generic monotone scalar equation, folded to g >= 0
    gg = np.abs(g)
    c = alpha * (m + 1.0)
    c = np.broadcast_to(c, gg.shape).copy()
    linb = np.broadcast_to(lin, gg.shape).copy()
    y = gg / (linb + c * np.maximum(gg, 1e-300) ** (m - 1.0))
    lo = np.zeros_like(gg)
    hi = gg.copy()
    tol = 1e-12 * np.maximum(1.0, gg)
    for _ in range(200):
        ym = np.maximum(np.abs(y), 1e-300)
        r = linb * y + c * ym ** (m - 1.0) * y - gg
        if np.all(np.abs(r) <= tol):
            break
        lo = np.where(r < 0.0, y, lo)
        hi = np.where(r > 0.0, y, hi)
        dr = linb + c * m * ym ** (m - 1.0)
        step = y - r / dr
        bad = (step <= lo) | (step >= hi)
        y = np.where(bad, 0.5 * (lo + hi), step)
    else:
        raise RuntimeError("pointwise resolvent failed to converge")
    return np.sign(g) * y


class ConvexPotential:
    """Value / gradient / resolvent contract for convex potentials on H."""

    omega_shift: float = 0.0

    def value(self, x) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def resolvent(self, alpha, x) -> np.ndarray:
        """Proximal map (I + alpha dV)^{-1}; default damped fixed point.

        The default iteration y <- x - alpha * gradient(y) converges when
        alpha * Lip(gradient) < 1; closed-form subclasses override it.
        """
        x = np.asarray(x, dtype=float)
        y = x.copy()
        for _ in range(500):
            y_next = x - np.asarray(alpha) * self.gradient(y)
            if np.max(np.abs(y_next - y)) <= 1e-12 * (1.0 + np.max(np.abs(x))):
                return y_next
            y = 0.5 * (y + y_next)
        raise RuntimeError("resolvent fixed point did not converge")

    def yosida_drift(self, alpha, x) -> np.ndarray:
        """F_alpha(x) = (J_alpha(x) - x) / alpha."""
        x = np.asarray(x, dtype=float)
        return (self.resolvent(alpha, x) - x) / np.asarray(alpha)

    def hessian_quadform(self, x, h1, h2) -> float:
        raise NotImplementedError

    def e_norm(self, x) -> np.ndarray:
        """Diagnostic auxiliary-space norm; defaults to the H norm."""
        x = np.asarray(x, dtype=float)
        return np.sqrt(np.sum(x * x, axis=-1))


class QuadraticPotential(ConvexPotential):
    """V(x) = (omega/2) |x|^2; omega = 0 is the zero potential."""

    def __init__(self, omega: float = 0.0):
        if omega < 0.0:
            raise ValueError("omega must be nonnegative")
        self.omega_shift = float(omega)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.omega_shift * np.sum(x * x, axis=-1)

    def gradient(self, x):
        return self.omega_shift * np.asarray(x, dtype=float)

    def resolvent(self, alpha, x):
        return np.asarray(x, dtype=float) / (1.0 + np.asarray(alpha) * self.omega_shift)

    def hessian_quadform(self, x, h1, h2):
        return self.omega_shift * float(np.dot(h1, h2))


class PowerPotential(ConvexPotential):
    """Integral power potential int |x(xi)|^(m+1) d(xi) plus quadratic shift.

    Values and gradients are computed through the collocation grid; the grid
    resolves the pointwise nonlinearity exactly for polynomial exponents up
    to the quadrature's trigonometric degree (quartic products at the
    default grid size).
    """

    def __init__(self, model: SpectralModel, m: float, omega_shift: float = 0.0):
        if m < 1.0:
            raise ValueError("power exponent must be >= 1")
        if omega_shift < 0.0:
            raise ValueError("omega_shift must be nonnegative")
        self.model = model
        self.m = float(m)
        self.omega_shift = float(omega_shift)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        g = synth(self.model, x)
        quad = np.sum(np.abs(g) ** (self.m + 1.0) * self.model.weights, axis=-1)
        return quad + 0.5 * self.omega_shift * np.sum(x * x, axis=-1)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = synth(self.model, x)
        field = (self.m + 1.0) * np.abs(g) ** (self.m - 1.0) * g
        return analyze(self.model, field) + self.omega_shift * x

    def resolvent(self, alpha, x):
        # alpha: scalar, or an array broadcastable against the batch shape
        # with a trailing singleton axis, e.g. (n, 1) for per-sample steps
        x = np.asarray(x, dtype=float)
        g = synth(self.model, x)
        y = pointwise_power_resolvent(self.m, self.omega_shift, np.asarray(alpha, dtype=float), g)
        return analyze(self.model, y)

    def hessian_quadform(self, x, h1, h2):
        g = synth(self.model, np.asarray(x, dtype=float))
        g1 = synth(self.model, np.asarray(h1, dtype=float))
        g2 = synth(self.model, np.asarray(h2, dtype=float))
        quad = self.m * (self.m + 1.0) * np.sum(
            np.abs(g) ** (self.m - 1.0) * g1 * g2 * self.model.weights, axis=-1
        )
        return float(quad + self.omega_shift * np.dot(h1, h2))

    def e_norm(self, x):
        """L^(2m) collocation norm, the auxiliary-space path diagnostic."""
        g = synth(self.model, np.asarray(x, dtype=float))
        p = 2.0 * self.m
        return np.sum(np.abs(g) ** p * self.model.weights, axis=-1) ** (1.0 / p)


class ResolventPotential(ConvexPotential):
    """Potential built as the linear-dynamics resolvent of another potential.

    The value is a randomised-horizon Monte Carlo average of phi along exact
    linear transitions.  The draw bank is frozen at construction, so the
    value is a deterministic (and convexity-preserving) function of x and
    common random numbers couple all evaluation points; the gradient uses
    central differences with step 1e-3 * (1 + |x|) on that coupled value.
    """

    def __init__(
        self,
        model: SpectralModel,
        phi: ConvexPotential,
        lam: float,
        n_samples: int = 4096,
        seed: int = 0,
        omega_shift: float = 0.0,
    ):
        if not lam > 0.0:
            raise ValueError("lam must be positive")
        self.model = model
        self.phi = phi
        self.lam = float(lam)
        self.n_samples = int(n_samples)
        self.omega_shift = float(omega_shift)
        from .rng import substream

        bank = substream(seed, "resolvent-potential")
        self._tau = bank.exponential(scale=1.0 / lam, size=(self.n_samples, 1))
        self._zeta = bank.standard_normal((self.n_samples, model.n_modes))
        self._decay = np.exp(-model.a * self._tau)
        self._noise = np.sqrt(
            (1.0 - np.exp(-2.0 * model.a * self._tau)) / (2.0 * model.a)
        ) * self._zeta

    def value(self, x):
        x = np.asarray(x, dtype=float)
        pts = x[..., None, :] * self._decay + self._noise
        vals = np.asarray(self.phi.value(pts), dtype=float) / self.lam
        out = vals.mean(axis=-1)
        if self.omega_shift:
            out = out + 0.5 * self.omega_shift * np.sum(x * x, axis=-1)
        return out

    def value_ci(self, x) -> float:
        x = np.asarray(x, dtype=float)
        pts = x * self._decay + self._noise
        vals = np.asarray(self.phi.value(pts), dtype=float) / self.lam
        return Z95 * float(vals.std(ddof=1)) / np.sqrt(self.n_samples)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        n = self.model.n_modes
        delta = 1e-3 * (1.0 + np.sqrt(np.sum(x * x, axis=-1, keepdims=True)))
        eye = np.eye(n)
        plus = x[..., None, :] + delta[..., None] * eye
        minus = x[..., None, :] - delta[..., None] * eye
        return (self.value(plus) - self.value(minus)) / (2.0 * delta)


def smoothed_drift(
    model: SpectralModel,
    potential: ConvexPotential,
    alpha: float,
    beta: float,
    x,
    n_samples: int,
    rng: np.random.Generator,
):
    """Gaussian-smoothed Yosida drift.

    Averages decay(beta) * F_alpha(decay(beta) * x + Y) with Y drawn from the
    linear transition of length beta (per-mode variance
    (1 - exp(-2 a_k beta)) / (2 a_k)), the auxiliary operator being the model
    generator itself.  Returns (mean vector, per-mode CI half-widths).
    """
    if not (alpha > 0.0 and beta > 0.0):
        raise ValueError("alpha and beta must be positive")
    x = np.asarray(x, dtype=float)
    decay = np.exp(-model.a * beta)
    std = np.sqrt((1.0 - np.exp(-2.0 * model.a * beta)) / (2.0 * model.a))
    pts = decay * x + std * rng.standard_normal((n_samples, model.n_modes))
    vals = decay * potential.yosida_drift(alpha, pts)
    mean = vals.mean(axis=0)
    hw = Z95 * vals.std(axis=0, ddof=1) / np.sqrt(n_samples)
    return mean, hw


class BoundedDrift:
    """Bounded measurable drift with a certified sup bound.

    ``component_bound(k)`` is a sup bound for the k-th (0-based) coefficient
    of the drift; components with bound zero are identically zero, which the
    coordinate-change construction exploits.
    """

    b_inf: float = 0.0
    name: str = "drift"

    def eval(self, x) -> np.ndarray:
        raise NotImplementedError

    def component_bound(self, k: int) -> float:
        return self.b_inf

    def negated(self) -> "BoundedDrift":
        return _NegatedDrift(self)


class _NegatedDrift(BoundedDrift):
    def __init__(self, inner: BoundedDrift):
        self.inner = inner
        self.b_inf = inner.b_inf
        self.name = f"neg-{inner.name}"

    def eval(self, x):
        return -self.inner.eval(x)

    def component_bound(self, k):
        return self.inner.component_bound(k)


class ZeroDrift(BoundedDrift):
    name = "zero"
    b_inf = 0.0

    def eval(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def component_bound(self, k):
        return 0.0


class ConstantDrift(BoundedDrift):
    """B(x) = c for a fixed coefficient vector c."""

    name = "constant"

    def __init__(self, vector):
        self.vector = np.asarray(vector, dtype=float)
        self.b_inf = float(np.sqrt(np.sum(self.vector**2)))

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.vector, x.shape).copy()

    def component_bound(self, k):
        return float(abs(self.vector[k]))


class SignDrift(BoundedDrift):
    """B(x) = b * sgn(x_1) e_1 with sgn(0) = 0."""

    name = "sign"

    def __init__(self, b: float):
        self.b = float(b)
        self.b_inf = abs(self.b)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = self.b * np.sign(x[..., 0])
        return out

    def component_bound(self, k):
        return self.b_inf if k == 0 else 0.0


class TanhDrift(BoundedDrift):
    """B(x) = b * tanh(x_1) e_1, a saturating smooth drift."""

    name = "tanh"

    def __init__(self, b: float):
        self.b = float(b)
        self.b_inf = abs(self.b)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = self.b * np.tanh(x[..., 0])
        return out

    def component_bound(self, k):
        return self.b_inf if k == 0 else 0.0
