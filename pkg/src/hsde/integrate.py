"""Time discretisation of the full SDE and coupled-path experiments.

One step of size h splits into three substeps:

1. implicit gradient flow of the potential, X <- J_h(X), the proximal map
   (unconditionally stable for the monotone term); the ``yosida-explicit``
   scheme replaces this by X <- X + h * F_alpha(X) with a configured alpha;
2. explicit bounded drift, X <- X + h * B(X);
3. exact linear transition consuming the tabulated Brownian increments,
   X <- decay(h) * X + sqrt(var(h) / h) * dW.

The noise-consumption rule in substep 3 keeps the one-step variance exact
while letting every discretisation level and scheme consume the *same*
increment table, which is what the coupled pathwise-uniqueness experiments
require (two solutions driven by one Brownian motion).

All state arrays are batch-transparent with shape ``(..., n_modes)``; the
ensemble helpers advance whole seed batches in lockstep.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowupError, ConfigurationError
from .potentials import BoundedDrift, ConvexPotential
from .spectral import SpectralModel

__all__ = [
    "BrownianIncrements",
    "Path",
    "CoupledPair",
    "simulate_path",
    "coupled_uniqueness_run",
    "a_functional",
    "girsanov_weight",
    "stopping_times",
    "StoppingTimes",
    "occupation_integral",
    "write_path_csv",
    "write_diagnostics_csv",
]

BLOWUP_GUARD = 1e8
SCHEMES = ("split-implicit", "yosida-explicit")


@dataclass(frozen=True, eq=False)
class BrownianIncrements:
    """Per-mode Brownian increment table at the finest dyadic level.

    ``dw`` has shape (2**level, n_modes) with per-entry variance
    t_final / 2**level.  Coarser views are exact block sums of the fine
    increments, so refinements stay coupled to the same driving noise.
    """

    t_final: float
    level: int
    dw: np.ndarray

    @property
    def n_steps(self) -> int:
        return 1 << self.level

    @classmethod
    def generate(cls, n_modes: int, t_final: float, level: int, rng: np.random.Generator):
        n = 1 << level
        h = t_final / n
        dw = np.sqrt(h) * rng.standard_normal((n, n_modes))
        return cls(t_final=float(t_final), level=int(level), dw=dw)

    @classmethod
    def from_array(cls, t_final: float, dw: np.ndarray):
        n = dw.shape[0]
        level = int(n).bit_length() - 1
        if 1 << level != n:
            raise ConfigurationError(f"increment count {n} is not a power of two")
        return cls(t_final=float(t_final), level=level, dw=np.asarray(dw, dtype=float))

    def at_level(self, level: int) -> np.ndarray:
        """Aggregated increments for 2**level steps (exact block sums)."""
        if level > self.level:
            raise ConfigurationError(
                f"requested level {level} finer than table level {self.level}"
            )
        fac = 1 << (self.level - level)
        n = 1 << level
        return self.dw.reshape(n, fac, -1).sum(axis=1)


@dataclass(eq=False)
class Path:
    """Discrete trajectory with running stochastic-integral diagnostics.

    Diagnostics are cumulative left-point sums aligned with ``times``:
    ``int_b_dw`` for the drift/noise pairing, ``int_gradv_dw`` and
    ``int_gradv_sq`` for the potential gradient, and the auxiliary-norm
    samples ``e_norm``.
    """

    times: np.ndarray
    states: np.ndarray
    int_b_dw: np.ndarray
    int_gradv_dw: np.ndarray
    int_gradv_sq: np.ndarray
    e_norm: np.ndarray
    scheme: str = "split-implicit"

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def t_final(self) -> float:
        return float(self.times[-1])


def _step(model, V, B, states, dw, h, scheme, alpha):
    """One composite step; ``h`` is a scalar or batch-broadcastable array."""
    if scheme == "split-implicit":
        states = V.resolvent(h, states)
    elif scheme == "yosida-explicit":
        a = h if alpha is None else alpha
        states = states + h * V.yosida_drift(a, states)
    else:
        raise ConfigurationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    states = states + h * B.eval(states)
    decay = np.exp(-model.a * h)
    var = (1.0 - np.exp(-2.0 * model.a * h)) / (2.0 * model.a)
    return decay * states + np.sqrt(var / h) * dw


def _check_noise(noise: BrownianIncrements, T: float, n_steps: int) -> int:
    level = int(n_steps).bit_length() - 1
    if 1 << level != n_steps:
        raise ConfigurationError(f"n_steps must be a power of two, got {n_steps}")
    if abs(noise.t_final - T) > 1e-12 * max(1.0, T):
        raise ConfigurationError(
            f"noise table horizon {noise.t_final} does not match T = {T}"
        )
    if level > noise.level:
        raise ConfigurationError(
            f"n_steps = {n_steps} exceeds the noise table ({noise.n_steps} steps)"
        )
    return level


def simulate_path(
    model: SpectralModel,
    V: ConvexPotential,
    B: BoundedDrift,
    z,
    T: float,
    n_steps: int,
    scheme: str = "split-implicit",
    noise: BrownianIncrements | None = None,
    alpha: float | None = None,
    rng: np.random.Generator | None = None,
) -> Path:
    """Integrate the SDE from z to time T on a dyadic grid.

    Either a pregenerated increment table or a generator (from which a
    table at exactly ``n_steps`` is drawn) must be supplied.
    """
    if noise is None:
        if rng is None:
            raise ConfigurationError("either noise or rng must be given")
        level = int(n_steps).bit_length() - 1
        if 1 << level != n_steps:
            raise ConfigurationError(f"n_steps must be a power of two, got {n_steps}")
        noise = BrownianIncrements.generate(model.n_modes, T, level, rng)
    level = _check_noise(noise, T, n_steps)
    dw = noise.at_level(level)
    h = T / n_steps
    z = np.asarray(z, dtype=float)

    times = np.linspace(0.0, T, n_steps + 1)
    states = np.empty((n_steps + 1, model.n_modes))
    states[0] = z
    int_b_dw = np.zeros(n_steps + 1)
    int_gradv_dw = np.zeros(n_steps + 1)
    int_gradv_sq = np.zeros(n_steps + 1)
    e_norm = np.zeros(n_steps + 1)
    e_norm[0] = float(V.e_norm(z))

    x = z[None, :].copy()
    for j in range(n_steps):
        xj = x[0]
        gv = V.gradient(xj)
        bv = B.eval(xj)
        int_b_dw[j + 1] = int_b_dw[j] + float(bv @ dw[j])
        int_gradv_dw[j + 1] = int_gradv_dw[j] + float(gv @ dw[j])
        int_gradv_sq[j + 1] = int_gradv_sq[j] + float(gv @ gv) * h
        x = _step(model, V, B, x, dw[j][None, :], h, scheme, alpha)
        norm = float(np.sqrt(np.sum(x * x)))
        if not np.isfinite(norm) or norm > BLOWUP_GUARD:
            raise BlowupError(j + 1, norm)
        states[j + 1] = x[0]
        e_norm[j + 1] = float(V.e_norm(x[0]))
    return Path(
        times=times,
        states=states,
        int_b_dw=int_b_dw,
        int_gradv_dw=int_gradv_dw,
        int_gradv_sq=int_gradv_sq,
        e_norm=e_norm,
        scheme=scheme,
    )


def evolve_batch(model, V, B, z0, dw, h, scheme="split-implicit", alpha=None, keep=True):
    """Advance a batch of states through a shared-step noise array.

    ``z0``: (S, N) starts; ``dw``: (S, n, N) increments; returns the full
    trajectory (S, n+1, N) when ``keep`` else the final states (S, N).
    """
    z0 = np.asarray(z0, dtype=float)
    n = dw.shape[1]
    x = z0.copy()
    if keep:
        out = np.empty((z0.shape[0], n + 1, z0.shape[1]))
        out[:, 0] = x
    for j in range(n):
        x = _step(model, V, B, x, dw[:, j], h, scheme, alpha)
        m = float(np.max(np.abs(x)))
        if not np.isfinite(m) or m > BLOWUP_GUARD:
            raise BlowupError(j + 1, m)
        if keep:
            out[:, j + 1] = x
    return out if keep else x


@dataclass(eq=False)
class CoupledPair:
    """Two trajectories sharing one increment table and one start."""

    x: Path
    y: Path

    def common_stride(self):
        na, nb = self.x.n_steps, self.y.n_steps
        nc = min(na, nb)
        return na // nc, nb // nc

    def common_times(self) -> np.ndarray:
        sa, _ = self.common_stride()
        return self.x.times[::sa]

    def common_states(self):
        sa, sb = self.common_stride()
        return self.x.states[::sa], self.y.states[::sb]

    def interpolate(self, alpha: float) -> np.ndarray:
        xs, ys = self.common_states()
        return alpha * xs + (1.0 - alpha) * ys


def sup_terminal_diff(pair: CoupledPair):
    xs, ys = pair.common_states()
    d = np.sqrt(np.sum((xs - ys) ** 2, axis=-1))
    return float(d.max()), float(d[-1])


def coupled_uniqueness_run(
    model,
    V,
    B,
    z,
    T,
    levels,
    noise: BrownianIncrements,
    scheme_pair=("split-implicit", "split-implicit"),
    alpha_pair=(None, None),
    transform=None,
    a_nodes: int = 9,
):
    """Divergence report for coupled discretisations sharing noise and start.

    Simulates the primary scheme at every level, reporting sup and terminal
    differences for consecutive refinements; when the scheme pair differs, a
    cross-scheme pair at the finest level is added.  If a coordinate-change
    transform is supplied, the ratio functional is evaluated along each pair
    and its final value reported.
    """
    levels = sorted(int(l) for l in levels)
    paths = {}
    for lv in levels:
        paths[lv] = simulate_path(
            model, V, B, z, T, 1 << lv, scheme_pair[0], noise, alpha_pair[0]
        )
    rows = []

    def _row(kind, pa, pb, label):
        pair = CoupledPair(pa, pb)
        sup, term = sup_terminal_diff(pair)
        a_final = float("nan")
        if transform is not None:
            _, avals = a_functional(pair, transform, V, n_nodes=a_nodes)
            a_final = float(avals[-1])
        rows.append(
            {
                "kind": kind,
                "pair": label,
                "sup_diff": sup,
                "terminal_diff": term,
                "a_final": a_final,
            }
        )

    for la, lb in zip(levels[:-1], levels[1:]):
        _row("refinement", paths[la], paths[lb], f"2^{la} vs 2^{lb}")
    if scheme_pair[1] != scheme_pair[0] or alpha_pair[1] != alpha_pair[0]:
        finest = levels[-1]
        other = simulate_path(
            model, V, B, z, T, 1 << finest, scheme_pair[1], noise, alpha_pair[1]
        )
        _row("cross-scheme", paths[finest], other, f"{scheme_pair[0]} vs {scheme_pair[1]} @ 2^{finest}")
    return rows


def _dyadic_indices(n: int, n_nodes: int) -> np.ndarray:
    """Subsample 0..n (inclusive) at n_nodes points; n_nodes - 1 must divide n."""
    segs = n_nodes - 1
    if segs < 1 or n % segs:
        raise ConfigurationError(f"{n_nodes} nodes do not divide a {n}-step grid")
    return np.arange(0, n + 1, n // segs)


def a_profile(ts, X, Y, transform, V):
    """Cumulative ratio functional along coupled states, batch-transparent.

    ``X``, ``Y`` have shape (..., K, N) sampled at the K times ``ts``.  The
    integrand has three parts: twice the gradient-difference ratio, twice
    the squared component differences of the coordinate change, and the
    squared differences of its gradients, each against the (squared)
    separation of the transformed states, gated by a separation indicator at
    1e-12.  Returns cumulative trapezoid values of shape (..., K); zero
    wherever the paths coincide.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    lead = X.shape[:-1]
    n = X.shape[-1]
    stacked = np.concatenate([X.reshape(-1, n), Y.reshape(-1, n)], axis=0)
    uvals, ugrads = transform.components_and_grads(stacked)
    half = uvals.shape[0] // 2
    ux = uvals[:half].reshape(lead + (n,))
    uy = uvals[half:].reshape(lead + (n,))
    gx = ugrads[:half].reshape(lead + (n, n))
    gy = ugrads[half:].reshape(lead + (n, n))

    dphi = np.sqrt(np.sum((X + ux - Y - uy) ** 2, axis=-1))
    active = dphi > 1e-12
    den1 = np.where(active, dphi, 1.0)
    den2 = den1 * den1

    dgv = np.sqrt(np.sum((V.gradient(X) - V.gradient(Y)) ** 2, axis=-1))
    term1 = np.where(active, 2.0 * dgv / den1, 0.0)
    term2 = np.where(active, 2.0 * np.sum((ux - uy) ** 2, axis=-1) / den2, 0.0)
    term3 = np.where(active, np.sum((gx - gy) ** 2, axis=(-2, -1)) / den2, 0.0)

    integrand = term1 + term2 + term3
    dt = np.diff(ts)
    increments = 0.5 * (integrand[..., 1:] + integrand[..., :-1]) * dt
    zeros = np.zeros(lead[:-1] + (1,))
    return np.concatenate([zeros, np.cumsum(increments, axis=-1)], axis=-1)


def a_functional(pair: CoupledPair, transform, V, n_nodes: int = 9):
    """Ratio functional of one coupled pair on a dyadic diagnostic subgrid.

    Returns (subgrid times, cumulative values).  The subgrid keeps the
    quadrature cost independent of the path resolution while comparisons
    across resolutions stay like for like.
    """
    times = pair.common_times()
    xs, ys = pair.common_states()
    idx = _dyadic_indices(len(times) - 1, n_nodes)
    ts = times[idx]
    a = a_profile(ts, xs[idx], ys[idx], transform, V)
    return ts, a


def girsanov_weight(path: Path, noise: BrownianIncrements, B: BoundedDrift) -> float:
    """Drift-removal exponential along the path.

    ``exp(-sum <B(X_j), dW_j> - 1/2 sum |B(X_j)|^2 h)``; averaging it over
    paths of the drift-augmented dynamics recovers drift-free expectations.
    Evaluating it with the negated drift gives the drift-adding weight.
    """
    n = path.n_steps
    level = int(n).bit_length() - 1
    dw = noise.at_level(level)
    h = path.t_final / n
    bvals = B.eval(path.states[:-1])
    exponent = -float(np.sum(bvals * dw)) - 0.5 * float(np.sum(bvals**2)) * h
    return float(np.exp(exponent))


@dataclass(frozen=True)
class StoppingTimes:
    tau_b: float
    tau_v1: float
    tau_v2: float


def stopping_times(path: Path, n_threshold: float) -> StoppingTimes:
    """First grid times the running diagnostics reach the threshold, else T."""

    def first_crossing(series):
        hits = np.nonzero(np.abs(series[1:]) >= n_threshold)[0]
        return float(path.times[hits[0] + 1]) if hits.size else path.t_final

    return StoppingTimes(
        tau_b=first_crossing(path.int_b_dw),
        tau_v1=first_crossing(path.int_gradv_dw),
        tau_v2=first_crossing(path.int_gradv_sq),
    )


def occupation_integral(pair: CoupledPair, f, n_alpha: int) -> float:
    """Tensor quadrature of f along the interpolated pair.

    Midpoint rule over the interpolation parameter, trapezoid over the
    common time grid.
    """
    if n_alpha < 1:
        raise ValueError("n_alpha must be >= 1")
    times = pair.common_times()
    xs, ys = pair.common_states()
    total = 0.0
    for l in range(n_alpha):
        alpha = (l + 0.5) / n_alpha
        vals = np.asarray(f(alpha * xs + (1.0 - alpha) * ys), dtype=float)
        total += np.trapezoid(vals, times) / n_alpha
    return float(total)


def write_path_csv(path: Path, dest) -> None:
    """Columns t, x_1..x_N with round-trip float formatting."""
    n_modes = path.states.shape[1]
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{k}" for k in range(1, n_modes + 1)])
        for t, row in zip(path.times, path.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def write_diagnostics_csv(path: Path, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "intBdW", "intVdW", "intV2", "E_norm"])
        for j, t in enumerate(path.times):
            w.writerow(
                [
                    repr(float(t)),
                    repr(float(path.int_b_dw[j])),
                    repr(float(path.int_gradv_dw[j])),
                    repr(float(path.int_gradv_sq[j])),
                    repr(float(path.e_norm[j])),
                ]
            )
