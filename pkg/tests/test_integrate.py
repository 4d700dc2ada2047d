import numpy as np
import pytest

from hsde.errors import BlowupError, ConfigurationError
from hsde.integrate import (
    BrownianIncrements,
    CoupledPair,
    a_functional,
    coupled_uniqueness_run,
    evolve_batch,
    girsanov_weight,
    occupation_integral,
    simulate_path,
    stopping_times,
    sup_terminal_diff,
    write_diagnostics_csv,
    write_path_csv,
)
from hsde.ou import transition
from hsde.potentials import ConstantDrift, PowerPotential, QuadraticPotential, SignDrift, TanhDrift, ZeroDrift
from hsde.rng import substream
from hsde.spectral import build_dirichlet_model, sample_gamma
from hsde.zvonkin import build_transform

MODEL = build_dirichlet_model(8)
ZERO_V = QuadraticPotential(0.0)
ZERO_B = ZeroDrift()


def test_noise_refinement_consistency():
    noise = BrownianIncrements.generate(8, 1.0, 10, substream(40, "w"))
    coarse = noise.at_level(8)
    fine = noise.at_level(10)
    assert coarse.shape == (256, 8)
    assert np.allclose(coarse, fine.reshape(256, 4, 8).sum(axis=1), atol=0.0)
    rewrapped = BrownianIncrements.from_array(1.0, coarse)
    assert np.array_equal(rewrapped.at_level(8), coarse)
    with pytest.raises(ConfigurationError):
        noise.at_level(11)
    with pytest.raises(ConfigurationError):
        BrownianIncrements.from_array(1.0, np.zeros((3, 8)))


def test_noise_increment_variance():
    noise = BrownianIncrements.generate(8, 2.0, 12, substream(41, "w"))
    h = 2.0 / 4096
    flat = noise.dw.ravel()
    n = flat.size
    assert abs(flat.var() - h) < 3.0 * h * np.sqrt(2.0 / (n - 1))


def test_simulate_reduces_to_ou_chain():
    # with no potential and no drift the scheme is the explicit linear
    # recursion; verify bit-level agreement with the hand-rolled chain
    T, level = 1.0, 6
    noise = BrownianIncrements.generate(8, T, level, substream(42, "w"))
    z = sample_gamma(MODEL, substream(42, "z"))
    path = simulate_path(MODEL, ZERO_V, ZERO_B, z, T, 1 << level, "split-implicit", noise)
    h = T / (1 << level)
    tr = transition(MODEL, h)
    x = z.copy()
    for j in range(1 << level):
        x = tr.decay * x + np.sqrt(tr.var / h) * noise.dw[j]
    assert np.array_equal(path.states[-1], x)


def test_linear_terminal_variance():
    # per-mode variance at T matches the exact transition over an ensemble
    T, level, n = 1.0, 6, 10**4
    h = T / (1 << level)
    rng = substream(43, "ens")
    z = np.zeros((n, 8))
    dw = np.sqrt(h) * rng.standard_normal((n, 1 << level, 8))
    final = evolve_batch(MODEL, ZERO_V, ZERO_B, z, dw, h, keep=False)
    target = transition(MODEL, T).var
    assert np.all(np.abs(final.var(axis=0) / target - 1.0) < 0.05)


def test_quadratic_stationary_variance():
    T, level, n = 16.0, 10, 256
    h = T / (1 << level)
    rng = substream(44, "stat")
    z = sample_gamma(MODEL, rng, size=n)
    dw = np.sqrt(h) * rng.standard_normal((n, 1 << level, 8))
    traj = evolve_batch(MODEL, QuadraticPotential(1.0), ZERO_B, z, dw, h)
    emp = traj[:, traj.shape[1] // 2 :, :].reshape(-1, 8).var(axis=0)
    target = 1.0 / (2.0 * (MODEL.a + 1.0))
    assert np.all(np.abs(emp / target - 1.0) < 0.05)


def test_constant_drift_one_step_mean():
    b, h, n = 0.7, 0.125, 2 * 10**4
    B = ConstantDrift(np.concatenate([[b], np.zeros(7)]))
    noise_rng = substream(45, "one")
    x1 = 0.4
    z = np.zeros((n, 8))
    z[:, 0] = x1
    dw = np.sqrt(h) * noise_rng.standard_normal((n, 1, 8))
    out = evolve_batch(MODEL, ZERO_V, B, z, dw, h, keep=False)
    target = np.exp(-MODEL.a[0] * h) * (x1 + h * b)
    tr = transition(MODEL, h)
    assert abs(out[:, 0].mean() - target) < 3.0 * np.sqrt(tr.var[0] / n)


def test_simulate_validation_errors():
    noise = BrownianIncrements.generate(8, 1.0, 5, substream(46, "w"))
    z = np.zeros(8)
    with pytest.raises(ConfigurationError):
        simulate_path(MODEL, ZERO_V, ZERO_B, z, 1.0, 33, "split-implicit", noise)
    with pytest.raises(ConfigurationError):
        simulate_path(MODEL, ZERO_V, ZERO_B, z, 2.0, 32, "split-implicit", noise)
    with pytest.raises(ConfigurationError):
        simulate_path(MODEL, ZERO_V, ZERO_B, z, 1.0, 64, "split-implicit", noise)
    with pytest.raises(ConfigurationError):
        simulate_path(MODEL, ZERO_V, ZERO_B, z, 1.0, 32, "leapfrog", noise)
    with pytest.raises(ConfigurationError):
        simulate_path(MODEL, ZERO_V, ZERO_B, z, 1.0, 32)


def test_blowup_guard():
    B = ConstantDrift(np.concatenate([[1e14], np.zeros(7)]))
    noise = BrownianIncrements.generate(8, 1.0, 0, substream(47, "w"))
    with pytest.raises(BlowupError) as err:
        simulate_path(MODEL, ZERO_V, B, np.zeros(8), 1.0, 1, "split-implicit", noise)
    assert err.value.step_index == 1


def test_identical_config_zero_divergence():
    V = PowerPotential(MODEL, 3.0)
    B = SignDrift(1.0)
    rng = substream(48, "pair")
    z = sample_gamma(MODEL, rng)
    noise = BrownianIncrements.generate(8, 1.0, 8, rng)
    a = simulate_path(MODEL, V, B, z, 1.0, 256, "split-implicit", noise)
    b = simulate_path(MODEL, V, B, z, 1.0, 256, "split-implicit", noise)
    sup, term = sup_terminal_diff(CoupledPair(a, b))
    assert sup == 0.0 and term == 0.0


def test_refinement_divergence_decreases():
    V = PowerPotential(MODEL, 3.0)
    B = TanhDrift(1.0)
    wins = 0
    for s in range(10):
        rng = substream(49, "seed", s)
        z = sample_gamma(MODEL, rng)
        noise = BrownianIncrements.generate(8, 1.0, 11, rng)
        rows = coupled_uniqueness_run(
            MODEL, V, B, z, 1.0, [9, 10, 11], noise
        )
        sups = [r["sup_diff"] for r in rows if r["kind"] == "refinement"]
        wins += sups[1] < sups[0]
    assert wins >= 8


def test_cross_scheme_matches_at_alpha_h():
    # with alpha = h the explicit update X + h F_h(X) algebraically equals
    # the proximal step, so the cross-scheme difference is rounding noise
    V = PowerPotential(MODEL, 3.0)
    B = SignDrift(1.0)
    rng = substream(50, "x")
    z = sample_gamma(MODEL, rng)
    noise = BrownianIncrements.generate(8, 1.0, 10, rng)
    rows = coupled_uniqueness_run(
        MODEL, V, B, z, 1.0, [9, 10], noise,
        scheme_pair=("split-implicit", "yosida-explicit"),
    )
    cross = [r for r in rows if r["kind"] == "cross-scheme"][0]
    self_ref = [r for r in rows if r["kind"] == "refinement"][0]
    assert cross["sup_diff"] <= 4.0 * self_ref["sup_diff"]
    assert cross["sup_diff"] < 1e-10


def test_cross_scheme_fixed_alpha():
    # a genuinely coarser Yosida parameter gives a real but dominated gap
    V = PowerPotential(MODEL, 3.0)
    B = TanhDrift(1.0)
    rng = substream(51, "x")
    z = sample_gamma(MODEL, rng)
    noise = BrownianIncrements.generate(8, 1.0, 10, rng)
    h10 = 1.0 / 1024
    rows = coupled_uniqueness_run(
        MODEL, V, B, z, 1.0, [7, 10], noise,
        scheme_pair=("split-implicit", "yosida-explicit"),
        alpha_pair=(None, 8 * h10),
    )
    cross = [r for r in rows if r["kind"] == "cross-scheme"][0]
    self_ref = [r for r in rows if r["kind"] == "refinement"][0]
    assert 0.0 < cross["sup_diff"] <= 4.0 * self_ref["sup_diff"]


@pytest.fixture(scope="module")
def sign_pair():
    V = PowerPotential(MODEL, 3.0)
    B = SignDrift(1.0)
    rng = substream(52, "pair")
    z = sample_gamma(MODEL, rng)
    noise = BrownianIncrements.generate(8, 1.0, 11, rng)
    p10 = simulate_path(MODEL, V, B, z, 1.0, 1 << 10, "split-implicit", noise)
    p11 = simulate_path(MODEL, V, B, z, 1.0, 1 << 11, "split-implicit", noise)
    return V, B, noise, CoupledPair(p10, p11)


@pytest.fixture(scope="module")
def sign_transform():
    V = PowerPotential(MODEL, 3.0)
    B = SignDrift(1.0)
    return build_transform(MODEL, V, B, K=0, n_paths=96, steps_per_draw=8, fd_base=4e-2, seed=42)


def test_a_functional_identical_paths(sign_pair, sign_transform):
    V, B, noise, pair = sign_pair
    same = CoupledPair(pair.x, pair.x)
    ts, a = a_functional(same, sign_transform, V, n_nodes=9)
    assert np.all(a == 0.0)


def test_a_functional_zero_drift_transform(sign_pair):
    # a drift-free transform has no active components: the coordinate-change
    # terms vanish identically and only the gradient ratio survives
    V, B, noise, pair = sign_pair
    tr0 = build_transform(MODEL, V, ZeroDrift(), K=0, seed=7)
    assert all(c is None for c in tr0.components)
    ts, a = a_functional(pair, tr0, V, n_nodes=9)
    assert np.all(np.isfinite(a))
    assert a[-1] > 0.0
    x, y = pair.common_states()
    idx = np.arange(0, len(x), (len(x) - 1) // 8)
    uv, ug = tr0.components_and_grads(np.vstack([x[idx], y[idx]]))
    assert np.all(uv == 0.0) and np.all(ug == 0.0)


def test_a_functional_stability_under_quadrature_refinement(sign_pair, sign_transform):
    V, B, noise, pair = sign_pair
    _, coarse = a_functional(pair, sign_transform, V, n_nodes=33)
    _, fine = a_functional(pair, sign_transform, V, n_nodes=65)
    assert np.isfinite(fine[-1]) and fine[-1] > 0.0
    assert abs(fine[-1] - coarse[-1]) / coarse[-1] <= 0.10


def test_girsanov_weight_cases(sign_pair):
    V, B, noise, pair = sign_pair
    assert girsanov_weight(pair.x, noise, ZeroDrift()) == 1.0
    w = girsanov_weight(pair.x, noise, B)
    assert w > 0.0
    # martingale property over drift-free paths
    n, level, T = 2000, 7, 0.5
    h = T / (1 << level)
    rng = substream(53, "mart")
    z = sample_gamma(MODEL, rng, size=n)
    dw = np.sqrt(h) * rng.standard_normal((n, 1 << level, 8))
    traj = evolve_batch(MODEL, V, ZeroDrift(), z, dw, h)
    bvals = B.eval(traj[:, :-1])
    expo = -np.sum(bvals * dw, axis=(1, 2)) - 0.5 * np.sum(bvals**2, axis=(1, 2)) * h
    weights = np.exp(expo)
    assert abs(weights.mean() - 1.0) < 3.0 * weights.std(ddof=1) / np.sqrt(n)


def test_stopping_times_thresholds(sign_pair):
    V, B, noise, pair = sign_pair
    path = pair.x
    st0 = stopping_times(path, 0.0)
    first = path.times[1]
    assert (st0.tau_b, st0.tau_v1, st0.tau_v2) == (first, first, first)
    st_inf = stopping_times(path, 1e12)
    assert (st_inf.tau_b, st_inf.tau_v1, st_inf.tau_v2) == (1.0, 1.0, 1.0)
    st_a = stopping_times(path, 10.0)
    st_b = stopping_times(path, 10.0)
    assert st_a == st_b


def test_occupation_integral(sign_pair):
    V, B, noise, pair = sign_pair
    ones = lambda s: np.ones(s.shape[:-1])
    assert occupation_integral(pair, ones, 4) == pytest.approx(1.0, rel=1e-12)
    same = CoupledPair(pair.x, pair.x)
    f = lambda s: np.tanh(s[..., 0])
    assert occupation_integral(same, f, 1) == pytest.approx(
        occupation_integral(same, f, 4), rel=1e-12
    )
    # curvature-trace surrogate stays finite and stable when doubling the
    # interpolation grid
    V3 = PowerPotential(MODEL, 3.0)

    def trace_surrogate(s):
        g = np.abs(s @ MODEL.basis.T) ** (V3.m - 1.0)
        scale = V3.m * (V3.m + 1.0)
        return scale * np.sum(g * (MODEL.basis**2).sum(axis=1) * MODEL.weights, axis=-1)

    v1 = occupation_integral(pair, trace_surrogate, 8)
    v2 = occupation_integral(pair, trace_surrogate, 16)
    assert np.isfinite(v1)
    assert abs(v2 - v1) / v1 <= 0.05


def test_proximal_step_dissipates(sign_pair):
    V = PowerPotential(MODEL, 3.0, omega_shift=0.5)
    xs = sample_gamma(MODEL, substream(54, "x"), size=200)
    jx = V.resolvent(0.125, xs)
    assert np.all(
        np.linalg.norm(jx, axis=-1) <= np.linalg.norm(xs, axis=-1) * (1 + 1e-12)
    )


def test_csv_exports(tmp_path, sign_pair):
    V, B, noise, pair = sign_pair
    pfile = tmp_path / "path.csv"
    dfile = tmp_path / "diag.csv"
    write_path_csv(pair.x, pfile)
    write_diagnostics_csv(pair.x, dfile)
    lines = pfile.read_text().splitlines()
    assert lines[0] == "t,x_1,x_2,x_3,x_4,x_5,x_6,x_7,x_8"
    assert len(lines) == pair.x.n_steps + 2
    dlines = dfile.read_text().splitlines()
    assert dlines[0] == "t,intBdW,intVdW,intV2,E_norm"
    # round-trip parse of the repr format
    row = [float(v) for v in lines[1].split(",")]
    assert row[0] == 0.0
