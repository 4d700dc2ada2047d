import numpy as np
import pytest

from hsde.potentials import (
    ConstantDrift,
    ConvexPotential,
    PowerPotential,
    QuadraticPotential,
    ResolventPotential,
    SignDrift,
    TanhDrift,
    ZeroDrift,
    pointwise_power_resolvent,
    smoothed_drift,
)
from hsde.rng import substream
from hsde.spectral import build_dirichlet_model, sample_gamma, synth

MODEL = build_dirichlet_model(8)
E1 = np.eye(8)[0]


def test_power_value_cases():
    P1 = PowerPotential(MODEL, 1.0)
    P3 = PowerPotential(MODEL, 3.0)
    assert P1.value(np.zeros(8)) == 0.0
    assert P1.value(E1) == pytest.approx(1.0, rel=1e-12)
    # int (sqrt(2) sin)^4 = 3/2, against a high-resolution quadrature oracle
    xs = np.linspace(0.0, 1.0, 200001)
    oracle = np.trapezoid((np.sqrt(2.0) * np.sin(np.pi * xs)) ** 4, xs)
    assert P3.value(E1) == pytest.approx(oracle, rel=1e-8)
    assert P3.value(E1) == pytest.approx(1.5, rel=1e-10)


def test_power_value_omega_shift():
    P = PowerPotential(MODEL, 3.0, omega_shift=2.0)
    x = 0.3 * E1
    assert P.value(x) == pytest.approx(
        PowerPotential(MODEL, 3.0).value(x) + 0.5 * 2.0 * 0.09, rel=1e-12
    )


def test_power_grad_linear_case():
    P1 = PowerPotential(MODEL, 1.0)
    x = sample_gamma(MODEL, substream(20, "x"))
    assert np.allclose(P1.gradient(x), 2.0 * x, atol=1e-13)
    assert np.all(PowerPotential(MODEL, 3.0).gradient(np.zeros(8)) == 0.0)


def test_power_grad_matches_finite_differences():
    P = PowerPotential(MODEL, 3.0)
    rng = substream(21, "fd")
    x = sample_gamma(MODEL, rng)
    g = P.gradient(x)
    for _ in range(4):
        h = rng.standard_normal(8)
        h /= np.linalg.norm(h)
        eps = 1e-5
        fd = (P.value(x + eps * h) - P.value(x - eps * h)) / (2.0 * eps)
        assert fd == pytest.approx(float(g @ h), rel=1e-6)


def test_hessian_quadform():
    P3 = PowerPotential(MODEL, 3.0)
    h1 = sample_gamma(MODEL, substream(22, "h1"))
    h2 = sample_gamma(MODEL, substream(22, "h2"))
    assert P3.hessian_quadform(np.zeros(8), h1, h2) == 0.0
    P1 = PowerPotential(MODEL, 1.0)
    assert P1.hessian_quadform(np.zeros(8), h1, h2) == pytest.approx(2.0 * h1 @ h2, rel=1e-12)
    x = sample_gamma(MODEL, substream(22, "x"))
    eps = 1e-4
    second_fd = (
        P3.value(x + eps * (h1 + h2))
        - P3.value(x + eps * (h1 - h2))
        - P3.value(x - eps * (h1 - h2))
        + P3.value(x - eps * (h1 + h2))
    ) / (4.0 * eps**2)
    assert P3.hessian_quadform(x, h1, h2) == pytest.approx(second_fd, rel=1e-4)


def test_yosida_closed_forms():
    P1 = PowerPotential(MODEL, 1.0)
    x = sample_gamma(MODEL, substream(23, "x"))
    alpha = 0.7
    assert np.allclose(P1.resolvent(alpha, x), x / (1.0 + 2.0 * alpha), atol=1e-13)
    assert np.allclose(P1.yosida_drift(alpha, x), -2.0 * x / (1.0 + 2.0 * alpha), atol=1e-12)
    P3 = PowerPotential(MODEL, 3.0)
    assert np.all(P3.resolvent(alpha, np.zeros(8)) == 0.0)
    assert np.all(P3.yosida_drift(alpha, np.zeros(8)) == 0.0)


@pytest.mark.parametrize("m", [1.0, 1.7, 2.5, 3.0, 4.0])
def test_pointwise_resolvent_residuals(m):
    rng = substream(24, f"res-{m}")
    g = 5.0 * rng.standard_normal((50, 32))
    alpha = np.abs(rng.standard_normal((50, 1))) + 0.01
    y = pointwise_power_resolvent(m, 0.5, alpha, g)
    residual = y + alpha * (m + 1.0) * np.abs(y) ** (m - 1.0) * y + alpha * 0.5 * y - g
    assert np.max(np.abs(residual)) <= 1e-12 * max(1.0, np.max(np.abs(g)))
    assert np.all(np.abs(y) <= np.abs(g))
    assert np.all(np.sign(y) == np.sign(g))


def test_yosida_alpha_convergence():
    P = PowerPotential(MODEL, 3.0)
    x = np.zeros(8)
    x[:3] = [0.8, -0.4, 0.2]
    g = P.gradient(x)
    errs = [np.linalg.norm(P.yosida_drift(2.0**-j, x) + g) for j in range(4, 13)]
    assert all(b < a for a, b in zip(errs[:-1], errs[1:]))
    assert errs[-1] < 0.05 * errs[0]


def test_yosida_nonexpansive_and_bounded():
    P = PowerPotential(MODEL, 3.0)
    rng = substream(25, "pairs")
    xs = 2.0 * sample_gamma(MODEL, rng, size=1000)
    ys = 2.0 * sample_gamma(MODEL, rng, size=1000)
    alpha = 0.25
    jd = np.linalg.norm(P.resolvent(alpha, xs) - P.resolvent(alpha, ys), axis=-1)
    assert np.all(jd <= np.linalg.norm(xs - ys, axis=-1) * (1.0 + 1e-12) + 1e-14)
    fa = np.linalg.norm(P.yosida_drift(alpha, xs), axis=-1)
    gv = np.linalg.norm(P.gradient(xs), axis=-1)
    assert np.all(fa <= gv * (1.0 + 1e-12) + 1e-14)


def test_gradient_monotonicity():
    P = PowerPotential(MODEL, 3.0)
    rng = substream(26, "mono")
    xs = sample_gamma(MODEL, rng, size=1000)
    ys = sample_gamma(MODEL, rng, size=1000)
    inner = np.sum((P.gradient(xs) - P.gradient(ys)) * (xs - ys), axis=-1)
    assert np.all(inner >= -1e-10)


def test_convexity_on_segments():
    P = PowerPotential(MODEL, 3.0, omega_shift=0.5)
    rng = substream(27, "seg")
    xs = sample_gamma(MODEL, rng, size=200)
    ys = sample_gamma(MODEL, rng, size=200)
    mid = P.value(0.5 * (xs + ys))
    assert np.all(mid <= 0.5 * P.value(xs) + 0.5 * P.value(ys) + 1e-12)


def test_smoothed_drift_zero_potential():
    P = QuadraticPotential(0.0)
    out, _ = smoothed_drift(MODEL, P, 0.5, 0.1, np.ones(8), 200, substream(28, "sd0"))
    assert np.all(out == 0.0)


def test_smoothed_drift_linear_closed_form():
    # m = 1: averaging is linear, so the smoothed drift is
    # -2 exp(-2 a_k beta) x_k / (1 + 2 alpha) per mode
    P = PowerPotential(MODEL, 1.0)
    alpha, beta = 0.4, 0.05
    x = sample_gamma(MODEL, substream(29, "x"))
    out, ci = smoothed_drift(MODEL, P, alpha, beta, x, 4 * 10**4, substream(29, "sd"))
    target = -2.0 * np.exp(-2.0 * MODEL.a * beta) * x / (1.0 + 2.0 * alpha)
    assert np.all(np.abs(out - target) <= 3.0 * ci / 1.96 + 1e-9)


def test_smoothed_drift_beta_convergence():
    P = PowerPotential(MODEL, 3.0)
    alpha = 0.3
    x = 0.5 * E1
    target = P.yosida_drift(alpha, x)
    errs = []
    for j in (3, 5, 7, 9):
        out, _ = smoothed_drift(MODEL, P, alpha, 2.0**-j, x, 2 * 10**4, substream(30, f"b{j}"))
        errs.append(np.linalg.norm(out - target))
    assert all(b < a for a, b in zip(errs[:-1], errs[1:]))
    assert errs[-1] < 0.05 * max(1.0, np.linalg.norm(target))
    with pytest.raises(ValueError):
        smoothed_drift(MODEL, P, 0.0, 0.1, x, 10, substream(30, "bad"))


class _SquareFirstMode(ConvexPotential):
    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] ** 2


class _ConstantPotential(ConvexPotential):
    def __init__(self, c):
        self.c = c

    def value(self, x):
        return np.full(np.asarray(x).shape[:-1], self.c)


def test_resolvent_potential_constant():
    lam = 2.5
    R = ResolventPotential(MODEL, _ConstantPotential(0.8), lam, n_samples=500, seed=31)
    assert R.value(np.zeros(8)) == pytest.approx(0.8 / lam, rel=1e-12)


def test_resolvent_potential_square_observable():
    # R(lam) of x_1^2: x1^2/(lam + 2 a1) + q1 (1/lam - 1/(lam + 2 a1))
    lam = 3.0
    a1, q1 = MODEL.a[0], MODEL.q[0]
    R = ResolventPotential(MODEL, _SquareFirstMode(), lam, n_samples=2 * 10**5, seed=32)
    x = 0.7 * E1
    target = x[0] ** 2 / (lam + 2 * a1) + q1 * (1.0 / lam - 1.0 / (lam + 2 * a1))
    ci = R.value_ci(x)
    assert abs(R.value(x) - target) < 3.0 * ci / 1.96

    grad = R.gradient(x)
    assert abs(grad[0] - 2.0 * x[0] / (lam + 2 * a1)) < 0.01
    assert np.max(np.abs(grad[1:])) < 1e-8


def test_resolvent_potential_convexity():
    R = ResolventPotential(MODEL, _SquareFirstMode(), 2.0, n_samples=4000, seed=33)
    rng = substream(34, "seg")
    xs = sample_gamma(MODEL, rng, size=50)
    ys = sample_gamma(MODEL, rng, size=50)
    # convexity is preserved exactly per draw, so it holds with frozen noise
    mid = R.value(0.5 * (xs + ys))
    assert np.all(mid <= 0.5 * R.value(xs) + 0.5 * R.value(ys) + 1e-12)


def test_drift_builtins():
    rng = substream(35, "drifts")
    xs = sample_gamma(MODEL, rng, size=500)
    zero = ZeroDrift()
    assert np.all(zero.eval(xs) == 0.0)
    assert zero.b_inf == 0.0

    const = ConstantDrift(0.5 * E1)
    assert const.b_inf == pytest.approx(0.5)
    assert const.component_bound(0) == pytest.approx(0.5)
    assert const.component_bound(3) == 0.0
    assert np.all(np.linalg.norm(const.eval(xs), axis=-1) <= const.b_inf + 1e-15)

    sign = SignDrift(1.5)
    vals = sign.eval(xs)
    assert np.all(np.linalg.norm(vals, axis=-1) <= sign.b_inf + 1e-15)
    assert sign.eval(np.zeros(8))[0] == 0.0
    assert sign.component_bound(0) == 1.5
    assert sign.component_bound(1) == 0.0

    tanh = TanhDrift(2.0)
    vals = tanh.eval(xs)
    assert np.all(np.abs(vals[:, 0]) <= 2.0)
    assert np.all(vals[:, 1:] == 0.0)

    neg = sign.negated()
    assert np.array_equal(neg.eval(xs), -sign.eval(xs))
    assert neg.b_inf == sign.b_inf
