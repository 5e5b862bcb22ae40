import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma

from slowfast_ldp import fraccalc as fc
from slowfast_ldp.errors import DomainError, UsageError
from slowfast_ldp.fbm import FbmSpec, RngStream, sample_fbm
from slowfast_ldp.grid import Grid, GridPath

GAMMA_1_5 = gamma(1.5)


@pytest.fixture(scope="module")
def grid512():
    return Grid(1.0, 512)


@pytest.fixture(scope="module")
def fbm_samples(grid512):
    spec = FbmSpec(0.7, 1, grid512)
    return [sample_fbm(spec, RngStream(100, k)) for k in range(5)]


# --- Riemann-Liouville integral -------------------------------------------


def test_rl_integral_constant(grid512):
    # I^a[1](t) = t^a / Gamma(1+a); at a=1/2, t=1 this is 1/Gamma(3/2)
    f = GridPath.from_function(grid512, lambda t: 1.0)
    out = fc.rl_integral_left(f, 0.5)
    t = grid512.nodes
    assert out.values[-1, 0] == pytest.approx(1.0 / GAMMA_1_5, rel=1e-12)
    assert np.allclose(out.values[1:, 0], t[1:] ** 0.5 / GAMMA_1_5, rtol=1e-10)


def test_rl_integral_zero(grid512):
    out = fc.rl_integral_left(GridPath.zero(grid512, 2), 0.3)
    assert np.all(out.values == 0.0)


def test_rl_integral_order_near_one(grid512):
    # alpha -> 1 degenerates to ordinary integration: int_0^1 s ds = 1/2
    f = GridPath.from_function(grid512, lambda t: t)
    out = fc.rl_integral_left(f, 1.0 - 1e-9)
    assert out.values[-1, 0] == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.3])
def test_rl_integral_domain(alpha, grid512):
    with pytest.raises(DomainError):
        fc.rl_integral_left(GridPath.zero(grid512, 1), alpha)


# --- Weyl derivatives ------------------------------------------------------


def test_weyl_left_linear(grid512):
    # D^{1/2} t = t^{1/2} / Gamma(3/2)
    f = GridPath.from_function(grid512, lambda t: t)
    d = fc.weyl_derivative_left(f, 0.5)
    assert not d.mask[0] and np.isnan(d.values[0, 0])
    t = grid512.nodes
    assert np.allclose(d.values[1:, 0], np.sqrt(t[1:]) / GAMMA_1_5, rtol=1e-9)


def test_weyl_left_zero(grid512):
    d = fc.weyl_derivative_left(GridPath.zero(grid512, 1), 0.4)
    assert np.all(d.values[1:] == 0.0)


def test_weyl_inversion_recovers_constant(grid512):
    # D^a(I^a g) = g for g == 1; the t^a kink at 0 confines the error to
    # the leading nodes, interior recovery is at grid tolerance
    for alpha in (0.25, 0.5, 0.75):
        I = fc.rl_integral_left(GridPath.from_function(grid512, lambda t: 1.0), alpha)
        D = fc.weyl_derivative_left(I, alpha)
        interior = grid512.nodes >= 0.1
        assert np.max(np.abs(D.values[interior, 0] - 1.0)) < 5e-3


@pytest.mark.parametrize("alpha", [0.2, 0.25, 0.4, 0.5, 0.8])
def test_weyl_inversion_smooth_refinement(alpha):
    errs = []
    for n in (128, 256, 512):
        g = Grid(1.0, n)
        f = GridPath.from_function(g, lambda t: 1.0 - np.cos(3.0 * t))
        I = fc.rl_integral_left(f, alpha)
        D = fc.weyl_derivative_left(I, alpha)
        errs.append(np.max(np.abs(D.values[1:, 0] - f.values[1:, 0])))
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 1e-2


def test_weyl_right_constant_is_zero(grid512):
    d = fc.weyl_derivative_right(GridPath.from_function(grid512, lambda t: 2.5), 0.5)
    assert np.all(d.values[:-1] == 0.0)
    assert np.isnan(d.values[-1, 0])


def test_weyl_right_linear_closed_form():
    # mirror of the left case: D^{1/2}_{T-} of (T - t) equals 2 sqrt(T-t)/sqrt(pi)
    g = Grid(1.0, 256)
    p = GridPath.from_function(g, lambda t: 1.0 - t)
    d = fc.weyl_derivative_right(p, 0.5)
    t = g.nodes[1:-1]
    assert np.allclose(d.values[1:-1, 0], 2.0 * np.sqrt(1.0 - t) / np.sqrt(np.pi), rtol=1e-9)


def test_weyl_right_finite_on_fbm(fbm_samples):
    for b in fbm_samples[:2]:
        d = fc.weyl_derivative_right(b, 0.65)
        assert np.all(np.isfinite(d.values[:-1]))


# --- Young integral --------------------------------------------------------


def test_young_constant_integrand(grid512, fbm_samples):
    c = 2.5
    f = GridPath.from_function(grid512, lambda t: c)
    for g in fbm_samples[:2]:
        y = fc.young_integral(f, g, 0.35)
        assert np.allclose(y.values, c * (g.values - g.values[0]), rtol=1e-12)


def test_young_linear_oracle(grid512):
    f = GridPath.from_function(grid512, lambda t: t)
    y = fc.young_integral(f, f, 0.35)
    # classical Riemann-Stieltjes value 1/2 up to the left-sum bias h/2
    assert y.values[-1, 0] == pytest.approx(0.5, abs=2.0 / 512)


def test_young_chain_rule_fbm(grid512, fbm_samples):
    errs = []
    for b in fbm_samples:
        y = fc.young_integral(b, b, 0.35)
        errs.append(abs(y.values[-1, 0] - 0.5 * b.values[-1, 0] ** 2))
    assert np.mean(errs) < 5e-2


def test_young_zahle_consistency(grid512, fbm_samples):
    # fractional-derivative route agrees with the left-point sum; the
    # tolerance reflects the discrete right-derivative's H - (1 - alpha)
    # Hoelder margin at alpha = 0.49, calibrated on seeded samples
    f = GridPath.from_function(grid512, lambda t: np.sin(2.0 * t) + 0.3)
    for b in fbm_samples[:3]:
        ylp = fc.young_integral(f, b, 0.49)
        yz = fc.young_integral(f, b, 0.49, method="zahle")
        assert np.max(np.abs(ylp.values - yz.values)) < 5e-2


def test_young_zahle_smooth_exact():
    g = Grid(1.0, 256)
    f = GridPath.from_function(g, lambda t: t)
    y = fc.young_integral(f, f, 0.5, method="zahle")
    assert y.values[-1, 0] == pytest.approx(0.5, abs=1e-3)
    assert y.values[128, 0] == pytest.approx(0.125, abs=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_young_linearity(a, b):
    g = Grid(1.0, 64)
    rng = np.random.default_rng(7)
    f1 = GridPath(g, rng.standard_normal((65, 1)))
    f2 = GridPath(g, rng.standard_normal((65, 1)))
    w = GridPath(g, np.cumsum(rng.standard_normal((65, 1)), axis=0) * 0.1)
    lhs = fc.young_integral(a * f1 + b * f2, w, 0.35)
    rhs = a * fc.young_integral(f1, w, 0.35) + b * fc.young_integral(f2, w, 0.35)
    assert np.allclose(lhs.values, rhs.values, rtol=1e-12, atol=1e-12)


def test_young_dim_contract(grid512):
    f3 = GridPath(grid512, np.ones((grid512.n_nodes, 3)))
    g3 = GridPath(grid512, np.tile(grid512.nodes[:, None], (1, 3)))
    y = fc.young_integral(f3, g3, 0.35)
    assert y.dim == 1
    assert y.values[-1, 0] == pytest.approx(3.0, rel=1e-12)
    with pytest.raises(UsageError):
        fc.young_integral(GridPath(grid512, np.ones((grid512.n_nodes, 2))), g3, 0.35)


def test_young_matrix_integrand(grid512):
    n = grid512.n_nodes
    fmat = np.zeros((n, 2, 3))
    fmat[:, 0, 0] = 1.0
    fmat[:, 1, 2] = 2.0
    g3 = GridPath(grid512, np.tile(grid512.nodes[:, None], (1, 3)))
    y = fc.young_integral_matrix(fmat, g3)
    assert y.dim == 2
    assert y.values[-1, 0] == pytest.approx(1.0, rel=1e-12)
    assert y.values[-1, 1] == pytest.approx(2.0, rel=1e-12)


def test_young_grid_mismatch(grid512):
    f = GridPath.zero(Grid(1.0, 256), 1)
    with pytest.raises(UsageError):
        fc.young_integral(f, GridPath.zero(grid512, 1), 0.35)


# --- norms ------------------------------------------------------------------


def test_norm_alpha_1_zero(grid512):
    assert fc.norm_alpha_1(GridPath.zero(grid512, 1), 0.5) == 0.0


def test_norm_alpha_1_constant(grid512):
    # int_0^1 s^{-1/2} ds = 2, difference term vanishes
    f = GridPath.from_function(grid512, lambda t: 1.0)
    assert fc.norm_alpha_1(f, 0.5) == pytest.approx(2.0, rel=1e-12)


def test_norm_alpha_1_linear(grid512):
    # int s^{1/2} + int 2 sqrt(s) = 2/3 + 4/3 = 2
    f = GridPath.from_function(grid512, lambda t: t)
    assert fc.norm_alpha_1(f, 0.5) == pytest.approx(2.0, rel=1e-4)


def test_norm_1malpha_infty_cases(grid512):
    assert fc.norm_1malpha_infty(GridPath.from_function(grid512, lambda t: 3.0), 0.25) == 0.0
    # linear path: sup over pairs of (t-s)^a (1 + 1/a) attained at (0, T)
    f = GridPath.from_function(grid512, lambda t: t)
    assert fc.norm_1malpha_infty(f, 0.25) == pytest.approx(5.0, rel=1e-12)
    assert fc.lambda_alpha(f, 0.25) == pytest.approx(
        5.0 / (gamma(0.75) * gamma(0.25)), rel=1e-12
    )


def test_young_bound_on_samples(grid512, fbm_samples):
    # |int v dB| <= Lambda_alpha(B) ||v||_{alpha,1}, as computed discretely
    alpha = 0.35
    v = GridPath.from_function(grid512, lambda t: np.sin(2.0 * t) + 0.3)
    for b in fbm_samples:
        lam = fc.lambda_alpha(b, alpha)
        nv = fc.norm_alpha_1(v, alpha)
        y = fc.young_integral(v, b, alpha)
        assert np.max(np.abs(y.values)) <= lam * nv


def test_norm_alpha_infty_monotone_pieces(grid512, fbm_samples):
    b = fbm_samples[0]
    val = fc.norm_alpha_infty(b, 0.35)
    assert val >= np.max(np.abs(b.values))
    assert np.isfinite(val)


def test_holder_seminorm_linear(grid512):
    f = GridPath.from_function(grid512, lambda t: 2.0 * t)
    # |2t - 2s| / (t-s)^eta maximized at the widest pair for eta < 1
    assert fc.holder_seminorm(f, 0.5) == pytest.approx(2.0, rel=1e-12)
