import numpy as np
import pytest
from scipy.integrate import solve_ivp

from slowfast_ldp import fbm, multiscale as ms, systems
from slowfast_ldp.errors import BlowUpError, DomainError, PrecisionError, StabilityError, UsageError
from slowfast_ldp.grid import Grid, GridPath


def brownian_path(grid, dim, stream):
    vals = np.zeros((grid.n_nodes, dim))
    vals[1:] = np.cumsum(fbm.sample_bm_increments(grid, dim, stream), axis=0)
    return GridPath(grid, vals)


@pytest.fixture(scope="module")
def ou():
    return systems.get_system("ou_sin")


@pytest.fixture(scope="module")
def lin():
    return systems.get_system("linear")


@pytest.fixture(scope="module")
def slow_setup(ou):
    grid = Grid(1.0, 200)
    scales = ms.ScaleParams.auto(0.5, 0.01, grid)
    bh = fbm.sample_fbm(fbm.FbmSpec(0.7, 1, grid), fbm.RngStream(3, 0))
    w = brownian_path(grid.subgrid_steps(scales.fast_substeps), 1, fbm.RngStream(3, 1))
    return grid, scales, bh, w


# --- registry and assumptions ------------------------------------------------


def test_registry_contents():
    names = systems.system_names()
    assert {"ou_sin", "linear", "double_well_bounded"} <= set(names)
    with pytest.raises(UsageError):
        systems.get_system("nope")


@pytest.mark.parametrize("name", ["ou_sin", "linear", "double_well_bounded"])
def test_assumption_spot_checks(name):
    spec = systems.get_system(name)
    report = systems.spot_check_assumptions(spec, fbm.RngStream(1))
    assert report["pairwise_dissipativity_ok"]
    assert report["mean_reversion_ok"]
    assert report["f1_sup_observed"] < 10.0


def test_register_system_extension_point():
    spec = systems.get_system("linear")
    systems.register_system("linear_alias", lambda: spec)
    try:
        assert systems.get_system("linear_alias").name == "linear"
    finally:
        systems._REGISTRY.pop("linear_alias")


# --- scale parameters ----------------------------------------------------------


def test_scale_params_domain():
    g = Grid(1.0, 100)
    with pytest.raises(DomainError):
        ms.ScaleParams(0.5, 0.5, 10)
    with pytest.raises(DomainError):
        ms.ScaleParams(1.5, 0.1, 10)
    s = ms.ScaleParams.auto(0.5, 0.01, g)
    assert s.fast_substeps == ms.default_fast_substeps(g, 0.01) == 20


def test_substep_stability_strict(ou):
    grid = Grid(1.0, 50)
    scales = ms.ScaleParams(0.5, 0.001, 1)  # fast step far above delta/2
    bh = GridPath.zero(grid, 1)
    w = brownian_path(grid.subgrid_steps(1), 1, fbm.RngStream(0))
    with pytest.warns(RuntimeWarning):
        ms.solve_slow_fast(ou, scales, bh, w)
    with pytest.raises(StabilityError):
        ms.solve_slow_fast(ou, scales, bh, w, strict=True)


# --- slow-fast solver ----------------------------------------------------------


def test_drift_free_degenerate_case(lin):
    # f1 == 0 and zeroed noise: the slow component never moves
    grid = Grid(1.0, 100)
    scales = ms.ScaleParams.auto(0.5, 0.01, grid)
    bh = GridPath.zero(grid, 1)
    w = GridPath.zero(grid.subgrid_steps(scales.fast_substeps), 1)
    x, y = ms.solve_slow_fast(lin, scales, bh, w)
    assert np.all(x.values == lin.x0)


def test_pathwise_determinism(ou, slow_setup):
    grid, scales, bh, w = slow_setup
    x1, y1 = ms.solve_slow_fast(ou, scales, bh, w)
    x2, y2 = ms.solve_slow_fast(ou, scales, bh, w)
    assert np.array_equal(x1.values, x2.values)
    assert np.array_equal(y1.values, y2.values)


def test_linear_system_is_exact_gaussian(lin):
    # f1 == 0, sigma1 == 1: the slow path equals x0 + sqrt(eps) B^H node by node
    grid = Grid(1.0, 128)
    scales = ms.ScaleParams.auto(0.25, 0.01, grid)
    bh = fbm.sample_fbm(fbm.FbmSpec(0.7, 1, grid), fbm.RngStream(8))
    w = brownian_path(grid.subgrid_steps(scales.fast_substeps), 1, fbm.RngStream(9))
    x, _ = ms.solve_slow_fast(lin, scales, bh, w)
    assert np.allclose(x.values, lin.x0 + np.sqrt(0.25) * bh.values, atol=1e-14)


def test_fast_marginal_ou_stationary(ou):
    # fast marginal at frozen-ish slow x approaches N(x, 1)
    grid = Grid(1.0, 200)
    scales = ms.ScaleParams.auto(0.5, 0.002, grid)
    n_rep = 300
    terminal = np.empty(n_rep)
    bh = GridPath.zero(grid, 1)
    for k in range(n_rep):
        w = brownian_path(grid.subgrid_steps(scales.fast_substeps), 1, fbm.RngStream(40, k))
        x, y = ms.solve_slow_fast(ou, scales, bh, w)
        terminal[k] = y.values[-1, 0]
    x_ref = x.values[-1, 0]
    se_mean = terminal.std() / np.sqrt(n_rep)
    assert abs(terminal.mean() - x_ref) <= 3.5 * se_mean
    se_var = np.sqrt(2.0 / n_rep)
    assert abs(terminal.var() - 1.0) <= 3.5 * se_var


def test_time_averaged_fast_moment_stable(ou):
    # int_0^T |y|^2 dt stays of one size across a delta sweep, and the
    # nodewise second moment sits below the dissipativity-implied
    # stationary bound uniformly in t (up to sampling error)
    grid = Grid(1.0, 200)
    bh = GridPath.zero(grid, 1)
    vals = {}
    bound = (ou.constants.c / ou.constants.beta2) * (1.0 + 4.0)
    for delta in (1e-2, 1e-3):
        scales = ms.ScaleParams.auto(0.5, delta, grid)
        ys = []
        for k in range(40):
            w = brownian_path(grid.subgrid_steps(scales.fast_substeps), 1, fbm.RngStream(50, k))
            _, y = ms.solve_slow_fast(ou, scales, bh, w)
            ys.append(y.values[:, 0])
        ys = np.array(ys)
        vals[delta] = np.mean(np.trapezoid(ys**2, dx=grid.step, axis=1))
        moment_t = np.mean(ys**2, axis=0)
        se_t = np.std(ys**2, axis=0, ddof=1) / np.sqrt(ys.shape[0])
        assert np.all(moment_t <= bound + 3.0 * se_t)
        assert vals[delta] <= bound
    assert 0.5 <= vals[1e-2] / vals[1e-3] <= 2.0


def test_controlled_alpha_norm_stable_across_epsilon(ou):
    # moment-bound echo: the discrete (alpha, infty) norm of controlled slow
    # paths keeps a stable mean as epsilon shrinks, for a fixed control ball
    from slowfast_ldp.fraccalc import norm_alpha_infty

    H, alpha = 0.7, 0.35
    grid = Grid(1.0, 256)
    du = GridPath.from_function(grid, lambda t: 0.5 * np.cos(2.0 * np.pi * t))
    ctrl = fbm.Control(grid, du, GridPath.zero(grid, 1), H)
    assert ctrl.in_ball(1.0)
    means = []
    for eps in (0.5, 0.2, 0.1):
        scales = ms.ScaleParams.auto(eps, 0.01, grid)
        wg = grid.subgrid_steps(scales.fast_substeps)
        norms = []
        for k in range(30):
            bh = fbm.sample_fbm(fbm.FbmSpec(H, 1, grid), fbm.RngStream(3000, k))
            w = brownian_path(wg, 1, fbm.RngStream(4000, k))
            x, _ = ms.solve_controlled(ou, scales, ctrl, bh, w)
            norms.append(norm_alpha_infty(x, alpha))
        means.append(np.mean(norms))
    assert np.all(np.isfinite(means))
    assert max(means) / min(means) < 1.6


def test_blowup_reports_node():
    spec = systems.get_system("linear")

    def exploding(x, y):
        with np.errstate(over="ignore"):
            return np.exp(x * 40.0)

    bad = systems.SystemSpec(
        "exploding", spec.dims, exploding, spec.f2, spec.sigma1, spec.sigma2,
        spec.constants, np.array([1.0]), np.array([0.0]), None, False,
    )
    grid = Grid(1.0, 64)
    scales = ms.ScaleParams.auto(0.5, 0.01, grid)
    bh = GridPath.zero(grid, 1)
    w = GridPath.zero(grid.subgrid_steps(scales.fast_substeps), 1)
    with pytest.raises(BlowUpError) as exc:
        ms.solve_slow_fast(bad, scales, bh, w)
    assert exc.value.node_index >= 1


def test_noise_shape_validation(ou):
    grid = Grid(1.0, 100)
    scales = ms.ScaleParams.auto(0.5, 0.01, grid)
    bh = GridPath.zero(grid, 1)
    with pytest.raises(UsageError):
        ms.solve_slow_fast(ou, scales, bh, GridPath.zero(grid, 1))  # wrong subgrid


# --- controlled system ----------------------------------------------------------


def test_zero_control_reduces_to_uncontrolled(ou, slow_setup):
    grid, scales, bh, w = slow_setup
    x, y = ms.solve_slow_fast(ou, scales, bh, w)
    ctrl = fbm.Control.zero(grid, 1, 1, 0.7)
    xc, yc = ms.solve_controlled(ou, scales, ctrl, bh, w)
    assert np.array_equal(x.values, xc.values)
    assert np.array_equal(y.values, yc.values)


def test_controlled_linear_shift_oracle(lin):
    # eps = 1 single-scale, sigma1 = 1, f1 = 0, u(t) = t: slow = x0 + t + B^H
    grid = Grid(1.0, 256)
    scales = ms.ScaleParams.auto(1.0, 1e-3, grid)
    H = 0.7
    bh = fbm.sample_fbm(fbm.FbmSpec(H, 1, grid), fbm.RngStream(60))
    w = brownian_path(grid.subgrid_steps(scales.fast_substeps), 1, fbm.RngStream(61))
    # density whose Cameron-Martin image is u(t) = t: solve W du = 1
    import scipy.linalg

    W = fbm.control_derivative_matrix(grid, H)
    T = W[:, 1:].copy()
    T[:, 0] += W[:, 0]
    du_inner = scipy.linalg.solve_triangular(T, np.ones((grid.n_steps, 1)), lower=True)
    du = GridPath(grid, np.vstack([du_inner[0], du_inner]))
    ctrl = fbm.Control(grid, du, GridPath.zero(grid, 1), H)
    x, _ = ms.solve_controlled(lin, scales, ctrl, bh, w)
    target = lin.x0[0] + grid.nodes + bh.values[:, 0]
    assert np.max(np.abs(x.values[:, 0] - target)) < 5e-3


def test_control_cost_is_trajectory_independent(lin):
    grid = Grid(1.0, 64)
    du = GridPath.from_function(grid, lambda t: np.cos(t))
    vp = GridPath.from_function(grid, lambda t: 0.5)
    ctrl = fbm.Control(grid, du, vp, 0.7)
    # the reported cost is a functional of the control alone
    assert ctrl.energy() == pytest.approx(0.5 * fbm.cm_norm_sq(ctrl), rel=1e-15)


def test_controlled_vprime_enters_fast_drift(ou):
    grid = Grid(1.0, 100)
    scales = ms.ScaleParams.auto(0.5, 0.01, grid)
    bh = GridPath.zero(grid, 1)
    w = GridPath.zero(grid.subgrid_steps(scales.fast_substeps), 1)
    vp = GridPath.from_function(grid, lambda t: 1.0)
    ctrl = fbm.Control(grid, GridPath.zero(grid, 1), vp, 0.7)
    _, y0 = ms.solve_controlled(ou, scales, fbm.Control.zero(grid, 1, 1, 0.7), bh, w)
    _, y1 = ms.solve_controlled(ou, scales, ctrl, bh, w)
    assert not np.allclose(y0.values, y1.values)


# --- frozen fast and the averaged drift ------------------------------------------


def test_frozen_fast_linear_decay():
    lin = systems.get_system("linear").with_initial(y0=[1.0])
    p = ms.solve_frozen_fast(lin, np.array([0.0]), 1.0, 1000, fbm.RngStream(0))
    assert p.values[-1, 0] == pytest.approx(np.exp(-1.0), abs=1e-3)


def test_frozen_fast_stationary_mean(ou):
    terminal = np.array(
        [
            ms.solve_frozen_fast(ou, np.array([0.8]), 8.0, 800, fbm.RngStream(70, k)).values[-1, 0]
            for k in range(300)
        ]
    )
    se = terminal.std() / np.sqrt(terminal.size)
    assert abs(terminal.mean() - 0.8) <= 3.5 * se


def test_frozen_fast_contraction_rate(ou):
    # same noise, different y0: distance contracts like exp(-beta1 t / 2)
    w = fbm.sample_bm_increments(Grid(2.0, 2000), 1, fbm.RngStream(71))
    a = ms.solve_frozen_fast(ou, np.array([0.0]), 2.0, 2000, fbm.RngStream(0), y0=[3.0], w_incr=w)
    b = ms.solve_frozen_fast(ou, np.array([0.0]), 2.0, 2000, fbm.RngStream(0), y0=[-1.0], w_incr=w)
    gap = np.abs(a.values[:, 0] - b.values[:, 0])
    t = a.grid.nodes
    rate = np.polyfit(t, np.log(gap), 1)[0]
    assert rate == pytest.approx(-ou.constants.beta1 / 2.0, rel=0.05)


def test_estimate_bar_f1_y_independent_exact():
    spec = systems.get_system("linear")
    est, se = ms.estimate_bar_f1(
        spec, np.array([0.3]), ms.ErgodicParams(burn_in=0.5, horizon=2.0, n_steps=200, replicas=4),
        fbm.RngStream(5),
    )
    assert est[0] == 0.0
    assert se == 0.0


def test_estimate_bar_f1_ou_oracle(ou):
    params = ms.ErgodicParams(burn_in=2.0, horizon=22.0, n_steps=4000, replicas=16)
    est, se = ms.estimate_bar_f1(ou, np.array([0.8]), params, fbm.RngStream(12))
    assert abs(est[0] - np.sin(0.8) * np.exp(-0.5)) <= 3.5 * se


def test_estimate_bar_f1_periodicity(ou):
    params = ms.ErgodicParams(burn_in=2.0, horizon=22.0, n_steps=4000, replicas=16)
    a, se_a = ms.estimate_bar_f1(ou, np.array([0.8]), params, fbm.RngStream(13))
    b, se_b = ms.estimate_bar_f1(ou, np.array([0.8 + 2 * np.pi]), params, fbm.RngStream(14))
    assert abs(a[0] - b[0]) <= 3.5 * np.hypot(se_a, se_b)


def test_estimate_bar_f1_precision_gate(ou):
    params = ms.ErgodicParams(burn_in=0.5, horizon=1.0, n_steps=100, replicas=2, stderr_tol=1e-9)
    with pytest.raises(PrecisionError):
        ms.estimate_bar_f1(ou, np.array([0.8]), params, fbm.RngStream(15))


# --- averaged ODE and skeleton -----------------------------------------------------


def test_averaged_constant_drift_stays_put():
    drift = ms.AveragedDrift.closed_form(lambda x: np.zeros_like(x))
    path = ms.solve_averaged(drift, np.array([2.0]), Grid(1.0, 100))
    assert np.all(path.values == 2.0)


def test_averaged_matches_reference_integration(ou):
    drift = ms.AveragedDrift.from_system(ou)
    grid = Grid(1.0, 1024)
    mine = ms.solve_averaged(drift, ou.x0, grid)
    ref = solve_ivp(
        lambda t, x: np.sin(x) * np.exp(-0.5), (0.0, 1.0), [1.0],
        rtol=1e-12, atol=1e-14, dense_output=True,
    )
    assert abs(mine.values[-1, 0] - ref.y[0, -1]) < 1e-6


def test_averaged_flow_property(ou):
    drift = ms.AveragedDrift.from_system(ou)
    full = ms.solve_averaged(drift, ou.x0, Grid(1.0, 512))
    half1 = ms.solve_averaged(drift, ou.x0, Grid(0.5, 256))
    half2 = ms.solve_averaged(drift, half1.values[-1], Grid(0.5, 256))
    assert full.values[-1, 0] == pytest.approx(half2.values[-1, 0], rel=1e-12)


def test_skeleton_zero_control_identical_to_averaged(ou):
    drift = ms.AveragedDrift.from_system(ou)
    grid = Grid(1.0, 512)
    averaged = ms.solve_averaged(drift, ou.x0, grid)
    sk = ms.solve_skeleton(ou, drift, fbm.Control.zero(grid, 1, 1, 0.7), grid)
    assert np.array_equal(averaged.values, sk.values)


def test_skeleton_pure_control_integration(lin):
    drift = ms.AveragedDrift.from_system(lin)
    grid = Grid(1.0, 256)
    du = GridPath.from_function(grid, lambda s: np.cos(3.0 * s) + 0.5)
    ctrl = fbm.Control(grid, du, GridPath.zero(grid, 1), 0.7)
    sk = ms.solve_skeleton(lin, drift, ctrl, grid)
    u = fbm.cameron_martin_map(du, 0.7)
    assert np.allclose(sk.values[:, 0], lin.x0[0] + u.values[:, 0], atol=1e-12)


def test_skeleton_ignores_vprime(ou):
    drift = ms.AveragedDrift.from_system(ou)
    grid = Grid(1.0, 128)
    du = GridPath.from_function(grid, lambda s: np.sin(s))
    a = ms.solve_skeleton(ou, drift, fbm.Control(grid, du, GridPath.zero(grid, 1), 0.7), grid)
    vp = GridPath.from_function(grid, lambda s: 17.0 * np.cos(s))
    b = ms.solve_skeleton(ou, drift, fbm.Control(grid, du, vp, 0.7), grid)
    assert np.array_equal(a.values, b.values)


def test_ergodic_drift_lattice(ou):
    params = ms.ErgodicParams(burn_in=1.0, horizon=9.0, n_steps=1200, replicas=6)
    drift = ms.AveragedDrift.ergodic(ou, params, fbm.RngStream(21), bounds=(-2.0, 2.0), pitch=0.5)
    assert drift.source == "ergodic_estimate"
    xs = np.array([[0.5], [-1.0]])
    got = drift(xs)
    want = np.sin(xs) * np.exp(-0.5)
    assert np.max(np.abs(got - want)) < 0.15
