import numpy as np
import pytest
from hypothesis import given, strategies as st

from slowfast_ldp.errors import DomainError, UsageError
from slowfast_ldp.grid import Grid, GridPath, HolderExponent


@given(st.floats(0.01, 100.0), st.integers(1, 2000))
def test_grid_nodes_invariants(horizon, n_steps):
    g = Grid(horizon, n_steps)
    t = g.nodes
    assert t[0] == 0.0
    assert t[-1] == pytest.approx(horizon, rel=1e-12)
    assert np.all(np.diff(t) > 0)
    assert np.allclose(np.diff(t), g.step, rtol=1e-9)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_grid_rejects_bad_horizon(bad):
    with pytest.raises(DomainError):
        Grid(bad, 10)


def test_grid_rejects_bad_steps():
    with pytest.raises(DomainError):
        Grid(1.0, 0)


def test_gridpath_shape_and_dim():
    g = Grid(1.0, 4)
    p = GridPath(g, np.arange(5.0))
    assert p.dim == 1
    assert p.values.shape == (5, 1)
    q = GridPath(g, np.zeros((5, 3)))
    assert q.dim == 3


def test_gridpath_rejects_nonfinite():
    g = Grid(1.0, 4)
    vals = np.zeros((5, 1))
    vals[3] = np.nan
    with pytest.raises(UsageError, match="node: 3"):
        GridPath(g, vals)


def test_gridpath_rejects_wrong_length():
    g = Grid(1.0, 4)
    with pytest.raises(UsageError):
        GridPath(g, np.zeros((4, 1)))


def test_gridpath_arithmetic_requires_same_grid():
    a = GridPath.zero(Grid(1.0, 4), 1)
    b = GridPath.zero(Grid(1.0, 8), 1)
    with pytest.raises(UsageError):
        _ = a + b


def test_restrict_to_coarse():
    fine = Grid(2.0, 8)
    p = GridPath.from_function(fine, lambda t: t**2)
    coarse = Grid(2.0, 4)
    q = p.restrict_to_coarse(coarse)
    assert np.allclose(q.values[:, 0], coarse.nodes**2)


@given(st.floats(0.501, 0.999))
def test_holder_exponent_window(hurst):
    mid = (1.0 - hurst + 0.5) / 2.0
    HolderExponent(mid, hurst)  # inside the window: fine
    with pytest.raises(DomainError):
        HolderExponent(1.0 - hurst, hurst)  # boundary excluded
    with pytest.raises(DomainError):
        HolderExponent(0.5, hurst)


def test_holder_exponent_rejects_bad_hurst():
    with pytest.raises(DomainError):
        HolderExponent(0.4, 0.5)
