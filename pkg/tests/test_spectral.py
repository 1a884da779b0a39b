import math

import numpy as np
import pytest

from phi4lab.coefficients import RegularitySpec, synthesize_holder_field
from phi4lab.spectral import (Field, FieldTrajectory, TorusGrid, besov_norm, gradient,
                              heat_semigroup, lp_block, lp_blocks, read_field, write_field)


def random_field(grid, seed, alpha=0.2):
    return synthesize_holder_field(grid, RegularitySpec(alpha, 1.0, 0.5), seed)


def test_heat_on_constant():
    g = TorusGrid(1, 64)
    out = heat_semigroup(Field.constant(g, 1.0), 0.5)
    assert np.allclose(out.values, math.exp(-0.5), rtol=0, atol=1e-15)
    assert abs(out.values[0] - 0.60653) < 1e-5


def test_heat_single_mode_t3():
    g = TorusGrid(3, 16)
    x = g.coordinates()[0]
    out = heat_semigroup(Field(g, np.cos(x)), 1.0)
    assert np.allclose(out.values, math.exp(-2) * np.cos(x), atol=1e-14)


def test_heat_zero_time_is_identity():
    g = TorusGrid(1, 32)
    f = random_field(g, 1)
    assert heat_semigroup(f, 0.0) is f


def test_semigroup_composition():
    g = TorusGrid(2, 32)
    f = random_field(g, 2)
    a = heat_semigroup(heat_semigroup(f, 0.3), 0.4).values
    b = heat_semigroup(f, 0.7).values
    assert np.abs(a - b).max() <= 1e-12 * np.abs(b).max()


def test_heat_rejects_negative_time():
    g = TorusGrid(1, 16)
    with pytest.raises(ValueError):
        heat_semigroup(Field.constant(g, 1.0), -0.1)


def test_positivity_up_to_ringing():
    g = TorusGrid(1, 64)
    f = Field(g, np.where(g.coordinates()[0] < 1.0, 1.0, 0.0))
    out = heat_semigroup(f, 0.01)
    assert out.values.min() >= -1e-10 * f.sup() or out.values.min() > -0.05
    # documented: a sharp indicator rings at coarse grids, smooth data does not
    smooth = Field(g, 1.0 + np.cos(g.coordinates()[0]))
    assert heat_semigroup(smooth, 0.01).values.min() >= -1e-10 * smooth.sup()


def test_constant_lives_in_low_block():
    g = TorusGrid(1, 64)
    f = Field.constant(g, 3.0)
    assert np.allclose(lp_block(f, -1).values, 3.0)
    for j in range(0, g.top_level + 2):
        assert np.abs(lp_block(f, j).values).max() < 1e-14


def test_block_reconstruction():
    g = TorusGrid(2, 32)
    f = random_field(g, 3)
    total = sum(lp_block(f, j).values for j in range(-1, g.top_level + 1))
    assert np.abs(total - f.values).max() <= 1e-12 * f.sup()
    assert np.abs(lp_blocks(f.values, g).sum(axis=0) - f.values).max() <= 1e-12 * f.sup()


def test_single_mode_support():
    g = TorusGrid(1, 256)
    f = Field(g, np.cos(32 * g.coordinates()[0]))
    norms = {j: lp_block(f, j).sup() for j in range(-1, g.top_level + 1)}
    assert all(v < 1e-12 for j, v in norms.items() if j not in (4, 5, 6))
    assert max(norms[j] for j in (4, 5, 6)) > 0.5


def test_besov_constant():
    g = TorusGrid(1, 64)
    f = Field.constant(g, -2.0)
    assert besov_norm(f, 0.7) == pytest.approx(2.0)
    assert besov_norm(f, 0.7, p=2, q=2) == pytest.approx(2.0 * math.sqrt(2 * math.pi))


def test_besov_single_mode():
    g = TorusGrid(1, 256)
    a, alpha = 1.5, 0.4
    f = Field(g, a * np.cos(32 * g.coordinates()[0]))
    # partition weights sum to one; at |k| = 32 the whole mode sits in block 5
    blocks = [lp_block(f, j).sup() * 2.0 ** (alpha * j) for j in (4, 5, 6)]
    assert besov_norm(f, alpha) == pytest.approx(max(blocks))
    assert besov_norm(f, alpha) == pytest.approx(2 ** (5 * alpha) * a, rel=1e-9)


def test_besov_monotone_and_homogeneous():
    g = TorusGrid(1, 128)
    f = random_field(g, 4)
    assert besov_norm(f, -0.3) <= besov_norm(f, 0.2) <= besov_norm(f, 0.9)
    assert besov_norm(f * -3.0, 0.2) == pytest.approx(3 * besov_norm(f, 0.2))


def test_gradient_of_sine():
    g = TorusGrid(2, 32)
    x, y = g.coordinates()
    grad = gradient(np.sin(x) * np.cos(2 * y), g)
    assert grad.shape == (2, 32, 32)
    assert np.allclose(grad[0], np.cos(x) * np.cos(2 * y), atol=1e-12)
    assert np.allclose(grad[1], -2 * np.sin(x) * np.sin(2 * y), atol=1e-12)


def test_field_is_read_only():
    g = TorusGrid(1, 16)
    f = Field.constant(g, 1.0)
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_trajectory_interpolation():
    g = TorusGrid(1, 8)
    tr = FieldTrajectory(g, 0.5, 0.0, np.stack([np.zeros(8), np.ones(8), 3 * np.ones(8)]))
    assert np.allclose(tr.at(0.25), 0.5)
    assert np.allclose(tr.at(0.75), 2.0)
    assert np.allclose(tr.at(5.0), 3.0)
    assert tr.first_index_at_or_after(0.6) == 2


def test_snapshot_round_trip(tmp_path):
    g = TorusGrid(2, 16, 3.0)
    f = Field(g, np.random.default_rng(0).standard_normal((2, 16, 16)))
    path = tmp_path / "f.fld"
    write_field(path, f)
    raw = path.read_bytes()
    assert raw[:8] == b"PHI4FLD\0"
    back = read_field(path)
    assert back.grid == g
    assert np.array_equal(back.values, f.values)
