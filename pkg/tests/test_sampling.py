import numpy as np
import pytest

from sisifus.core import SamplingMap
from sisifus.sampling import bilinear_upsample, decimate, decimate_adjoint

from conftest import lifetime_plane


def test_decimate_4x4_factor_2():
    hr = lifetime_plane(np.arange(16, dtype=np.float64).reshape(4, 4))
    smap = SamplingMap.from_factor((4, 4), 2)
    lr = decimate(hr, smap)
    np.testing.assert_array_equal(lr.values, [[0.0, 2.0], [8.0, 10.0]])


def test_decimate_identity_factor_1():
    hr = lifetime_plane(np.arange(12, dtype=np.float64).reshape(3, 4))
    smap = SamplingMap.from_factor((3, 4), 1)
    np.testing.assert_array_equal(decimate(hr, smap).values, hr.values)


def test_decimate_with_offset():
    hr = lifetime_plane(np.arange(25, dtype=np.float64).reshape(5, 5))
    smap = SamplingMap.from_factor((5, 5), 2, offset=(1, 1))
    np.testing.assert_array_equal(decimate(hr, smap).values,
                                  [[6.0, 8.0], [16.0, 18.0]])


def test_adjoint_identity_20_random_pairs(rng):
    smap = SamplingMap.from_factor((8, 8), 4)  # 8x8 -> 2x2
    for _ in range(20):
        x = rng.normal(size=(8, 8))
        y = rng.normal(size=(2, 2))
        xp = lifetime_plane(np.abs(x))
        ax = decimate(xp, smap).values
        aty = decimate_adjoint(lifetime_plane(np.abs(y)), smap).values
        lhs = float((ax * np.abs(y)).sum())
        rhs = float((np.abs(x) * aty).sum())
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_adjoint_identity_anisotropic(rng):
    smap = SamplingMap.from_factor((9, 14), (3, 2), offset=(1, 0))
    x = np.abs(rng.normal(size=(9, 14)))
    y = np.abs(rng.normal(size=smap.lr_shape))
    lhs = (decimate(lifetime_plane(x), smap).values * y).sum()
    rhs = (x * decimate_adjoint(lifetime_plane(y), smap).values).sum()
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_a_at_is_identity(rng):
    # decimation after its adjoint returns the LR input untouched
    smap = SamplingMap.from_factor((16, 16), 4)
    lr = lifetime_plane(np.abs(rng.normal(size=smap.lr_shape)))
    back = decimate(decimate_adjoint(lr, smap), smap)
    np.testing.assert_array_equal(back.values, lr.values)


def test_adjoint_scatters_only_at_samples():
    smap = SamplingMap.from_factor((4, 4), 2)
    lr = lifetime_plane(np.ones((2, 2)))
    up = decimate_adjoint(lr, smap).values
    assert up.sum() == 4.0
    assert up[0, 0] == 1.0 and up[1, 1] == 0.0


def test_bilinear_frozen_2x2():
    lr = lifetime_plane([[0.0, 1.0], [1.0, 2.0]])
    smap = SamplingMap.from_factor((3, 3), 2)
    out = bilinear_upsample(lr, smap).values
    assert out[1, 1] == 1.0
    np.testing.assert_array_equal(out[::2, ::2], lr.values)


def test_bilinear_exact_at_nodes(rng):
    smap = SamplingMap.from_factor((13, 13), 3, offset=(1, 1))
    lr = lifetime_plane(np.abs(rng.normal(size=smap.lr_shape)))
    up = bilinear_upsample(lr, smap)
    np.testing.assert_allclose(decimate(up, smap).values, lr.values, atol=1e-12)


def test_bilinear_edge_extension():
    # HR pixels beyond the last sample hold the edge sample's value
    lr = lifetime_plane([[1.0, 3.0]])
    smap = SamplingMap.from_factor((1, 5), 2, offset=(0, 1))
    out = bilinear_upsample(lr, smap).values[0]
    # samples at cols 1 and 3; col 0 extends left, col 4 extends right
    np.testing.assert_allclose(out, [1.0, 1.0, 2.0, 3.0, 3.0])


def test_bilinear_linear_ramp_is_exact():
    rows = np.arange(0, 9, 4, dtype=np.float64)
    lr = lifetime_plane(rows[:, None] + rows[None, :])
    smap = SamplingMap.from_factor((9, 9), 4)
    out = bilinear_upsample(lr, smap).values
    r = np.arange(9, dtype=np.float64)
    np.testing.assert_allclose(out, r[:, None] + r[None, :], atol=1e-12)


def test_bilinear_rejects_unsampled():
    lr = lifetime_plane([[1.0, np.nan], [1.0, 1.0]])
    smap = SamplingMap.from_factor((3, 3), 2)
    with pytest.raises(ValueError):
        bilinear_upsample(lr, smap)


def test_shape_validation():
    smap = SamplingMap.from_factor((4, 4), 2)
    with pytest.raises(ValueError):
        decimate(lifetime_plane(np.ones((5, 5))), smap)
    with pytest.raises(ValueError):
        bilinear_upsample(lifetime_plane(np.ones((3, 3))), smap)
