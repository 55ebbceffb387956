import numpy as np
import pytest

from sisifus.core import Datacube, Plane, SamplingMap, integrate_time
from sisifus.phantom import generate_datacube

from conftest import intensity_plane, lifetime_plane


class TestPlane:
    def test_values_are_float64_and_read_only(self):
        p = Plane(values=np.array([[1, 2], [3, 4]], dtype=np.int32),
                  role="intensity", units="counts")
        assert p.values.dtype == np.float64
        with pytest.raises(ValueError):
            p.values[0, 0] = 9.0

    def test_source_array_is_copied(self):
        src = np.ones((2, 2))
        p = Plane(values=src, role="intensity", units="")
        src[0, 0] = 5.0
        assert p.values[0, 0] == 1.0

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            Plane(values=np.zeros(4), role="intensity", units="")
        with pytest.raises(ValueError):
            Plane(values=np.zeros((2, 2, 2)), role="intensity", units="")

    def test_rejects_unknown_role(self):
        with pytest.raises(ValueError):
            Plane(values=np.zeros((2, 2)), role="banana", units="")

    def test_lifetime_allows_nan_but_not_negative(self):
        p = lifetime_plane([[1.0, np.nan], [0.0, 2.0]])
        assert p.has_unsampled
        with pytest.raises(ValueError):
            lifetime_plane([[-0.1, 1.0], [1.0, 1.0]])
        with pytest.raises(ValueError):
            lifetime_plane([[np.inf, 1.0], [1.0, 1.0]])

    def test_prior_rejects_nan_and_negative(self):
        Plane(values=np.ones((2, 2)), role="prior", units="ns")
        with pytest.raises(ValueError):
            Plane(values=np.array([[1.0, np.nan], [1.0, 1.0]]),
                  role="prior", units="ns")
        with pytest.raises(ValueError):
            Plane(values=np.array([[1.0, -1.0], [1.0, 1.0]]),
                  role="prior", units="ns")

    def test_weight_bounded_to_unit_interval(self):
        Plane(values=np.array([[0.0, 0.5], [1.0, 1.0]]), role="weight", units="")
        with pytest.raises(ValueError):
            Plane(values=np.array([[0.0, 1.5], [1.0, 1.0]]), role="weight", units="")
        with pytest.raises(ValueError):
            Plane(values=np.array([[0.0, -0.5], [1.0, 1.0]]), role="weight", units="")

    def test_intensity_must_be_finite(self):
        with pytest.raises(ValueError):
            intensity_plane([[1.0, np.nan], [1.0, 1.0]])

    def test_shape_and_has_unsampled(self):
        p = lifetime_plane(np.ones((3, 5)))
        assert p.shape == (3, 5)
        assert not p.has_unsampled


class TestDatacube:
    def test_basic(self):
        c = Datacube(counts=np.ones((2, 3, 4)), bin_width=0.5)
        assert c.shape == (2, 3, 4)
        assert c.t0_bin is None

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            Datacube(counts=np.ones((2, 3)), bin_width=0.5)
        with pytest.raises(ValueError):
            Datacube(counts=-np.ones((2, 3, 4)), bin_width=0.5)
        with pytest.raises(ValueError):
            Datacube(counts=np.full((2, 3, 4), np.nan), bin_width=0.5)

    def test_rejects_bad_bin_width(self):
        with pytest.raises(ValueError):
            Datacube(counts=np.ones((2, 3, 4)), bin_width=0.0)
        with pytest.raises(ValueError):
            Datacube(counts=np.ones((2, 3, 4)), bin_width=-1.0)

    def test_t0_bin_bounds(self):
        Datacube(counts=np.ones((2, 2, 4)), bin_width=1.0, t0_bin=3)
        with pytest.raises(ValueError):
            Datacube(counts=np.ones((2, 2, 4)), bin_width=1.0, t0_bin=4)
        with pytest.raises(ValueError):
            Datacube(counts=np.ones((2, 2, 4)), bin_width=1.0, t0_bin=-1)


class TestSamplingMap:
    def test_from_factor_shapes(self):
        smap = SamplingMap.from_factor((64, 64), 8)
        assert smap.lr_shape == (8, 8)
        assert smap.hr_shape == (64, 64)
        assert smap.factor == (8, 8)

    def test_from_factor_with_offset(self):
        smap = SamplingMap.from_factor((10, 10), 3, offset=(1, 2))
        # samples at rows 1,4,7 and cols 2,5,8
        assert smap.lr_shape == (3, 3)
        assert list(smap.sample_rows()) == [1, 4, 7]
        assert list(smap.sample_cols()) == [2, 5, 8]

    def test_identity_factor(self):
        smap = SamplingMap.from_factor((5, 7), 1)
        assert smap.lr_shape == (5, 7)

    def test_anisotropic_factor(self):
        smap = SamplingMap.from_factor((16, 16), (2, 4))
        assert smap.lr_shape == (8, 4)

    def test_offset_outside_image_rejected(self):
        with pytest.raises(ValueError):
            SamplingMap.from_factor((8, 8), 2, offset=(8, 0))

    def test_last_sample_must_fit(self):
        with pytest.raises(ValueError):
            SamplingMap(factor=(2, 2), offset=(0, 0), lr_shape=(5, 5),
                        hr_shape=(8, 8))

    def test_invalid_factor(self):
        with pytest.raises(ValueError):
            SamplingMap.from_factor((8, 8), 0)


class TestIntegrateTime:
    def test_sums_time_axis(self):
        counts = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
        plane = integrate_time(Datacube(counts=counts, bin_width=1.0))
        assert plane.role == "intensity"
        np.testing.assert_array_equal(plane.values, counts.sum(axis=2))

    def test_constant_budget_within_poisson_bound(self):
        # Every pixel carries the same expected total B; the integrated plane
        # must sit within 5*sqrt(B) of B essentially everywhere.
        budget = 1e4
        n = 96
        gt_tau = lifetime_plane(np.full((n, n), 2.0))
        gt_i = intensity_plane(np.full((n, n), budget))
        cube = generate_datacube(gt_tau, gt_i, bins=64, bin_width=0.2, seed=11)
        total = integrate_time(cube).values
        within = np.abs(total - budget) <= 5.0 * np.sqrt(budget)
        assert within.mean() >= 0.9999
