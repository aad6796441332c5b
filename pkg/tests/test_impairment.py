import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coherentfl.errors import DimensionError, DomainError
from coherentfl.fading import DeviceClass
from coherentfl.impairment import (
    DownlinkNoiseSpec, MaskBits, additive_noise, build_mask, corrupt_broadcast, noise_spec,
    plan_downlink,
)
from coherentfl.phymath import stream
from coherentfl.power import optimal_allocation
from coherentfl.signaling import Scheme, estimation_error_variance

STATIC, DYNAMIC = DeviceClass.STATIC, DeviceClass.DYNAMIC


class TestBuildMask:
    def test_static_is_full(self):
        assert build_mask(37, 4, 10, STATIC).popcount == 37

    def test_single_subblock(self):
        mask = build_mask(100, 20, 100, DYNAMIC)
        np.testing.assert_array_equal(mask.missing, np.arange(20))

    def test_two_subblocks(self):
        mask = build_mask(10, 2, 5, DYNAMIC)
        np.testing.assert_array_equal(mask.missing, [0, 1, 5, 6])

    @given(st.integers(1, 6), st.integers(1, 30), st.integers(1, 12))
    def test_density_on_aligned_frames(self, m, extra, q):
        t_k = m + extra
        mask = build_mask(q * t_k, m, t_k, DYNAMIC)
        assert mask.missing.size == q * m

    @given(st.integers(1, 500), st.integers(1, 6), st.integers(1, 30))
    def test_density_within_one_subblock(self, d, m, extra):
        t_k = m + extra
        lost = build_mask(d, m, t_k, DYNAMIC).missing.size
        assert abs(lost - d * m / t_k) <= m

    def test_flexible_short_tail_lost(self):
        mask = build_mask(12, 2, 5, DYNAMIC, flexible=True)
        np.testing.assert_array_equal(mask.missing, [0, 1, 5, 6, 10, 11])

    def test_fresh_subblock_restored(self):
        mask = build_mask(10, 2, 5, DYNAMIC, decodable_subblocks=[1])
        np.testing.assert_array_equal(mask.missing, [0, 1])

    def test_no_data_phase(self):
        with pytest.raises(DomainError):
            build_mask(10, 5, 5, DYNAMIC)

    def test_empty_model(self):
        with pytest.raises(DimensionError):
            build_mask(0, 1, 4, DYNAMIC)


class TestNoiseSpec:
    def test_static_variance_at_20db(self):
        spec = noise_spec(100.0, 0.1, 2, 1.0, 100.0, 1.0)
        assert spec.sigma2_static == pytest.approx(0.01)

    def test_perfect_csi_limit(self):
        m, rho_d = 4, 2.0
        err = estimation_error_variance(m, 1e6, 1.0)
        spec = noise_spec(rho_d, err, m, 1e6, rho_d, 1.0)
        assert 1.0 < spec.sigma2_dynamic / spec.sigma2_static < 1.01

    @given(st.integers(1, 16), st.integers(1, 100), st.floats(0.5, 1e3))
    def test_ordering_for_optimal_allocations(self, m, extra, rho):
        t_k = m + extra
        a = optimal_allocation(max(rho, 1.01 * (1 + np.sqrt(extra)) / t_k), t_k, m, 1.0)
        if a.rho_p <= 0:
            return
        spec = noise_spec(a.rho_d, estimation_error_variance(m, a.rho_p, 1.0), m, a.rho_p,
                          a.rho_d, 1.0)
        assert 0 <= spec.sigma2_static < spec.sigma2_dynamic

    def test_inverted_ordering_rejected(self):
        with pytest.raises(DomainError):
            noise_spec(0.01, 0.0, 2, 1.0, 1.0, 1.0)

    def test_spec_invariant(self):
        with pytest.raises(DomainError):
            DownlinkNoiseSpec(0.5, 0.5)

    def test_non_positive_snr(self):
        with pytest.raises(DomainError):
            noise_spec(0.0, 0.1, 2, 1.0, 1.0, 1.0)

    def test_additive_noisier_than_product(self):
        m, rho_p, rho_d = 6, 2.0, 1.5
        product = noise_spec(rho_d, estimation_error_variance(m, rho_p, 1.0), m, rho_p, rho_d,
                             1.0).sigma2_dynamic
        pilot_var, data_var = additive_noise(m, rho_p, rho_d, 1.0)
        assert pilot_var > data_var > product


class TestCorruptBroadcast:
    def test_noiseless_full_mask_is_identity(self, rng):
        theta = rng.standard_normal(9)
        rec = corrupt_broadcast(theta, MaskBits.full(9), 0.0, rng)
        np.testing.assert_array_equal(rec.values, theta)
        assert rec.missing.size == 0

    def test_noise_variance_and_mean(self):
        n, s2 = 100_000, 0.3
        rec = corrupt_broadcast(np.zeros(n), MaskBits.full(n), s2, stream(4, "corrupt"))
        np.testing.assert_allclose(np.var(rec.values), s2, rtol=0.02)
        assert abs(rec.values.mean()) < 3 * np.sqrt(s2 / n)

    def test_empty_mask(self, rng):
        rec = corrupt_broadcast(np.ones(5), MaskBits(np.zeros(5, bool)), 1.0, rng)
        assert rec.values.size == 0
        np.testing.assert_array_equal(rec.missing, np.arange(5))

    def test_per_coordinate_variance(self, rng):
        rec = corrupt_broadcast(np.ones(3), MaskBits.full(3), np.array([0.0, 0.0, 1.0]), rng)
        np.testing.assert_array_equal(rec.values[:2], 1.0)

    def test_negative_variance(self, rng):
        with pytest.raises(DomainError):
            corrupt_broadcast(np.ones(2), MaskBits.full(2), -1.0, rng)

    def test_length_mismatch(self, rng):
        with pytest.raises(DimensionError):
            corrupt_broadcast(np.ones(3), MaskBits.full(2), 0.0, rng)


class TestPlanDownlink:
    alloc = optimal_allocation(10.0, 20, 4, 1.0)

    def _plan(self, scheme, cls=DYNAMIC):
        return plan_downlink(scheme, cls, 40, 4, 20, self.alloc.rho_p, self.alloc.rho_d, 1.0)

    def test_static_identical_across_schemes(self):
        plans = [self._plan(s, STATIC) for s in Scheme]
        for p in plans:
            assert p.mask.popcount == 40
            assert p.sigma2 == pytest.approx(1.0 / self.alloc.rho_d)

    def test_product_masks_pilot_slots(self):
        p = self._plan(Scheme.PRODUCT)
        np.testing.assert_array_equal(p.mask.missing, [0, 1, 2, 3, 20, 21, 22, 23])

    def test_conventional_full_mask_same_noise(self):
        conv, prod = self._plan(Scheme.CONVENTIONAL), self._plan(Scheme.PRODUCT)
        assert conv.mask.popcount == 40
        assert conv.sigma2 == prod.sigma2

    def test_additive_full_mask_higher_noise(self):
        add, prod = self._plan(Scheme.ADDITIVE), self._plan(Scheme.PRODUCT)
        assert add.mask.popcount == 40
        assert np.min(add.sigma2) > prod.sigma2
        assert add.sigma2[0] > add.sigma2[4]
