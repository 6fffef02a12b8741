import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fedadp.errors import UsageError
from fedadp.mechanism import (NoisePlan, Override, PrivacyParams, downlink_sigma, gauss_c, perturb,
                              uplink_sensitivity, uplink_sigma)
from fedadp.nn import ModelParams, init_params

# mpmath at 40 digits: sqrt(2 ln 125), and the two sigmas composed from it
C_AT_DELTA_001 = 3.107511460092239506591561833336
SIGMA_U_REF = 0.05549127607307570547484931845243
SIGMA_D_REF = 0.04511925708029396092868112906228

MNIST_SETUP = PrivacyParams(epsilon=0.5, delta=0.01, exposures=1, rounds=25, clients=30, clip=5.0, min_shard=1120)


def mnist_model(seed=0):
    return init_params([784, 256, 10], np.random.default_rng(seed))


class TestCalibration:
    def test_c_at_delta_001(self):
        assert gauss_c(0.01) == pytest.approx(C_AT_DELTA_001, rel=1e-14)

    def test_c_equals_one(self):
        assert gauss_c(1.25 / math.exp(0.5)) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("lo,hi", [(1e-6, 1e-5), (0.01, 0.02), (0.3, 0.9)])
    def test_c_decreasing(self, lo, hi):
        assert gauss_c(lo) > gauss_c(hi)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 2.0])
    def test_c_domain(self, delta):
        with pytest.raises(UsageError):
            gauss_c(delta)

    def test_sensitivity(self):
        assert uplink_sensitivity(5, 1120) == pytest.approx(0.008928571428571428, rel=1e-15)
        assert uplink_sensitivity(1, 2) == 1.0
        assert uplink_sensitivity(5, 2240) == uplink_sensitivity(5, 1120) / 2
        with pytest.raises(UsageError):
            uplink_sensitivity(5, 0)

    def test_uplink_reference_value(self):
        assert uplink_sigma(MNIST_SETUP) == pytest.approx(SIGMA_U_REF, rel=1e-13)

    def test_uplink_scaling(self):
        base = uplink_sigma(MNIST_SETUP)
        assert uplink_sigma(MNIST_SETUP.with_epsilon(10.0)) == pytest.approx(base / 20, rel=1e-15)
        doubled = PrivacyParams(0.5, 0.01, 2, 25, 30, 5.0, 1120)
        assert uplink_sigma(doubled) == pytest.approx(2 * base, rel=1e-15)

    def test_downlink_zero_branch(self):
        assert downlink_sigma(PrivacyParams(0.5, rounds=5, exposures=1, clients=30)) == 0.0

    def test_downlink_reference_value(self):
        assert downlink_sigma(MNIST_SETUP) == pytest.approx(SIGMA_D_REF, rel=1e-13)

    def test_downlink_continuous_at_threshold(self):
        # T^2 = L^2 N exactly: zero branch; just above it sigma is tiny
        assert downlink_sigma(PrivacyParams(0.5, rounds=6, exposures=1, clients=36)) == 0.0
        assert downlink_sigma(PrivacyParams(0.5, rounds=7, exposures=1, clients=48)) < 0.01

    def test_downlink_branch_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            t, l, n = (int(v) for v in rng.integers(1, 60, 3))
            s = downlink_sigma(PrivacyParams(1.0, rounds=t, exposures=l, clients=n))
            assert (s == 0.0) == (t <= l * math.sqrt(n))

    @settings(max_examples=100, deadline=None)
    @given(eps=st.floats(0.05, 20), delta=st.floats(1e-6, 0.5), l=st.integers(1, 5),
           c=st.floats(0.1, 20), m=st.integers(1, 5000))
    def test_monotonicity(self, eps, delta, l, c, m):
        p = PrivacyParams(eps, delta, l, 25, 30, c, m)
        s = uplink_sigma(p)
        assert uplink_sigma(PrivacyParams(eps * 1.5, delta, l, 25, 30, c, m)) < s
        assert uplink_sigma(PrivacyParams(eps, delta, l, 25, 30, c, m + 1)) < s
        assert uplink_sigma(PrivacyParams(eps, delta, l + 1, 25, 30, c, m)) > s
        assert uplink_sigma(PrivacyParams(eps, delta, l, 25, 30, c * 1.5, m)) > s
        assert uplink_sigma(PrivacyParams(eps, delta * 1.5, l, 25, 30, c, m)) < s


class TestPerturb:
    def test_zero_plan_is_identity(self):
        p = mnist_model()
        assert perturb(p, NoisePlan(0.0), 3).equals(p)

    def test_first_layer_statistics(self):
        p = mnist_model()
        noisy = perturb(p, NoisePlan(0.0, (Override(0, np.arange(784), 0.01),)), 11)
        d = (noisy.layers[0][0] - p.layers[0][0]).ravel()
        assert d.size == 200704
        assert abs(d.std() / 0.01 - 1) < 0.02
        assert abs(d.mean()) < 3 * 0.01 / math.sqrt(d.size)
        assert noisy.layers[1][0] is not p.layers[1][0]
        assert np.array_equal(noisy.layers[1][0], p.layers[1][0])

    def test_same_seed_same_noise(self):
        p = mnist_model()
        assert perturb(p, NoisePlan(0.05), 1).equals(perturb(p, NoisePlan(0.05), 1))
        assert not perturb(p, NoisePlan(0.05), 1).equals(perturb(p, NoisePlan(0.05), 2))

    def test_full_override_equals_default(self):
        p = mnist_model()
        plan = NoisePlan(0.0, tuple(Override(k, np.arange(a.shape[0]), 0.02) for k, a in enumerate(p.arrays())))
        assert perturb(p, plan, 5).equals(perturb(p, NoisePlan(0.02), 5))

    def test_ks_against_normal(self):
        p = ModelParams(((np.zeros((100, 1000)), np.zeros(1000)),))
        noisy = perturb(p, NoisePlan(0.3), 21)
        z = noisy.layers[0][0].ravel() / 0.3
        assert z.size == 100_000
        stat = stats.kstest(z, "norm").statistic
        # asymptotic 1% critical value of the one-sample KS statistic
        assert stat < 1.628 / math.sqrt(z.size)

    def test_invalid_coordinate(self):
        with pytest.raises(UsageError):
            perturb(mnist_model(), NoisePlan(0.1, (Override(0, np.array([784]), 1.0),)), 0)
        with pytest.raises(UsageError):
            perturb(mnist_model(), NoisePlan(0.1, (Override(4, np.array([0]), 1.0),)), 0)

    def test_negative_sigma(self):
        with pytest.raises(UsageError):
            NoisePlan(-0.1)
