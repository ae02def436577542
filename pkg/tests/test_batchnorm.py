import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1bn.batchnorm import (
    GAUSSIAN_STD_OVER_MAD,
    BatchSizeError,
    BnMode,
    BnParams,
    BnState,
    LayoutError,
    ModeError,
    StateError,
    batch_axes,
    batch_deviation,
    bn_backward_l1_naive,
    bn_backward_l1_simplified,
    bn_backward_l2,
    bn_forward_infer,
    bn_forward_train,
    default_l1_mode,
    l1_batch_stats,
    l2_batch_stats,
    pooled_count,
    update_running_stats,
)
from l1bn.tensor import Rng, ShapeError, as_tensor

ALL_MODES = (BnMode.L2, BnMode.L1, BnMode.L1_COMPENSATED)


def two_point(v0=1.0, v1=3.0):
    return as_tensor([v0, v1], shape=(2, 1))


class TestBatchAxes:
    def test_2d(self):
        assert batch_axes((8, 5)) == (0,)
        assert pooled_count((8, 5)) == 8

    def test_4d(self):
        assert batch_axes((4, 3, 2, 6)) == (0, 1, 2)
        assert pooled_count((4, 3, 2, 6)) == 24

    def test_degenerate_spatial_matches_2d(self):
        x = Rng(0).normal((6, 5))
        mu2, var2 = l2_batch_stats(x)
        mu4, var4 = l2_batch_stats(x.reshape(6, 1, 1, 5))
        assert np.allclose(mu2, mu4) and np.allclose(var2, var4)

    def test_unsupported_rank(self):
        for shape in ((5,), (2, 3, 4), (2, 3, 4, 5, 6)):
            with pytest.raises(LayoutError):
                batch_axes(shape)


class TestBatchStats:
    def test_l2_symmetric_two_point(self):
        mu, var = l2_batch_stats(two_point())
        assert mu[0] == 2.0 and var[0] == 1.0

    def test_l2_constant_batch(self):
        mu, var = l2_batch_stats(np.full((5, 2), 3.0))
        assert np.all(mu == 3.0) and np.all(var == 0.0)

    def test_l2_direct_evaluation_oracle(self):
        values = [1.0, 2.0, 3.0, 6.0]
        m = sum(values) / 4.0
        expected_var = sum((v - m) ** 2 for v in values) / 4.0  # biased: 3.5
        mu, var = l2_batch_stats(as_tensor(values, shape=(4, 1)))
        assert mu[0] == m == 3.0
        assert var[0] == expected_var == 3.5

    def test_l1_symmetric_two_point(self):
        mu, sigma = l1_batch_stats(two_point())
        assert mu[0] == 2.0 and sigma[0] == 1.0

    def test_l1_direct_evaluation_oracle(self):
        values = [1.0, 2.0, 3.0, 6.0]
        m = sum(values) / 4.0
        expected = sum(abs(v - m) for v in values) / 4.0  # = 1.5
        _, sigma = l1_batch_stats(as_tensor(values, shape=(4, 1)))
        assert sigma[0] == expected == 1.5

    def test_l1_compensated_two_point(self):
        _, sigma = l1_batch_stats(two_point(), compensate=True)
        assert sigma[0] == pytest.approx(math.sqrt(math.pi / 2), abs=1e-12)

    def test_batch_too_small(self):
        with pytest.raises(BatchSizeError):
            l2_batch_stats(np.ones((1, 3)))
        with pytest.raises(BatchSizeError):
            l1_batch_stats(np.ones((1, 1, 1, 3)))


class TestForwardTrain:
    def test_two_point_l2_unit_output(self):
        params = BnParams.init(1, mode=BnMode.L2, epsilon=1e-12)
        y, cache = bn_forward_train(two_point(), params)
        assert np.allclose(y.ravel(), [-1.0, 1.0], atol=1e-6)
        assert cache.mu_b[0] == 2.0

    def test_two_point_l1_matches_l2(self):
        # two symmetric points: MAD equals std, so both norms agree
        p1 = BnParams.init(1, mode=BnMode.L1, epsilon=1e-12)
        y, _ = bn_forward_train(two_point(), p1)
        assert np.allclose(y.ravel(), [-1.0, 1.0], atol=1e-6)

    def test_affine_applied(self):
        params = BnParams(gamma=as_tensor([2.0]), beta=as_tensor([5.0]),
                          epsilon=1e-12, mode=BnMode.L2)
        y, _ = bn_forward_train(two_point(), params)
        assert np.allclose(y.ravel(), [3.0, 7.0], atol=1e-5)

    def test_compensated_tracks_l2_on_gaussian(self):
        # Monte Carlo: per-feature output std agrees within 3% at |B|=1e4
        x = Rng(11).normal((10_000, 8))
        y_c, _ = bn_forward_train(x, BnParams.init(8, mode=BnMode.L1_COMPENSATED,
                                                   epsilon=1e-5, use_affine=False))
        y_2, _ = bn_forward_train(x, BnParams.init(8, mode=BnMode.L2,
                                                   epsilon=1e-5, use_affine=False))
        ratio = y_c.std(axis=0) / y_2.std(axis=0)
        assert np.all(np.abs(ratio - 1.0) < 0.03)

    def test_gamma_transfer_between_norms(self):
        # setting gamma_l2 = sqrt(pi/2) * gamma_l1 matches output stds on
        # Gaussian batches (the plain-L1 x_hat is sqrt(pi/2) larger)
        rng = Rng(5)
        x = rng.normal((10_000, 4))
        gamma_l1 = rng.uniform((4,), 0.5, 1.5)
        gamma_l2 = GAUSSIAN_STD_OVER_MAD * gamma_l1
        beta = np.zeros(4)
        y1, _ = bn_forward_train(x, BnParams(gamma_l1, beta, 1e-5, BnMode.L1))
        y2, _ = bn_forward_train(x, BnParams(gamma_l2, beta, 1e-5, BnMode.L2))
        assert np.all(np.abs(y1.std(axis=0) / y2.std(axis=0) - 1.0) < 0.03)

    def test_feature_mismatch(self):
        with pytest.raises(ShapeError):
            bn_forward_train(Rng(0).normal((4, 3)), BnParams.init(2))

    def test_degenerate_constant_batch_yields_zero(self):
        for mode in ALL_MODES:
            y, _ = bn_forward_train(np.full((6, 2), 4.0), BnParams.init(2, mode=mode))
            assert np.all(y == 0.0)

    @given(st.integers(0, 10_000), st.floats(1e-2, 1e3))
    @settings(max_examples=60, deadline=None)
    def test_scale_invariance(self, seed, c):
        # deviations are 1-homogeneous, so x_hat (and y, gamma unchanged) is
        # scale-free up to epsilon effects; epsilon kept tiny so those stay
        # below the tolerance even at the smallest c
        rng = Rng(seed)
        x = rng.normal((16, 3))
        gamma = rng.uniform((3,), 0.5, 1.5)
        beta = rng.uniform((3,), -0.5, 0.5)
        for mode in ALL_MODES:
            params = BnParams(gamma, beta, 1e-15, mode)
            y_base, _ = bn_forward_train(x, params)
            y_scaled, _ = bn_forward_train(c * x, params)
            assert np.allclose(y_base, y_scaled, atol=1e-7, rtol=1e-7)

    @given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
    @settings(max_examples=60, deadline=None)
    def test_deviations_one_homogeneous(self, seed, c):
        x = Rng(seed).normal((16, 3))
        for mode in ALL_MODES:
            dev_scaled = batch_deviation(c * x, mode)
            assert np.allclose(dev_scaled, c * batch_deviation(x, mode),
                               rtol=1e-12, atol=0)

    @pytest.mark.parametrize("pooled", [16, 256, 4096])
    @pytest.mark.parametrize("mode", ALL_MODES)
    def test_normalization_invariant(self, pooled, mode):
        x = Rng(pooled + 17).normal((pooled, 4), mu=1.5, sigma=2.0)
        params = BnParams.init(4, mode=mode, epsilon=1e-8, use_affine=False)
        x_hat, _ = bn_forward_train(x, params)
        assert np.abs(x_hat.mean(axis=0)).max() <= 1e-9
        assert np.abs(batch_deviation(x_hat, mode) - 1.0).max() <= 1e-6


class TestBackwardL2:
    def test_zero_upstream_gives_zero_gradients(self):
        params = BnParams.init(3)
        x = Rng(0).normal((8, 3))
        _, cache = bn_forward_train(x, params)
        g = bn_backward_l2(np.zeros_like(x), cache, params)
        assert np.all(g.d_input == 0) and np.all(g.d_gamma == 0) and np.all(g.d_beta == 0)

    def test_d_beta_is_pooled_sum(self):
        params = BnParams.init(3)
        rng = Rng(1)
        x = rng.normal((8, 3))
        d_y = rng.normal((8, 3))
        _, cache = bn_forward_train(x, params)
        g = bn_backward_l2(d_y, cache, params)
        assert np.allclose(g.d_beta, d_y.sum(axis=0), rtol=1e-14)
        assert np.allclose(g.d_gamma, (d_y * cache.x_hat).sum(axis=0), rtol=1e-13)

    def test_4d_pooling(self):
        params = BnParams.init(2)
        rng = Rng(2)
        x = rng.normal((4, 3, 3, 2))
        d_y = rng.normal((4, 3, 3, 2))
        _, cache = bn_forward_train(x, params)
        g = bn_backward_l2(d_y, cache, params)
        assert g.d_input.shape == x.shape
        assert np.allclose(g.d_beta, d_y.sum(axis=(0, 1, 2)))

    def test_mode_mismatch(self):
        params = BnParams.init(3, mode=BnMode.L1)
        x = Rng(0).normal((8, 3))
        _, cache = bn_forward_train(x, params)
        with pytest.raises(ModeError):
            bn_backward_l2(np.zeros_like(x), cache, params)

    def test_d_y_shape_check(self):
        params = BnParams.init(3)
        _, cache = bn_forward_train(Rng(0).normal((8, 3)), params)
        with pytest.raises(ShapeError):
            bn_backward_l2(np.zeros((4, 3)), cache, params)


class TestBackwardL1:
    def _setup(self, mode=BnMode.L1, shape=(16, 8), seed=3):
        rng = Rng(seed)
        x = rng.normal(shape)
        params = BnParams(gamma=rng.uniform((shape[-1],), 0.5, 1.5),
                          beta=rng.uniform((shape[-1],), -0.5, 0.5),
                          epsilon=1e-5, mode=mode)
        _, cache = bn_forward_train(x, params)
        d_y = rng.normal(shape)
        return x, params, cache, d_y

    def test_zero_upstream(self):
        x, params, cache, _ = self._setup()
        for backward in (bn_backward_l1_naive, bn_backward_l1_simplified):
            g = backward(np.zeros_like(x), cache, params)
            assert np.all(g.d_input == 0) and np.all(g.d_gamma == 0)

    @pytest.mark.parametrize("mode", [BnMode.L1, BnMode.L1_COMPENSATED])
    @pytest.mark.parametrize("shape", [(16, 8), (4, 3, 3, 2)])
    def test_naive_matches_simplified(self, mode, shape):
        x, params, cache, d_y = self._setup(mode=mode, shape=shape)
        g_n = bn_backward_l1_naive(d_y, cache, params)
        g_s = bn_backward_l1_simplified(d_y, cache, params)
        denom = np.maximum(np.abs(g_n.d_input), 1e-8)
        assert np.max(np.abs(g_n.d_input - g_s.d_input) / denom) <= 1e-10
        assert np.allclose(g_n.d_gamma, g_s.d_gamma, rtol=1e-12)
        assert np.allclose(g_n.d_beta, g_s.d_beta, rtol=1e-12)

    def test_constant_upstream_annihilated(self):
        # per-feature constant d_y: g - mean(g) = 0 and mean(g·x_hat) ≈ g·mean(x_hat) ≈ 0
        x, params, cache, _ = self._setup()
        d_y = np.broadcast_to(np.array([1.0, -2.0, 0.5, 3.0, 0.0, 1.5, -1.0, 2.0]),
                              x.shape).copy()
        g = bn_backward_l1_simplified(d_y, cache, params)
        assert np.abs(g.d_input).max() <= 1e-12

    def test_sign_identity(self):
        x, _, cache, _ = self._setup(seed=9)
        mu = x.mean(axis=0)
        assert np.array_equal(np.sign(cache.x_hat), np.sign(x - mu))

    def test_two_point_naive_matches_finite_differences(self):
        # smallest interesting batch, clear of the |x - mu| kink
        from l1bn.gradcheck import ProbeLoss, finite_diff, relative_errors

        x = as_tensor([1.0, 3.0], shape=(2, 1))
        params = BnParams.init(1, mode=BnMode.L1)
        probe = ProbeLoss(projection=as_tensor([0.7, -1.3], shape=(2, 1)))
        _, cache = bn_forward_train(x, params)
        analytic = bn_backward_l1_naive(probe.grad(), cache, params).d_input

        def f(v):
            y, _ = bn_forward_train(v, params)
            return probe(y)

        numeric = finite_diff(f, x, step=1e-6)
        assert relative_errors(analytic, numeric).max() <= 1e-5

    def test_d_gamma_same_form_as_l2(self):
        x, params, cache, d_y = self._setup()
        g = bn_backward_l1_naive(d_y, cache, params)
        assert np.allclose(g.d_gamma, (d_y * cache.x_hat).sum(axis=0), rtol=1e-13)

    def test_l2_cache_rejected(self):
        params = BnParams.init(3, mode=BnMode.L2)
        x = Rng(0).normal((8, 3))
        _, cache = bn_forward_train(x, params)
        for backward in (bn_backward_l1_naive, bn_backward_l1_simplified):
            with pytest.raises(ModeError):
                backward(np.zeros_like(x), cache, params)

    def test_affine_disabled_zero_param_grads(self):
        rng = Rng(4)
        x = rng.normal((12, 3))
        params = BnParams.init(3, mode=BnMode.L1, use_affine=False)
        _, cache = bn_forward_train(x, params)
        g = bn_backward_l1_simplified(rng.normal((12, 3)), cache, params)
        assert np.all(g.d_gamma == 0) and np.all(g.d_beta == 0)


class TestRunningStats:
    def test_single_update(self):
        state = BnState.init(1, momentum=0.9)
        new = update_running_stats(state, as_tensor([1.0]), as_tensor([1.0]))
        assert new.running_mu[0] == pytest.approx(0.1, abs=1e-15)
        assert new.updates == 1

    def test_frozen_at_momentum_one(self):
        state = BnState.init(2, momentum=1.0)
        new = update_running_stats(state, as_tensor([5.0, 5.0]), as_tensor([2.0, 2.0]))
        assert np.array_equal(new.running_mu, state.running_mu)
        assert np.array_equal(new.running_sigma, state.running_sigma)

    def test_geometric_convergence(self):
        # gap after k constant updates scales exactly like momentum^k
        alpha = 0.9
        state = BnState.init(1, momentum=alpha)
        mu_b, sigma_b = as_tensor([1.0]), as_tensor([2.0])
        gap0 = abs(state.running_mu[0] - 1.0)
        for k in range(1, 21):
            state = update_running_stats(state, mu_b, sigma_b)
            expected = gap0 * alpha ** k
            assert abs(state.running_mu[0] - 1.0) == pytest.approx(expected, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            update_running_stats(BnState.init(2), as_tensor([1.0]), as_tensor([1.0]))

    def test_momentum_validation(self):
        with pytest.raises(ValueError):
            BnState.init(1, momentum=1.5)


class TestInference:
    def _trained_state(self, params, feats=3, steps=50, seed=0, batch=64):
        rng = Rng(seed)
        state = BnState.init(feats, momentum=0.8)
        for _ in range(steps):
            x = rng.normal((batch, feats), mu=1.0, sigma=2.0)
            _, cache = bn_forward_train(x, params)
            state = update_running_stats(state, cache.mu_b, cache.sigma_b)
        return state

    def test_identity_map(self):
        params = BnParams.init(2, mode=BnMode.L1, epsilon=1e-13)
        state = BnState(running_mu=np.zeros(2), running_sigma=np.ones(2),
                        momentum=0.9, updates=1)
        x = Rng(0).normal((5, 2))
        assert np.allclose(bn_forward_infer(x, params, state), x, atol=1e-10)

    @pytest.mark.parametrize("mode", ALL_MODES)
    def test_fused_equals_unfused(self, mode):
        rng = Rng(8)
        params = BnParams(gamma=rng.uniform((3,), 0.5, 1.5),
                          beta=rng.uniform((3,), -0.5, 0.5),
                          epsilon=1e-5, mode=mode)
        state = self._trained_state(params)
        x = rng.normal((32, 3))
        fused = bn_forward_infer(x, params, state)
        if mode is BnMode.L2:
            denom = np.sqrt(state.running_sigma ** 2 + params.epsilon)
        else:
            denom = state.running_sigma + params.epsilon
        unfused = (x - state.running_mu) / denom * params.gamma + params.beta
        scale = max(np.abs(unfused).max(), 1e-12)
        assert np.abs(fused - unfused).max() / scale <= 1e-12

    def test_batch_of_one_matches_batched(self):
        params = BnParams.init(3, mode=BnMode.L1)
        state = self._trained_state(params)
        x = Rng(1).normal((10, 3))
        batched = bn_forward_infer(x, params, state)
        singles = np.vstack([bn_forward_infer(x[i:i + 1], params, state)
                             for i in range(10)])
        assert np.array_equal(batched, singles)

    def test_uninitialized_state_rejected(self):
        params = BnParams.init(3)
        with pytest.raises(StateError):
            bn_forward_infer(Rng(0).normal((4, 3)), params, BnState.init(3))

    @pytest.mark.parametrize("mode", ALL_MODES)
    def test_infer_close_to_train_mode_on_stationary_stream(self, mode):
        rng = Rng(42)
        params = BnParams.init(6, mode=mode)
        state = BnState.init(6, momentum=0.9)
        mu_true = rng.normal((6,), 0.0, 2.0)
        sigma_true = np.abs(rng.normal((6,), 1.5, 0.3))
        for _ in range(300):
            xb = mu_true + sigma_true * rng.normal((256, 6))
            _, cache = bn_forward_train(xb, params)
            state = update_running_stats(state, cache.mu_b, cache.sigma_b)
        x = mu_true + sigma_true * rng.normal((4096, 6))
        y_train, _ = bn_forward_train(x, params)
        y_infer = bn_forward_infer(x, params, state)
        assert np.std(y_infer - y_train) <= 0.05 * np.std(y_train)


class TestParams:
    def test_epsilon_positive(self):
        with pytest.raises(ValueError):
            BnParams.init(2, epsilon=0.0)

    def test_gamma_beta_length(self):
        with pytest.raises(ShapeError):
            BnParams(gamma=np.ones(3), beta=np.zeros(2))

    def test_default_l1_mode_strategy(self):
        assert default_l1_mode(use_affine=True) is BnMode.L1
        assert default_l1_mode(use_affine=False) is BnMode.L1_COMPENSATED
