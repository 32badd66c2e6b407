import numpy as np
import pytest

from conftest import central_difference, max_rel_error
from iceberg.balancing import (
    RCE_LOG_CLAMP,
    BalancingMode,
    ClassCounts,
    adjust_logits,
    count_classes,
    double_balanced_unsup_loss,
    reverse_cross_entropy,
    supervised_loss,
)
from iceberg.nn import softmax, softmax_cross_entropy

MODES = list(BalancingMode)


def counts(*values, source="labeled"):
    return ClassCounts(np.array(values, dtype=float), source)


class TestCounting:
    def test_histogram(self):
        assert count_classes([0, 0, 1, 2], [0, 1, 2, 3], 3).counts.tolist() == [2, 1, 1]

    def test_empty_index(self):
        assert count_classes([0, 1], [], 3).counts.tolist() == [0, 0, 0]

    def test_mode_aliases(self):
        assert BalancingMode.parse("reweight") is BalancingMode.REWEIGHT
        assert BalancingMode.parse("BS") is BalancingMode.BALANCED_SOFTMAX
        with pytest.raises(ValueError):
            BalancingMode.parse("focal")


class TestAdjustLogits:
    def test_uniform_counts_leave_softmax(self):
        z = np.random.default_rng(0).standard_normal((4, 3))
        for mu in (0.5, 1.0, 3.0):
            np.testing.assert_allclose(softmax(adjust_logits(z, counts(10, 10, 10), mu)), softmax(z), atol=1e-12)

    def test_prior_shift_hand_oracle(self):
        p = softmax(adjust_logits(np.zeros((1, 2)), counts(90, 10), 1.0))
        np.testing.assert_allclose(p, [[0.9, 0.1]], atol=1e-12)

    def test_zero_counts_floored(self):
        q = adjust_logits(np.zeros((1, 3)), counts(0, 1, np.e), 1.0)
        np.testing.assert_allclose(q, [[0.0, 0.0, 1.0]], atol=1e-12)

    def test_non_finite_mu(self):
        with pytest.raises(ValueError, match="mu"):
            adjust_logits(np.zeros((1, 2)), counts(1, 1), np.nan)


class TestSupervisedLoss:
    def test_balanced_counts_modes_agree(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal((9, 3))
        t = rng.integers(0, 3, 9)
        results = [supervised_loss(m, z, t, counts(7, 7, 7)) for m in MODES]
        for loss, grad in results[1:]:
            assert loss == pytest.approx(results[0][0], abs=1e-9)
            np.testing.assert_allclose(grad, results[0][1], rtol=0, atol=1e-9)

    def test_uniform_logits_erm_and_reweight(self):
        for mode in (BalancingMode.ERM, BalancingMode.REWEIGHT):
            loss, _ = supervised_loss(mode, np.zeros((2, 2)), [0, 1], counts(20, 2))
            assert loss == pytest.approx(np.log(2), abs=1e-12)

    def test_balanced_softmax_penalizes_minority_target(self):
        erm, _ = supervised_loss("erm", np.zeros((1, 2)), [1], counts(20, 2))
        bs, _ = supervised_loss("bs", np.zeros((1, 2)), [1], counts(20, 2))
        assert erm == pytest.approx(np.log(2), abs=1e-12)
        assert bs == pytest.approx(np.log(11), abs=1e-12)

    def test_reweight_weights_mean_one(self):
        z = np.random.default_rng(2).standard_normal((4, 2))
        t = np.array([0, 0, 0, 1])
        loss, _ = supervised_loss("rw", z, t, counts(3, 1))
        w = np.array([1 / 3, 1 / 3, 1 / 3, 1.0])
        w *= 4 / w.sum()
        assert loss == pytest.approx(softmax_cross_entropy(z, t, w)[0], abs=1e-12)

    def test_reweight_rejects_missing_class(self):
        with pytest.raises(ValueError, match="zero labeled"):
            supervised_loss("rw", np.zeros((1, 2)), [1], counts(5, 0))

    @pytest.mark.parametrize("mode", MODES)
    @pytest.mark.parametrize("seed", range(4))
    def test_finite_difference(self, mode, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((6, 4))
        t = rng.integers(0, 4, 6)
        c = counts(*rng.integers(1, 30, 4))
        _, grad = supervised_loss(mode, z, t, c)
        numeric = central_difference(lambda: supervised_loss(mode, z, t, c)[0], z)
        assert max_rel_error(grad, numeric) < 1e-5


class TestUnsupervisedLoss:
    def test_inert_modifications(self):
        z = np.random.default_rng(3).standard_normal((5, 3))
        y = np.array([0, 1, 2, 1, 0])
        loss, grad = double_balanced_unsup_loss(z, y, counts(4, 4, 4, source="pseudo"), mu=1, beta=0, lam=0.7)
        ce, ce_grad = softmax_cross_entropy(z, y)
        assert loss == pytest.approx(0.7 * ce, abs=1e-12)
        np.testing.assert_allclose(grad, 0.7 * ce_grad, atol=1e-12)

    def test_rce_hand_oracle(self):
        z = np.log(np.array([[0.8, 0.2]]))
        loss, _ = double_balanced_unsup_loss(z, [0], counts(1, 1), mu=1, beta=1, lam=1, log_clamp=-4)
        assert loss == pytest.approx(-np.log(0.8) + 0.8, abs=1e-12)

    def test_one_hot_prediction_has_zero_rce(self):
        rce, grad = reverse_cross_entropy(np.array([[800.0, 0.0, 0.0]]), [0])
        assert rce == 0.0 and np.all(grad == 0)

    def test_rce_bounds(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            z = rng.standard_normal((1, 5)) * rng.uniform(0.1, 20)
            rce, _ = reverse_cross_entropy(z, rng.integers(0, 5, 1))
            assert 0.0 <= rce <= -RCE_LOG_CLAMP

    def test_empty_batch_is_skipped(self):
        loss, grad = double_balanced_unsup_loss(np.zeros((0, 3)), [], counts(1, 2, 3))
        assert loss == 0.0 and grad.shape == (0, 3)

    @pytest.mark.parametrize("k", [0.2, 5.0, 1e4])
    def test_count_scale_invariance(self, k):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((8, 3))
        y = rng.integers(0, 3, 8)
        pi = np.array([30.0, 5.0, 11.0])
        a = double_balanced_unsup_loss(z, y, ClassCounts(pi), mu=1.3, beta=0.5, lam=1)
        b = double_balanced_unsup_loss(z, y, ClassCounts(pi * k), mu=1.3, beta=0.5, lam=1)
        assert a[0] == pytest.approx(b[0], abs=1e-9)
        np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((7, 4))
        y = rng.integers(0, 4, 7)
        pi = counts(*rng.integers(0, 40, 4), source="pseudo")
        args = dict(mu=float(rng.uniform(0.5, 2)), beta=float(rng.uniform(0, 1)), lam=float(rng.uniform(0.5, 2)))
        _, grad = double_balanced_unsup_loss(z, y, pi, **args)
        numeric = central_difference(lambda: double_balanced_unsup_loss(z, y, pi, **args)[0], z)
        assert max_rel_error(grad, numeric) < 1e-5

    def test_reverse_cross_entropy_finite_difference(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((5, 3))
        y = rng.integers(0, 3, 5)
        _, grad = reverse_cross_entropy(z, y)
        numeric = central_difference(lambda: reverse_cross_entropy(z, y)[0], z)
        assert max_rel_error(grad, numeric) < 1e-5
