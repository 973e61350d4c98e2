import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from distmerge.merge import (
    MergeStrategy,
    actor_merge,
    fedavg_params,
    l_weights,
    merge_avg,
    merge_sum,
    r_weights,
    softmax_weights,
    weighted_merge,
)
from distmerge.nn import OptimizerState, apply_gradient
from distmerge.ppo import AgentReport

finite = st.floats(-1e4, 1e4, allow_nan=False)
value_lists = st.lists(finite, min_size=1, max_size=16)
floors = st.floats(0.5, 64.0)


class TestBaselines:
    def test_sum(self):
        np.testing.assert_array_equal(merge_sum([np.array([1.0, 2.0]), np.array([3.0, 4.0])]), [4.0, 6.0])

    def test_sum_single_is_identity(self):
        g = np.array([0.1, -0.2, 0.3])
        np.testing.assert_array_equal(merge_sum([g]), g)

    def test_sum_of_copies(self):
        g = np.array([0.5, -1.5])
        np.testing.assert_allclose(merge_sum([g] * 5), 5 * g)

    def test_avg(self):
        np.testing.assert_array_equal(merge_avg([np.array([2.0]), np.array([4.0])]), [3.0])

    def test_avg_is_sum_over_k(self):
        rng = np.random.default_rng(0)
        grads = list(rng.normal(size=(7, 50)))
        np.testing.assert_array_equal(merge_avg(grads), merge_sum(grads) / 7)
        np.testing.assert_array_equal(merge_avg(grads[:1]), grads[0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            merge_sum([np.zeros(2), np.zeros(3)])
        with pytest.raises(ValueError):
            merge_avg([])


class TestRewardWeights:
    def test_hand_example(self):
        np.testing.assert_allclose(r_weights([1.0, 3.0], 4), [0.25, 1.25], atol=1e-15)

    def test_equal_rewards_fallback(self):
        np.testing.assert_allclose(r_weights([5, 5, 5], 3), [2 / 3] * 3, atol=1e-15)

    def test_negative_rewards_shifted(self):
        w = r_weights([-10.0, -4.0, -7.0], 3)
        assert w[0] == pytest.approx(1 / 3)
        np.testing.assert_allclose(w, [0 + 1 / 3, 6 / 9 + 1 / 3, 3 / 9 + 1 / 3])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            r_weights([1.0, math.nan], 2)
        with pytest.raises(ValueError):
            r_weights([1.0, 2.0], 0)

    @settings(max_examples=200, deadline=None)
    @given(rewards=value_lists)
    def test_sum_is_two_when_h_is_k(self, rewards):
        assert abs(r_weights(rewards, len(rewards)).sum() - 2.0) < 1e-9

    @settings(max_examples=200, deadline=None)
    @given(rewards=value_lists, h=floors)
    def test_sum_law_and_floor(self, rewards, h):
        w = r_weights(rewards, h)
        assert abs(w.sum() - (1 + len(rewards) / h)) < 1e-9
        assert w.min() >= 1 / h - 1e-12

    @settings(max_examples=200, deadline=None)
    @given(rewards=value_lists, h=floors)
    def test_monotone(self, rewards, h):
        w = r_weights(rewards, h)
        for i in range(len(rewards)):
            for j in range(len(rewards)):
                if rewards[i] > rewards[j] + 1e-6:
                    assert w[i] > w[j]

    def test_large_h_equal_rewards_reduces_to_average(self):
        rng = np.random.default_rng(1)
        grads = list(rng.normal(size=(8, 20)))
        w = r_weights([3.0] * 8, 1e15)
        np.testing.assert_allclose(weighted_merge(grads, w), merge_avg(grads), atol=1e-9)


class TestLossWeights:
    def test_equal_split(self):
        np.testing.assert_allclose(l_weights([1, 1], 2), [1.0, 1.0])

    def test_hand_example(self):
        np.testing.assert_allclose(l_weights([2, 6], 4), [0.5, 1.0], atol=1e-15)

    def test_all_zero_fallback(self):
        np.testing.assert_allclose(l_weights([0, 0, 0, 0], 8), [0.25 + 0.125] * 4)

    def test_magnitudes(self):
        np.testing.assert_allclose(l_weights([-2, 6], 4), l_weights([2, 6], 4))

    def test_shift_mode(self):
        np.testing.assert_allclose(l_weights([-2, 6], 4, mode="shift"), [0.25, 1.25])
        with pytest.raises(ValueError):
            l_weights([1, 2], 2, mode="square")

    @settings(max_examples=200, deadline=None)
    @given(losses=value_lists, h=floors)
    def test_sum_law_and_floor(self, losses, h):
        w = l_weights(losses, h)
        assert abs(w.sum() - (1 + len(losses) / h)) < 1e-9
        assert w.min() >= 1 / h - 1e-12

    @settings(max_examples=200, deadline=None)
    @given(losses=value_lists, h=floors)
    def test_monotone_in_magnitude(self, losses, h):
        w = l_weights(losses, h)
        mags = np.abs(losses)
        for i in range(len(losses)):
            for j in range(len(losses)):
                if mags[i] > mags[j] + 1e-6:
                    assert w[i] > w[j]


class TestSoftmaxWeights:
    def test_equal_values(self):
        np.testing.assert_allclose(softmax_weights([2.0] * 4, 8), [0.25 + 0.125] * 4)

    def test_hand_softmax(self):
        np.testing.assert_allclose(softmax_weights([0.0, math.log(3)], 1e300), [0.25, 0.75], atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(values=st.lists(st.floats(-50, 50), min_size=1, max_size=12), c=st.floats(-100, 100), h=floors)
    def test_shift_invariant(self, values, c, h):
        np.testing.assert_allclose(
            softmax_weights(values, h), softmax_weights([v + c for v in values], h), atol=1e-9
        )

    @settings(max_examples=100, deadline=None)
    @given(values=value_lists, h=floors)
    def test_floor(self, values, h):
        assert softmax_weights(values, h).min() >= 1 / h - 1e-12

    def test_rejects_inf(self):
        with pytest.raises(ValueError):
            softmax_weights([1.0, math.inf], 2)


class TestWeightedMerge:
    def test_hand_example(self):
        out = weighted_merge([np.array([1.0, 2.0]), np.array([3.0, 4.0])], [0.5, 1.0])
        np.testing.assert_allclose(out, [3.5, 5.0])

    def test_unit_weights_give_sum(self):
        grads = list(np.random.default_rng(2).normal(size=(6, 30)))
        np.testing.assert_allclose(weighted_merge(grads, np.ones(6)), merge_sum(grads), atol=1e-12)

    def test_uniform_weights_give_avg(self):
        grads = list(np.random.default_rng(3).normal(size=(6, 30)))
        np.testing.assert_allclose(weighted_merge(grads, np.full(6, 1 / 6)), merge_avg(grads), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            weighted_merge([np.zeros(2), np.zeros(2)], [1.0])


class TestActorMerge:
    def test_avg(self):
        out = actor_merge([np.array([1.0]), np.array([3.0])], "avg")
        np.testing.assert_array_equal(np.array(out), [[3.0], [5.0]])

    def test_sum(self):
        out = actor_merge([np.array([1.0]), np.array([3.0])], "sum")
        np.testing.assert_array_equal(np.array(out), [[5.0], [7.0]])

    @pytest.mark.parametrize("mode", ["avg", "sum"])
    def test_single_agent_doubles(self, mode):
        g = np.array([0.25, -4.0])
        np.testing.assert_array_equal(actor_merge([g], mode)[0], 2 * g)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            actor_merge([np.zeros(1)], "max")


class TestFedAvg:
    def test_mean(self):
        np.testing.assert_array_equal(fedavg_params([np.array([1.0]), np.array([3.0])]), [2.0])

    def test_idempotent(self):
        p = np.array([0.1, 0.2, 0.3])
        np.testing.assert_allclose(fedavg_params([p, p, p]), p, rtol=1e-15)

    def test_one_sgd_step_equals_averaged_gradient(self):
        rng = np.random.default_rng(4)
        p0 = rng.normal(size=40)
        grads = list(rng.normal(size=(8, 40)))
        opt = OptimizerState.create("sgd", 0.05, 40)
        local = [apply_gradient(p0, g, opt)[0] for g in grads]
        np.testing.assert_allclose(fedavg_params(local), p0 - 0.05 * merge_avg(grads), atol=1e-9, rtol=0)


def _reports(rng, k, n=10):
    return [AgentReport(rng.normal(size=n), float(rng.normal() * 50), float(rng.normal()), 100) for _ in range(k)]


class TestStrategy:
    def test_unknown(self):
        with pytest.raises(ValueError):
            MergeStrategy("median")

    def test_default_h_is_k(self):
        reports = _reports(np.random.default_rng(0), 5)
        w = MergeStrategy("r_weighted").merge(reports).weights
        assert abs(w.sum() - 2.0) < 1e-9

    @pytest.mark.parametrize("kind", ["baseline_sum", "baseline_avg", "r_weighted", "l_weighted",
                                      "r_softmax", "l_softmax", "actor_sum", "actor_avg"])
    def test_permutation_equivariance(self, kind):
        rng = np.random.default_rng(5)
        reports = _reports(rng, 6)
        perm = rng.permutation(6)
        strategy = MergeStrategy(kind)
        a = strategy.merge(reports)
        b = strategy.merge([reports[i] for i in perm])
        if a.global_grad is not None:
            np.testing.assert_allclose(a.global_grad, b.global_grad, atol=1e-12)
        else:
            np.testing.assert_allclose(np.array(a.per_agent)[perm], np.array(b.per_agent), atol=1e-12)
        if a.weights is not None:
            np.testing.assert_allclose(a.weights[perm], b.weights, atol=1e-12)

    def test_fedavg_requires_params(self):
        with pytest.raises(ValueError):
            MergeStrategy("fedavg").merge(_reports(np.random.default_rng(0), 2))

    @settings(max_examples=100, deadline=None)
    @given(
        rewards=st.lists(finite, min_size=2, max_size=10),
        kind=st.sampled_from(["r_weighted", "l_weighted", "r_softmax", "l_softmax"]),
        h=floors,
    )
    def test_floor_all_weighted_kinds(self, rewards, kind, h):
        losses = list(reversed(rewards))
        w = MergeStrategy(kind, h).weights(rewards, losses)
        assume(w is not None)
        assert w.min() >= 1 / h - 1e-12
