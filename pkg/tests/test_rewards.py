"""Reward and regularizer tests against brute-force oracles and invariants."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsumrl import reinforce as rl
from vsumrl.errors import DegenerateInputError, SaturationError


def brute_force_rep(x, selected):
    total = 0.0
    for t in range(len(x)):
        total += min(np.sqrt(((x[t] - x[i]) ** 2).sum()) for i in selected)
    return np.exp(-total / len(x))


def brute_force_div(x, selected):
    total = 0.0
    for t in selected:
        for i in selected:
            if i == t:
                continue
            cos = float(x[t] @ x[i] / (np.linalg.norm(x[t]) * np.linalg.norm(x[i])))
            total += 1.0 - cos
    m = len(selected)
    return total / (m * (m - 1))


class TestRepresentativeness:
    def test_all_frames_selected_gives_one(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        assert rl.representativeness_reward(x, range(5)) == pytest.approx(1.0, abs=0)

    def test_identical_frames_single_medoid(self):
        x = np.ones((2, 4))
        assert rl.representativeness_reward(x, [0]) == pytest.approx(1.0, abs=0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 3))
        got = rl.representativeness_reward(x, [0, 2])
        assert got == pytest.approx(brute_force_rep(x, [0, 2]), abs=1e-12)

    def test_empty_selection_rejected(self):
        with pytest.raises(DegenerateInputError):
            rl.representativeness_reward(np.ones((3, 2)), [])

    def test_monotone_under_selection_growth(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(8, 4))
        for _ in range(20):
            sel = sorted(rng.choice(8, size=3, replace=False))
            extra = int(rng.integers(8))
            grown = sorted(set(sel) | {extra})
            assert rl.representativeness_reward(x, grown) >= \
                rl.representativeness_reward(x, sel) - 1e-15


class TestDiversity:
    def test_identical_pair_is_zero(self):
        x = np.vstack([np.ones(3), np.ones(3)])
        assert rl.diversity_reward(x, [0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pair_is_one(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert rl.diversity_reward(x, [0, 1]) == pytest.approx(1.0, abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 4))
        got = rl.diversity_reward(x, [1, 3, 5])
        assert got == pytest.approx(brute_force_div(x, [1, 3, 5]), abs=1e-12)

    def test_zero_norm_vector_rejected(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(DegenerateInputError):
            rl.diversity_reward(x, [0, 1])

    def test_single_selection_rejected(self):
        with pytest.raises(DegenerateInputError):
            rl.diversity_reward(np.ones((3, 2)), [1])

    @given(st.integers(0, 2 ** 30))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(7, 3)) + 0.1
        sel = sorted(rng.choice(7, size=3, replace=False))
        shuffled = list(sel)
        rng.shuffle(shuffled)
        assert rl.diversity_reward(x, sel) == pytest.approx(
            rl.diversity_reward(x, shuffled), abs=1e-12)

    @given(st.integers(0, 2 ** 30), st.floats(0.1, 50.0))
    @settings(max_examples=30, deadline=None)
    def test_positive_scaling_invariance(self, seed, factor):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(6, 4)) + 0.05
        sel = [0, 2, 4]
        assert rl.diversity_reward(x, sel) == pytest.approx(
            rl.diversity_reward(factor * x, sel), abs=1e-9)


class TestEpisodeReward:
    def test_bounds_and_total(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            x = rng.normal(size=(6, 3)) + 0.01
            actions = (rng.random(6) < 0.6).astype(int)
            if actions.sum() < 2:
                actions[[0, 1]] = 1
            r = rl.episode_reward(x, actions)
            assert 0.0 < r.representativeness <= 1.0
            assert 0.0 <= r.diversity <= 2.0
            assert r.total == r.representativeness + r.diversity

    def test_empty_selection_flagged_zero(self):
        r = rl.episode_reward(np.ones((3, 2)), np.zeros(3, dtype=int))
        assert r.total == 0.0
        assert r.flag == "empty-selection"

    def test_single_selection_diversity_zero(self):
        x = np.random.default_rng(5).normal(size=(4, 2))
        actions = np.array([0, 1, 0, 0])
        r = rl.episode_reward(x, actions)
        assert r.diversity == 0.0
        assert r.flag == "single-selection"

    def test_reward_toggles(self):
        x = np.random.default_rng(6).normal(size=(4, 2)) + 0.1
        actions = np.array([1, 0, 1, 0])
        both = rl.episode_reward(x, actions)
        rep_only = rl.episode_reward(x, actions, use_div=False)
        div_only = rl.episode_reward(x, actions, use_rep=False)
        assert rep_only.total == both.representativeness
        assert div_only.total == both.diversity


class TestRegularizers:
    def test_proportion_zero_at_target(self):
        assert rl.proportion_loss(np.full(10, 0.4), 0.4) == 0.0

    def test_proportion_all_ones(self):
        assert rl.proportion_loss(np.ones(8), 0.5) == pytest.approx(0.25, abs=1e-15)

    def test_proportion_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        p = rng.random(32)
        assert rl.proportion_loss(p, 0.3) == pytest.approx(
            (p.mean() - 0.3) ** 2, abs=1e-15)

    def test_binary_at_extremes(self):
        assert rl.binary_loss(np.array([0.0, 1.0, 1.0, 0.0])) == pytest.approx(2.0)

    def test_binary_at_three_quarters(self):
        assert rl.binary_loss(np.full(6, 0.75)) == pytest.approx(4.0)

    def test_binary_matches_direct_formula(self):
        rng = np.random.default_rng(8)
        p = rng.random(17)
        assert rl.binary_loss(p) == pytest.approx(1.0 / np.abs(p - 0.5).mean(), rel=1e-12)

    def test_binary_saturation(self):
        with pytest.raises(SaturationError):
            rl.binary_loss(np.full(4, 0.5))
        assert rl.regularizer_loss(np.full(4, 0.5), 0.5, 1.0) == rl.BINARY_LOSS_CAP


class TestLosses:
    def test_unsupervised_reward_only(self):
        cfg = rl.TrainConfig(binary_weight=0.0, target_proportion=0.5)
        p = np.full(6, 0.5)
        rewards = [rl.RewardBreakdown(0.6, 0.4, 1.0)]
        # regularizers vanish (proportion at target, binary capped away by weight 0)
        assert rl.unsupervised_loss(p, rewards, cfg) == pytest.approx(-1.0)

    def test_unsupervised_component_sum(self):
        cfg = rl.TrainConfig(binary_weight=0.01, target_proportion=0.5)
        p = np.array([0.1, 0.9, 0.2, 0.8])
        rewards = [rl.RewardBreakdown(0.5, 0.3, 0.8), rl.RewardBreakdown(0.4, 0.4, 0.8)]
        want = (p.mean() - 0.5) ** 2 + 0.01 / np.abs(p - 0.5).mean() - 0.8
        assert rl.unsupervised_loss(p, rewards, cfg) == pytest.approx(want, rel=1e-12)

    def test_zero_reward_gives_pure_regularizer(self):
        cfg = rl.TrainConfig(binary_weight=0.01)
        p = np.array([0.2, 0.7, 0.4])
        assert rl.unsupervised_loss(p, [rl.RewardBreakdown(0, 0, 0)], cfg) == pytest.approx(
            rl.regularizer_loss(p, cfg.target_proportion, cfg.binary_weight))

    def test_prediction_loss_cases(self):
        assert rl.prediction_loss(np.array([0.3, 0.7]), np.array([0.3, 0.7])) == 0.0
        assert rl.prediction_loss(np.ones(5), np.zeros(5)) == 1.0
        rng = np.random.default_rng(9)
        p, t = rng.random(12), rng.random(12)
        assert rl.prediction_loss(p, t) == pytest.approx(((p - t) ** 2).mean(), rel=1e-12)

    def test_supervised_adds_prediction(self):
        cfg = rl.TrainConfig(paradigm="supervised")
        p = np.array([0.2, 0.8, 0.6])
        t = np.array([0.0, 1.0, 1.0])
        rewards = [rl.RewardBreakdown(0.5, 0.5, 1.0)]
        assert rl.supervised_loss(p, t, rewards, cfg) == pytest.approx(
            rl.prediction_loss(p, t) + rl.unsupervised_loss(p, rewards, cfg), rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rl.prediction_loss(np.zeros(3), np.zeros(4))


class TestSampling:
    def test_near_one_probabilities(self):
        p = np.full(50, 1.0 - 1e-6)
        assert rl.sample_actions(p, 0).sum() == 50

    def test_near_zero_probabilities(self):
        p = np.full(50, 1e-6)
        assert rl.sample_actions(p, 0).sum() == 0

    def test_reproducible_per_seed(self):
        p = np.random.default_rng(10).random(20)
        a = rl.sample_actions(p, 42)
        b = rl.sample_actions(p, 42)
        np.testing.assert_array_equal(a, b)

    def test_empirical_frequency(self):
        rng = np.random.default_rng(11)
        p = np.full(10000, 0.3)
        freq = rl.sample_actions(p, rng).mean()
        assert abs(freq - 0.3) < 0.02


class TestBaseline:
    def test_update_rule(self):
        b = rl.Baseline(decay=0.9)
        b.update(1.0)
        assert b.value == pytest.approx(0.1)
        b.update(1.0)
        assert b.value == pytest.approx(0.19)
        assert b.count == 2
