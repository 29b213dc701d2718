"""Tests for the planted-disparity generator and its Bayes-accuracy oracle."""

import math

import numpy as np
import pytest

from fairldp.distribution import delta_prime, estimate_distribution
from fairldp.evaluation import evaluate, train_logistic
from fairldp.synthetic import PlantedConfig, bayes_accuracy, generate_planted

# analytic optimum for the default generator, frozen from the closed form
DEFAULT_BAYES = 0.8060371803996633


class TestPlantedConfig:
    def test_defaults(self):
        cfg = PlantedConfig()
        assert cfg.k == 2
        assert cfg.planted_spread == pytest.approx(0.4)

    def test_validation(self):
        with pytest.raises(ValueError):
            PlantedConfig(group_probs=(0.5, 0.5), pos_rates=(0.3,))
        with pytest.raises(ValueError):
            PlantedConfig(group_probs=(0.7, 0.7), pos_rates=(0.3, 0.7))
        with pytest.raises(ValueError):
            PlantedConfig(pos_rates=(0.0, 0.7))
        with pytest.raises(ValueError):
            PlantedConfig(separation=-1.0)


class TestGeneratePlanted:
    def test_deterministic_per_seed(self):
        a = generate_planted(500, seed=3)
        b = generate_planted(500, seed=3)
        c = generate_planted(500, seed=4)
        assert np.array_equal(a.sensitive, b.sensitive)
        assert np.array_equal(a.feature_columns["x1"], b.feature_columns["x1"])
        assert not np.array_equal(a.feature_columns["x1"], c.feature_columns["x1"])

    def test_marginals_match_parameters(self):
        ds = generate_planted(20_000, seed=7)
        dist = estimate_distribution(ds)
        assert dist.group_probs[0] == pytest.approx(0.5, abs=0.02)
        assert dist.pos_rates[0] == pytest.approx(0.3, abs=0.02)
        assert dist.pos_rates[1] == pytest.approx(0.7, abs=0.02)
        assert delta_prime(dist) == pytest.approx(0.4, abs=0.03)

    def test_signal_lives_in_first_feature(self):
        ds = generate_planted(20_000, seed=8)
        x1 = ds.feature_columns["x1"]
        x2 = ds.feature_columns["x2"]
        pos = ds.labels == 1
        assert x1[pos].mean() - x1[~pos].mean() == pytest.approx(1.5, abs=0.05)
        assert abs(x2[pos].mean() - x2[~pos].mean()) <= 0.05

    def test_three_group_shape(self):
        cfg = PlantedConfig(
            group_probs=(0.5, 0.3, 0.2), pos_rates=(0.2, 0.5, 0.8)
        )
        ds = generate_planted(1000, cfg, seed=9)
        assert ds.k == 3
        assert set(np.unique(ds.sensitive)) == {0, 1, 2}

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            generate_planted(0)


class TestBayesAccuracy:
    def test_default_value(self):
        assert bayes_accuracy(PlantedConfig()) == pytest.approx(
            DEFAULT_BAYES, abs=1e-12
        )

    def test_monte_carlo_agreement(self):
        cfg = PlantedConfig()
        rng = np.random.default_rng(5)
        n = 400_000
        groups = rng.choice(2, size=n, p=cfg.group_probs)
        rates = np.array(cfg.pos_rates)
        labels = (rng.random(n) < rates[groups]).astype(int)
        z = rng.standard_normal(n) + (labels - 0.5) * cfg.separation
        taus = np.log((1.0 - rates) / rates) / cfg.separation
        preds = (z > taus[groups]).astype(int)
        acc = (preds == labels).mean()
        sigma = math.sqrt(acc * (1.0 - acc) / n)
        assert abs(acc - bayes_accuracy(cfg)) <= 3.0 * sigma

    def test_separation_monotone(self):
        accs = [
            bayes_accuracy(PlantedConfig(separation=s)) for s in (0.5, 1.0, 2.0, 4.0)
        ]
        assert all(a < b for a, b in zip(accs, accs[1:]))
        assert accs[-1] < 1.0

    def test_logistic_reaches_bayes(self):
        ds = generate_planted(40_000, seed=11)
        idx = np.arange(40_000)
        np.random.default_rng(3).shuffle(idx)
        train, test = ds.subset(idx[:30_000]), ds.subset(idx[30_000:])
        report = evaluate(train_logistic(train), test)
        assert abs(report.accuracy - DEFAULT_BAYES) <= 0.02
        # the planted rate spread shows up as a large parity gap
        assert report.sp_gap > 0.4
