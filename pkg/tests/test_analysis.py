import math
import random

import numpy as np
import pytest

from guardmem.analysis import (BroadState, LabeledStateDistribution, SubState, bayes_risk,
                               best_subset_bound, calibration_table, check_ranking,
                               conflict_mass, gap_curves, observed_gap_ratio, posterior_check,
                               predicted_gap_ratio, random_distribution, refinement_gain,
                               tight_case, top_b_states)


def single(mass, eta, parts=()):
    return BroadState("z", mass, eta, tuple(parts))


def test_conflict_mass_examples():
    assert conflict_mass(single(0.2, 0.5)) == pytest.approx(0.1)
    assert conflict_mass(single(0.5, 0.3)) == pytest.approx(0.15)
    assert conflict_mass(single(0.4, 0.0)) == 0.0
    assert conflict_mass(single(0.4, 1.0)) == 0.0


def test_bayes_risk_examples():
    assert bayes_risk(LabeledStateDistribution([single(1.0, 0.5)])) == 0.5
    pure = LabeledStateDistribution([BroadState("a", 0.3, 0.0), BroadState("b", 0.7, 1.0)])
    assert bayes_risk(pure) == 0.0
    two = LabeledStateDistribution([BroadState("a", 0.5, 0.2), BroadState("b", 0.5, 0.8)])
    assert bayes_risk(two) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        bayes_risk(two, "medium")


def test_refinement_gain_examples():
    z = tight_case().states[0]
    assert refinement_gain(z) == pytest.approx(0.5) == conflict_mass(z)
    same = single(1.0, 0.3, [SubState("u0", 0.4, 0.3), SubState("u1", 0.6, 0.3)])
    assert refinement_gain(same) == pytest.approx(0.0, abs=1e-15)


def test_distribution_validation():
    with pytest.raises(ValueError, match="sum"):
        LabeledStateDistribution([single(0.9, 0.5)])
    with pytest.raises(ValueError, match="mixture"):
        LabeledStateDistribution([single(1.0, 0.5, [SubState("u", 0.5, 0.1), SubState("v", 0.5, 0.1)])])
    with pytest.raises(ValueError, match="conditional"):
        LabeledStateDistribution([single(1.0, 0.1, [SubState("u", 0.5, 0.1)])])


def test_random_distributions_are_valid_and_bounded():
    rng = random.Random(0)
    for _ in range(500):
        dist = random_distribution(rng)
        assert bayes_risk(dist, "refined") <= bayes_risk(dist, "broad") + 1e-12
        for z in dist.states:
            assert -1e-12 <= refinement_gain(z) <= conflict_mass(z) + 1e-12
            if z.straddles() and z.mass > 0:
                assert refinement_gain(z) > 0


def test_top_b_matches_exhaustive():
    assert check_ranking(trials=100, seed=3).passed
    dist = LabeledStateDistribution([BroadState("a", 0.5, 0.1), BroadState("b", 0.3, 0.5),
                                     BroadState("c", 0.2, 0.5)])
    assert top_b_states(dist, 2) == ["b", "c"]
    assert best_subset_bound(dist, 2) == pytest.approx(0.25)
    assert top_b_states(dist, 0) == []


def test_gap_curve_examples():
    [row] = gap_curves([10], [1.0], 0.05)
    assert row.beta_bound == pytest.approx(0.05 ** (1 / 11), abs=1e-12)
    assert row.beta_bound == pytest.approx(0.7616, abs=1e-4)
    assert row.hoeffding_bound == pytest.approx(0.6130, abs=1e-4)
    [row] = gap_curves([4], [0.5], 0.05)
    assert row.hoeffding_bound < 0 < row.beta_bound < 1
    with pytest.raises(ValueError):
        gap_curves([0], [0.5])


def test_asymptotic_ratio():
    assert predicted_gap_ratio(0.5, 0.05) == pytest.approx(0.672, abs=1e-3)
    ratio = observed_gap_ratio(10_000, 0.5, 0.05)
    assert abs(ratio - predicted_gap_ratio()) / predicted_gap_ratio() <= 0.05


def test_calibration_table():
    assert calibration_table(0.55, 0.05, 5) == [(0, 5), (1, 7), (2, 9), (3, 11), (4, 13), (5, 15)]
    with pytest.raises(ValueError):
        calibration_table(1.0, 0.05)


def test_posterior_check_small():
    res = posterior_check(5, 0, 0.55, 0.05, draws=200_000, rng=np.random.default_rng(1))
    exact = 0.55 ** 6  # Pr(theta < tau) under Beta(6, 1)
    assert abs(res.prob_below_tau - exact) <= 4 * math.sqrt(exact * (1 - exact) / 200_000)
    assert res.mean_error == pytest.approx(1 / 7, abs=3e-3)
