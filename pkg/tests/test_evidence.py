import math
import random

import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from guardmem.evidence import (EmptyEvidenceError, EvidenceCounts, GatingConfig,
                               beta_lower_quantile, confidence, empirical_accuracy, gate,
                               hoeffding_lower, minimal_support, regularized_incomplete_beta)
from guardmem.labels import ALLOW, REFUSE


@pytest.mark.parametrize("s,c,expected", [
    (0, 0, 0.05),
    (4, 0, 0.05 ** (1 / 5)),
    (5, 0, 0.05 ** (1 / 6)),
])
def test_quantile_closed_form(s, c, expected):
    assert beta_lower_quantile(s, c, 0.05) == pytest.approx(expected, abs=1e-12)


def test_seven_one_passes():
    q = beta_lower_quantile(7, 1, 0.05)
    # CDF of Beta(8, 2) is 9x^8 - 8x^9
    assert 9 * q ** 8 - 8 * q ** 9 == pytest.approx(0.05, abs=1e-12)
    assert q == pytest.approx(0.571, abs=5e-4)
    assert q >= 0.55


def test_confidence_examples():
    assert confidence(EvidenceCounts(0, 0), 0.05) == pytest.approx(0.05)
    assert confidence(EvidenceCounts(6, 1), 0.05) < 0.55
    assert confidence(EvidenceCounts(15, 5), 0.05) >= 0.55
    assert f"{confidence(EvidenceCounts(5, 0), 0.05):.4f}" == "0.6070"


def test_quantile_matches_scipy():
    rng = random.Random(3)
    for _ in range(300):
        s, c = rng.randint(0, 200), rng.randint(0, 200)
        delta = rng.uniform(0.001, 0.5)
        assert beta_lower_quantile(s, c, delta) == pytest.approx(
            stats.beta.ppf(delta, 1 + s, 1 + c), abs=1e-9)


def test_incomplete_beta_matches_scipy():
    rng = random.Random(4)
    for _ in range(300):
        a, b, x = rng.uniform(0.5, 80), rng.uniform(0.5, 80), rng.random()
        assert regularized_incomplete_beta(x, a, b) == pytest.approx(
            stats.beta.cdf(x, a, b), abs=1e-11)


def test_incomplete_beta_edges():
    assert regularized_incomplete_beta(0.0, 2, 3) == 0.0
    assert regularized_incomplete_beta(1.0, 2, 3) == 1.0


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_quantile_rejects_bad_delta(bad):
    with pytest.raises(ValueError):
        beta_lower_quantile(1, 1, bad)


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        EvidenceCounts(-1, 0)
    with pytest.raises(ValueError):
        beta_lower_quantile(-1, 0, 0.05)


def test_gate_examples():
    cfg = GatingConfig()
    assert gate(REFUSE, 0.6070, cfg)
    assert not gate(ALLOW, 0.5493, cfg)
    assert gate(ALLOW, 0.55, cfg)


def test_gate_label_specific_thresholds():
    cfg = GatingConfig(tau_refuse=0.5, tau_allow=0.7)
    assert gate(REFUSE, 0.6, cfg)
    assert not gate(ALLOW, 0.6, cfg)


def test_gating_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        GatingConfig(delta=0.0)
    with pytest.raises(ValueError):
        GatingConfig(tau_allow=1.2)
    cfg = GatingConfig(0.1, 0.6, 0.7)
    assert GatingConfig.from_dict(cfg.to_dict()) == cfg


def test_empirical_accuracy():
    assert empirical_accuracy(EvidenceCounts(1, 0)) == 1.0
    assert empirical_accuracy(EvidenceCounts(1, 1)) == 0.5
    assert empirical_accuracy(EvidenceCounts(9, 2)) == pytest.approx(9 / 11)
    with pytest.raises(EmptyEvidenceError):
        empirical_accuracy(EvidenceCounts(0, 0))


def test_hoeffding():
    assert hoeffding_lower(5, 0, 0.05) == pytest.approx(1 - math.sqrt(math.log(20) / 10))
    assert hoeffding_lower(5, 0, 0.05) == pytest.approx(0.4527, abs=1e-4)
    assert hoeffding_lower(0, 5, 0.05) == pytest.approx(-0.5473, abs=1e-4)
    assert hoeffding_lower(2, 2, 0.05) == pytest.approx(-0.1119, abs=1e-4)
    with pytest.raises(EmptyEvidenceError):
        hoeffding_lower(0, 0, 0.05)


def test_minimal_support_table():
    assert [minimal_support(0.55, 0.05, c) for c in range(6)] == [5, 7, 9, 11, 13, 15]


def test_minimal_support_below_delta():
    assert minimal_support(0.05 - 1e-9, 0.05, 0) == 0


def test_evidence_record_and_add():
    ev = EvidenceCounts()
    ev.record(True)
    ev.record(False)
    ev.record(True)
    assert (ev.support, ev.contradiction, ev.total) == (2, 1, 3)
    assert ev + EvidenceCounts(1, 4) == EvidenceCounts(3, 5)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 60), st.integers(0, 60), st.sampled_from([0.01, 0.05, 0.1, 0.3]))
def test_confidence_monotone(s, c, delta):
    base = confidence(EvidenceCounts(s, c), delta)
    assert confidence(EvidenceCounts(s + 1, c), delta) >= base
    assert confidence(EvidenceCounts(s, c + 1), delta) <= base
    assert 0.0 <= base <= 1.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 300), st.integers(0, 300), st.floats(0.001, 0.999))
def test_quantile_inverts_cdf(s, c, delta):
    q = beta_lower_quantile(s, c, delta)
    assert abs(regularized_incomplete_beta(q, 1 + s, 1 + c) - delta) <= 1e-8


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 80), st.integers(0, 80))
def test_bounds_sit_below_point_estimates(s, c):
    q = beta_lower_quantile(s, c, 0.05)
    assert q < (s + 1) / (s + c + 2)
    assert hoeffding_lower(s, c, 0.05) < s / (s + c)
