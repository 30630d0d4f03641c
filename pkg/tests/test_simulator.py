import random

import pytest

from guardmem.guardrail import GuardResponse, ProviderUnavailableError, StubGuardModel, get_method
from guardmem.induction import StubInducer
from guardmem.labels import ALLOW, REFUSE
from guardmem.memory import CaseRecord, MemoryState, Report, load_snapshot
from guardmem.retrieval import HashingEmbedder
from guardmem.simulator import (CSV_HEADER, DeploymentConfig, Providers, SimulationState,
                                amortized_cost, apply_noise, build_split,
                                classification_metrics, metrics_csv,
                                run_day, run_experiment, run_seeds, write_outputs)
from guardmem.world import SyntheticWorld, WorldParams

WORLD = SyntheticWorld()
SMALL = dict(days=3, stream_per_day=30, heldout_size=80)


class WrongOn:
    """Oracle guard that errs on a chosen set of scenarios."""

    def __init__(self, world, wrong):
        self.world, self.wrong = world, set(wrong)

    def decide(self, scenario, prompt=None):
        case = self.cases[scenario]
        label = self.world.label_case(case)
        return GuardResponse(label.flipped() if case.case_id in self.wrong else label)


def day_state(cfg, guard):
    providers = Providers(guard, StubInducer(), HashingEmbedder())
    return SimulationState(cfg, get_method(cfg.method), WORLD, providers, MemoryState(),
                           noise_rng=random.Random(f"noise:{cfg.seed}"))


def day_cases(n=50):
    return build_split(WORLD, DeploymentConfig(days=1, stream_per_day=n, heldout_size=0)).stream[0]


@pytest.mark.parametrize("wrong,rho,flipped", [(0, 0.0, False), (3, 0.0, False), (3, 1.0, True)])
def test_run_day_reports_only_errors(wrong, rho, flipped):
    cases = day_cases()
    guard = WrongOn(WORLD, [c.case_id for c in cases[:wrong]])
    guard.cases = {c.scenario_text: c for c in cases}
    cfg = DeploymentConfig(method="pure", noise_rho=rho)
    decisions, feedback = run_day(day_state(cfg, guard), 1, cases)
    assert len(decisions) == 50
    assert len(feedback) == wrong
    for report, _ in feedback:
        truth = WORLD.label_case(report.case)
        assert report.corrected_label == (truth.flipped() if flipped else truth)
        assert report.flipped == flipped


def test_noise_rate():
    case = CaseRecord("c", "privacy", "request privacy: a=b", "privacy a=b", "g", {"a": "b"})
    reports = [Report(case, ALLOW, REFUSE, 1)] * 100_000
    out = apply_noise(reports, 0.2, random.Random(0))
    rate = sum(r.flipped for r in out) / len(out)
    assert abs(rate - 0.2) <= 0.004
    assert all(r.corrected_label == ALLOW for r in out if r.flipped)
    assert apply_noise(reports[:10], 0.0, random.Random(0)) == reports[:10]
    with pytest.raises(ValueError):
        apply_noise(reports, 1.5, random.Random(0))


def test_metrics_examples():
    truth = [ALLOW, REFUSE] * 25
    m = classification_metrics(truth, truth)
    assert m["accuracy"] == 1.0 and m["macro_f1"] == 1.0
    m = classification_metrics(truth, [REFUSE] * 50)
    assert m["accuracy"] == 0.5
    assert m["macro_f1"] == pytest.approx(1 / 3)
    assert m["undefined"] == ("ALLOW",)
    with pytest.raises(ValueError):
        classification_metrics([], [])


def test_amortized_cost():
    assert amortized_cost(427, 2300, 100) == pytest.approx((4.27, 23.0))
    assert amortized_cost(427, 2300, 1) == (427, 2300)
    assert amortized_cost(427, 2300, 10) == pytest.approx((42.7, 230.0))
    with pytest.raises(ValueError):
        amortized_cost(427, 2300, 0)


def test_split_hygiene():
    for seed in range(3):
        split = build_split(WORLD, DeploymentConfig(seed=seed))
        assert not split.stream_groups & split.heldout_groups
        assert {c.group_id for c in split.heldout} <= split.heldout_groups
        assert {c.group_id for day in split.stream for c in day} <= split.stream_groups
        assert len(split.heldout) == 500 and [len(d) for d in split.stream] == [50] * 10


def test_pure_is_flat():
    res = run_experiment(DeploymentConfig(method="pure", **SMALL))
    assert len({r.macro_f1 for r in res.rows} | {res.initial.macro_f1}) == 1
    assert all(r.broad_count == 0 and r.local_count == 0 for r in res.rows)


def test_feedback_is_sparse():
    cfg = DeploymentConfig(method="lisa", **SMALL)
    res = run_experiment(cfg)
    assert len(res.bank) < cfg.days * cfg.stream_per_day
    for report in res.bank:
        assert report.predicted_label != WORLD.label_case(report.case)


def test_lisa_improves_on_default_world():
    res = run_experiment(DeploymentConfig(method="lisa"))
    assert res.final.macro_f1 > res.initial.macro_f1
    # pinned reference values for seed 0
    assert res.initial.macro_f1 == pytest.approx(0.6620, abs=5e-4)
    assert res.final.macro_f1 == pytest.approx(0.8612, abs=5e-4)


def test_outputs_are_deterministic(tmp_path):
    cfg = DeploymentConfig(method="lisa", **SMALL)
    write_outputs(run_seeds(cfg, [0, 1]), tmp_path / "a")
    write_outputs(run_seeds(cfg, [0, 1]), tmp_path / "b")
    for name in ("metrics_lisa.csv", "snapshot_lisa_seed0.json", "snapshot_lisa_seed1.json",
                 "reports_lisa_seed1.json", "state_lisa_seed0.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    text = (tmp_path / "a" / "metrics_lisa.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 1 + 2 * 3 + 2 * 3  # per-seed rows, then mean and std per day
    assert lines[-1].startswith("3,lisa,std,")
    assert load_snapshot(tmp_path / "a" / "snapshot_lisa_seed0.json").version == 3


def test_csv_has_one_row_per_day():
    res = run_experiment(DeploymentConfig(method="pure", **SMALL))
    lines = metrics_csv(res.rows).splitlines()
    assert [ln.split(",")[0] for ln in lines[1:]] == ["1", "2", "3"]


class DiesOnDay:
    def __init__(self, world, calls):
        self.inner = StubGuardModel(world.base_label)
        self.left = calls

    def decide(self, scenario, prompt=None):
        self.left -= 1
        if self.left < 0:
            raise ProviderUnavailableError("connection refused")
        return self.inner.decide(scenario, prompt)


def test_provider_failure_gives_partial_result():
    cfg = DeploymentConfig(method="lisa", **SMALL)
    # initial eval (80) + day 1 stream (30) + day 1 eval (80) succeed
    guard = DiesOnDay(WORLD, 80 + 30 + 80 + 5)
    res = run_experiment(cfg, Providers(guard, StubInducer(), HashingEmbedder()), WORLD)
    assert res.partial and "connection refused" in res.error
    assert len(res.rows) == 1


def test_config_validation():
    with pytest.raises(ValueError, match="unknown config keys"):
        DeploymentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        DeploymentConfig(noise_rho=1.2)
    with pytest.raises(ValueError):
        DeploymentConfig(method="nope")
    cfg = DeploymentConfig(method="broad_only", noise_rho=0.2, seed=4)
    assert DeploymentConfig.from_dict(cfg.to_dict()) == cfg


def test_world_is_deterministic_and_partially_known():
    a, b = SyntheticWorld(), SyntheticWorld()
    assert a.rules == b.rules and a.mixed == b.mixed
    assert a.base_rule_coverage() == pytest.approx(0.6, abs=0.05)
    groups = a.groups()
    disagree = sum(a.true_label(g["namespace"], g) != a.base_label(g["namespace"], g)
                   for _, g in groups)
    assert 0 < disagree < len(groups)
    other = SyntheticWorld(params=WorldParams(world_seed=8))
    assert other.rules != a.rules


def test_world_mixed_regions_flip_on_pivot():
    w = SyntheticWorld()
    (ns, x, y), (attr, flip_vals) = next(iter(sorted(w.mixed.items())))
    labels = set()
    for _, g in w.groups():
        vocab = w._vocab[g["namespace"]]
        (a1, _), (a2, _) = vocab.primary
        if g["namespace"] == ns and g[a1] == x and g[a2] == y:
            labels.add((g[attr] in flip_vals, w.true_label(ns, g)))
    assert {flag for flag, _ in labels} == {True, False}
    assert len({lab for _, lab in labels}) == 2
