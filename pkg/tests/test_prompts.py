from pathlib import Path

from guardmem.evidence import EvidenceCounts
from guardmem.labels import ALLOW, REFUSE
from guardmem.memory import BroadPolicy, CaseRecord, Report
from guardmem.prompts import (load_template, render_base_prompt, render_induction_prompt,
                              render_inference_prompt, render_local_rule)

GOLDEN = Path(__file__).parent / "golden"


def golden_inputs():
    p1 = BroadPolicy("b1", "data=photo -> inappropriate", "data=photo is inappropriate",
                     "Sharing photos without need is inappropriate.", REFUSE, EvidenceCounts(5, 0))
    p2 = BroadPolicy("b2", "purpose=safety -> appropriate", "purpose=safety is appropriate",
                     "Safety purposes justify sharing.", ALLOW, EvidenceCounts(7, 1))
    local = [render_local_rule("privacy data=photo purpose=safety",
                               "label it inappropriate when recipient=advertiser", 2, 1,
                               ["recipient differs: doctor vs advertiser"])]
    return dict(
        scenario="request privacy: data=photo purpose=safety recipient=advertiser consent=absent",
        cases=[("request privacy: data=photo purpose=gossip recipient=friend consent=absent", REFUSE)],
        local=local,
        broad=[(p1, 0.6070), (p2, 0.5709)],
    )


def test_inference_prompt_golden():
    expected = (GOLDEN / "inference_prompt.txt").read_text(encoding="utf-8")
    assert render_inference_prompt(**golden_inputs()) == expected


def test_template_keeps_trailing_spaces():
    text = load_template("inference")
    assert "perspective. \n" in text
    assert "preventive \n" in text


def test_memory_blocks_in_rank_order():
    out = render_inference_prompt(**golden_inputs())
    assert out.count("  Memory ") == 2
    assert out.index("Memory 1:") < out.index("Memory 2:")
    assert "label=inappropriate, confidence=0.6070" in out
    assert out.count("  Content 1: Local rule:") == 1


def test_empty_sections_keep_headers():
    out = render_inference_prompt("request privacy: data=photo", cases=[("x=1", ALLOW)])
    assert "Cases with semantic similarity despite conflicting labels:\n\n" in out
    assert "Structured preventive memory:\n\n" in out


def test_base_prompt_has_scenario():
    out = render_base_prompt("request privacy: data=photo")
    assert "request privacy: data=photo" in out
    assert "Memory" not in out


def test_induction_prompt_lists_failures():
    case = CaseRecord("s1", "privacy", "request privacy: data=photo purpose=gossip",
                      "privacy data=photo purpose=gossip", "g", {"data": "photo"})
    reports = [Report(case, ALLOW, REFUSE, 1), Report(case, REFUSE, ALLOW, 2)]
    out = render_induction_prompt(reports)
    assert "  Failure 1:\n    Scenario: request privacy: data=photo purpose=gossip\n" in out
    assert "    Model prediction: appropriate\n    Correct label: inappropriate\n" in out
    assert "Failure 2:" in out
    assert "{failures}" not in out


def test_local_rule_rendering():
    text = render_local_rule("region r", "label it appropriate", 3, 1, ["a differs: x vs y", "b"])
    assert text.startswith("Local rule: In the boundary-heavy region 'region r', label it appropriate.")
    assert "support=3, nearby contradictions=1" in text
    assert "Decisive pivots: a differs: x vs y; b." in text
