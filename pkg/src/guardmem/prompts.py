"""Rendering of the inference prompt, the induction prompt, and local-rule text.

The raw templates live in ``guardmem/templates/*.txt``; rendering here is
byte-exact so golden files can pin the output.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from typing import Sequence

from guardmem.labels import Label


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("guardmem").joinpath("templates", f"{name}.txt").read_text("utf-8")


def one_line(text: str) -> str:
    return " ".join(text.split())


def render_inference_prompt(scenario: str, cases: Sequence = (), local: Sequence = (),
                            broad: Sequence = ()) -> str:
    """Inference prompt with retrieved memory.

    ``cases`` holds (summary, label) pairs, ``local`` holds rendered local-rule
    texts, and ``broad`` holds (policy, confidence) pairs, each in rank order.
    """
    case_lines = []
    for i, (summary, label) in enumerate(cases, start=1):
        case_lines.append(f"  Case {i}: {one_line(summary)}\n  Outcome: {Label(label).wire}\n")
    local_lines = [f"  Content {i}: {one_line(text)}\n" for i, text in enumerate(local, start=1)]
    memory_lines = []
    for i, (policy, conf) in enumerate(broad, start=1):
        memory_lines.append(
            f"  Memory {i}:\n"
            f"    Title: {one_line(policy.title)}\n"
            f"    Description: {one_line(policy.description)}\n"
            f"    Content: {one_line(policy.statement)}\n"
            f"    Type: {policy.rule_type}, label={policy.recommended_label.wire}, "
            f"confidence={conf:.4f}\n"
        )
    return load_template("inference").format(
        cases="".join(case_lines),
        local="".join(local_lines),
        memory="".join(memory_lines),
        scenario=scenario,
    )


def render_base_prompt(scenario: str) -> str:
    return load_template("base").format(scenario=scenario)


def render_induction_prompt(reports: Sequence) -> str:
    blocks = []
    for i, report in enumerate(reports, start=1):
        blocks.append(
            f"  Failure {i}:\n"
            f"    Scenario: {one_line(report.case.scenario_text)}\n"
            f"    Model prediction: {report.predicted_label.wire}\n"
            f"    Correct label: {report.corrected_label.wire}\n"
        )
    return load_template("induction").format(failures="\n".join(blocks))


def render_local_rule(region: str, outcome: str, support: int, contradictions: int,
                      pivots: Sequence[str]) -> str:
    return load_template("local_rule").format(
        region=region,
        recommended_outcome=outcome,
        support_count=support,
        contradict_count=contradictions,
        pivots="; ".join(pivots),
    )
