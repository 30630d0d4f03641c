"""Online decision path: retrieve, gate, serialize, decide, fall back.

Methods differ only in which memory channels they read and how broad items
are gated; see ``METHODS``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from guardmem.evidence import (EmptyEvidenceError, GatingConfig, confidence,
                               empirical_accuracy, gate)
from guardmem.labels import REFUSE, Label
from guardmem.memory import (BroadPolicy, CaseRecord, LocalRule, MemorySnapshot, Report,
                             local_key)
from guardmem.prompts import render_base_prompt, render_inference_prompt
from guardmem.retrieval import Embedder, RetrievalLimits, retrieve, tokenize

log = logging.getLogger(__name__)

BASE_COST = 1.0
BLOCK_COST = 0.1


@dataclass(frozen=True)
class MethodSpec:
    name: str
    use_cases: bool = False
    use_broad: bool = False
    use_local: bool = False
    gate_mode: str = "none"  # "beta", "accuracy" or "none"


METHODS = {
    "pure": MethodSpec("pure"),
    "case_memory": MethodSpec("case_memory", use_cases=True),
    "broad_only": MethodSpec("broad_only", use_cases=True, use_broad=True),
    "lisa": MethodSpec("lisa", True, True, True, "beta"),
    "lisa_no_gate": MethodSpec("lisa_no_gate", True, True, True, "none"),
    "lisa_no_local": MethodSpec("lisa_no_local", True, True, False, "beta"),
    "lisa_no_both": MethodSpec("lisa_no_both", True, True, False, "none"),
    "gate_accuracy": MethodSpec("gate_accuracy", True, True, True, "accuracy"),
}
RESERVED_METHODS = ("agrail",)


def get_method(name: str) -> MethodSpec:
    if name in RESERVED_METHODS:
        raise NotImplementedError(f"method {name!r} is reserved but not implemented")
    try:
        return METHODS[name]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; valid methods: {', '.join(METHODS)}") from None


@dataclass
class Decision:
    case_id: str
    label: Label
    used_fallback: bool
    surfaced_broad_ids: tuple = ()
    surfaced_local_ids: tuple = ()
    snapshot_version: int = 0
    simulated_latency: float = BASE_COST
    error: str | None = None
    rationale: str = ""

    def __post_init__(self):
        if self.used_fallback and (self.surfaced_broad_ids or self.surfaced_local_ids):
            raise ValueError("fallback decisions cannot surface memory")


@dataclass
class GuardResponse:
    label: Label
    rationale: str = ""


class GuardModel(Protocol):
    def decide(self, scenario: str, prompt: str | None = None) -> GuardResponse: ...


class GuardModelError(RuntimeError):
    """The model answered but the answer was unusable; the case fails closed."""


class ProviderUnavailableError(RuntimeError):
    """The provider could not be reached at all; the run is aborted."""


def scenario_attributes(text: str) -> dict:
    attrs = {}
    for tok in tokenize(text):
        if "=" in tok:
            key, _, value = tok.partition("=")
            attrs[key] = value
    return attrs


_CASE_RE = re.compile(r"^  Case \d+: (.*)\n  Outcome: (\S+)$", re.MULTILINE)
_LOCAL_RE = re.compile(r"^  Content \d+: (.*)$", re.MULTILINE)
_REGION_RE = re.compile(r"region '([^']*)', label it (\w+)(?: when (.*?))?\. Evidence:")
_MEMORY_RE = re.compile(
    r"^  Memory \d+:\n    Title: .*\n    Description: .*\n    Content: (.*)\n"
    r"    Type: \S+, label=(\w+), confidence=([0-9.]+)$", re.MULTILINE)


def _scenario_block(prompt: str) -> str:
    m = re.search(r"^Scenario:\n(.*?)\n\nRespond with JSON", prompt, re.DOTALL | re.MULTILINE)
    return m.group(1) if m else ""


class StubGuardModel:
    """Deterministic guard model that reads the serialized memory it is given.

    Without memory it answers with ``base_fn`` over the scenario's
    ``key=value`` attributes.  With memory it applies, in order: the best
    matching local rule, the most specific then most confident applicable
    broad policy, a vote of sufficiently similar past cases, the base answer.
    """

    def __init__(self, base_fn: Callable[[str, dict], Label], local_overlap: float = 1.0,
                 case_overlap: float = 0.75):
        self.base_fn = base_fn
        self.local_overlap = local_overlap
        self.case_overlap = case_overlap

    def base(self, scenario: str) -> Label:
        tokens = tokenize(scenario)
        namespace = next((t for t in tokens if "=" not in t and t not in ("request", "scenario", "task")), "")
        return self.base_fn(namespace, scenario_attributes(scenario))

    def decide(self, scenario: str, prompt: str | None = None) -> GuardResponse:
        if prompt is None:
            return GuardResponse(self.base(scenario), "base guardrail")
        scenario = _scenario_block(prompt) or scenario
        tokens = set(tokenize(scenario))

        best = None
        for i, m in enumerate(_LOCAL_RE.finditer(prompt), start=1):
            rm = _REGION_RE.search(m.group(1))
            if rm is None:
                continue
            region = set(tokenize(rm.group(1)))
            overlap = len(region & tokens) / max(len(region), 1)
            cues = set(tokenize(rm.group(3) or "")) - {"or"}
            hits = len(cues & tokens)
            if overlap < self.local_overlap or hits == 0:
                continue
            key = (overlap, hits)
            if best is None or key > best[0]:
                best = (key, Label.parse(rm.group(2)), i)
            elif key == best[0] and Label.parse(rm.group(2)) != best[1]:
                best = (key, None, i)  # complementary cues tie: no override
        if best is not None and best[1] is not None:
            return GuardResponse(best[1], f"override: local rule {best[2]}")

        applicable = []
        for i, m in enumerate(_MEMORY_RE.finditer(prompt), start=1):
            pattern = {t for t in tokenize(m.group(1)) if "=" in t}
            if pattern and pattern <= tokens:
                applicable.append((len(pattern), float(m.group(3)), -i, Label.parse(m.group(2))))
        if applicable:
            n, conf, neg_i, label = max(applicable)
            return GuardResponse(label, f"apply: memory {-neg_i}")

        votes = []
        for m in _CASE_RE.finditer(prompt):
            case_tokens = {t for t in tokenize(m.group(1)) if "=" in t}
            attr_tokens = {t for t in tokens if "=" in t}
            if case_tokens and len(case_tokens & attr_tokens) / len(case_tokens) >= self.case_overlap:
                votes.append(Label.parse(m.group(2)))
        if votes:
            refuse = sum(1 for v in votes if v == REFUSE)
            if refuse * 2 != len(votes):
                label = REFUSE if refuse * 2 > len(votes) else Label.ALLOW
                return GuardResponse(label, f"apply: {len(votes)} similar cases")

        return GuardResponse(self.base(scenario), "uncertain: base judgement")


# ---------------------------------------------------------------- memory index

@dataclass
class MemoryIndex:
    """Embeddings and confidences for one published snapshot plus the case bank."""

    snapshot: MemorySnapshot
    embedder: Embedder
    cases: Sequence[Report] = ()
    broad_pool: list = field(default_factory=list)
    local_pool: list = field(default_factory=list)
    case_pool: list = field(default_factory=list)
    confidences: dict = field(default_factory=dict)

    def __post_init__(self):
        delta = self.snapshot.gating.delta
        self.broad_pool = [(p.policy_id, self.embedder.embed(p.statement)) for p in self.snapshot.broad]
        self.local_pool = [(r.rule_id, self.embedder.embed(r.region_summary)) for r in self.snapshot.local]
        self._reports = {r.report_id: r for r in self.cases}
        self.case_pool = [(rid, self.embedder.embed(r.case.scenario_text))
                          for rid, r in self._reports.items()]
        self.confidences = {p.policy_id: confidence(p.evidence, delta) for p in self.snapshot.broad}
        self._broad = self.snapshot.broad_by_id()
        self._local = self.snapshot.local_by_id()

    def passes(self, policy: BroadPolicy, mode: str) -> bool:
        cfg = self.snapshot.gating
        if mode == "none":
            return True
        if mode == "beta":
            return gate(policy.recommended_label, self.confidences[policy.policy_id], cfg)
        if mode == "accuracy":
            try:
                return gate(policy.recommended_label, empirical_accuracy(policy.evidence), cfg)
            except EmptyEvidenceError:
                return False
        raise ValueError(f"unknown gate mode {mode!r}")


def serialize_prompt(case: CaseRecord, cases: Sequence[Report], local: Sequence[LocalRule],
                     broad: Sequence[tuple[BroadPolicy, float]],
                     limits: RetrievalLimits = RetrievalLimits()) -> str:
    if not (cases or local or broad):
        raise ValueError("the inference prompt needs at least one memory item")
    return render_inference_prompt(
        case.scenario_text,
        cases=[(r.case.scenario_text, r.corrected_label) for r in cases[:limits.max_cases]],
        local=[r.text for r in local[:limits.max_local]],
        broad=list(broad[:limits.max_broad]),
    )


def decide(case: CaseRecord, index: MemoryIndex, guard: GuardModel,
           method: MethodSpec = METHODS["lisa"], limits: RetrievalLimits = RetrievalLimits(),
           fail_closed: bool = True) -> Decision:
    snapshot = index.snapshot
    query = index.embedder.embed(case.scenario_text) if method.name != "pure" else None

    cases: list[Report] = []
    local: list[LocalRule] = []
    broad: list[tuple[BroadPolicy, float]] = []
    if method.use_cases and index.case_pool:
        cases = [index._reports[i] for i, _ in retrieve(query, index.case_pool, limits.max_cases)]
    if method.use_local and index.local_pool:
        local = [index._local[i] for i, _ in retrieve(query, index.local_pool, limits.max_local)]
    if method.use_broad and index.broad_pool:
        for pid, _ in retrieve(query, index.broad_pool, limits.max_broad):
            policy = index._broad[pid]
            if index.passes(policy, method.gate_mode):
                broad.append((policy, index.confidences[pid]))

    if method.use_broad or method.use_local:
        fallback = not broad and not local
    else:
        fallback = not cases

    try:
        if fallback:
            response = guard.decide(case.scenario_text, None)
            return Decision(case.case_id, response.label, True, snapshot_version=snapshot.version,
                            simulated_latency=BASE_COST, rationale=response.rationale)
        prompt = serialize_prompt(case, cases, local, broad, limits)
        response = guard.decide(case.scenario_text, prompt)
    except ProviderUnavailableError:
        raise
    except Exception as exc:
        log.warning("guard model failed on %s: %s", case.case_id, exc)
        label = REFUSE if fail_closed else Label.ALLOW
        return Decision(case.case_id, label, fallback, snapshot_version=snapshot.version,
                        error=str(exc))
    blocks = len(cases) + len(local) + len(broad)
    return Decision(
        case.case_id, response.label, False,
        surfaced_broad_ids=tuple(p.policy_id for p, _ in broad),
        surfaced_local_ids=tuple(r.rule_id for r in local),
        snapshot_version=snapshot.version,
        simulated_latency=BASE_COST + BLOCK_COST * blocks,
        rationale=response.rationale,
    )


@dataclass(frozen=True)
class EvidenceUpdate:
    kind: str  # "broad" or "local"
    item_id: str
    key: str  # runtime ledger key
    matched: bool


def apply_feedback(decision: Decision, corrected_label: Label,
                   snapshot: MemorySnapshot) -> list[EvidenceUpdate]:
    """Evidence updates for every item the decision surfaced."""
    if decision.snapshot_version != snapshot.version:
        raise ValueError("decision was made against a different snapshot version")
    broad = snapshot.broad_by_id()
    local = snapshot.local_by_id()
    updates = []
    for pid in decision.surfaced_broad_ids:
        if pid not in broad:
            raise KeyError(f"unknown broad policy {pid!r}")
        p = broad[pid]
        updates.append(EvidenceUpdate("broad", pid, p.statement,
                                      p.recommended_label == Label(corrected_label)))
    for rid in decision.surfaced_local_ids:
        if rid not in local:
            raise KeyError(f"unknown local rule {rid!r}")
        r = local[rid]
        updates.append(EvidenceUpdate("local", rid, local_key(r.region_summary, r.recommended_label),
                                      r.recommended_label == Label(corrected_label)))
    return updates


def parse_guard_response(raw: str) -> GuardResponse:
    """Parse a model's JSON answer (``{"reasoning": ..., "label": ...}``)."""
    text = raw.strip()
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise GuardModelError(f"guard response is not JSON: {raw[:80]!r}")
    try:
        data = json.loads(text[start:end + 1])
        return GuardResponse(Label.parse(data["label"]), str(data.get("reasoning", "")))
    except (KeyError, ValueError) as exc:
        raise GuardModelError(f"unusable guard response: {exc}") from exc


def base_prompt(scenario: str) -> str:
    return render_base_prompt(scenario)
