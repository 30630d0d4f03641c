"""Offline memory refresh.

Day-end failures are turned into broad policy candidates by an inducer,
all raw candidates are re-merged by embedding clustering, mixed-label
regions of the case bank get complementary local rules, and a new snapshot
is published.  Nothing here mutates the previous state.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Protocol, Sequence

import numpy as np

from guardmem.clustering import average_linkage, centroid
from guardmem.evidence import EvidenceCounts, GatingConfig
from guardmem.labels import ALLOW, REFUSE, Label
from guardmem.memory import (BroadPolicy, CaseRecord, LocalRule, MemorySnapshot,
                             MemoryState, Report, ReportBank, local_key)
from guardmem.prompts import render_induction_prompt, render_local_rule
from guardmem.retrieval import Embedder, cosine, tokenize

log = logging.getLogger(__name__)

MERGE_THRESHOLD = 0.20
MIN_CLUSTER_SIZE = 2
NEAR_CONFLICT_SIMILARITY = 0.85
MAX_INDUCED_ITEMS = 3
NO_PIVOT = "no decisive pivot found"
RULE_TYPES = ("general_policy", "local_exception")


class RefreshError(RuntimeError):
    """A refresh step failed; the previously published memory stays live."""


class PolicyInducer(Protocol):
    def induce(self, prompt: str) -> str: ...


@dataclass
class InducedItem:
    title: str
    description: str
    content: str
    recommended_label: Label
    rule_type: str = "general_policy"


@dataclass
class MixedCluster:
    cluster_id: str
    namespace: str
    member_case_ids: tuple
    label_histogram: dict
    conflict_score: float
    region_summary: str = ""


def majority_label(labels: Sequence[Label]) -> Label:
    """Most frequent label; ties go to REFUSE."""
    counts = Counter(Label(x) for x in labels)
    return ALLOW if counts[ALLOW] > counts[REFUSE] else REFUSE


def label_histogram(labels: Sequence[Label]) -> dict:
    counts = Counter(Label(x) for x in labels)
    return {"ALLOW": counts[ALLOW], "REFUSE": counts[REFUSE]}


# ---------------------------------------------------------------- parsing

_FIELD_RE = re.compile(r"^\s*(title|description|content|recommended label|rule type)\s*:\s*(.*)$",
                       re.IGNORECASE)


def _extract_json(raw: str):
    text = raw.strip()
    fenced = re.search(r"```(?:json)?\s*(.*?)```", text, re.DOTALL)
    if fenced:
        text = fenced.group(1).strip()
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise ValueError("inducer response contains no JSON object")
    return json.loads(text[start:end + 1])


def parse_item(text: str, fallback_label: Label) -> InducedItem | None:
    fields = {}
    for line in text.splitlines():
        m = _FIELD_RE.match(line)
        if m:
            fields[m.group(1).lower()] = m.group(2).strip()
    content = fields.get("content", "")
    if not content:
        return None
    try:
        label = Label.parse(fields.get("recommended label", ""))
    except ValueError:
        label = fallback_label
    rule_type = fields.get("rule type", "general_policy").strip().lower()
    if rule_type not in RULE_TYPES:
        rule_type = "general_policy"
    title = fields.get("title") or " ".join(content.split()[:6])
    description = fields.get("description") or content
    return InducedItem(title, description, content, label, rule_type)


def parse_induced_items(raw: str, group_labels: Sequence[Label]) -> list[InducedItem]:
    """Parse an inducer response; unusable labels fall back to the group majority."""
    data = _extract_json(raw)
    if not isinstance(data, dict):
        raise ValueError("inducer response must be a JSON object")
    texts = []
    for key in ("insights", "policies"):
        value = data.get(key, [])
        if isinstance(value, str):
            value = [value]
        texts.extend(str(v) for v in value)
    fallback = majority_label(group_labels)
    items = []
    for text in texts:
        item = parse_item(text, fallback)
        if item is not None:
            items.append(item)
    return items[:MAX_INDUCED_ITEMS]


# ---------------------------------------------------------------- stub inducer

_FAILURE_RE = re.compile(
    r"^\s*Failure \d+:\n\s*Scenario: (?P<scenario>.*)\n\s*Model prediction: (?P<pred>\S+)\n"
    r"\s*Correct label: (?P<label>\S+)$", re.MULTILINE)


def parse_failures(prompt: str) -> list[tuple[frozenset, Label]]:
    """(attribute tokens, corrected label) for each failure block of an induction prompt."""
    out = []
    for m in _FAILURE_RE.finditer(prompt):
        tokens = frozenset(t for t in tokenize(m.group("scenario")) if "=" in t)
        out.append((tokens, Label.parse(m.group("label"))))
    return out


def format_pattern(pattern: Sequence[str]) -> str:
    return " and ".join(pattern)


def policy_statement(pattern: Sequence[str], label: Label) -> str:
    return f"{format_pattern(pattern)} -> {Label(label).wire}"


class StubInducer:
    """Deterministic stand-in for the offline policy-induction model.

    Reads the failure blocks of the induction prompt and greedily picks label-
    consistent attribute patterns (single ``key=value`` tokens or pairs) that
    recur in at least ``min_coverage`` failures, most general first.  When
    ``salient_keys`` is given every pattern must involve one of those keys,
    standing in for a real model's prior about which dimensions carry risk.
    """

    def __init__(self, min_coverage: int = 2, max_items: int = MAX_INDUCED_ITEMS,
                 salient_keys: Sequence[str] | None = None):
        self.min_coverage = min_coverage
        self.max_items = max_items
        self.salient_keys = frozenset(salient_keys) if salient_keys else None
        self.calls = 0

    def _salient(self, pattern) -> bool:
        if self.salient_keys is None:
            return True
        return any(tok.partition("=")[0] in self.salient_keys for tok in pattern)

    def select_patterns(self, failures) -> list[tuple[tuple, Label, int]]:
        remaining = list(range(len(failures)))
        chosen = []
        while remaining and len(chosen) < self.max_items:
            counts: dict[tuple, Counter] = {}
            for idx in remaining:
                tokens, label = failures[idx]
                for size in (1, 2):
                    for pattern in combinations(sorted(tokens), size):
                        counts.setdefault(pattern, Counter())[label] += 1
            # purity is judged against every failure of the group, not just the uncovered ones
            best = None
            for pattern, hist in counts.items():
                if len(hist) != 1 or not self._salient(pattern):
                    continue
                label, cover = next(iter(hist.items()))
                if cover < self.min_coverage:
                    continue
                if any(set(pattern) <= tokens and lab != label for tokens, lab in failures):
                    continue
                if any(p == pattern for p, _, _ in chosen):
                    continue
                key = (-cover, len(pattern), pattern)
                if best is None or key < best[0]:
                    best = (key, pattern, label, cover)
            if best is None:
                break
            _, pattern, label, cover = best
            chosen.append((pattern, label, cover))
            remaining = [i for i in remaining if not set(pattern) <= failures[i][0]]
        return chosen

    def induce(self, prompt: str) -> str:
        self.calls += 1
        items = []
        for pattern, label, _ in self.select_patterns(parse_failures(prompt)):
            wire = Label(label).wire
            items.append("\n".join([
                f"Title: {format_pattern(pattern)} is {wire}",
                f"Description: requests with {format_pattern(pattern)} were judged {wire}",
                f"Content: {policy_statement(pattern, label)}",
                f"Recommended label: {wire}",
                "Rule type: general_policy",
            ]))
        return json.dumps({"insights": items[:2], "policies": items[2:]})


# ---------------------------------------------------------------- broad policies

def induce_broad(day_reports: Sequence[Report], inducer: PolicyInducer, prefix: str,
                 retries: int = 2) -> list[BroadPolicy]:
    """Induce up to three broad candidates from one day's failures."""
    if not day_reports:
        return []
    prompt = render_induction_prompt(day_reports)
    labels = [r.corrected_label for r in day_reports]
    last_exc = None
    for attempt in range(retries + 1):
        try:
            items = parse_induced_items(inducer.induce(prompt), labels)
            break
        except Exception as exc:  # provider or parse failure; retried then surfaced
            last_exc = exc
            log.warning("induction attempt %d failed: %s", attempt + 1, exc)
    else:
        raise RefreshError(f"policy induction failed after {retries + 1} attempts") from last_exc

    provenance = tuple(r.report_id for r in day_reports)
    skew = label_histogram(labels)
    policies = []
    for k, item in enumerate(items):
        support = sum(1 for lab in labels if lab == item.recommended_label)
        policies.append(BroadPolicy(
            policy_id=f"{prefix}-{k}",
            statement=item.content,
            title=item.title,
            description=item.description,
            recommended_label=item.recommended_label,
            evidence=EvidenceCounts(support, len(labels) - support),
            provenance=provenance,
            label_skew=dict(skew),
            rule_type=item.rule_type,
        ))
    return policies


def merge_broad(candidates: Sequence[BroadPolicy], embedder: Embedder,
                runtime: dict | None = None, threshold: float = MERGE_THRESHOLD) -> list[BroadPolicy]:
    """Cluster candidate statements and keep one verbatim representative per cluster.

    Evidence, label skew and provenance are summed over members.  Runtime
    counts in ``runtime`` (keyed by statement) are added only for statements
    that end up as a representative.
    """
    if not candidates:
        return []
    ordered = sorted(candidates, key=lambda p: p.policy_id)
    vectors = [embedder.embed(p.statement) for p in ordered]
    runtime = runtime or {}
    merged = []
    for members in average_linkage(vectors, threshold):
        center = centroid([vectors[i] for i in members])
        best_i, best_sim = members[0], -np.inf
        for i in members:  # members are in id order, so strict > keeps the smaller id on ties
            sim = cosine(vectors[i], center)
            if sim > best_sim + 1e-12:
                best_i, best_sim = i, sim
        rep = ordered[best_i]
        evidence = EvidenceCounts()
        skew = {"ALLOW": 0, "REFUSE": 0}
        provenance = set()
        for i in members:
            evidence = evidence + ordered[i].evidence
            for key in skew:
                skew[key] += ordered[i].label_skew[key]
            provenance.update(ordered[i].provenance)
        if rep.statement in runtime:
            evidence = evidence + runtime[rep.statement]
        merged.append(replace(rep, evidence=evidence, label_skew=skew,
                              provenance=tuple(provenance), near_conflict=False))
    merged.sort(key=lambda p: p.policy_id)
    return merged


# ---------------------------------------------------------------- mixed regions

def _common_summary(summaries: Sequence[str]) -> str:
    token_sets = [set(tokenize(s)) for s in summaries]
    shared = set.intersection(*token_sets)
    ordered = [t for t in tokenize(summaries[0]) if t in shared]
    seen = []
    for t in ordered:
        if t not in seen:
            seen.append(t)
    if seen:
        return " ".join(seen)
    return Counter(summaries).most_common(1)[0][0]


def detect_mixed_regions(cases: Sequence[tuple[CaseRecord, Label]], embedder: Embedder,
                         threshold: float = MERGE_THRESHOLD,
                         min_size: int = MIN_CLUSTER_SIZE) -> list[MixedCluster]:
    """Cluster labeled cases per namespace; keep clusters holding both labels."""
    by_ns: dict[str, list[tuple[CaseRecord, Label]]] = {}
    for case, label in cases:
        by_ns.setdefault(case.namespace, []).append((case, Label(label)))
    out = []
    for ns in sorted(by_ns):
        members = sorted(by_ns[ns], key=lambda cl: cl[0].case_id)
        vectors = [embedder.embed(c.scenario_summary) for c, _ in members]
        for k, idx in enumerate(average_linkage(vectors, threshold)):
            if len(idx) < min_size:
                continue
            labels = [members[i][1] for i in idx]
            hist = label_histogram(labels)
            if hist["ALLOW"] == 0 or hist["REFUSE"] == 0:
                continue
            total = hist["ALLOW"] + hist["REFUSE"]
            out.append(MixedCluster(
                cluster_id=f"{ns}:c{k}",
                namespace=ns,
                member_case_ids=tuple(members[i][0].case_id for i in idx),
                label_histogram=hist,
                conflict_score=1.0 - max(hist.values()) / total,
                region_summary=_common_summary([members[i][0].scenario_summary for i in idx]),
            ))
    return out


def conflict_score(labels: Sequence[Label]) -> float:
    hist = label_histogram(labels)
    return 1.0 - max(hist.values()) / sum(hist.values())


def _top_tokens(summaries: Sequence[str], k: int = 5) -> list[str]:
    counts = Counter(t for s in summaries for t in tokenize(s))
    return [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def extract_pivots(allow_cases: Sequence[CaseRecord], refuse_cases: Sequence[CaseRecord]):
    """Pivot descriptions plus per-label cue tokens for one mixed cluster.

    An attribute is a pivot when its most common value differs between the
    two sides; cues are the values seen on only one side.  Summary tokens
    among the top five of one side and absent from the other side count as
    textual facets.
    """
    pivots: list[str] = []
    cues = {ALLOW: [], REFUSE: []}
    keys = sorted({k for c in list(allow_cases) + list(refuse_cases) for k in c.attributes})
    for key in keys:
        a_vals = Counter(str(c.attributes[key]) for c in allow_cases if key in c.attributes)
        r_vals = Counter(str(c.attributes[key]) for c in refuse_cases if key in c.attributes)
        if not a_vals or not r_vals:
            continue
        a_mode = sorted(a_vals.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        r_mode = sorted(r_vals.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        if a_mode == r_mode:
            continue
        a_only = sorted(set(a_vals) - set(r_vals))
        r_only = sorted(set(r_vals) - set(a_vals))
        a_desc = "/".join(a_only or sorted(a_vals))
        r_desc = "/".join(r_only or sorted(r_vals))
        pivots.append(f"{key} differs: {a_desc} vs {r_desc}")
        cues[ALLOW].extend(f"{key}={v}" for v in a_only)
        cues[REFUSE].extend(f"{key}={v}" for v in r_only)

    covered = {f"{k}={v}" for k in keys for c in list(allow_cases) + list(refuse_cases)
               for v in [c.attributes.get(k)] if v is not None}
    a_summ = [c.scenario_summary for c in allow_cases]
    r_summ = [c.scenario_summary for c in refuse_cases]
    a_all = {t for s in a_summ for t in tokenize(s)}
    r_all = {t for s in r_summ for t in tokenize(s)}
    for tok in _top_tokens(a_summ):
        if tok not in r_all and tok not in covered:
            pivots.append(f"facet '{tok}' appears only in appropriate cases")
            cues[ALLOW].append(tok)
    for tok in _top_tokens(r_summ):
        if tok not in a_all and tok not in covered:
            pivots.append(f"facet '{tok}' appears only in inappropriate cases")
            cues[REFUSE].append(tok)
    if not pivots:
        pivots = [NO_PIVOT]
    return pivots, cues


def outcome_phrase(label: Label, cues: Sequence[str]) -> str:
    if cues:
        return f"label it {Label(label).wire} when {' or '.join(cues)}"
    return f"label it {Label(label).wire}"


def render_local_rules(cluster: MixedCluster, cases: dict, runtime: dict | None = None) -> list[LocalRule]:
    """Two complementary label-specific rules for one mixed cluster.

    ``cases`` maps case id to (CaseRecord, corrected label).
    """
    members = [cases[cid] for cid in cluster.member_case_ids]
    allow = [c for c, lab in members if lab == ALLOW]
    refuse = [c for c, lab in members if lab == REFUSE]
    if not allow or not refuse:
        raise ValueError(f"cluster {cluster.cluster_id} is not mixed")
    pivots, cues = extract_pivots(allow, refuse)
    runtime = runtime or {}
    rules = []
    for label, own, other in ((ALLOW, allow, refuse), (REFUSE, refuse, allow)):
        evidence = EvidenceCounts(len(own), len(other))
        carried = runtime.get(local_key(cluster.region_summary, label))
        if carried is not None:
            evidence = evidence + carried
        text = render_local_rule(cluster.region_summary, outcome_phrase(label, cues[label]),
                                 evidence.support, evidence.contradiction, pivots)
        rules.append(LocalRule(
            rule_id=f"{cluster.cluster_id}:{label.name}",
            region_summary=cluster.region_summary,
            recommended_label=label,
            pivots=tuple(pivots),
            evidence=evidence,
            source_cluster_id=cluster.cluster_id,
            text=text,
            cues=tuple(cues[label]),
        ))
    return rules


def mark_near_conflict(broad: Sequence[BroadPolicy], conflicts: Sequence[MixedCluster],
                       embedder: Embedder,
                       min_similarity: float = NEAR_CONFLICT_SIMILARITY) -> list[BroadPolicy]:
    region_vecs = [embedder.embed(c.region_summary) for c in conflicts]
    out = []
    for policy in broad:
        vec = embedder.embed(policy.statement)
        best = max((cosine(vec, r) for r in region_vecs), default=-1.0)
        out.append(replace(policy, near_conflict=best >= min_similarity - 1e-12))
    return out


# ---------------------------------------------------------------- refresh

@dataclass
class RefreshOptions:
    build_local: bool = True
    merge_threshold: float = MERGE_THRESHOLD
    gating: GatingConfig = field(default_factory=GatingConfig)


def refresh(bank: ReportBank, previous: MemoryState, inducer: PolicyInducer,
            embedder: Embedder, options: RefreshOptions | None = None) -> MemoryState:
    """Rebuild memory from the cumulative report bank and return a new state.

    Only days not yet induced trigger inducer calls.  Broad memory is
    re-merged over every retained raw candidate; local rules are rebuilt from
    the full case bank.  ``previous`` is left untouched.
    """
    options = options or RefreshOptions()
    state = previous.copy()
    try:
        by_day: dict[int, list[Report]] = {}
        for report in bank:
            if report.day not in state.induced_days:
                by_day.setdefault(report.day, []).append(report)
        for day in sorted(by_day):
            state.candidates.extend(induce_broad(by_day[day], inducer, prefix=f"d{day:03d}"))
            state.induced_days.add(day)

        merged = merge_broad(state.candidates, embedder, state.broad_runtime,
                             options.merge_threshold)
        surviving = {p.statement for p in merged}
        state.broad_runtime = {k: v for k, v in state.broad_runtime.items() if k in surviving}

        labeled = {r.case.case_id: (r.case, r.corrected_label) for r in bank}
        conflicts = detect_mixed_regions(list(labeled.values()), embedder,
                                         options.merge_threshold)
        local = []
        if options.build_local:
            for cluster in conflicts:
                local.extend(render_local_rules(cluster, labeled, state.local_runtime))
        kept = {local_key(r.region_summary, r.recommended_label) for r in local}
        state.local_runtime = {k: v for k, v in state.local_runtime.items() if k in kept}

        broad = mark_near_conflict(merged, conflicts, embedder)
    except RefreshError:
        raise
    except Exception as exc:
        raise RefreshError(f"refresh failed: {exc}") from exc

    state.snapshot = MemorySnapshot(
        version=previous.snapshot.version + 1,
        broad=tuple(broad),
        local=tuple(local),
        gating=options.gating,
    )
    return state
