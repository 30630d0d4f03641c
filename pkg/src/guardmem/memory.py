"""Reports, policy items, deployed snapshots, and their JSON persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from guardmem.evidence import EvidenceCounts, GatingConfig
from guardmem.labels import Label


class SnapshotFormatError(ValueError):
    """A persisted snapshot or state file could not be parsed."""


class DuplicateReportError(ValueError):
    pass


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    namespace: str
    scenario_text: str
    scenario_summary: str
    group_id: str
    attributes: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        if not self.scenario_summary.strip():
            raise ValueError(f"case {self.case_id} has an empty summary")

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "namespace": self.namespace,
            "scenario_text": self.scenario_text,
            "scenario_summary": self.scenario_summary,
            "group_id": self.group_id,
            "attributes": dict(self.attributes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CaseRecord":
        return cls(data["case_id"], data["namespace"], data["scenario_text"],
                   data["scenario_summary"], data["group_id"],
                   dict(data.get("attributes", {})))


@dataclass(frozen=True)
class Report:
    """A corrected failure.  ``flipped`` is evaluation bookkeeping only."""

    case: CaseRecord
    predicted_label: Label
    corrected_label: Label
    day: int
    flipped: bool = False

    @property
    def report_id(self) -> str:
        return f"{self.case.case_id}@{self.day}"

    def to_dict(self) -> dict:
        return {
            "case": self.case.to_dict(),
            "predicted_label": self.predicted_label.name,
            "corrected_label": self.corrected_label.name,
            "day": self.day,
            "flipped": self.flipped,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        return cls(CaseRecord.from_dict(data["case"]),
                   Label.parse(data["predicted_label"]),
                   Label.parse(data["corrected_label"]),
                   int(data["day"]), bool(data.get("flipped", False)))


def _skew_dict(skew: dict) -> dict:
    return {"ALLOW": int(skew.get("ALLOW", 0)), "REFUSE": int(skew.get("REFUSE", 0))}


@dataclass
class BroadPolicy:
    policy_id: str
    statement: str
    title: str
    description: str
    recommended_label: Label
    evidence: EvidenceCounts = field(default_factory=EvidenceCounts)
    provenance: tuple = ()
    label_skew: dict = field(default_factory=lambda: {"ALLOW": 0, "REFUSE": 0})
    near_conflict: bool = False
    rule_type: str = "general_policy"

    def __post_init__(self):
        if not self.statement.strip():
            raise ValueError(f"policy {self.policy_id} has an empty statement")
        self.provenance = tuple(sorted(set(self.provenance)))
        self.label_skew = _skew_dict(self.label_skew)

    def to_dict(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "statement": self.statement,
            "title": self.title,
            "description": self.description,
            "recommended_label": self.recommended_label.name,
            "evidence": self.evidence.to_dict(),
            "provenance": list(self.provenance),
            "label_skew": dict(self.label_skew),
            "near_conflict": self.near_conflict,
            "rule_type": self.rule_type,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BroadPolicy":
        return cls(
            policy_id=data["policy_id"],
            statement=data["statement"],
            title=data["title"],
            description=data["description"],
            recommended_label=Label.parse(data["recommended_label"]),
            evidence=EvidenceCounts.from_dict(data["evidence"]),
            provenance=tuple(data["provenance"]),
            label_skew=data["label_skew"],
            near_conflict=bool(data["near_conflict"]),
            rule_type=data.get("rule_type", "general_policy"),
        )


@dataclass
class LocalRule:
    rule_id: str
    region_summary: str
    recommended_label: Label
    pivots: tuple
    evidence: EvidenceCounts = field(default_factory=EvidenceCounts)
    source_cluster_id: str = ""
    text: str = ""
    cues: tuple = ()

    def __post_init__(self):
        self.pivots = tuple(self.pivots)
        self.cues = tuple(self.cues)
        if not self.pivots:
            raise ValueError(f"local rule {self.rule_id} has no pivots")

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "region_summary": self.region_summary,
            "recommended_label": self.recommended_label.name,
            "pivots": list(self.pivots),
            "evidence": self.evidence.to_dict(),
            "source_cluster_id": self.source_cluster_id,
            "text": self.text,
            "cues": list(self.cues),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LocalRule":
        return cls(
            rule_id=data["rule_id"],
            region_summary=data["region_summary"],
            recommended_label=Label.parse(data["recommended_label"]),
            pivots=tuple(data["pivots"]),
            evidence=EvidenceCounts.from_dict(data["evidence"]),
            source_cluster_id=data.get("source_cluster_id", ""),
            text=data.get("text", ""),
            cues=tuple(data.get("cues", ())),
        )


@dataclass(frozen=True)
class MemorySnapshot:
    """Deployed memory.  Never mutated after publication; refresh builds a new one."""

    version: int = 0
    broad: tuple = ()
    local: tuple = ()
    gating: GatingConfig = field(default_factory=GatingConfig)

    def __post_init__(self):
        object.__setattr__(self, "broad", tuple(self.broad))
        object.__setattr__(self, "local", tuple(self.local))
        ids = [p.policy_id for p in self.broad] + [r.rule_id for r in self.local]
        if len(ids) != len(set(ids)):
            raise ValueError("snapshot item ids must be unique")

    def broad_by_id(self) -> dict:
        return {p.policy_id: p for p in self.broad}

    def local_by_id(self) -> dict:
        return {r.rule_id: r for r in self.local}

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "gating": self.gating.to_dict(),
            "broad": [p.to_dict() for p in self.broad],
            "local": [r.to_dict() for r in self.local],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MemorySnapshot":
        for key in ("version", "gating", "broad", "local"):
            if key not in data:
                raise SnapshotFormatError(f"snapshot is missing top-level key {key!r}")
        broad = []
        for i, item in enumerate(data["broad"]):
            broad.append(_parse_record(BroadPolicy, item, f"broad[{i}]"))
        local = []
        for i, item in enumerate(data["local"]):
            local.append(_parse_record(LocalRule, item, f"local[{i}]"))
        try:
            gating = GatingConfig.from_dict(data["gating"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SnapshotFormatError(f"invalid record 'gating': {exc}") from exc
        return cls(int(data["version"]), tuple(broad), tuple(local), gating)


def _parse_record(cls, item, where: str):
    try:
        return cls.from_dict(item)
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotFormatError(f"invalid record {where}: {exc!r}") from exc


def _read_json(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotFormatError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise SnapshotFormatError(f"{path}: top level must be an object")
    return data


def dumps(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def save_snapshot(snapshot: MemorySnapshot, path) -> None:
    Path(path).write_text(dumps(snapshot.to_dict()), encoding="utf-8")


def load_snapshot(path) -> MemorySnapshot:
    return MemorySnapshot.from_dict(_read_json(path))


def update_evidence(item, corrected_label: Label) -> EvidenceCounts:
    """Evidence after one more corrected label for a surfaced broad or local item."""
    ev = EvidenceCounts(item.evidence.support, item.evidence.contradiction)
    ev.record(item.recommended_label == Label(corrected_label))
    return ev


class ReportBank:
    """Append-only, cumulative store of corrected failures."""

    def __init__(self, reports: Iterable[Report] = ()):
        self._reports: list[Report] = []
        self._keys: set[tuple[str, int]] = set()
        for report in reports:
            self.record(report)

    def record(self, report: Report) -> None:
        key = (report.case.case_id, report.day)
        if key in self._keys:
            raise DuplicateReportError(
                f"case {report.case.case_id} already reported on day {report.day}")
        self._keys.add(key)
        self._reports.append(report)

    def __len__(self) -> int:
        return len(self._reports)

    def __iter__(self) -> Iterator[Report]:
        return iter(self._reports)

    def on_day(self, day: int) -> list[Report]:
        return [r for r in self._reports if r.day == day]

    @property
    def reports(self) -> list[Report]:
        return list(self._reports)

    def to_dict(self) -> dict:
        return {"reports": [r.to_dict() for r in self._reports]}

    @classmethod
    def from_dict(cls, data: dict) -> "ReportBank":
        reports = []
        for i, item in enumerate(data.get("reports", [])):
            reports.append(_parse_record(Report, item, f"reports[{i}]"))
        return cls(reports)


def record_report(bank: ReportBank, report: Report) -> ReportBank:
    bank.record(report)
    return bank


def save_reports(bank: ReportBank, path) -> None:
    Path(path).write_text(dumps(bank.to_dict()), encoding="utf-8")


def load_reports(path) -> ReportBank:
    return ReportBank.from_dict(_read_json(path))


@dataclass
class MemoryState:
    """Writer-side memory: raw candidates, runtime evidence ledgers, live snapshot.

    Runtime ledgers are keyed by statement text (broad) or by
    ``region || label`` (local) so counts follow an item across rebuilds only
    while that exact text survives.
    """

    snapshot: MemorySnapshot = field(default_factory=MemorySnapshot)
    candidates: list = field(default_factory=list)
    broad_runtime: dict = field(default_factory=dict)
    local_runtime: dict = field(default_factory=dict)
    induced_days: set = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "snapshot": self.snapshot.to_dict(),
            "candidates": [c.to_dict() for c in self.candidates],
            "broad_runtime": {k: v.to_dict() for k, v in sorted(self.broad_runtime.items())},
            "local_runtime": {k: v.to_dict() for k, v in sorted(self.local_runtime.items())},
            "induced_days": sorted(self.induced_days),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MemoryState":
        try:
            return cls(
                snapshot=MemorySnapshot.from_dict(data["snapshot"]),
                candidates=[_parse_record(BroadPolicy, c, f"candidates[{i}]")
                            for i, c in enumerate(data["candidates"])],
                broad_runtime={k: EvidenceCounts.from_dict(v)
                               for k, v in data["broad_runtime"].items()},
                local_runtime={k: EvidenceCounts.from_dict(v)
                               for k, v in data["local_runtime"].items()},
                induced_days=set(data.get("induced_days", [])),
            )
        except KeyError as exc:
            raise SnapshotFormatError(f"state is missing key {exc}") from exc

    def copy(self) -> "MemoryState":
        return MemoryState.from_dict(self.to_dict())


def save_state(state: MemoryState, path) -> None:
    Path(path).write_text(dumps(state.to_dict()), encoding="utf-8")


def load_state(path) -> MemoryState:
    return MemoryState.from_dict(_read_json(path))


def local_key(region_summary: str, label: Label) -> str:
    return f"{region_summary}||{Label(label).name}"


__all__ = [
    "BroadPolicy", "CaseRecord", "DuplicateReportError", "LocalRule", "MemorySnapshot",
    "MemoryState", "Report", "ReportBank", "SnapshotFormatError", "load_reports",
    "load_snapshot", "load_state", "local_key", "record_report",
    "save_reports", "save_snapshot", "save_state", "update_evidence",
]
