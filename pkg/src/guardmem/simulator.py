"""Seeded deployment simulation: daily streams, sparse noisy feedback, refresh, evaluation."""

from __future__ import annotations

import csv
import io
import logging
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from guardmem.evidence import EvidenceCounts, GatingConfig
from guardmem.guardrail import (GuardModel, MemoryIndex, MethodSpec, StubGuardModel,
                                ProviderUnavailableError, apply_feedback, decide, get_method)
from guardmem.induction import PolicyInducer, RefreshError, RefreshOptions, StubInducer, refresh
from guardmem.labels import ALLOW, REFUSE, Label
from guardmem.memory import (CaseRecord, MemoryState, Report, ReportBank, dumps,
                             save_reports, save_snapshot, save_state)
from guardmem.retrieval import Embedder, HashingEmbedder
from guardmem.world import SyntheticWorld, WorldParams

log = logging.getLogger(__name__)

CSV_HEADER = ["day", "method", "seed", "accuracy", "macro_f1", "latency",
              "broad_count", "local_count"]
OFFLINE_TOKENS_IN = 427
OFFLINE_TOKENS_OUT = 2300


@dataclass
class DeploymentConfig:
    days: int = 10
    stream_per_day: int = 50
    heldout_size: int = 500
    noise_rho: float = 0.0
    seed: int = 0
    method: str = "lisa"
    gating: GatingConfig = field(default_factory=GatingConfig)
    fail_closed: bool = True
    world_seed: int = 7

    def __post_init__(self):
        if isinstance(self.gating, dict):
            self.gating = GatingConfig.from_dict(self.gating)
        if not 0.0 <= self.noise_rho <= 1.0:
            raise ValueError(f"noise_rho must lie in [0, 1], got {self.noise_rho}")
        if self.days < 0 or self.stream_per_day < 0 or self.heldout_size < 0:
            raise ValueError("sizes must be non-negative")
        get_method(self.method)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["gating"] = self.gating.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "DeploymentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class Providers:
    guard: GuardModel
    inducer: PolicyInducer
    embedder: Embedder


def stub_providers(world: SyntheticWorld) -> Providers:
    return Providers(StubGuardModel(world.base_label),
                     StubInducer(salient_keys=world.salient_keys()), HashingEmbedder())


@dataclass
class MetricsRow:
    day: int
    method: str
    seed: int
    accuracy: float
    macro_f1: float
    precision: dict
    recall: dict
    f1: dict
    undefined_f1: tuple
    latency: float
    broad_count: int
    local_count: int
    reports: int = 0
    amortized_tokens_in: float = 0.0
    amortized_tokens_out: float = 0.0

    def csv_row(self) -> list:
        return [self.day, self.method, self.seed, f"{self.accuracy:.6f}", f"{self.macro_f1:.6f}",
                f"{self.latency:.6f}", self.broad_count, self.local_count]


def classification_metrics(truth: Sequence[Label], pred: Sequence[Label]) -> dict:
    """Accuracy, per-class precision/recall/F1 and macro-F1 over both classes.

    A class whose F1 is undefined (no predicted and no true members, or a
    zero precision/recall denominator) scores 0 and is listed in ``undefined``.
    """
    n = len(truth)
    if n == 0:
        raise ValueError("no examples to score")
    acc = sum(1 for t, p in zip(truth, pred) if t == p) / n
    precision, recall, f1, undefined = {}, {}, {}, []
    for cls in (ALLOW, REFUSE):
        tp = sum(1 for t, p in zip(truth, pred) if t == cls and p == cls)
        fp = sum(1 for t, p in zip(truth, pred) if t != cls and p == cls)
        fn = sum(1 for t, p in zip(truth, pred) if t == cls and p != cls)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        if tp + fp == 0 or tp + fn == 0 or prec + rec == 0:
            undefined.append(cls.name)
            score = 0.0
        else:
            score = 2 * prec * rec / (prec + rec)
        precision[cls.name], recall[cls.name], f1[cls.name] = prec, rec, score
    return {"accuracy": acc, "precision": precision, "recall": recall, "f1": f1,
            "macro_f1": (f1["ALLOW"] + f1["REFUSE"]) / 2, "undefined": tuple(undefined)}


def amortized_cost(tokens_in: float = OFFLINE_TOKENS_IN, tokens_out: float = OFFLINE_TOKENS_OUT,
                   reuse_k: int = 1) -> tuple[float, float]:
    """Offline induction tokens per guarded decision when a policy is reused ``reuse_k`` times."""
    if reuse_k < 1:
        raise ValueError("reuse count must be at least 1")
    return tokens_in / reuse_k, tokens_out / reuse_k


def apply_noise(reports: Sequence[Report], rho: float, rng: random.Random) -> list[Report]:
    """Flip each corrected label independently with probability ``rho``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    out = []
    for r in reports:
        if rng.random() < rho:
            out.append(Report(r.case, r.predicted_label, r.corrected_label.flipped(), r.day, True))
        else:
            out.append(r)
    return out


# ---------------------------------------------------------------- data

@dataclass
class DataSplit:
    stream: list  # per day: list of CaseRecord
    heldout: list
    stream_groups: set
    heldout_groups: set


def build_split(world: SyntheticWorld, cfg: DeploymentConfig) -> DataSplit:
    """Group-preserving stream/held-out split and sampled cases."""
    rng = random.Random(f"split:{cfg.seed}")
    groups = world.groups()
    order = list(range(len(groups)))
    rng.shuffle(order)
    half = len(order) // 2
    held_groups = [groups[i] for i in sorted(order[:half])]
    stream_groups = [groups[i] for i in sorted(order[half:])]

    def sample(pool, n, prefix):
        cases = []
        for k in range(n):
            gid, attrs = pool[rng.randrange(len(pool))]
            cases.append(world.make_case(f"{prefix}{k:05d}", gid, attrs, rng.randrange(3)))
        return cases

    heldout = sample(held_groups, cfg.heldout_size, "h")
    stream_flat = sample(stream_groups, cfg.days * cfg.stream_per_day, "s")
    stream = [stream_flat[d * cfg.stream_per_day:(d + 1) * cfg.stream_per_day]
              for d in range(cfg.days)]
    return DataSplit(stream, heldout, {g for g, _ in stream_groups}, {g for g, _ in held_groups})


# ---------------------------------------------------------------- loop

@dataclass
class SimulationState:
    config: DeploymentConfig
    method: MethodSpec
    world: SyntheticWorld
    providers: Providers
    memory: MemoryState
    bank: ReportBank = field(default_factory=ReportBank)
    noise_rng: random.Random = None
    induction_calls: int = 0

    def index(self) -> MemoryIndex:
        cases = list(self.bank) if self.method.use_cases else []
        return MemoryIndex(self.memory.snapshot, self.providers.embedder, cases)


def run_day(state: SimulationState, day: int, cases: Sequence[CaseRecord]):
    """Decide every stream case, then report only this method's misclassifications."""
    index = state.index()
    decisions = [decide(c, index, state.providers.guard, state.method,
                        fail_closed=state.config.fail_closed) for c in cases]
    reports = []
    attributed = []
    for case, decision in zip(cases, decisions):
        truth = state.world.label_case(case)
        if decision.label != truth:
            reports.append(Report(case, decision.label, truth, day))
            attributed.append(decision)
    reports = apply_noise(reports, state.config.noise_rho, state.noise_rng)
    return decisions, list(zip(reports, attributed))


def collect_feedback(state: SimulationState, feedback) -> None:
    """Record reports and fold surfaced-item evidence into the runtime ledgers, in report order."""
    snapshot = state.memory.snapshot
    for report, decision in feedback:
        state.bank.record(report)
        for upd in apply_feedback(decision, report.corrected_label, snapshot):
            ledger = state.memory.broad_runtime if upd.kind == "broad" else state.memory.local_runtime
            ev = ledger.setdefault(upd.key, EvidenceCounts())
            ev.record(upd.matched)


def evaluate_heldout(state: SimulationState, heldout: Sequence[CaseRecord], day: int) -> MetricsRow:
    index = state.index()
    decisions = [decide(c, index, state.providers.guard, state.method,
                        fail_closed=state.config.fail_closed) for c in heldout]
    truth = [state.world.label_case(c) for c in heldout]
    pred = [d.label for d in decisions]
    m = classification_metrics(truth, pred)
    snap = state.memory.snapshot
    reused = sum(1 for d in decisions if d.surfaced_broad_ids)
    reports = len(state.bank)
    tin, tout = (amortized_cost(OFFLINE_TOKENS_IN * reports, OFFLINE_TOKENS_OUT * reports, reused)
                 if reused and state.method.use_broad else (0.0, 0.0))
    return MetricsRow(
        day=day, method=state.method.name, seed=state.config.seed,
        accuracy=m["accuracy"], macro_f1=m["macro_f1"], precision=m["precision"],
        recall=m["recall"], f1=m["f1"], undefined_f1=m["undefined"],
        latency=float(np.mean([d.simulated_latency for d in decisions])) if decisions else 0.0,
        broad_count=len(snap.broad) if state.method.use_broad else 0,
        local_count=len(snap.local) if state.method.use_local else 0,
        reports=reports, amortized_tokens_in=tin, amortized_tokens_out=tout,
    )


@dataclass
class ExperimentResult:
    config: DeploymentConfig
    initial: MetricsRow
    rows: list
    state: MemoryState
    bank: ReportBank
    split: DataSplit
    partial: bool = False
    error: str | None = None

    @property
    def final(self) -> MetricsRow | None:
        return self.rows[-1] if self.rows else self.initial


def run_experiment(config: DeploymentConfig, providers: Providers | None = None,
                   world: SyntheticWorld | None = None) -> ExperimentResult:
    world = world or SyntheticWorld(params=WorldParams(world_seed=config.world_seed))
    providers = providers or stub_providers(world)
    method = get_method(config.method)
    split = build_split(world, config)
    state = SimulationState(config, method, world, providers,
                            MemoryState(), noise_rng=random.Random(f"noise:{config.seed}"))
    state.memory.snapshot = type(state.memory.snapshot)(gating=config.gating)
    options = RefreshOptions(build_local=method.use_local, gating=config.gating)

    rows = []
    initial = None
    try:
        initial = evaluate_heldout(state, split.heldout, 0)
        for day in range(1, config.days + 1):
            _, feedback = run_day(state, day, split.stream[day - 1])
            collect_feedback(state, feedback)
            if method.use_broad or method.use_local:
                state.memory = refresh(state.bank, state.memory, providers.inducer,
                                       providers.embedder, options)
            rows.append(evaluate_heldout(state, split.heldout, day))
    except (ProviderUnavailableError, RefreshError) as exc:
        log.error("run aborted after %d day(s): %s", len(rows), exc)
        return ExperimentResult(config, initial, rows, state.memory, state.bank, split,
                                partial=True, error=str(exc))
    return ExperimentResult(config, initial, rows, state.memory, state.bank, split)


# ---------------------------------------------------------------- outputs

def metrics_csv(rows: Sequence[MetricsRow], extra: Sequence[list] = ()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.csv_row())
    for row in extra:
        writer.writerow(row)
    return buf.getvalue()


def aggregate(results: Sequence[ExperimentResult]) -> list[list]:
    """Per-day mean and std rows across seeds (``seed`` column holds the statistic name)."""
    if not results:
        return []
    method = results[0].config.method
    out = []
    for d in range(len(results[0].rows)):
        rows = [r.rows[d] for r in results if d < len(r.rows)]
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            out.append([rows[0].day, method, stat,
                        f"{fn([r.accuracy for r in rows]):.6f}",
                        f"{fn([r.macro_f1 for r in rows]):.6f}",
                        f"{fn([r.latency for r in rows]):.6f}",
                        f"{fn([r.broad_count for r in rows]):.6f}",
                        f"{fn([r.local_count for r in rows]):.6f}"])
    return out


def run_seeds(config: DeploymentConfig, seeds: Sequence[int],
              make_providers: Callable[[SyntheticWorld], Providers] | None = None,
              ) -> list[ExperimentResult]:
    """One run per seed; ``make_providers`` builds fresh providers for each run."""
    results = []
    for seed in seeds:
        cfg = DeploymentConfig.from_dict({**config.to_dict(), "seed": seed})
        world = SyntheticWorld(params=WorldParams(world_seed=cfg.world_seed))
        providers = make_providers(world) if make_providers else None
        results.append(run_experiment(cfg, providers, world))
    return results


def write_outputs(results: Sequence[ExperimentResult], out_dir) -> dict:
    """Write metrics CSV, final snapshots and report banks; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    method = results[0].config.method
    rows = [row for r in results for row in r.rows]
    extra = aggregate(results) if len(results) > 1 else []
    paths = {"metrics": out / f"metrics_{method}.csv"}
    paths["metrics"].write_text(metrics_csv(rows, extra), encoding="utf-8")
    for r in results:
        tag = f"{method}_seed{r.config.seed}"
        snap_path = out / f"snapshot_{tag}.json"
        save_snapshot(r.state.snapshot, snap_path)
        save_reports(r.bank, out / f"reports_{tag}.json")
        save_state(r.state, out / f"state_{tag}.json")
        paths.setdefault("snapshots", []).append(snap_path)
    (out / f"config_{method}.json").write_text(dumps(results[0].config.to_dict()), encoding="utf-8")
    return paths


def final_f1(results: Sequence[ExperimentResult]) -> float:
    return float(np.mean([r.final.macro_f1 for r in results]))
