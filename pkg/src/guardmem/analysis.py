"""Numerical checks of the conflict-mass and confidence-bound results on discrete distributions.

A broad state ``z`` has mass ``Pr(Z=z)`` and refuse rate ``eta``.  A
refinement splits it into sub-states ``u`` with conditional masses and their
own refuse rates, whose mixture must reproduce ``eta``.  The Bayes risk of a
state with refuse rate ``p`` is ``g(p) = min(p, 1 - p)``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from itertools import combinations
from statistics import NormalDist
from typing import Iterable

import numpy as np

from guardmem.evidence import (EvidenceCounts, beta_lower_quantile, confidence,
                               hoeffding_lower, minimal_support)

TOL = 1e-12


def g(p: float) -> float:
    return min(p, 1.0 - p)


@dataclass(frozen=True)
class SubState:
    state_id: str
    cond_mass: float
    eta: float


@dataclass(frozen=True)
class BroadState:
    state_id: str
    mass: float
    eta: float
    refinement: tuple = ()  # SubState, ...

    @property
    def parts(self) -> tuple:
        """Sub-states, or the state itself when it is not refined."""
        return self.refinement or (SubState(self.state_id, 1.0, self.eta),)

    def straddles(self) -> bool:
        """True if positive-mass sub-states lie strictly on both sides of 1/2."""
        live = [u.eta for u in self.parts if u.cond_mass > 0]
        return any(e < 0.5 for e in live) and any(e > 0.5 for e in live)


@dataclass(frozen=True)
class LabeledStateDistribution:
    states: tuple  # BroadState, ...

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        ids = [z.state_id for z in self.states]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate state ids")
        total = math.fsum(z.mass for z in self.states)
        if abs(total - 1.0) > TOL:
            raise ValueError(f"state masses sum to {total!r}, not 1")
        for z in self.states:
            if z.mass < 0 or not 0.0 <= z.eta <= 1.0:
                raise ValueError(f"state {z.state_id}: mass and eta must be valid probabilities")
            if not z.refinement:
                continue
            cond = math.fsum(u.cond_mass for u in z.refinement)
            if abs(cond - 1.0) > TOL:
                raise ValueError(f"state {z.state_id}: conditional masses sum to {cond!r}")
            if any(u.cond_mass < 0 or not 0.0 <= u.eta <= 1.0 for u in z.refinement):
                raise ValueError(f"state {z.state_id}: invalid sub-state")
            mix = math.fsum(u.cond_mass * u.eta for u in z.refinement)
            if abs(mix - z.eta) > TOL:
                raise ValueError(f"state {z.state_id}: sub-state mixture {mix!r} != eta {z.eta!r}")

    def state(self, state_id: str) -> BroadState:
        for z in self.states:
            if z.state_id == state_id:
                return z
        raise KeyError(state_id)


def conflict_mass(z: BroadState) -> float:
    return z.mass * g(z.eta)


def bayes_risk(dist: LabeledStateDistribution, level: str = "broad") -> float:
    if level == "broad":
        return math.fsum(conflict_mass(z) for z in dist.states)
    if level == "refined":
        return math.fsum(z.mass * u.cond_mass * g(u.eta) for z in dist.states for u in z.parts)
    raise ValueError(f"level must be 'broad' or 'refined', got {level!r}")


def refinement_gain(z: BroadState) -> float:
    refined = math.fsum(u.cond_mass * g(u.eta) for u in z.parts)
    return z.mass * (g(z.eta) - refined)


def random_distribution(rng: random.Random, n_states: int = 6, max_parts: int = 4,
                        snap: float = 0.25) -> LabeledStateDistribution:
    """Random distribution with every broad state refined into 1..max_parts sub-states.

    With probability ``snap`` a sub-state refuse rate is drawn from {0, 1/2, 1}
    so that pure and maximally uncertain cases occur often.
    """
    masses = _simplex(rng, n_states)
    states = []
    for i, m in enumerate(masses):
        k = rng.randint(1, max_parts)
        cond = _simplex(rng, k)
        etas = [rng.choice((0.0, 0.5, 1.0)) if rng.random() < snap else rng.random()
                for _ in range(k)]
        parts = tuple(SubState(f"z{i}.u{j}", c, e) for j, (c, e) in enumerate(zip(cond, etas)))
        eta = min(1.0, max(0.0, math.fsum(c * e for c, e in zip(cond, etas))))
        states.append(BroadState(f"z{i}", m, eta, parts))
    return LabeledStateDistribution(tuple(states))


def _simplex(rng: random.Random, k: int) -> list[float]:
    w = [rng.expovariate(1.0) for _ in range(k)]
    total = math.fsum(w)
    out = [x / total for x in w]
    out[-1] = 1.0 - math.fsum(out[:-1])  # exact normalization
    return out


def top_b_states(dist: LabeledStateDistribution, budget: int) -> list[str]:
    """Ids of the ``budget`` states with the largest conflict mass (ties by id)."""
    ranked = sorted(dist.states, key=lambda z: (-conflict_mass(z), z.state_id))
    return [z.state_id for z in ranked[:max(budget, 0)]]


def best_subset_bound(dist: LabeledStateDistribution, budget: int) -> float:
    """Largest summed conflict mass over all subsets of at most ``budget`` states (exhaustive)."""
    masses = [conflict_mass(z) for z in dist.states]
    best = 0.0
    for size in range(min(budget, len(masses)) + 1):
        for subset in combinations(masses, size):
            best = max(best, math.fsum(subset))
    return best


# ---------------------------------------------------------------- confidence bounds

@dataclass(frozen=True)
class GapRow:
    n: int
    theta_hat: float
    support: int
    contradiction: int
    beta_bound: float
    hoeffding_bound: float


def gap_curves(n_range: Iterable[int], accuracy_range: Iterable[float],
               delta: float = 0.05) -> list[GapRow]:
    """Beta-quantile and Hoeffding lower bounds with ``s = round(theta_hat * n)``."""
    accuracies = list(accuracy_range)
    rows = []
    for n in n_range:
        if n < 1:
            raise ValueError("n must be at least 1")
        for theta in accuracies:
            s = int(round(theta * n))
            c = n - s
            rows.append(GapRow(n, theta, s, c, beta_lower_quantile(s, c, delta),
                               hoeffding_lower(s, c, delta)))
    return rows


def predicted_gap_ratio(theta: float = 0.5, delta: float = 0.05) -> float:
    """Large-n limit of beta gap over Hoeffding gap: z_{1-delta} sqrt(theta(1-theta)) / sqrt(ln(1/delta)/2)."""
    z = NormalDist().inv_cdf(1.0 - delta)
    return z * math.sqrt(theta * (1.0 - theta)) / math.sqrt(math.log(1.0 / delta) / 2.0)


def observed_gap_ratio(n: int, theta: float = 0.5, delta: float = 0.05) -> float:
    row = gap_curves([n], [theta], delta)[0]
    emp = row.support / n
    return (emp - row.beta_bound) / (emp - row.hoeffding_bound)


def calibration_table(tau: float = 0.55, delta: float = 0.05,
                      max_contradictions: int = 5) -> list[tuple[int, int]]:
    """(c, minimal s) pairs for c = 0..max_contradictions."""
    if not 0.0 < tau < 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("tau and delta must lie in (0, 1)")
    return [(c, minimal_support(tau, delta, c)) for c in range(max_contradictions + 1)]


@dataclass(frozen=True)
class PosteriorCheck:
    support: int
    contradiction: int
    confidence: float
    prob_below_tau: float
    sigma: float
    mean_error: float


def posterior_check(s: int, c: int, tau: float = 0.55, delta: float = 0.05,
                    draws: int = 1_000_000, rng: np.random.Generator | None = None) -> PosteriorCheck:
    """Monte Carlo Pr(theta < tau) and E[1 - theta] under the Beta(1+s, 1+c) posterior."""
    rng = rng if rng is not None else np.random.default_rng(0)
    theta = rng.beta(1 + s, 1 + c, size=draws)
    p = float(np.mean(theta < tau))
    sigma = math.sqrt(delta * (1 - delta) / draws)
    return PosteriorCheck(s, c, confidence(EvidenceCounts(s, c), delta), p, sigma,
                          float(np.mean(1.0 - theta)))


def sample_passing_evidence(rng: random.Random, count: int, tau: float = 0.55,
                            delta: float = 0.05, max_n: int = 60) -> list[tuple[int, int]]:
    """Random (s, c) pairs whose confidence clears ``tau``."""
    out = []
    while len(out) < count:
        c = rng.randint(0, max_n // 3)
        s = rng.randint(0, max_n)
        if confidence(EvidenceCounts(s, c), delta) >= tau:
            out.append((s, c))
    return out


# ---------------------------------------------------------------- batch checks

@dataclass(frozen=True)
class CheckResult:
    name: str
    trials: int
    violations: int
    detail: str

    @property
    def passed(self) -> bool:
        return self.violations == 0


def check_conflict_bound(trials: int = 10_000, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    rng = random.Random(f"bound:{seed}")
    bad, worst = 0, -math.inf
    for _ in range(trials):
        dist = random_distribution(rng)
        for z in dist.states:
            slack = refinement_gain(z) - conflict_mass(z)
            worst = max(worst, slack)
            if slack > tol or refinement_gain(z) < -tol:
                bad += 1
    return CheckResult("conflict_bound", trials, bad, f"max gain - bound = {worst:.3e}")


def check_refinement(trials: int = 10_000, seed: int = 0, tol: float = 1e-12) -> CheckResult:
    """Refined risk never exceeds broad risk; strictly below when a state straddles 1/2."""
    rng = random.Random(f"refine:{seed}")
    bad = strict_needed = 0
    for _ in range(trials):
        dist = random_distribution(rng)
        broad, refined = bayes_risk(dist, "broad"), bayes_risk(dist, "refined")
        if refined > broad + tol:
            bad += 1
        if any(z.mass > 0 and z.straddles() for z in dist.states):
            strict_needed += 1
            if not refined < broad:
                bad += 1
    return CheckResult("refinement", trials, bad, f"{strict_needed} instances with a straddling state")


def check_ranking(trials: int = 200, seed: int = 0, max_states: int = 12) -> CheckResult:
    rng = random.Random(f"rank:{seed}")
    bad = 0
    for _ in range(trials):
        dist = random_distribution(rng, n_states=rng.randint(1, max_states))
        budget = rng.randint(0, len(dist.states))
        chosen = set(top_b_states(dist, budget))
        greedy = math.fsum(conflict_mass(z) for z in dist.states if z.state_id in chosen)
        if abs(greedy - best_subset_bound(dist, budget)) > 1e-12:
            bad += 1
    return CheckResult("ranking", trials, bad, f"top-B vs exhaustive, <= {max_states} states")


def check_posterior(count: int = 50, draws: int = 1_000_000, tau: float = 0.55,
                    delta: float = 0.05, seed: int = 0) -> CheckResult:
    rng = random.Random(f"posterior:{seed}")
    gen = np.random.default_rng(seed)
    bad = 0
    worst = 0.0
    for s, c in sample_passing_evidence(rng, count, tau, delta):
        res = posterior_check(s, c, tau, delta, draws, gen)
        worst = max(worst, res.prob_below_tau)
        if res.prob_below_tau > delta + 3 * res.sigma or res.mean_error > (1 - tau) + 0.05:
            bad += 1
    return CheckResult("posterior", count, bad, f"max Pr(theta < tau) = {worst:.5f}")


def run_checks(trials: int = 10_000, seed: int = 0, draws: int = 1_000_000) -> list[CheckResult]:
    return [check_conflict_bound(trials, seed), check_refinement(trials, seed),
            check_ranking(seed=seed), check_posterior(draws=draws, seed=seed)]


def tight_case() -> LabeledStateDistribution:
    """One state at eta = 1/2 split into two pure halves: gain equals the bound."""
    return LabeledStateDistribution((BroadState("z", 1.0, 0.5, (SubState("u0", 0.5, 0.0),
                                                                SubState("u1", 0.5, 1.0))),))


__all__ = [
    "BroadState", "CheckResult", "GapRow", "LabeledStateDistribution", "PosteriorCheck",
    "SubState", "bayes_risk", "best_subset_bound", "calibration_table", "check_conflict_bound",
    "check_posterior", "check_ranking", "check_refinement", "conflict_mass", "g", "gap_curves",
    "observed_gap_ratio", "posterior_check", "predicted_gap_ratio", "random_distribution",
    "refinement_gain", "run_checks", "sample_passing_evidence", "tight_case", "top_b_states",
]
