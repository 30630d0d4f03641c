"""Beta-posterior confidence scores and the label-specific reuse gate.

A broad policy carries support/contradiction counts (s, c).  With a uniform
Beta(1, 1) prior its posterior reliability is Beta(1 + s, 1 + c), and the
confidence score is the lower ``delta`` quantile of that posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from guardmem.labels import Label

DEFAULT_DELTA = 0.05
DEFAULT_TAU = 0.55

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 1000


class EmptyEvidenceError(ValueError):
    """Raised when a ratio is requested from zero observations."""


@dataclass
class EvidenceCounts:
    support: int = 0
    contradiction: int = 0

    def __post_init__(self):
        if self.support < 0 or self.contradiction < 0:
            raise ValueError(f"negative evidence counts: {self}")

    @property
    def total(self) -> int:
        return self.support + self.contradiction

    def record(self, matched: bool) -> None:
        if matched:
            self.support += 1
        else:
            self.contradiction += 1

    def __add__(self, other: "EvidenceCounts") -> "EvidenceCounts":
        return EvidenceCounts(self.support + other.support,
                              self.contradiction + other.contradiction)

    def to_dict(self) -> dict:
        return {"support": self.support, "contradiction": self.contradiction}

    @classmethod
    def from_dict(cls, data: dict) -> "EvidenceCounts":
        return cls(int(data["support"]), int(data["contradiction"]))


@dataclass(frozen=True)
class GatingConfig:
    delta: float = DEFAULT_DELTA
    tau_refuse: float = DEFAULT_TAU
    tau_allow: float = DEFAULT_TAU

    def __post_init__(self):
        _check_delta(self.delta)
        for name in ("tau_refuse", "tau_allow"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    def threshold(self, label: Label) -> float:
        return self.tau_refuse if Label(label) is Label.REFUSE else self.tau_allow

    def to_dict(self) -> dict:
        return {"delta": self.delta, "tau_refuse": self.tau_refuse,
                "tau_allow": self.tau_allow}

    @classmethod
    def from_dict(cls, data: dict) -> "GatingConfig":
        """Missing keys take their defaults; unknown keys are rejected."""
        unknown = set(data) - {"delta", "tau_refuse", "tau_allow"}
        if unknown:
            raise ValueError(f"unknown gating keys: {', '.join(sorted(unknown))}")
        return cls(float(data.get("delta", DEFAULT_DELTA)),
                   float(data.get("tau_refuse", DEFAULT_TAU)),
                   float(data.get("tau_allow", DEFAULT_TAU)))


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {delta}")


def _betacf(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete beta continued fraction.
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b), the CDF of Beta(a, b) at ``x``."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # The fraction converges fast only on one side of the mean; use symmetry otherwise.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def beta_lower_quantile(s: int, c: int, delta: float = DEFAULT_DELTA,
                        max_iter: int = 200) -> float:
    """Lower ``delta`` quantile of Beta(1 + s, 1 + c), found by bisection.

    The bracket is halved until it stops shrinking in floating point (about
    55 steps), which keeps the CDF residual far below 1e-9.
    """
    _check_delta(delta)
    if s < 0 or c < 0:
        raise ValueError("counts must be non-negative")
    a, b = 1.0 + s, 1.0 + c
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if regularized_incomplete_beta(mid, a, b) < delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def confidence(ev: EvidenceCounts, delta: float = DEFAULT_DELTA) -> float:
    return beta_lower_quantile(ev.support, ev.contradiction, delta)


def gate(label: Label, conf: float, cfg: GatingConfig) -> bool:
    """Surface an item only if its confidence reaches its label's threshold."""
    return conf >= cfg.threshold(label)


def empirical_accuracy(ev: EvidenceCounts) -> float:
    if ev.total == 0:
        raise EmptyEvidenceError("no evidence recorded; accuracy is undefined")
    return ev.support / ev.total


def hoeffding_lower(s: int, c: int, delta: float = DEFAULT_DELTA) -> float:
    """Hoeffding lower bound on the success rate; intentionally unclamped."""
    _check_delta(delta)
    n = s + c
    if n <= 0:
        raise EmptyEvidenceError("Hoeffding bound needs at least one observation")
    return s / n - math.sqrt(math.log(1.0 / delta) / (2.0 * n))


def minimal_support(tau: float, delta: float, contradictions: int,
                    max_support: int = 100_000) -> int:
    """Smallest support count that passes ``tau`` with the given contradictions."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    _check_delta(delta)
    # confidence is nondecreasing in s, so an exponential then binary search works
    if beta_lower_quantile(0, contradictions, delta) >= tau:
        return 0
    hi = 1
    while beta_lower_quantile(hi, contradictions, delta) < tau:
        hi *= 2
        if hi > max_support:
            raise ValueError("threshold not reachable within max_support")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if beta_lower_quantile(mid, contradictions, delta) >= tau:
            hi = mid
        else:
            lo = mid
    return hi
