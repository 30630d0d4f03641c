"""Lifelong guardrail adaptation from sparse failure reports.

Broad policies induced from reported failures, conflict-aware local rules
for mixed-label regions, and Beta-posterior gating of broad-memory reuse.
"""

from guardmem.labels import ALLOW, REFUSE, Label

__version__ = "0.1.0"

__all__ = ["ALLOW", "REFUSE", "Label", "__version__"]
