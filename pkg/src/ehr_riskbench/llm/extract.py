"""Turn a top-k next-token distribution into a two-way Yes/No probability.

Probabilities of every token whose trimmed, lowercased text equals a yes
variant (default just "yes") are summed, likewise for no variants, and a
softmax over the two sums gives the final probability. Because each sum is a
sub-total of one probability distribution, ``s_yes - s_no`` lies in [-1, 1],
so extracted probabilities live in [sigma(-1), sigma(1)], roughly
[0.269, 0.731]. When neither variant appears at all the result is an
indeterminate 0.5 rather than an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class TopKDistribution:
    """Token/probability pairs, sorted by non-increasing probability."""

    items: tuple[tuple[str, float], ...]

    def __post_init__(self):
        probs = [p for _, p in self.items]
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ValueError("top-k probabilities must lie in [0, 1]")
        if sum(probs) > 1.0 + 1e-6:
            raise ValueError("top-k probabilities must sum to at most 1")
        if any(probs[i] < probs[i + 1] for i in range(len(probs) - 1)):
            raise ValueError("top-k must be sorted by descending probability")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class YesNoProb:
    """Two-way probability with the raw sums kept for audit."""

    p_yes: float
    p_no: float
    indeterminate: bool
    s_yes: float
    s_no: float

    def __post_init__(self):
        if not math.isclose(self.p_yes + self.p_no, 1.0, abs_tol=1e-12):
            raise ValueError("p_yes + p_no must equal 1")
        if self.indeterminate != (self.s_yes == 0.0 and self.s_no == 0.0):
            raise ValueError("indeterminate must mirror zero raw sums")


def extract_yes_no(
    dist: TopKDistribution,
    yes_variants: tuple[str, ...] = ("yes",),
    no_variants: tuple[str, ...] = ("no",),
) -> YesNoProb:
    """Sum matching token probabilities and softmax the two sums.

    Matching is trim-plus-lowercase equality; subword fragments never match.
    The variant sets are parameters so the High/Low instruction probe can
    reuse the same extraction.
    """
    yes_set = {v.strip().lower() for v in yes_variants}
    no_set = {v.strip().lower() for v in no_variants}
    s_yes = 0.0
    s_no = 0.0
    for token, prob in dist.items:
        key = token.strip().lower()
        if key in yes_set:
            s_yes += prob
        elif key in no_set:
            s_no += prob
    if s_yes == 0.0 and s_no == 0.0:
        return YesNoProb(0.5, 0.5, True, 0.0, 0.0)
    # exp(s_yes) / (exp(s_yes) + exp(s_no)), computed stably
    p_yes = 1.0 / (1.0 + math.exp(-(s_yes - s_no)))
    return YesNoProb(p_yes, 1.0 - p_yes, False, s_yes, s_no)
