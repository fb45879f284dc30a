"""Closed-form bit budgets and bits-needed histogram post-processing."""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Optional, Sequence


class AnalysisError(ValueError):
    pass


def _positive(**kw) -> None:
    for name, v in kw.items():
        if not v > 0:
            raise AnalysisError(f"{name} must be > 0, got {v}")


def min_u_exceeding(bound: int) -> int:
    """Smallest u >= 1 with 2^u > bound."""
    return max(1, int(bound).bit_length())


def _ceil_ratio(num: float, den: float) -> int:
    # decimal-exact so that e.g. 10 / 0.1 is exactly 100
    return math.ceil(Fraction(str(num)) / Fraction(str(den)))


def theorem1_min_u(epsilon: float, delta_loc: float, delta_se: float, delta_re: float) -> int:
    """Sufficient extraneous bits for overflow-free timestamping in the worst case."""
    _positive(epsilon=epsilon, delta_loc=delta_loc, delta_se=delta_se, delta_re=delta_re)
    return min_u_exceeding(_ceil_ratio(epsilon, min(delta_loc, delta_se, delta_re)))


def eq1_expected_u(epsilon: float, av_comp: float, av_tr: float) -> int:
    """Bits expected to suffice using average event spacing and average message delay."""
    _positive(epsilon=epsilon, av_comp=av_comp, av_tr=av_tr)
    return min_u_exceeding(_ceil_ratio(epsilon, min(av_comp, av_tr)))


@dataclass(frozen=True)
class EmpiricalFormulaParams:
    S: float  # messages per node per millisecond
    epsilon_ms: float
    delta_se_us: float
    delta_re_us: float
    K: float = 2.9

    def __post_init__(self):
        _positive(K=self.K, S=self.S, epsilon_ms=self.epsilon_ms, delta_se_us=self.delta_se_us,
                  delta_re_us=self.delta_re_us)


def empirical_u(p: EmpiricalFormulaParams) -> int:
    """Fitted estimate of wait-free u; units are mixed (S per ms, eps in ms, deltas in us) on purpose."""
    rate_term = math.log2(1000 * p.S ** 2 / min(p.delta_re_us, p.delta_se_us))
    skew_term = math.log2(p.epsilon_ms) / math.log2(p.S + 1)
    return math.ceil((rate_term + skew_term) / p.K)


def theorem3_bound(epsilon_ticks: int, u: int) -> int:
    if not 0 <= u < 63:
        raise AnalysisError("u must be in [0, 63)")
    return epsilon_ticks + (1 << (u + 1))


def raw_waitfree_u(hist: Sequence[int]) -> int:
    if not hist or sum(hist) == 0:
        raise AnalysisError("empty histogram")
    return max(i for i, c in enumerate(hist) if c)


def waitfree_u(hist: Sequence[int]) -> int:
    """Widest lpt seen, floored at 1 because u must be positive."""
    return max(1, raw_waitfree_u(hist))


def delayed_fraction(hist: Sequence[int], u: int) -> float:
    """Share of events whose lpt would not fit in ``u`` bits (first-order estimate)."""
    if u < 1:
        raise AnalysisError("u must be >= 1")
    total = sum(hist)
    if total == 0:
        raise AnalysisError("empty histogram")
    return sum(hist[u + 1:]) / total


def predictions(epsilon: float, delta_loc: float, delta_se: float, delta_re: float, send_rate: float,
                latency_min: float, latency_max: float, K: float = 2.9) -> dict[str, Optional[int]]:
    """The three closed-form u estimates for one simulator configuration (all times in us).

    ``send_rate`` is per node per second. Entries are None where a formula is
    undefined (zero skew or zero traffic).
    """
    out: dict[str, Optional[int]] = {"worst_case_u": None, "average_case_u": None, "empirical_u": None}
    if epsilon <= 0:
        return out
    out["worst_case_u"] = theorem1_min_u(epsilon, delta_loc, delta_se, delta_re)
    if send_rate > 0:
        out["average_case_u"] = eq1_expected_u(epsilon, 1e6 / send_rate, (latency_min + latency_max) / 2)
        out["empirical_u"] = empirical_u(EmpiricalFormulaParams(send_rate / 1000, epsilon / 1000, delta_se, delta_re, K))
    return out
