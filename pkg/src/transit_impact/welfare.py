"""Logsum consumer surplus and the disparity / insufficiency equity indices.

Surplus is in dollars per trip. The logsum is divided by ``|theta_cost|``
(the marginal utility of income under the disutility sign convention), so
better service gives a positive dollar gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .demand import ChoiceParams, Segment

THRESHOLD_FRACTIONS = (0.10, 0.50)


def transit_utility(params: ChoiceParams, t_at: float, t_et: float, t_ivt: float, n_t: float,
                    fare: float) -> float:
    v = (params.theta_transit_at * t_at + params.theta_transit_et * t_et + params.theta_transit_ivt * t_ivt
         + params.theta_transit_nt * n_t + params.theta_cost * fare + params.asc_transit)
    if not math.isfinite(v):
        raise ValueError("transit utility is not finite")
    return v


def logsum(utilities: Sequence[float]) -> float:
    m = max(utilities)
    return m + math.log(math.fsum(math.exp(v - m) for v in utilities))


def expected_cs(params: ChoiceParams, v_transit: float, p_transit: float) -> float:
    """Expected surplus per trip, recovered from transit's utility and share alone.

    For a logit model ``ln(sum_j exp V_j) = V_transit - ln p_transit``.
    """
    if not 0 < p_transit <= 1:
        raise ValueError(f"transit share {p_transit} must be in (0, 1]")
    return (v_transit - math.log(p_transit)) / abs(params.theta_cost)


def delta_cs(params: ChoiceParams, p: float, p_new: float, dt: Sequence[float]) -> float:
    """Change in expected surplus per trip from transit time changes ``dt`` (minutes)."""
    if not (0 < p <= 1 and 0 < p_new <= 1):
        raise ValueError(f"transit shares must be in (0, 1], got {p} -> {p_new}")
    at, et, ivt = params.transit_time_thetas
    dv = at * dt[0] + et * dt[1] + ivt * dt[2]
    return (math.log(p / p_new) + dv) / abs(params.theta_cost)


@dataclass(frozen=True)
class WelfareRecord:
    key: tuple[str, str, str]
    segment: Segment
    trips: float
    cs_pre: float
    delta: float
    corridor: bool = False

    @property
    def cs_post(self) -> float:
        return self.cs_pre + self.delta

    @property
    def low_income(self) -> bool:
        return self.segment is Segment.LOW_INCOME


def _weighted_mean(pairs: Iterable[tuple[float, float]]) -> float:
    pairs = list(pairs)
    den = math.fsum(w for _, w in pairs)
    if den <= 0:
        raise ValueError("no trips in scope")
    return math.fsum(v * w for v, w in pairs) / den


def csdi(values: Sequence[tuple[float, float, bool]]) -> float:
    """Low-income trip-weighted mean surplus over the all-trip mean.

    ``values`` holds ``(surplus, trips, is_low_income)`` per group.
    """
    if not any(low for _, _, low in values):
        raise ValueError("no low-income groups")
    low = _weighted_mean((cs, d) for cs, d, is_low in values if is_low)
    everyone = _weighted_mean((cs, d) for cs, d, _ in values)
    if everyone == 0:
        raise ZeroDivisionError("population average surplus is zero")
    return low / everyone


def csii(values: Sequence[tuple[float, float]], z: float) -> tuple[float, float]:
    """Insufficiency index and rate for ``(surplus, trips)`` pairs at threshold ``z``.

    Returns ``(trip-weighted mean squared relative shortfall, share of trips below z)``.
    The relative shortfall is capped at 1, so negative surplus counts as a
    full shortfall and the index stays in [0, 1].
    """
    if not z > 0:
        raise ValueError("threshold must be positive")
    if not values:
        raise ValueError("empty scope")
    den = math.fsum(d for _, d in values)
    if den <= 0:
        raise ValueError("no trips in scope")
    index = math.fsum(min(1.0, max(0.0, (z - cs) / z)) ** 2 * d for cs, d in values) / den
    rate = math.fsum(d for cs, d in values if cs < z) / den
    return index, rate


@dataclass
class EquityReport:
    thresholds: dict[str, float]
    csdi_pre: float
    csdi_post: float
    # scope -> threshold label -> value
    csii_pre: dict[str, dict[str, float]] = field(default_factory=dict)
    csii_post: dict[str, dict[str, float]] = field(default_factory=dict)
    rate_pre: dict[str, dict[str, float]] = field(default_factory=dict)
    rate_post: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def csdi_delta(self) -> float:
        return self.csdi_post - self.csdi_pre

    def rows(self) -> list[tuple[str, str, str, float, float, float]]:
        """Flat ``(metric, scope, threshold, pre, post, delta)`` rows."""
        out = [("csdi", "low_income", "", self.csdi_pre, self.csdi_post, self.csdi_delta)]
        for metric, pre, post in (("csii", self.csii_pre, self.csii_post),
                                  ("insufficiency_rate", self.rate_pre, self.rate_post)):
            for scope in pre:
                for label in pre[scope]:
                    a, b = pre[scope][label], post[scope][label]
                    out.append((metric, scope, label, a, b, b - a))
        return out

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds,
            "csdi_pre": self.csdi_pre,
            "csdi_post": self.csdi_post,
            "csdi_delta": self.csdi_delta,
            "csii": {scope: {label: {"pre": self.csii_pre[scope][label], "post": self.csii_post[scope][label],
                                     "delta": self.csii_post[scope][label] - self.csii_pre[scope][label]}
                             for label in self.csii_pre[scope]} for scope in self.csii_pre},
            "insufficiency_rate": {scope: {label: {"pre": self.rate_pre[scope][label],
                                                   "post": self.rate_post[scope][label],
                                                   "delta": self.rate_post[scope][label] - self.rate_pre[scope][label]}
                                           for label in self.rate_pre[scope]} for scope in self.rate_pre},
        }


def equity_report(pre: Sequence[tuple[tuple, float, float, bool]], post: Sequence[tuple[tuple, float, float, bool]],
                  fractions: Sequence[float] = THRESHOLD_FRACTIONS) -> EquityReport:
    """Disparity and insufficiency before and after, on ``(key, surplus, trips, low_income)`` rows.

    Thresholds are fractions of the pre-scenario all-trip mean surplus and
    are held fixed for the post-scenario figures.
    """
    if [r[0] for r in pre] != [r[0] for r in post]:
        raise ValueError("pre and post records do not cover the same groups in the same order")
    mean_pre = _weighted_mean((cs, d) for _, cs, d, _ in pre)
    thresholds = {f"{round(f * 100):g}pct": f * mean_pre for f in fractions}
    report = EquityReport(thresholds,
                          csdi([(cs, d, low) for _, cs, d, low in pre]),
                          csdi([(cs, d, low) for _, cs, d, low in post]))
    for scope, keep in (("low_income", lambda low: low), ("all", lambda low: True)):
        for rows, idx, rates in ((pre, report.csii_pre, report.rate_pre), (post, report.csii_post, report.rate_post)):
            vals = [(cs, d) for _, cs, d, low in rows if keep(low)]
            idx[scope], rates[scope] = {}, {}
            for label, z in thresholds.items():
                idx[scope][label], rates[scope][label] = csii(vals, z)
    return report
