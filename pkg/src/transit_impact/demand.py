"""Trip groups, choice parameters and the elasticity-based share update.

Coefficients are utility per minute (time) or per dollar (cost). Time
changes are minutes, negative meaning faster.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

MODES = ("private_vehicle", "transit", "on_demand", "biking", "walking", "carpool")
TRANSIT = MODES.index("transit")
AUTO = MODES.index("private_vehicle")
SHARE_TOL = 1e-9
GRAMS_PER_MILE = 400.0


class Segment(str, enum.Enum):
    LOW_INCOME = "LowIncome"
    NOT_LOW_INCOME = "NotLowIncome"
    SENIOR = "Senior"
    STUDENT = "Student"

    @classmethod
    def parse(cls, text: str) -> "Segment":
        key = text.strip().replace("_", "").replace("-", "").lower()
        for seg in cls:
            if seg.value.lower() == key:
                return seg
        raise ValueError(f"unknown segment {text!r}")


@dataclass(frozen=True)
class ChoiceParams:
    """Per-group taste coefficients and mode constants."""

    theta_auto_tt: float
    theta_cost: float
    theta_transit_at: float
    theta_transit_et: float
    theta_transit_ivt: float
    theta_transit_nt: float
    theta_nonvehicle_tt: float
    asc_driving: float = 0.0
    asc_transit: float = 0.0
    asc_on_demand: float = 0.0
    asc_biking: float = 0.0
    asc_walking: float = 0.0
    asc_carpool: float = 0.0

    def __post_init__(self):
        if self.theta_cost == 0:
            raise ValueError("theta_cost must be nonzero")
        positive = [f.name for f in fields(self) if f.name.startswith("theta") and getattr(self, f.name) > 0]
        if positive:
            log.warning("positive time/cost coefficient(s): %s", ", ".join(positive))

    @property
    def transit_time_thetas(self) -> tuple[float, float, float]:
        return self.theta_transit_at, self.theta_transit_et, self.theta_transit_ivt


PARAM_FIELDS = tuple(f.name for f in fields(ChoiceParams))


def aggregate_params(weighted: Iterable[tuple[ChoiceParams, float]]) -> ChoiceParams:
    """Demand-weighted average of parameter sets."""
    items = list(weighted)
    if not items:
        raise ValueError("no parameter sets to aggregate")
    if any(w <= 0 for _, w in items):
        raise ValueError("aggregation weights must be positive")
    total = math.fsum(w for _, w in items)
    values = {name: math.fsum(w * getattr(p, name) for p, w in items) / total for name in PARAM_FIELDS}
    # clip float noise back inside the input range
    for name in PARAM_FIELDS:
        vals = [getattr(p, name) for p, _ in items]
        values[name] = min(max(values[name], min(vals)), max(vals))
    return ChoiceParams(**values)


def value_of_time(params: ChoiceParams, which: str = "theta_transit_ivt") -> float:
    """Dollars per hour implied by a time coefficient."""
    if params.theta_cost == 0:
        raise ZeroDivisionError("theta_cost is zero")
    return abs(getattr(params, which) / params.theta_cost * 60.0)


# -- shares -------------------------------------------------------------------

def check_shares(shares: Sequence[float], tol: float = SHARE_TOL) -> None:
    if len(shares) != len(MODES):
        raise ValueError(f"expected {len(MODES)} mode shares, got {len(shares)}")
    if any(s < -tol or s > 1 + tol for s in shares):
        raise ValueError(f"mode share outside [0, 1]: {shares}")
    if abs(math.fsum(shares) - 1.0) > tol:
        raise ValueError(f"mode shares sum to {math.fsum(shares)!r}, not 1")


def point_elasticity(theta: float, p: float, t: float) -> float:
    """Logit point elasticity of a mode's share with respect to its time."""
    if not 0 < p < 1:
        raise ValueError(f"share {p} outside (0, 1)")
    return theta * (1 - p) * t


def elasticity_share(e: float, p: float, rel_dt: float) -> float:
    """Share after a relative time change ``rel_dt`` under elasticity ``e``."""
    if not 0 < p < 1:
        raise ValueError(f"share {p} outside (0, 1)")
    return min(1.0, max(0.0, p * (1 + e * rel_dt)))


def transit_share_update(params: ChoiceParams, p: float, dt: Sequence[float]) -> float:
    """New transit share from access/egress/in-vehicle time changes (minutes).

    First-order logit update, clamped to [0, 1].
    """
    if not 0 <= p <= 1:
        raise ValueError(f"share {p} outside [0, 1]")
    at, et, ivt = params.transit_time_thetas
    du = at * dt[0] + et * dt[1] + ivt * dt[2]
    return min(1.0, max(0.0, p * (1 + (1 - p) * du)))


def rescale_other_modes(shares: Sequence[float], p_new: float) -> tuple[float, ...]:
    """Scale the non-transit shares so the vector sums to one again."""
    p_old = shares[TRANSIT]
    if p_old >= 1:
        # nothing to scale: the freed share would have no mode to go to
        if p_new < 1:
            raise ValueError("cannot lower the transit share of an all-transit group")
        return tuple(shares)
    scale = (1 - p_new) / (1 - p_old)
    return tuple(p_new if m == TRANSIT else s * scale for m, s in enumerate(shares))


# -- groups -------------------------------------------------------------------

@dataclass
class TripGroup:
    origin: str
    destination: str
    segment: Segment
    trips: float
    shares: tuple[float, ...]
    period_weights: dict[str, float] = field(default_factory=dict)
    avg_auto_miles: float = 0.0
    fare_usd: float = 0.0
    auto_cost_usd: float = 0.0
    t_at: float = float("nan")
    t_et: float = float("nan")
    t_ivt: float = float("nan")
    n_t: float = 0.0

    def __post_init__(self):
        if not self.trips > 0:
            raise ValueError(f"group {self.key}: trip count must be positive")
        self.shares = tuple(float(s) for s in self.shares)
        check_shares(self.shares)
        if self.period_weights:
            total = math.fsum(self.period_weights.values())
            if any(w < 0 for w in self.period_weights.values()) or abs(total - 1) > 1e-6:
                raise ValueError(f"group {self.key}: period weights must be >= 0 and sum to 1")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.origin, self.destination, self.segment.value)

    @property
    def p_transit(self) -> float:
        return self.shares[TRANSIT]

    @property
    def has_baseline_times(self) -> bool:
        return not any(math.isnan(x) for x in (self.t_at, self.t_et, self.t_ivt))


def group_daily_delta(period_deltas: Mapping[str, tuple[float, float, float] | None],
                      weights: Mapping[str, float]) -> tuple[float, float, float]:
    """Trip-volume-weighted daily time change over the periods with a usable delta.

    ``period_deltas`` maps period label to ``(d_access, d_egress, d_ivt)`` in
    minutes, or ``None`` where the OD has no comparable journey. Weights of
    the usable periods are renormalised.
    """
    used = [(weights.get(k, 0.0), d) for k, d in period_deltas.items() if d is not None]
    wsum = math.fsum(w for w, _ in used)
    if not used or wsum <= 0:
        raise ValueError("OD has no usable delta in any weighted period")
    return tuple(math.fsum(w * d[c] for w, d in used) / wsum for c in range(3))


@dataclass
class GroupOutcome:
    """What the new line does to one trip group."""

    group: TripGroup
    delta: tuple[float, float, float] | None
    benefiting: bool
    shares_after: tuple[float, ...]
    ridership: float

    @property
    def delta_total(self) -> float:
        return math.fsum(self.delta) if self.delta is not None else 0.0

    @property
    def transit_increase(self) -> float:
        return self.group.trips * (self.shares_after[TRANSIT] - self.group.p_transit)

    def switched_from(self, mode: int) -> float:
        return self.group.trips * (self.group.shares[mode] - self.shares_after[mode])


def attribute_ridership(group: TripGroup, params: ChoiceParams,
                        delta: tuple[float, float, float] | None) -> GroupOutcome:
    """Apply the share update and credit the group's transit trips to the new line.

    Only a strict daily saving counts; otherwise the group keeps its
    baseline shares and contributes no riders.
    """
    if delta is None or math.fsum(delta) >= 0:
        return GroupOutcome(group, delta, False, group.shares, 0.0)
    p_new = transit_share_update(params, group.p_transit, delta)
    shares = rescale_other_modes(group.shares, p_new)
    return GroupOutcome(group, delta, True, shares, group.trips * p_new)


@dataclass(frozen=True)
class ModeShift:
    transit_increase: float
    switched: dict[str, float]

    @property
    def from_auto(self) -> float:
        return self.switched[MODES[AUTO]]


def mode_shift_summary(outcomes: Iterable[GroupOutcome]) -> ModeShift:
    """Transit gain and per-mode losses, summed in the given group order."""
    outcomes = list(outcomes)
    inc = math.fsum(o.transit_increase for o in outcomes)
    switched = {MODES[m]: math.fsum(o.switched_from(m) for o in outcomes)
                for m in range(len(MODES)) if m != TRANSIT}
    return ModeShift(inc, switched)


def ghg_grams(switched_auto: float, miles: float | None, grams_per_mile: float = GRAMS_PER_MILE) -> float:
    """Tailpipe grams avoided by auto trips moved to transit (one vehicle per trip)."""
    if switched_auto == 0:
        return 0.0
    if miles is None or math.isnan(miles):
        raise ValueError("auto trip distance is required for groups with auto switches")
    if miles < 0:
        raise ValueError("negative trip distance")
    return switched_auto * miles * grams_per_mile


def ghg_savings(pairs: Iterable[tuple[float, float | None]],
                grams_per_mile: float = GRAMS_PER_MILE) -> tuple[float, float]:
    """Total ``(grams, metric tons)`` per day over ``(switched trips, miles)`` pairs."""
    grams = math.fsum(ghg_grams(n, mi, grams_per_mile) for n, mi in pairs)
    return grams, grams / 1e6


def with_baseline_times(group: TripGroup, t_at: float, t_et: float, t_ivt: float, n_t: float) -> TripGroup:
    return replace(group, t_at=t_at, t_et=t_et, t_ivt=t_ivt, n_t=n_t)
