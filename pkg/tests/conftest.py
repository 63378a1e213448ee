import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from transit_impact.gtfs import DEFAULT_PLAN, RouteSpec, RouteStop, ServicePlan  # noqa: E402


@pytest.fixture
def default_plan():
    return ServicePlan.from_clock(DEFAULT_PLAN)


@pytest.fixture
def line_spec():
    """14-mile, 17-stop, 39-minute line with evenly spaced stops."""
    stops = tuple(RouteStop(f"L{i:02d}", f"L{i:02d}", 40.65 + 0.005 * i, -73.95 + 0.004 * i, 14 * i / 16)
                  for i in range(17))
    return RouteSpec(stops, 39.0, 14.0, route_id="LINE")
