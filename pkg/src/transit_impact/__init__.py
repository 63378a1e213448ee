"""Scenario evaluation for a proposed transit line.

Builds a synthetic timetable for the new line, skims transit travel times
with and without it, and pushes the time changes through a group-level
logit model to get ridership, mode shift, emissions, consumer surplus and
equity indices.
"""

__version__ = "0.1.0"
