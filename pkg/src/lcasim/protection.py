"""
Post-hoc judgement of simulated frequency traces against operational standards.
"""

import logging
from enum import Enum
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel

from .standards import STANDARDS, FrequencyStandard, NyisoAdvisory, StandardName
from .swing import SimulationTrace

logger = logging.getLogger(__name__)

DEFAULT_DWELL = 10.0


class Direction(str, Enum):
    OVER = "over"
    UNDER = "under"


class Classification(str, Enum):
    """
    Enum representing the verdict of a trace under one standard.
    """
    NORMAL = "normal"
    VIOLATION = "violation"
    MAJOR_DISTURBANCE = "major disturbance"
    MAJOR_EMERGENCY = "major emergency"


class Excursion(BaseModel):
    """
    A maximal run of consecutive samples on one side outside the allowed band.

    Args:
        direction (Direction): over or under.
        start_index (int): First sample of the run.
        end_index (int): Last sample of the run, inclusive.
        start_time (float): Time of the first sample in seconds.
        end_time (float): Time of the last sample in seconds.
        extremum (float): Highest (over) or lowest (under) frequency of the run in Hz.
        duration (float): Samples in the run times the sampling step.
    """
    direction: Direction
    start_index: int
    end_index: int
    start_time: float
    end_time: float
    extremum: float
    duration: float


class Advisory(BaseModel):
    time: float
    action: NyisoAdvisory


class ViolationReport(BaseModel):
    standard: str
    under: float
    over: float
    excursions: list[Excursion] = []
    time_over: float = 0.0
    time_under: float = 0.0
    classification: Classification = Classification.NORMAL
    advisories: list[Advisory] = []

    @property
    def empty(self) -> bool:
        return not self.excursions


class TraceSummary(BaseModel):
    """
    Headline numbers of one run plus a report per requested standard.
    """
    peak_frequency: float
    peak_time: float
    min_frequency: float
    min_time: float
    final_frequency: float
    diverged: bool = False
    machine_buses: list[int] = []
    events: list[tuple[float, str]] = []
    reports: list[ViolationReport] = []


def _step(trace: SimulationTrace) -> float:
    return float(trace.time[1] - trace.time[0]) if len(trace.time) > 1 else 0.0


def excursions(trace: SimulationTrace, std: FrequencyStandard) -> list[Excursion]:
    f = np.asarray(trace.frequency, dtype=float)
    if f.size == 0:
        return []
    side = np.where(f > std.over, 1, np.where(f < std.under, -1, 0))
    starts = np.concatenate([[0], np.flatnonzero(np.diff(side)) + 1])
    ends = np.concatenate([starts[1:], [f.size]]) - 1
    dt = _step(trace)
    found = []
    for start, end in zip(starts, ends):
        if side[start] == 0:
            continue
        run = f[start:end + 1]
        over = side[start] > 0
        found.append(Excursion(
            direction=Direction.OVER if over else Direction.UNDER,
            start_index=int(start), end_index=int(end),
            start_time=float(trace.time[start]), end_time=float(trace.time[end]),
            extremum=float(run.max() if over else run.min()),
            duration=(end - start + 1) * dt,
        ))
    return found


def overfrequency_actions(trace: SimulationTrace, std: Optional[FrequencyStandard] = None,
                          dwell: float = DEFAULT_DWELL) -> list[Advisory]:
    """
    NYISO operator actions for a sustained overfrequency condition.

    The six actions are issued in order, stamped at the instant the first
    overfrequency excursion has lasted `dwell` seconds. Shorter excursions
    produce nothing.
    """
    std = std or STANDARDS[StandardName.NYISO.value]
    for excursion in excursions(trace, std):
        if excursion.direction == Direction.OVER and excursion.duration >= dwell:
            at = excursion.start_time + dwell
            return [Advisory(time=at, action=action) for action in NyisoAdvisory]
    return []


def check_thresholds(trace: SimulationTrace, std: FrequencyStandard) -> ViolationReport:
    """
    Lists every excursion outside [under, over] with totals and a verdict.

    Under NYISO any excursion is a major disturbance; other standards report
    a violation.
    """
    found = excursions(trace, std)
    if not found:
        classification = Classification.NORMAL
    elif std.name == StandardName.NYISO.value:
        classification = Classification.MAJOR_DISTURBANCE
    else:
        classification = Classification.VIOLATION
    return ViolationReport(
        standard=std.name, under=std.under, over=std.over, excursions=found,
        time_over=sum(e.duration for e in found if e.direction == Direction.OVER),
        time_under=sum(e.duration for e in found if e.direction == Direction.UNDER),
        classification=classification,
    )


def evaluate(trace: SimulationTrace, standards: Iterable[FrequencyStandard],
             dwell: float = DEFAULT_DWELL) -> list[ViolationReport]:
    """
    `check_thresholds` for each standard; NYISO reports also carry the overfrequency
    advisories and are promoted to a major emergency when those are issued.
    """
    reports = []
    for std in standards:
        report = check_thresholds(trace, std)
        if std.name == StandardName.NYISO.value:
            advisories = overfrequency_actions(trace, std, dwell)
            if advisories:
                report = report.model_copy(update={
                    "advisories": advisories,
                    "classification": Classification.MAJOR_EMERGENCY,
                })
        logger.info("%s: %s, %d excursion(s)", std.name, report.classification.value, len(report.excursions))
        reports.append(report)
    return reports


def summarize(trace: SimulationTrace, standards: Iterable[FrequencyStandard] = (),
              dwell: float = DEFAULT_DWELL) -> TraceSummary:
    f = trace.frequency
    peak, low = int(np.argmax(f)), int(np.argmin(f))
    return TraceSummary(
        peak_frequency=float(f[peak]), peak_time=float(trace.time[peak]),
        min_frequency=float(f[low]), min_time=float(trace.time[low]),
        final_frequency=float(f[-1]), diverged=trace.diverged,
        machine_buses=list(trace.machine_buses), events=list(trace.events),
        reports=evaluate(trace, standards, dwell),
    )
