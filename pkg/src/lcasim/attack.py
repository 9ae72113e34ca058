"""
Load-changing attack machinery: threat descriptor, a linear data-integrity
attack model, load bookkeeping and the LD/LIID target preselection.
"""

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Literal, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .errors import (DegenerateRange, DimensionMismatch, LengthMismatch, MalformedInput, UnknownBus,
                     ZeroTotalLoad)
from .grid import GridModel, map_zone_loads, map_zone_ratios, zone_snapshot
from .loaddata import LoadPanel
from .swing import LoadEvent

logger = logging.getLogger(__name__)

DEFAULT_QUANTILE = 0.9
WINDOW_TOLERANCE = 0.1
ATTACK_LEAD = 200.0
ATTACK_DURATION = 5.0
RUN_LENGTH = 300.0


class Knowledge(str, Enum):
    OBLIVIOUS = "oblivious"
    SEMI_OBLIVIOUS = "semi-oblivious"


class Access(str, Enum):
    NON_POSSESSION = "non-possession"


class Specificity(str, Enum):
    TARGETED = "targeted"
    NON_TARGETED = "non-targeted"


class Resources(str, Enum):
    CLASS_I = "class I"
    CLASS_II = "class II"


class AttackFrequency(str, Enum):
    ITERATIVE = "iterative"
    ONE_SHOT = "one-shot"


class Reproducibility(str, Enum):
    ONE_TIME = "one-time"
    MULTIPLE_TIMES = "multiple-times"


class AttackLevel(str, Enum):
    """
    Enum representing how deep the adversary reaches: L1 alters loads only,
    L2 also tampers with their control signals.
    """
    L1 = "L1"
    L2 = "L2"


class ThreatModel(BaseModel):
    """
    Descriptor of the adversary behind a scenario.

    Args:
        knowledge (Knowledge): What the attacker knows about the grid.
        access (Access): Physical access to the targeted loads.
        specificity (Specificity): Whether specific buses are aimed at.
        resources (Resources): Attacker resource class.
        frequency (AttackFrequency): Iterative or one-shot.
        reproducibility (Reproducibility): Whether the attack can be repeated.
        level (AttackLevel): L1 or L2.
        assets (list[str]): Compromised device classes.
        technique (str): How the devices are taken over.
        premise (str): Security property violated.
    """
    knowledge: Knowledge = Knowledge.OBLIVIOUS
    access: Access = Access.NON_POSSESSION
    specificity: Specificity = Specificity.TARGETED
    resources: Resources = Resources.CLASS_II
    frequency: AttackFrequency = AttackFrequency.ITERATIVE
    reproducibility: Reproducibility = Reproducibility.MULTIPLE_TIMES
    level: AttackLevel = AttackLevel.L1
    assets: list[str] = []
    technique: str = ""
    premise: str = ""


def load_changing_threat(knowledge: Knowledge = Knowledge.OBLIVIOUS,
                         level: AttackLevel = AttackLevel.L1) -> ThreatModel:
    """Threat descriptor of a botnet of high-wattage smart loads switched in concert."""
    return ThreatModel(
        knowledge=knowledge,
        level=level,
        assets=["smart HVAC", "IoT-connected motors", "PLCs", "EV chargers", "water heaters"],
        technique="modify control logic or compromise wireless links",
        premise="cyber integrity",
    )


# -- linear data-integrity model ---------------------------------------------

@dataclass(frozen=True)
class UniformNoise:
    """Bounded measurement noise e ~ U(-amplitude, amplitude), reproducible from `seed`."""
    amplitude: float
    seed: int = 0

    def sequence(self, steps: int, size: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.uniform(-self.amplitude, self.amplitude, size=(steps, size))


@dataclass(frozen=True, eq=False)
class LtiPlant:
    """
    x(k+1) = G·x(k) + B·u(k), y(k) = C·x(k) + e(k), closed by u(k+1) = H_ctl·y(k).

    Args:
        G (np.ndarray): n × n system matrix.
        B (np.ndarray): n × l input matrix.
        C (np.ndarray): m × n output matrix.
        H_ctl (np.ndarray): l × m control law.
        noise (Optional[UniformNoise]): Output noise source, zero when omitted.
    """
    G: np.ndarray
    B: np.ndarray
    C: np.ndarray
    H_ctl: np.ndarray
    noise: Optional[UniformNoise] = None

    def __post_init__(self):
        G, B, C, H = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.G, self.B, self.C, self.H_ctl))
        n = G.shape[0]
        if G.shape != (n, n) or B.shape[0] != n or C.shape[1] != n or H.shape != (B.shape[1], C.shape[0]):
            raise DimensionMismatch(f"Inconsistent plant shapes G{G.shape} B{B.shape} C{C.shape} H{H.shape}")
        for name, m in zip(("G", "B", "C", "H_ctl"), (G, B, C, H)):
            object.__setattr__(self, name, m)

    @property
    def n_states(self) -> int:
        return self.G.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class PlantTrajectory:
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray


def _vector(value, size: int, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.size != size:
        raise DimensionMismatch(f"{name} has {v.size} entries, expected {size}")
    return v


def lti_step(plant: LtiPlant, x, u, e=None) -> tuple[np.ndarray, np.ndarray]:
    """One step of the plant: returns (G·x + B·u, C·x + e)."""
    x = _vector(x, plant.n_states, "state")
    u = _vector(u, plant.n_inputs, "control")
    e = np.zeros(plant.n_outputs) if e is None else _vector(e, plant.n_outputs, "noise")
    return plant.G @ x + plant.B @ u, plant.C @ x + e


def attack_controls(u, du) -> np.ndarray:
    """Altered controls u_a = u + Δu."""
    u, du = np.asarray(u, dtype=float), np.asarray(du, dtype=float)
    if u.shape != du.shape:
        raise DimensionMismatch(f"Control shape {u.shape} differs from alteration shape {du.shape}")
    return u + du


def run_plant(plant: LtiPlant, x0, u0, steps: int,
              alterations: Optional[Mapping[int, Sequence[float]]] = None) -> PlantTrajectory:
    """
    Runs the closed loop for `steps` steps, adding `alterations[k]` to the controls of step k.

    Returns:
        PlantTrajectory: x with steps+1 rows, y and the applied u with `steps` rows.
    """
    alterations = alterations or {}
    noise = (plant.noise.sequence(steps, plant.n_outputs) if plant.noise is not None
             else np.zeros((steps, plant.n_outputs)))
    x = np.zeros((steps + 1, plant.n_states))
    y = np.zeros((steps, plant.n_outputs))
    u = np.zeros((steps, plant.n_inputs))
    x[0] = _vector(x0, plant.n_states, "initial state")
    control = _vector(u0, plant.n_inputs, "initial control")
    for k in range(steps):
        if k in alterations:
            control = attack_controls(control, _vector(alterations[k], plant.n_inputs, f"alteration {k}"))
        u[k] = control
        x[k + 1], y[k] = lti_step(plant, x[k], control, noise[k])
        control = plant.H_ctl @ y[k]
    return PlantTrajectory(x=x, y=y, u=u)


# -- load bookkeeping ---------------------------------------------------------

def altered_load(p, dp):
    """Attacked load p_a = p + Δp."""
    return np.asarray(p, dtype=float) + np.asarray(dp, dtype=float)


def total_demand(unaltered: Sequence[float], altered: Sequence[float] = (), losses: float = 0.0) -> float:
    """P_T = Σ p_i + Σ p_a + P_loss."""
    return float(np.sum(unaltered) + np.sum(altered) + losses)


def compute_ld(tl_a, tl_b) -> np.ndarray:
    """LD(t) = TL_A(t) - TL_B(t)."""
    tl_a, tl_b = np.asarray(tl_a, dtype=float), np.asarray(tl_b, dtype=float)
    if tl_a.shape != tl_b.shape:
        raise LengthMismatch(f"Total-load series differ in length: {tl_a.shape} vs {tl_b.shape}")
    return tl_a - tl_b


def compute_liid(loads_a, loads_b) -> np.ndarray:
    """
    LIID_i(t) = L_A_i(t)/TL_A(t) - L_B_i(t)/TL_B(t) for bus × time matrices.

    Raises:
        LengthMismatch: The matrices differ in shape.
        ZeroTotalLoad: A column of either year sums to zero or less.
    """
    loads_a, loads_b = np.asarray(loads_a, dtype=float), np.asarray(loads_b, dtype=float)
    if loads_a.shape != loads_b.shape or loads_a.ndim != 2:
        raise LengthMismatch(f"Load matrices differ in shape: {loads_a.shape} vs {loads_b.shape}")
    totals_a, totals_b = loads_a.sum(axis=0), loads_b.sum(axis=0)
    for label, totals in (("A", totals_a), ("B", totals_b)):
        bad = np.flatnonzero(~(totals > 0))
        if bad.size:
            raise ZeroTotalLoad(f"Year {label} total load is not positive at time index {int(bad[0])}")
    return loads_a / totals_a - loads_b / totals_b


# -- target selection ---------------------------------------------------------

class Recommendation(BaseModel):
    """
    Args:
        bus (int): Bus holding the LIID minimum.
        buses (list[int]): Buses within 10% of the minimum at the target time.
        time_index (int): Sample of the LIID minimum.
        start_index (int): First sample of the window.
        end_index (int): Last sample of the window, inclusive.
        time (Optional[str]): Time-of-day label of the target sample.
        start (Optional[str]): Time-of-day label of the window start.
        end (Optional[str]): Time-of-day label of the window end.
        liid (float): LIID minimum.
        ld (float): LD at the target sample.
    """
    verdict: Literal["aligned"] = "aligned"
    bus: int
    buses: list[int]
    time_index: int
    start_index: int
    end_index: int
    time: Optional[str] = None
    start: Optional[str] = None
    end: Optional[str] = None
    liid: float
    ld: float


class NoAlignedTarget(BaseModel):
    """The LIID trough does not coincide with a high-LD period."""
    verdict: Literal["NoAlignedTarget"] = "NoAlignedTarget"
    reason: str
    bus: int
    time_index: int
    liid: float


Outcome = Union[Recommendation, NoAlignedTarget]


def _label(times: Optional[Sequence[str]], k: int) -> Optional[str]:
    return None if times is None else str(times[k])


def select_target(ld, liid, buses: Sequence[int], times: Optional[Sequence[str]] = None,
                  q: float = DEFAULT_QUANTILE) -> Outcome:
    """
    Matches the LIID trough against the high-LD period.

    The high set holds the samples with LD at or above its q-quantile. The
    global LIID minimum (ties: lowest bus id, then earliest sample) must fall
    in it and be negative; otherwise the outcome is `NoAlignedTarget`. The
    window grows around that sample while the bus's LIID stays within 10% of
    the minimum, and every bus within 10% of the minimum at the target sample
    joins the recommendation.
    """
    ld = np.asarray(ld, dtype=float)
    liid = np.asarray(liid, dtype=float)
    if liid.shape != (len(buses), ld.size):
        raise LengthMismatch(f"LIID shape {liid.shape} does not match {len(buses)} buses × {ld.size} samples")
    high = ld >= np.quantile(ld, q)
    low = liid.min()
    row, k = min(((int(i), int(t)) for i, t in np.argwhere(liid == low)),
                 key=lambda it: (buses[it[0]], it[1]))
    bus = int(buses[row])
    if not low < 0:
        return NoAlignedTarget(reason="LIID has no negative value", bus=bus, time_index=k, liid=float(low))
    if not high[k]:
        return NoAlignedTarget(reason="LIID minimum lies outside every high-LD period",
                               bus=bus, time_index=k, liid=float(low))
    band = WINDOW_TOLERANCE * abs(low)
    start = k
    while start > 0 and abs(liid[row, start - 1] - low) <= band:
        start -= 1
    end = k
    while end < ld.size - 1 and abs(liid[row, end + 1] - low) <= band:
        end += 1
    chosen = sorted(int(buses[i]) for i in np.flatnonzero(np.abs(liid[:, k] - low) <= band))
    return Recommendation(bus=bus, buses=chosen, time_index=k, start_index=start, end_index=end,
                          time=_label(times, k), start=_label(times, start), end=_label(times, end),
                          liid=float(low), ld=float(ld[k]))


class PreselectionReport(BaseModel):
    """
    LD and LIID of one comparison window with the resulting recommendation.

    `ld` is the difference of the two years' total-load series after the
    chosen normalization; `liid` has one row per bus in `buses`.
    """
    label: Optional[str] = None
    buses: list[int]
    times: list[str]
    normalization: Literal["minmax", "none"] = "minmax"
    quantile: float = DEFAULT_QUANTILE
    ld: list[float]
    liid: list[list[float]]
    peak_ld: float
    peak_ld_time: str
    min_liid: float
    min_liid_bus: int
    min_liid_time: str
    outcome: Outcome = Field(discriminator="verdict")

    @model_validator(mode="after")
    def check_shapes(self):
        if len(self.liid) != len(self.buses) or any(len(row) != len(self.times) for row in self.liid):
            raise ValueError("LIID rows must cover every bus and every time")
        return self


def _per_unit(total: np.ndarray, normalization: str) -> np.ndarray:
    if normalization == "none":
        return total
    span = total.max() - total.min()
    if span == 0:
        raise DegenerateRange("Total load is constant over the window; min-max normalization is undefined")
    return (total - total.min()) / span


def preselect(loads_a, loads_b, buses: Sequence[int], times: Optional[Sequence[str]] = None,
              q: float = DEFAULT_QUANTILE, normalization: Literal["minmax", "none"] = "minmax",
              label: Optional[str] = None) -> PreselectionReport:
    """
    LD, LIID and target selection in one call.

    Args:
        loads_a: Bus × time loads of the reference year.
        loads_b: Bus × time loads of the attacked year.
        buses: Bus id of each row.
        times: Time-of-day label of each column.
        q (float): High-LD quantile.
        normalization (str): "minmax" puts each year's total on its own [0, 1]
            per-unit scale before differencing, so LD ignores uniform scaling;
            "none" differences the raw totals.
    """
    loads_a, loads_b = np.asarray(loads_a, dtype=float), np.asarray(loads_b, dtype=float)
    liid = compute_liid(loads_a, loads_b)
    if liid.shape[0] != len(buses):
        raise LengthMismatch(f"{liid.shape[0]} load rows for {len(buses)} buses")
    times = [str(t) for t in (times if times is not None else range(liid.shape[1]))]
    if len(times) != liid.shape[1]:
        raise LengthMismatch(f"{len(times)} time labels for {liid.shape[1]} samples")
    ld = compute_ld(_per_unit(loads_a.sum(axis=0), normalization), _per_unit(loads_b.sum(axis=0), normalization))
    outcome = select_target(ld, liid, buses, times, q)
    peak = int(np.argmax(ld))
    row, col = np.unravel_index(int(np.argmin(liid)), liid.shape)
    logger.info("Preselection %s: peak LD %.3f at %s, min LIID %.4f at bus %d %s -> %s",
                label or "", ld[peak], times[peak], liid[row, col], buses[row], times[col], outcome.verdict)
    return PreselectionReport(
        label=label, buses=[int(b) for b in buses], times=times, normalization=normalization, quantile=q,
        ld=ld.tolist(), liid=liid.tolist(), peak_ld=float(ld[peak]), peak_ld_time=times[peak],
        min_liid=float(liid[row, col]), min_liid_bus=int(buses[row]), min_liid_time=times[col],
        outcome=outcome,
    )


def bus_load_matrix(model: GridModel, panel: LoadPanel, reference: Optional[Mapping] = None,
                    mapping: Literal["ratio", "share"] = "ratio") -> tuple[list[int], np.ndarray]:
    """
    Active load of every mapped bus for each snapshot of a zone panel.

    Returns:
        tuple[list[int], np.ndarray]: Mapped bus ids and the bus × time matrix in pu.
    """
    buses = model.mappable_buses
    matrix = np.zeros((len(buses), panel.n_snapshots))
    for k in range(panel.n_snapshots):
        snapshot = zone_snapshot(panel, k)
        if mapping == "share":
            mapped = map_zone_loads(model, snapshot)
        else:
            mapped = map_zone_ratios(model, snapshot, reference)
        demand = mapped.bus_loads()
        index = mapped.index
        matrix[:, k] = [demand[index[bus]].real for bus in buses]
    return buses, matrix


# -- scenarios ----------------------------------------------------------------

class AttackScenario(BaseModel):
    """
    A load-changing attack to simulate.

    Args:
        label (str): Name used for output directories.
        buses (list[int]): Compromised buses.
        events (list[LoadEvent]): Δp schedule, times in seconds from `start`.
        start (datetime): Wall-clock start of the simulated window.
        end (datetime): Wall-clock end of the simulated window.
        threat (ThreatModel): Adversary descriptor.
        zone_snapshot (Optional[dict[str, float]]): Zone MW used to load the fixture.
        reference (Optional[dict[str, float]]): Zone reference MW for ratio mapping.
    """
    label: str
    buses: list[int]
    events: list[LoadEvent] = []
    start: datetime
    end: datetime
    threat: ThreatModel = Field(default_factory=load_changing_threat)
    zone_snapshot: Optional[dict[str, float]] = None
    reference: Optional[dict[str, float]] = None

    @model_validator(mode="after")
    def check_window(self):
        if not self.end > self.start:
            raise ValueError(f"Scenario {self.label}: window end must follow its start")
        length = self.duration
        for event in self.events:
            for t in (event.time, event.restore):
                if t is not None and not 0 <= t <= length:
                    raise ValueError(f"Scenario {self.label}: event time {t} s outside the {length} s window")
        return self

    @property
    def duration(self) -> float:
        return (self.end - self.start).total_seconds()

    def check_model(self, model: GridModel) -> "AttackScenario":
        known = set(model.bus_ids)
        unknown = sorted({*self.buses, *(event.bus for event in self.events)} - known)
        if unknown:
            raise UnknownBus(f"Scenario {self.label} references unknown bus(es) {unknown}")
        return self


class ScenarioFile(BaseModel):
    scenarios: list[AttackScenario]


def read_scenarios(path) -> list[AttackScenario]:
    """Reads one scenario object or a `{"scenarios": [...]}` document."""
    file = Path(path).expanduser()
    try:
        data = json.loads(file.read_text())
    except FileNotFoundError:
        raise MalformedInput(f"Scenario file '{file}' not found") from None
    if isinstance(data, dict) and "scenarios" in data:
        return ScenarioFile.model_validate(data).scenarios
    return [AttackScenario.model_validate(data)]


def scenario_from_recommendation(recommendation: Recommendation, target: datetime,
                                 lead: float = ATTACK_LEAD, duration: float = ATTACK_DURATION,
                                 length: float = RUN_LENGTH, label: Optional[str] = None,
                                 threat: Optional[ThreatModel] = None, **snapshots) -> AttackScenario:
    """
    Scenario for a recommended target: the run starts `lead` seconds before the
    target time, the recommended buses are disconnected for `duration` seconds
    at `lead`, and the window lasts `length` seconds.
    """
    start = target - timedelta(seconds=lead)
    events = [LoadEvent.disconnect(bus, lead, duration) for bus in recommendation.buses]
    return AttackScenario(
        label=label or f"{target:%m-%d}-bus{'-'.join(map(str, recommendation.buses))}",
        buses=recommendation.buses, events=events, start=start, end=start + timedelta(seconds=length),
        threat=threat or load_changing_threat(), **snapshots,
    )


def disconnected_share(model: GridModel, buses: Sequence[int]) -> float:
    """Share of the system active load carried by `buses`."""
    total = model.total_load()
    if total == 0:
        raise ZeroTotalLoad(f"Model {model.name} carries no load")
    picked = set(buses)
    return sum(load.p for load in model.loads if load.bus in picked) / total
