"""
Classical multi-machine transient simulation.

Generators are constant EMFs behind x'd, loads are constant admittances and
the network is Kron-reduced to the machine internal nodes. The swing
equations are integrated with fixed-step RK4.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import (EventOutsideWindow, InputError, MalformedInput, SimulationDiverged, UnknownBus,
                     UnstableInitialization)
from .grid import GridModel, PowerFlowSolution, kron_reduce, ybus
from .standards import UFLS_SCHEMES, UflsRelay, UflsScheme

logger = logging.getLogger(__name__)

INIT_TOLERANCE = 1e-8


class LoadEvent(BaseModel):
    """
    Timed change of the load at one bus.

    Either `p` (with optional `q`) sets an absolute load in pu, or `scale`
    multiplies the current load; `scale = 0` disconnects it. With `restore`
    the event is withdrawn at that time while later changes to the bus stay.

    Args:
        time (float): Seconds from the start of the run.
        bus (int): Bus id.
        p (Optional[float]): New active load in pu.
        q (Optional[float]): New reactive load in pu; keeps the power factor when omitted.
        scale (Optional[float]): Factor applied to the current load.
        restore (Optional[float]): Seconds from the start at which the change is undone.
        label (Optional[str]): Text for the event log.
    """
    model_config = ConfigDict(frozen=True)

    time: float = Field(ge=0)
    bus: int
    p: Optional[float] = None
    q: Optional[float] = None
    scale: Optional[float] = Field(None, ge=0)
    restore: Optional[float] = None
    label: Optional[str] = None

    @model_validator(mode="after")
    def check_action(self):
        if (self.p is None) == (self.scale is None):
            raise ValueError("A load event needs exactly one of 'p' or 'scale'")
        if self.q is not None and self.p is None:
            raise ValueError("'q' is only meaningful together with 'p'")
        if self.restore is not None and not self.restore > self.time:
            raise ValueError(f"Restore time {self.restore} must follow event time {self.time}")
        return self

    @classmethod
    def disconnect(cls, bus: int, time: float, duration: Optional[float] = None) -> "LoadEvent":
        restore = None if duration is None else time + duration
        return cls(time=time, bus=bus, scale=0.0, restore=restore, label=f"disconnect load at bus {bus}")

    def describe(self) -> str:
        if self.label:
            return self.label
        if self.scale is not None:
            return f"scale load at bus {self.bus} by {self.scale:g}"
        return f"set load at bus {self.bus} to {self.p:g}{'' if self.q is None else f'{self.q:+g}j'} pu"


class SimulationConfig(BaseModel):
    """
    Args:
        duration (float): Run length in seconds.
        step (float): RK4 step in seconds, at most 10 ms.
        governor (bool): Enables first-order droop governors.
        droop (float): Governor droop R in pu.
        governor_time_constant (float): Governor lag T in seconds.
        ufls (Optional[UflsScheme]): Scheme fed back into the run, or a built-in scheme name.
        speed_band (tuple[float, float]): Valid ω/ω_s range; leaving it aborts the run.
    """
    duration: float = Field(300.0, gt=0)
    step: float = Field(0.005, gt=0, le=0.01)
    governor: bool = False
    droop: float = Field(0.05, gt=0)
    governor_time_constant: float = Field(0.5, gt=0)
    ufls: Optional[UflsScheme] = None
    speed_band: tuple[float, float] = (0.9, 1.1)

    @field_validator("ufls", mode="before")
    @classmethod
    def builtin_scheme(cls, value):
        if isinstance(value, str):
            try:
                return UFLS_SCHEMES[value.upper()]
            except KeyError:
                raise ValueError(f"Unknown UFLS scheme {value!r}") from None
        return value

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.step))


@dataclass(frozen=True, eq=False)
class MachineStates:
    """
    Args:
        delta (np.ndarray): Rotor angles in rad.
        omega (np.ndarray): Electrical speeds in rad/s.
        E (np.ndarray): Internal EMF magnitudes in pu.
        pm (np.ndarray): Mechanical power in pu.
    """
    delta: np.ndarray
    omega: np.ndarray
    E: np.ndarray
    pm: np.ndarray


@dataclass(eq=False)
class DynamicNetwork:
    """
    Network augmented with machine internal nodes.

    The first `n_bus` nodes are the buses, then one internal node per machine.
    `y_load` holds the per-bus constant admittance currently in effect.
    """
    model: GridModel
    Y_aug: np.ndarray
    y_load: np.ndarray
    v0: np.ndarray
    machine_buses: tuple[int, ...]
    H: np.ndarray
    D: np.ndarray
    omega_s: float
    Y_red: np.ndarray = field(init=False)

    def __post_init__(self):
        self.reduce()

    @property
    def n_bus(self) -> int:
        return len(self.y_load)

    def reduce(self) -> np.ndarray:
        Y = self.Y_aug.copy()
        Y[np.arange(self.n_bus), np.arange(self.n_bus)] += self.y_load
        self.Y_red = kron_reduce(Y, range(self.n_bus, Y.shape[0]))
        return self.Y_red


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """
    Sampled run, one row per time point.

    Machine arrays are (samples × machines); `frequency` is the inertia-weighted
    system frequency in Hz.
    """
    time: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    pe: np.ndarray
    pm: np.ndarray
    frequency: np.ndarray
    H: np.ndarray
    machine_buses: tuple[int, ...] = ()
    nominal: float = 60.0
    events: tuple[tuple[float, str], ...] = ()
    diverged: bool = False

    def __post_init__(self):
        n = len(self.time)
        for name in ("delta", "omega", "pe", "pm", "frequency"):
            if len(getattr(self, name)) != n:
                raise InputError(f"Trace series {name} has {len(getattr(self, name))} samples, expected {n}")

    @property
    def machine_frequency(self) -> np.ndarray:
        return self.omega / (2 * np.pi)

    @classmethod
    def from_system_frequency(cls, time: Sequence[float], frequency: Sequence[float],
                              nominal: float = 60.0) -> "SimulationTrace":
        """A single equivalent machine trace, for judging frequency series recorded elsewhere."""
        time = np.asarray(time, dtype=float)
        frequency = np.asarray(frequency, dtype=float)
        column = frequency[:, None]
        empty = np.zeros_like(column)
        return cls(time=time, delta=empty, omega=2 * np.pi * column, pe=empty, pm=empty,
                   frequency=frequency, H=np.ones(1), nominal=nominal)


def electrical_power(states: MachineStates, Y_red: np.ndarray) -> np.ndarray:
    """P_e_i = Re{E_i · conj(Σ_j Y_ij E_j)} with E_i = |E_i|·e^{jδ_i}."""
    v = states.E * np.exp(1j * states.delta)
    return (v * np.conj(Y_red @ v)).real


def _system_frequency(omega: np.ndarray, H: np.ndarray) -> np.ndarray:
    return (omega @ H) / H.sum() / (2 * np.pi)


def system_frequency(trace: SimulationTrace) -> np.ndarray:
    """Inertia-weighted mean machine frequency Σ H_i ω_i / Σ H_i in Hz."""
    return _system_frequency(trace.omega, trace.H)


def init_dynamics(model: GridModel, pf: PowerFlowSolution) -> tuple[MachineStates, DynamicNetwork]:
    """
    Classical-model initial conditions from a converged power flow.

    Loads become admittances (P - jQ)/|V|², each machine gets an internal node
    behind x'd and E' = V + j·x'd·conj(S_g/V). Mechanical power is set to the
    initial electrical power.

    Raises:
        UnstableInitialization: Initial P_e differs from the dispatched power by more than 1e-8 pu.
    """
    if not model.generators:
        raise InputError(f"Model {model.name} has no generators to simulate")
    index = model.index
    V = pf.voltage
    n_bus, n_gen = len(model.buses), len(model.generators)
    y_load = np.conj(model.bus_loads()) / np.abs(V) ** 2

    # generation of a bus is shared equally by the machines connected to it
    generation = pf.generation(model)
    per_bus = np.zeros(n_bus)
    for gen in model.generators:
        per_bus[index[gen.bus]] += 1
    Y_aug = np.zeros((n_bus + n_gen, n_bus + n_gen), dtype=complex)
    Y_aug[:n_bus, :n_bus] = ybus(model)
    E = np.zeros(n_gen, dtype=complex)
    dispatched = np.zeros(n_gen)
    for i, gen in enumerate(model.generators):
        k = index[gen.bus]
        s = generation[k] / per_bus[k]
        E[i] = V[k] + 1j * gen.xd * np.conj(s / V[k])
        dispatched[i] = s.real
        y = 1 / (1j * gen.xd)
        Y_aug[k, k] += y
        Y_aug[n_bus + i, n_bus + i] += y
        Y_aug[k, n_bus + i] -= y
        Y_aug[n_bus + i, k] -= y

    omega_s = 2 * np.pi * model.frequency
    network = DynamicNetwork(
        model=model, Y_aug=Y_aug, y_load=y_load, v0=V,
        machine_buses=tuple(gen.bus for gen in model.generators),
        H=np.array([gen.H for gen in model.generators]),
        D=np.array([gen.D for gen in model.generators]),
        omega_s=omega_s,
    )
    states = MachineStates(delta=np.angle(E), omega=np.full(n_gen, omega_s), E=np.abs(E), pm=np.zeros(n_gen))
    pe = electrical_power(states, network.Y_red)
    mismatch = float(np.max(np.abs(pe - dispatched)))
    if mismatch > max(INIT_TOLERANCE, 10 * pf.max_mismatch):
        raise UnstableInitialization(f"Initial electrical power misses dispatch by {mismatch:.3e} pu")
    logger.debug("Initialized %d machines, P_e mismatch %.2e", n_gen, mismatch)
    return replace(states, pm=pe), network


def swing_rhs(y: np.ndarray, network: DynamicNetwork, E: np.ndarray, pm0: np.ndarray,
              cfg: Optional[SimulationConfig] = None) -> tuple[np.ndarray, np.ndarray]:
    """
    Time derivative of the stacked state [δ, ω, P_m] and the electrical power at `y`.
    """
    g = len(E)
    delta, omega, pm = y[:g], y[g:2 * g], y[2 * g:]
    v = E * np.exp(1j * delta)
    pe = (v * np.conj(network.Y_red @ v)).real
    ws = network.omega_s
    slip = omega - ws
    d_delta = slip
    d_omega = ws * (pm - pe - network.D * slip / ws) / (2 * network.H)
    if cfg is not None and cfg.governor:
        d_pm = (pm0 - slip / (ws * cfg.droop) - pm) / cfg.governor_time_constant
    else:
        d_pm = np.zeros(g)
    return np.concatenate([d_delta, d_omega, d_pm]), pe


def _rk4(y, h, network, E, pm0, cfg):
    k1, pe = swing_rhs(y, network, E, pm0, cfg)
    k2, _ = swing_rhs(y + h / 2 * k1, network, E, pm0, cfg)
    k3, _ = swing_rhs(y + h / 2 * k2, network, E, pm0, cfg)
    k4, _ = swing_rhs(y + h * k3, network, E, pm0, cfg)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), pe


def _event_admittance(event: LoadEvent, current: complex, v0: float) -> complex:
    if event.scale is not None:
        return current * event.scale
    if event.q is None:
        # keep the power factor of the admittance in effect
        q = 0.0 if current.real == 0 else -event.p * current.imag / current.real
    else:
        q = event.q
    return complex(event.p, -q) / v0 ** 2


def _schedule(events: Sequence[LoadEvent], model: GridModel,
              cfg: SimulationConfig) -> list[tuple[float, int, int, LoadEvent]]:
    """Sorted (time, order, kind, event) actions; kind 0 applies, kind 1 restores."""
    known = set(model.bus_ids)
    actions = []
    for order, event in enumerate(events):
        if event.bus not in known:
            raise UnknownBus(f"Event references unknown bus {event.bus}")
        if event.time > cfg.duration:
            raise EventOutsideWindow(f"Event at {event.time} s lies outside the {cfg.duration} s run")
        actions.append((event.time, order, 0, event))
        if event.restore is not None:
            actions.append((event.restore, order, 1, event))
    actions.sort(key=lambda a: (a[0], a[1], a[2]))
    return actions


def simulate(model: GridModel, pf: PowerFlowSolution, events: Sequence[LoadEvent] = (),
             cfg: Optional[SimulationConfig] = None) -> SimulationTrace:
    """
    Integrates the swing equations under timed load events.

    Events take effect at the first sample t_k ≥ t_event - step/2; after each
    change the network is re-reduced. With `cfg.ufls` set, fired stages scale
    every load admittance by (1 - shed fraction).

    A bus's admittance is always its base value with the changes still in
    effect replayed in the order they happened. Restoring an event removes
    only that event, so overlapping events on one bus unwind correctly and
    load shed by UFLS stays shed after an attack ends.

    Args:
        model (GridModel): Grid with machine data.
        pf (PowerFlowSolution): Converged initial operating point.
        events (Sequence[LoadEvent]): Load changes.
        cfg (SimulationConfig): Duration, step and options.

    Returns:
        SimulationTrace: One sample per step, including t = 0.

    Raises:
        EventOutsideWindow: An event falls after the end of the run.
        UnknownBus: An event names a bus the model lacks.
        SimulationDiverged: A machine speed left the valid band; the partial trace is attached.
    """
    cfg = cfg or SimulationConfig()
    actions = _schedule(events, model, cfg)
    states, network = init_dynamics(model, pf)
    index = model.index
    h, n = cfg.step, cfg.steps
    g = len(states.E)
    lo, hi = (band * network.omega_s for band in cfg.speed_band)
    relay = UflsRelay(cfg.ufls) if cfg.ufls is not None else None

    time = np.arange(n + 1) * h
    delta = np.zeros((n + 1, g))
    omega = np.zeros((n + 1, g))
    pe = np.zeros((n + 1, g))
    pm = np.zeros((n + 1, g))
    log: list[tuple[float, str]] = []
    base = network.y_load.copy()
    # changes still in effect, oldest first: a LoadEvent or a UFLS shed fraction
    active: list[tuple[int, LoadEvent | float]] = []

    def recompute(bus: int) -> None:
        value = base[bus]
        for _, change in active:
            if isinstance(change, LoadEvent):
                if index[change.bus] == bus:
                    value = _event_admittance(change, value, abs(network.v0[bus]))
            else:
                value *= 1 - change
        network.y_load[bus] = value

    y = np.concatenate([states.delta, states.omega, states.pm])
    next_action = 0
    for k in range(n + 1):
        t = time[k]
        changed = False
        while next_action < len(actions) and actions[next_action][0] <= t + h / 2:
            _, order, kind, event = actions[next_action]
            if kind == 0:
                active.append((order, event))
                log.append((float(t), event.describe()))
            else:
                active.remove((order, event))
                log.append((float(t), f"restore load at bus {event.bus}"))
            recompute(index[event.bus])
            logger.info("t=%.3f s: %s", t, log[-1][1])
            next_action += 1
            changed = True
        if relay is not None and k > 0:
            shed = relay.update(float(_system_frequency(y[g:2 * g], network.H)), float(t))
            if shed > 0:
                active.append((-1, shed))
                network.y_load *= 1 - shed
                log.append((float(t), f"UFLS shed {100 * shed:.0f}% of load"))
                changed = True
        if changed:
            network.reduce()

        y_next, pe[k] = _rk4(y, h, network, states.E, states.pm, cfg)
        delta[k], omega[k], pm[k] = y[:g], y[g:2 * g], y[2 * g:]
        speed = y[g:2 * g]
        if not (np.all(np.isfinite(speed)) and np.all((speed >= lo) & (speed <= hi))):
            trace = _trace(time, delta, omega, pe, pm, network, log, k + 1, diverged=True)
            logger.warning("Run diverged at t=%.3f s", t)
            raise SimulationDiverged(f"Machine speed left [{cfg.speed_band[0]}, {cfg.speed_band[1]}]·ω_s "
                                     f"at t={t:.3f} s", trace=trace)
        y = y_next
    return _trace(time, delta, omega, pe, pm, network, log, n + 1)


def _trace(time, delta, omega, pe, pm, network: DynamicNetwork, log, samples: int,
           diverged: bool = False) -> SimulationTrace:
    omega = omega[:samples]
    return SimulationTrace(
        time=time[:samples], delta=delta[:samples], omega=omega, pe=pe[:samples], pm=pm[:samples],
        frequency=_system_frequency(omega, network.H), H=network.H.copy(),
        machine_buses=network.machine_buses, nominal=network.omega_s / (2 * np.pi),
        events=tuple(log), diverged=diverged,
    )


def write_trace_csv(trace: SimulationTrace, path) -> Path:
    """Time, per-machine frequency, angle and electrical power, then system frequency."""
    columns = {"time": trace.time}
    for i in range(trace.omega.shape[1]):
        columns[f"f_g{i + 1}"] = trace.machine_frequency[:, i]
    for i in range(trace.delta.shape[1]):
        columns[f"delta_g{i + 1}"] = trace.delta[:, i]
    for i in range(trace.pe.shape[1]):
        columns[f"pe_g{i + 1}"] = trace.pe[:, i]
    columns["system_f"] = trace.frequency
    file = Path(path)
    pd.DataFrame(columns).to_csv(file, index=False, float_format="%.10g")
    return file


def read_trace_csv(path, nominal: float = 60.0) -> SimulationTrace:
    """Reads a trace CSV back as a single equivalent machine carrying the system frequency."""
    file = Path(path)
    try:
        frame = pd.read_csv(file)
    except FileNotFoundError:
        raise MalformedInput(f"Trace '{file}' not found") from None
    missing = {"time", "system_f"} - set(frame.columns)
    if missing:
        raise MalformedInput(f"{file}: missing column(s) {sorted(missing)}")
    return SimulationTrace.from_system_frequency(frame["time"].to_numpy(), frame["system_f"].to_numpy(), nominal)
