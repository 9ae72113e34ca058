"""
Static grid model: fixture loading, NYISO zone mapping, admittance assembly,
Newton-Raphson power flow and Kron reduction.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib.resources import files
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (AllZonesZero, Diverged, InputError, IslandedBus, MalformedInput, MissingZone,
                     SingularEliminationBlock, UnknownBus, ZeroImpedanceBranch, ZoneMappingError)
from .loaddata import LoadPanel
from .zones import ZONE_TO_BUS, NyisoZone

logger = logging.getLogger(__name__)

DEFAULT_H = 4.0
DEFAULT_XD = 0.25
DEFAULT_D = 2.0

ZoneSnapshot = Mapping[str | NyisoZone, float]


class BusType(str, Enum):
    """
    Enum representing the power-flow role of a bus.
    """
    SLACK = "slack"
    PV = "PV"
    PQ = "PQ"


class Bus(BaseModel):
    """
    Args:
        id (int): Bus number.
        type (BusType): slack, PV or PQ.
        base_kv (float): Nominal voltage, informative only.
        shunt_g (float): Shunt conductance in pu.
        shunt_b (float): Shunt susceptance in pu.
    """
    model_config = ConfigDict(frozen=True)

    id: int
    type: BusType
    base_kv: float = 1.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0


class Branch(BaseModel):
    """
    Pi-model line between two buses.

    Args:
        from_bus (int): Sending bus, `from` in JSON.
        to_bus (int): Receiving bus, `to` in JSON.
        r (float): Series resistance in pu.
        x (float): Series reactance in pu.
        b (float): Total line charging susceptance in pu, split half at each end.
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    from_bus: int = Field(alias="from")
    to_bus: int = Field(alias="to")
    r: float = 0.0
    x: float
    b: float = 0.0

    @property
    def admittance(self) -> complex:
        return 1 / complex(self.r, self.x)


class Generator(BaseModel):
    """
    Dispatch and classical-model data of a synchronous machine.

    Args:
        bus (int): Terminal bus.
        p (float): Dispatched active power in pu (recomputed for the slack).
        v_set (float): Terminal voltage setpoint in pu.
        H (float): Inertia constant in seconds on system base.
        xd (float): Transient reactance x'd in pu.
        D (float): Damping coefficient in pu.
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    bus: int
    p: float = 0.0
    v_set: float = Field(1.0, gt=0)
    H: float = Field(DEFAULT_H, gt=0)
    xd: float = Field(DEFAULT_XD, gt=0)
    D: float = Field(DEFAULT_D, ge=0)


class Load(BaseModel):
    model_config = ConfigDict(frozen=True)

    bus: int
    p: float
    q: float = 0.0


class GridModel(BaseModel):
    """
    Immutable grid description in per unit.

    Args:
        name (str): Case name.
        base_mva (float): System base.
        frequency (float): Nominal frequency in Hz.
        buses (tuple[Bus, ...]): Exactly one slack bus.
        branches (tuple[Branch, ...]): Pi-model branches.
        generators (tuple[Generator, ...]): Machines, each on an existing bus.
        loads (tuple[Load, ...]): Constant-power loads, each on an existing bus.
        zones (dict[NyisoZone, int]): NYISO zone onto which each mappable load bus is driven.
        notes (Optional[str]): Free text provenance.
    """
    model_config = ConfigDict(frozen=True)

    name: str = "grid"
    base_mva: float = Field(100.0, gt=0)
    frequency: float = Field(60.0, gt=0)
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...] = ()
    generators: tuple[Generator, ...] = ()
    loads: tuple[Load, ...] = ()
    zones: dict[NyisoZone, int] = Field(default_factory=lambda: dict(ZONE_TO_BUS))
    notes: Optional[str] = None

    @model_validator(mode="after")
    def check_references(self):
        ids = [bus.id for bus in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("Bus ids must be unique")
        slack = [bus.id for bus in self.buses if bus.type == BusType.SLACK]
        if len(slack) != 1:
            raise ValueError(f"Exactly one slack bus is required, found {len(slack)}")
        known = set(ids)
        for kind, items in (("Generator", self.generators), ("Load", self.loads)):
            for item in items:
                if item.bus not in known:
                    raise ValueError(f"{kind} references unknown bus {item.bus}")
        for branch in self.branches:
            for end in (branch.from_bus, branch.to_bus):
                if end not in known:
                    raise ValueError(f"Branch references unknown bus {end}")
        return self

    @property
    def bus_ids(self) -> list[int]:
        return [bus.id for bus in self.buses]

    @property
    def index(self) -> dict[int, int]:
        """Bus id to matrix position."""
        return {bus.id: k for k, bus in enumerate(self.buses)}

    @property
    def slack(self) -> int:
        return next(bus.id for bus in self.buses if bus.type == BusType.SLACK)

    @property
    def mappable_buses(self) -> list[int]:
        return list(self.zones.values())

    def bus_loads(self) -> np.ndarray:
        """Complex load S = P + jQ per bus position."""
        index = self.index
        demand = np.zeros(len(self.buses), dtype=complex)
        for load in self.loads:
            demand[index[load.bus]] += complex(load.p, load.q)
        return demand

    def bus_generation(self) -> np.ndarray:
        index = self.index
        supply = np.zeros(len(self.buses))
        for gen in self.generators:
            supply[index[gen.bus]] += gen.p
        return supply

    def total_load(self) -> float:
        return float(sum(load.p for load in self.loads))

    def with_bus_loads(self, demand: Mapping[int, complex]) -> "GridModel":
        """New model whose listed buses carry exactly the given complex load."""
        index = self.index
        unknown = [bus for bus in demand if bus not in index]
        if unknown:
            raise UnknownBus(f"Unknown bus id(s) {sorted(unknown)}")
        kept = [load for load in self.loads if load.bus not in demand]
        added = [Load(bus=bus, p=float(s.real), q=float(s.imag)) for bus, s in demand.items()]
        ordered = sorted(kept + added, key=lambda load: index[load.bus])
        return self.model_copy(update={"loads": tuple(ordered)})


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    """
    Converged operating point.

    Args:
        bus_ids (tuple[int, ...]): Bus order of the arrays.
        vm (np.ndarray): Voltage magnitude per bus in pu.
        va (np.ndarray): Voltage angle per bus in radians, slack at 0.
        injections (np.ndarray): Net complex injection V·conj(Y·V) per bus.
        branch_flows (np.ndarray): n_branch × 2 complex flows at the from and to ends.
        slack_injection (complex): Net injection at the slack bus.
        iterations (int): Newton updates performed.
        max_mismatch (float): Final max |ΔP, ΔQ|.
    """
    bus_ids: tuple[int, ...]
    vm: np.ndarray
    va: np.ndarray
    injections: np.ndarray
    branch_flows: np.ndarray
    slack_injection: complex
    iterations: int
    max_mismatch: float

    @property
    def voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    @property
    def losses(self) -> float:
        """Total active branch losses in pu."""
        if self.branch_flows.size == 0:
            return 0.0
        return float(self.branch_flows.sum().real)

    def generation(self, model: GridModel) -> np.ndarray:
        """Complex generation per bus, injection plus local load."""
        return self.injections + model.bus_loads()


def _as_int(value) -> int:
    return int(float(value))


def _read_cdf(text: str, source) -> GridModel:
    """IEEE Common Data Format: bus and branch cards between `-999` terminators."""
    lines = text.splitlines()
    try:
        base_mva = float(lines[0][31:37])
    except (IndexError, ValueError):
        base_mva = 100.0
    buses, branches, generators, loads = [], [], [], []
    section = None
    cdf_types = {0: BusType.PQ, 1: BusType.PQ, 2: BusType.PV, 3: BusType.SLACK}
    for lineno, line in enumerate(lines, start=1):
        upper = line.upper()
        if "BUS DATA FOLLOWS" in upper:
            section = "bus"
            continue
        if "BRANCH DATA FOLLOWS" in upper:
            section = "branch"
            continue
        if line.strip().startswith("-999"):
            section = None
            continue
        if section is None:
            continue
        try:
            if section == "bus":
                bus_id = int(line[:4])
                # the name occupies columns 6-17 and may contain blanks
                fields = line[18:].split()
                kind = cdf_types[_as_int(fields[2])]
                load_p, load_q, gen_p = (float(v) / base_mva for v in fields[5:8])
                v_set = float(fields[10]) if float(fields[10]) > 0 else float(fields[3])
                buses.append(Bus(id=bus_id, type=kind, base_kv=float(fields[9]),
                                 shunt_g=float(fields[13]), shunt_b=float(fields[14])))
                if load_p or load_q:
                    loads.append(Load(bus=bus_id, p=load_p, q=load_q))
                if kind != BusType.PQ or gen_p:
                    generators.append(Generator(bus=bus_id, p=gen_p, v_set=v_set))
            elif section == "branch":
                fields = line.split()
                branches.append(Branch(from_bus=int(fields[0]), to_bus=int(fields[1]),
                                       r=float(fields[6]), x=float(fields[7]), b=float(fields[8])))
        except (IndexError, KeyError, ValueError) as e:
            raise MalformedInput(f"{source}: line {lineno}: cannot parse {section} card ({e})") from None
    if not buses:
        raise MalformedInput(f"{source}: no bus data found")
    known = {bus.id for bus in buses}
    zones = {zone: bus for zone, bus in ZONE_TO_BUS.items() if bus in known}
    return GridModel(name=lines[0][45:].strip() or Path(str(source)).stem, base_mva=base_mva,
                     buses=tuple(buses), branches=tuple(branches), generators=tuple(generators),
                     loads=tuple(loads), zones=zones)


def read_fixture(path) -> GridModel:
    """
    Loads a JSON fixture, or an IEEE Common Data Format case (detected by content).

    CDF cases carry no machine data, so their generators get the default
    H, x'd and D.
    """
    file = Path(path).expanduser()
    try:
        text = file.read_text()
    except FileNotFoundError:
        raise MalformedInput(f"Fixture '{file}' not found") from None
    if text.lstrip().startswith("{"):
        model = GridModel.model_validate_json(text)
    else:
        model = _read_cdf(text, file)
    logger.info("Loaded fixture %s: %d buses, %d branches", model.name, len(model.buses), len(model.branches))
    return model


@lru_cache(maxsize=1)
def ieee14_fixture() -> GridModel:
    """The bundled IEEE 14-bus case with the 11 NYISO load buses mapped WEST→#2 … LONGIL→#14."""
    text = files("lcasim").joinpath("data", "ieee14.json").read_text()
    return GridModel.model_validate_json(text)


def _zone_values(snapshot: ZoneSnapshot, zones: Sequence[NyisoZone]) -> dict[NyisoZone, float]:
    parsed = {}
    for code, value in snapshot.items():
        try:
            parsed[NyisoZone.parse(code)] = float(value)
        except ValueError as e:
            raise ZoneMappingError(str(e)) from None
    missing = [zone.value for zone in zones if zone not in parsed]
    if missing:
        raise MissingZone(f"Zone snapshot lacks {missing}")
    negative = [zone.value for zone in zones if not parsed[zone] >= 0]
    if negative:
        raise ZoneMappingError(f"Zone demand must be non-negative, got {negative}")
    return parsed


def _base_bus_loads(model: GridModel) -> dict[int, complex]:
    demand = model.bus_loads()
    index = model.index
    unknown = [bus for bus in model.zones.values() if bus not in index]
    if unknown:
        raise UnknownBus(f"Zone mapping references unknown bus(es) {unknown}")
    return {bus: complex(demand[index[bus]]) for bus in model.zones.values()}


def _power_factor_scaled(base: complex, p: float) -> complex:
    if base.real == 0:
        return complex(p, 0.0)
    return complex(p, p * base.imag / base.real)


def map_zone_loads(model: GridModel, zone_snapshot: ZoneSnapshot) -> GridModel:
    """
    Distributes the fixture's base-case active load over the mapped buses by zone share.

    Bus P = (zone MW / Σ zone MW) · S_target where S_target is the total base-case
    load of the fixture; loads on unmapped buses are left as they are. Q keeps
    each bus's base-case power factor.

    Raises:
        MissingZone: A mapped zone is absent from the snapshot.
        AllZonesZero: Every mapped zone reports zero demand.
    """
    values = _zone_values(zone_snapshot, list(model.zones))
    base = _base_bus_loads(model)
    target = model.total_load()
    total = sum(values[zone] for zone in model.zones)
    if total == 0:
        raise AllZonesZero("All mapped zones report zero demand")
    demand = {}
    for zone, bus in model.zones.items():
        demand[bus] = _power_factor_scaled(base[bus], values[zone] / total * target)
    return model.with_bus_loads(demand)


def map_zone_ratios(model: GridModel, zone_snapshot: ZoneSnapshot, reference: ZoneSnapshot) -> GridModel:
    """
    Scales each mapped bus's base-case load by zone MW over the zone's reference MW.

    Unlike `map_zone_loads` the system total follows the zone demand, so two
    years with different demand levels map to different totals.
    """
    values = _zone_values(zone_snapshot, list(model.zones))
    ref = _zone_values(reference, list(model.zones))
    zero = [zone.value for zone in model.zones if ref[zone] == 0]
    if zero:
        raise ZoneMappingError(f"Reference demand is zero for {zero}")
    base = _base_bus_loads(model)
    demand = {bus: base[bus] * (values[zone] / ref[zone]) for zone, bus in model.zones.items()}
    return model.with_bus_loads(demand)


def zone_averages(panel: LoadPanel) -> dict[NyisoZone, float]:
    """Mean MW of each NYISO zone column of a panel."""
    try:
        zones = [NyisoZone.parse(region) for region in panel.regions]
    except ValueError as e:
        raise ZoneMappingError(str(e)) from None
    return dict(zip(zones, panel.values.mean(axis=1).tolist()))


def zone_snapshot(panel: LoadPanel, k: int) -> dict[str, float]:
    """Column `k` of a zone panel as a zone → MW mapping."""
    return dict(zip(panel.regions, panel.values[:, k].tolist()))


def ybus(model: GridModel) -> np.ndarray:
    """
    Bus admittance matrix with half line charging at each branch end plus bus shunts.

    Raises:
        ZeroImpedanceBranch: A branch has r = x = 0.
    """
    index = model.index
    Y = np.zeros((len(model.buses), len(model.buses)), dtype=complex)
    for branch in model.branches:
        if branch.r == 0 and branch.x == 0:
            raise ZeroImpedanceBranch(f"Branch {branch.from_bus}-{branch.to_bus} has zero impedance")
        f, t = index[branch.from_bus], index[branch.to_bus]
        y = branch.admittance
        charging = 0.5j * branch.b
        Y[f, f] += y + charging
        Y[t, t] += y + charging
        Y[f, t] -= y
        Y[t, f] -= y
    for bus in model.buses:
        Y[index[bus.id], index[bus.id]] += complex(bus.shunt_g, bus.shunt_b)
    return Y


def _check_connected(model: GridModel):
    n = len(model.buses)
    index = model.index
    rows = [index[b.from_bus] for b in model.branches]
    cols = [index[b.to_bus] for b in model.branches]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    islanded = [bus for bus, label in zip(model.bus_ids, labels) if label != labels[index[model.slack]]]
    if islanded:
        raise IslandedBus(f"Bus(es) {islanded} not reachable from slack bus {model.slack}")


def _dS_dV(Y: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of bus injections with respect to angle and magnitude."""
    I = Y @ V
    diagV = np.diag(V)
    diagI = np.diag(I)
    diagVnorm = np.diag(V / np.abs(V))
    dS_dVm = diagV @ np.conj(Y @ diagVnorm) + np.conj(diagI) @ diagVnorm
    dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
    return dS_dVa, dS_dVm


def branch_flows(model: GridModel, V: np.ndarray) -> np.ndarray:
    """Complex power entering each branch at its from and to ends."""
    index = model.index
    flows = np.zeros((len(model.branches), 2), dtype=complex)
    for k, branch in enumerate(model.branches):
        f, t = index[branch.from_bus], index[branch.to_bus]
        y, charging = branch.admittance, 0.5j * branch.b
        flows[k, 0] = V[f] * np.conj((y + charging) * V[f] - y * V[t])
        flows[k, 1] = V[t] * np.conj((y + charging) * V[t] - y * V[f])
    return flows


def power_flow(model: GridModel, tol: float = 1e-8, max_iter: int = 20) -> PowerFlowSolution:
    """
    Newton-Raphson power flow in polar coordinates from a flat start.

    PV and slack buses start at their generator setpoints, every angle at 0.
    Reactive limits are not enforced.

    Args:
        model (GridModel): Network and dispatch.
        tol (float): Convergence threshold on max |ΔP, ΔQ| in pu.
        max_iter (int): Newton update cap.

    Returns:
        PowerFlowSolution: Operating point with branch flows.

    Raises:
        IslandedBus: A bus cannot be reached from the slack.
        Diverged: The iteration cap was hit.
    """
    _check_connected(model)
    Y = ybus(model)
    index = model.index
    kinds = [bus.type for bus in model.buses]
    pv = [k for k, kind in enumerate(kinds) if kind == BusType.PV]
    pq = [k for k, kind in enumerate(kinds) if kind == BusType.PQ]
    pvpq = pv + pq

    vm = np.ones(len(model.buses))
    for gen in model.generators:
        if kinds[index[gen.bus]] != BusType.PQ:
            vm[index[gen.bus]] = gen.v_set
    va = np.zeros(len(model.buses))
    spec = model.bus_generation() - model.bus_loads()

    iterations = 0
    while True:
        V = vm * np.exp(1j * va)
        mismatch = V * np.conj(Y @ V) - spec
        F = np.concatenate([mismatch.real[pvpq], mismatch.imag[pq]])
        worst = float(np.max(np.abs(F))) if F.size else 0.0
        logger.debug("Newton iteration %d: max mismatch %.3e", iterations, worst)
        if worst <= tol:
            break
        if iterations >= max_iter:
            raise Diverged(f"Power flow did not converge in {max_iter} iterations (mismatch {worst:.3e})")
        dS_dVa, dS_dVm = _dS_dV(Y, V)
        J = np.block([
            [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
            [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = scipy.linalg.solve(J, -F)
        except (scipy.linalg.LinAlgError, ValueError) as e:
            raise Diverged(f"Singular Jacobian at iteration {iterations}: {e}") from None
        va[pvpq] += dx[:len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        iterations += 1

    V = vm * np.exp(1j * va)
    injections = V * np.conj(Y @ V)
    logger.info("Power flow converged in %d iterations (mismatch %.2e)", iterations, worst)
    return PowerFlowSolution(
        bus_ids=tuple(model.bus_ids), vm=vm, va=va, injections=injections,
        branch_flows=branch_flows(model, V), slack_injection=complex(injections[index[model.slack]]),
        iterations=iterations, max_mismatch=worst,
    )


def kron_reduce(Y: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """
    Eliminates every node not in `keep`: Y_kk - Y_ke·Y_ee⁻¹·Y_ek.

    Args:
        Y (np.ndarray): Square admittance matrix.
        keep (Sequence[int]): Matrix positions to retain, in output order.

    Raises:
        SingularEliminationBlock: Y_ee cannot be inverted.
    """
    Y = np.asarray(Y, dtype=complex)
    keep = list(keep)
    if len(set(keep)) != len(keep) or any(k < 0 or k >= Y.shape[0] for k in keep):
        raise InputError(f"Invalid keep set {keep} for a {Y.shape[0]}-node matrix")
    eliminate = [k for k in range(Y.shape[0]) if k not in set(keep)]
    Ykk = Y[np.ix_(keep, keep)]
    if not eliminate:
        return Ykk.copy()
    Yee = Y[np.ix_(eliminate, eliminate)]
    if not np.linalg.cond(Yee) < 1 / np.finfo(float).eps:
        raise SingularEliminationBlock(f"Eliminated block over nodes {eliminate} is singular")
    return Ykk - Y[np.ix_(keep, eliminate)] @ scipy.linalg.solve(Yee, Y[np.ix_(eliminate, keep)])
