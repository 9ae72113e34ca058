import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from conftest import single_machine
from lcasim.attack import disconnected_share
from lcasim.errors import (EventOutsideWindow, MalformedInput, SimulationDiverged, UnknownBus,
                           UnstableInitialization)
from lcasim.grid import (Branch, Bus, GridModel, Generator, Load, map_zone_ratios, power_flow, zone_averages,
                         zone_snapshot)
from lcasim.loaddata import ingest_csv
from lcasim.protection import Classification, evaluate
from lcasim.standards import STANDARDS, UFLS_SCHEMES
from lcasim.swing import (LoadEvent, MachineStates, SimulationConfig, SimulationTrace, electrical_power,
                          init_dynamics, read_trace_csv, simulate, swing_rhs, system_frequency,
                          write_trace_csv)


def _run(model, events=(), **cfg):
    return simulate(model, power_flow(model, tol=1e-10), events, SimulationConfig(**cfg))


def _year_model(ieee14, data_dir, year, stamp):
    """IEEE-14 loaded with one zone snapshot of a sample year, against the 2019 zone averages."""
    reference = zone_averages(ingest_csv(data_dir / "nyiso-2019.csv"))
    panel = ingest_csv(data_dir / f"nyiso-{year}.csv")
    k = panel.timestamps.get_loc(pd.Timestamp(stamp))
    snapshot = zone_snapshot(panel, k)
    return map_zone_ratios(ieee14, snapshot, reference)


def test_event_validation():
    with pytest.raises(ValidationError):
        LoadEvent(time=1.0, bus=9)
    with pytest.raises(ValidationError):
        LoadEvent(time=1.0, bus=9, p=0.1, scale=0.5)
    with pytest.raises(ValidationError):
        LoadEvent(time=1.0, bus=9, scale=0.5, q=0.1)
    with pytest.raises(ValidationError):
        LoadEvent(time=2.0, bus=9, scale=0.0, restore=2.0)
    with pytest.raises(ValidationError):
        LoadEvent(time=-1.0, bus=9, scale=0.0)
    event = LoadEvent.disconnect(9, 200.0, 5.0)
    assert (event.scale, event.restore) == (0.0, 205.0)
    assert event.describe() == "disconnect load at bus 9"


def test_simulation_config():
    with pytest.raises(ValidationError):
        SimulationConfig(step=0.02)
    cfg = SimulationConfig(ufls="nyiso")
    assert cfg.ufls == UFLS_SCHEMES["NYISO"]
    assert SimulationConfig().steps == 60000
    with pytest.raises(ValidationError):
        SimulationConfig(ufls="ISO-XX")


def test_init_single_machine():
    model = single_machine(xd=0.25)
    states, network = init_dynamics(model, power_flow(model))
    assert states.delta[0] == pytest.approx(np.arctan(0.25))
    # P = E·V·sin(δ)/x'd with V = 1
    assert states.E[0] * np.sin(states.delta[0]) / 0.25 == pytest.approx(1.0)
    assert states.pm[0] == pytest.approx(1.0, abs=1e-12)
    dy, _ = swing_rhs(np.concatenate([states.delta, states.omega, states.pm]), network, states.E, states.pm)
    assert np.all(dy == 0)


def test_init_zero_load():
    model = GridModel(buses=(Bus(id=1, type="slack"), Bus(id=2, type="PV")),
                      branches=(Branch(from_bus=1, to_bus=2, x=0.2),),
                      generators=(Generator(bus=1), Generator(bus=2)), zones={})
    states, network = init_dynamics(model, power_flow(model))
    np.testing.assert_allclose(states.delta, 0.0, atol=1e-12)
    np.testing.assert_allclose(electrical_power(states, network.Y_red), 0.0, atol=1e-12)


def test_init_mapped_equilibrium(ieee14, data_dir):
    model = _year_model(ieee14, data_dir, 2020, "2020-04-10T10:00:00")
    states, network = init_dynamics(model, power_flow(model, tol=1e-10))
    y0 = np.concatenate([states.delta, states.omega, states.pm])
    dy, pe = swing_rhs(y0, network, states.E, states.pm)
    assert np.linalg.norm(dy) <= 1e-8
    assert np.all(states.E > 0)
    np.testing.assert_allclose(pe, states.pm)


def test_init_rejects_foreign_power_flow(ieee14, ieee14_pf):
    other = ieee14.with_bus_loads({4: 0.6 + 0.1j})
    with pytest.raises(UnstableInitialization):
        init_dynamics(other, ieee14_pf)


def test_electrical_power_two_machines():
    Y = np.array([[-2j, 2j], [2j, -2j]])
    equal = MachineStates(delta=np.array([0.3, 0.3]), omega=np.zeros(2), E=np.ones(2), pm=np.zeros(2))
    np.testing.assert_allclose(electrical_power(equal, Y), 0.0, atol=1e-15)
    apart = MachineStates(delta=np.array([np.pi / 2, 0.0]), omega=np.zeros(2), E=np.ones(2), pm=np.zeros(2))
    np.testing.assert_allclose(electrical_power(apart, Y), [2.0, -2.0], atol=1e-12)


def test_electrical_power_brute_force():
    rng = np.random.default_rng(31)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    Y = A + A.T
    states = MachineStates(delta=rng.uniform(-1, 1, 3), omega=np.zeros(3), E=rng.uniform(0.9, 1.2, 3),
                           pm=np.zeros(3))
    expected = np.zeros(3)
    for i in range(3):
        for j in range(3):
            angle = states.delta[i] - states.delta[j]
            expected[i] += states.E[i] * states.E[j] * (Y[i, j].real * np.cos(angle) + Y[i, j].imag * np.sin(angle))
    np.testing.assert_allclose(electrical_power(states, Y), expected, atol=1e-12)


def test_equilibrium_persistence(ieee14, ieee14_pf):
    """No events for 300 s at a 5 ms step"""
    trace = simulate(ieee14, ieee14_pf, (), SimulationConfig(duration=300.0, step=0.005))
    assert len(trace.time) == 60001
    assert np.max(np.abs(trace.frequency - 60.0)) <= 1e-6
    assert trace.events == ()
    assert not trace.diverged


@pytest.mark.parametrize("H", [2.0, 4.0, 6.0])
@pytest.mark.parametrize("dP", [0.05, -0.05, 0.1, -0.1])
def test_initial_rocof(H, dP):
    model = single_machine(H=H)
    trace = _run(model, [LoadEvent(time=0.0, bus=1, p=1.0 - dP)], duration=0.05, step=0.001)
    rocof = (trace.frequency[10] - trace.frequency[0]) / 0.01
    assert rocof == pytest.approx(60.0 * dP / (2 * H), rel=0.005)


def test_direction_law(ieee14):
    drop = _run(ieee14, [LoadEvent(time=0.0, bus=9, scale=0.0)], duration=0.05)
    rise = _run(ieee14, [LoadEvent(time=0.0, bus=9, scale=1.5)], duration=0.05)
    assert drop.frequency[1] - drop.frequency[0] >= 0
    assert rise.frequency[1] - rise.frequency[0] <= 0


def test_monotone_severity(ieee14):
    loaded = sorted({load.bus for load in ieee14.loads})
    pf = power_flow(ieee14, tol=1e-10)
    cfg = SimulationConfig(duration=4.0, step=0.005)
    peaks = []
    for fraction in np.arange(0.05, 0.41, 0.05):
        events = [LoadEvent(time=0.5, bus=bus, scale=1 - fraction) for bus in loaded]
        trace = simulate(ieee14, pf, events, cfg)
        peaks.append(np.max(np.abs(trace.frequency - 60.0)))
    assert len(peaks) == 8
    assert all(b >= a for a, b in zip(peaks, peaks[1:]))


def test_step_halving(ieee14):
    event = [LoadEvent(time=1.0, bus=9, scale=0.0, restore=3.0)]
    coarse = _run(ieee14, event, duration=5.0, step=0.01)
    fine = _run(ieee14, event, duration=5.0, step=0.005)
    assert abs(coarse.frequency.max() - fine.frequency.max()) < 1e-4


def test_lossless_conservation():
    model = GridModel(
        buses=(Bus(id=1, type="slack"), Bus(id=2, type="PV")),
        branches=(Branch(from_bus=1, to_bus=2, x=0.3),),
        generators=(Generator(bus=1, H=3.0, D=0.0), Generator(bus=2, p=-0.5, H=5.0, D=0.0)),
        loads=(Load(bus=2, p=0.0, q=0.2),),
        zones={},
    )
    trace = _run(model, [LoadEvent(time=0.1, bus=2, p=0.0, q=0.8)], duration=5.0, step=0.005)
    momentum = trace.omega @ (2 * trace.H / (2 * np.pi * 60.0))
    assert np.ptp(trace.delta[:, 0] - trace.delta[:, 1]) > 1e-4
    assert np.max(np.abs(momentum - momentum[0])) <= 1e-9 * abs(momentum[0])


def test_bus9_disconnection(ieee14, ieee14_pf):
    """5 s disconnection of the CAPITL load at 200 s of a 300 s run"""
    share = disconnected_share(ieee14, [9])
    assert 0.08 <= share <= 0.12
    trace = simulate(ieee14, ieee14_pf, [LoadEvent.disconnect(9, 200.0, 5.0)], SimulationConfig())
    peak = trace.frequency.max()
    assert 60.1 < peak <= 61.5
    assert trace.time[trace.frequency.argmax()] >= 200.0
    assert np.max(np.abs(trace.frequency[trace.time < 200.0] - 60.0)) <= 1e-6
    assert [label for _, label in trace.events] == ["disconnect load at bus 9", "restore load at bus 9"]
    assert [t for t, _ in trace.events] == pytest.approx([200.0, 205.0])

    low = trace.machine_frequency.min(axis=1)
    high = trace.machine_frequency.max(axis=1)
    assert np.all(trace.frequency >= low - 1e-9)
    assert np.all(trace.frequency <= high + 1e-9)


@pytest.mark.parametrize("year", [2019, 2020])
def test_bus3_disconnection(ieee14, data_dir, year):
    model = _year_model(ieee14, data_dir, year, f"{year}-04-10T10:00:00")
    assert 0.3 <= disconnected_share(model, [3]) <= 0.42
    trace = _run(model, [LoadEvent.disconnect(3, 200.0, 5.0)])
    assert 62.0 <= trace.frequency.max() <= 66.0
    nyiso = evaluate(trace, [STANDARDS["NYISO"]])[0]
    assert nyiso.classification == Classification.MAJOR_EMERGENCY


def test_governor_limits_excursion(ieee14):
    event = [LoadEvent(time=1.0, bus=9, scale=0.0)]
    free = _run(ieee14, event, duration=20.0)
    governed = _run(ieee14, event, duration=20.0, governor=True)
    assert governed.frequency.max() < free.frequency.max()
    assert abs(governed.frequency[-1] - 60.0) < abs(free.frequency[-1] - 60.0)


def test_absolute_event_sets_load():
    model = single_machine(H=4.0)
    trace = _run(model, [LoadEvent(time=0.0, bus=1, p=0.8)], duration=0.02, step=0.001)
    assert trace.pe[1, 0] == pytest.approx(0.8, rel=1e-4)


def test_overlapping_events_unwind(ieee14):
    """Restoring one event keeps the others on the bus, and all restores give back the base load"""
    overlapping = _run(ieee14, [LoadEvent(time=1.0, bus=9, scale=0.0, restore=2.0),
                                LoadEvent(time=1.5, bus=9, scale=0.5, restore=2.5)], duration=3.0)
    sequential = _run(ieee14, [LoadEvent(time=1.0, bus=9, scale=0.0, restore=2.0),
                               LoadEvent(time=2.0, bus=9, scale=0.5, restore=2.5)], duration=3.0)
    np.testing.assert_allclose(overlapping.frequency, sequential.frequency, rtol=0, atol=1e-12)
    np.testing.assert_allclose(overlapping.pe, sequential.pe, rtol=0, atol=1e-12)
    restores = [t for t, label in overlapping.events if label == "restore load at bus 9"]
    assert restores == pytest.approx([2.0, 2.5])


def test_restore_keeps_shed_load():
    model = single_machine(H=5.0)
    trace = _run(model, [LoadEvent(time=0.0, bus=1, p=1.5, restore=2.0)], duration=2.5, ufls="NYISO")
    assert sum(label.startswith("UFLS shed") for _, label in trace.events) == 4
    k = int(round(2.0 / 0.005))
    assert trace.pe[k, 0] / trace.pe[k - 1, 0] == pytest.approx(1 / 1.5, rel=1e-5)
    assert trace.pe[k, 0] == pytest.approx(0.93 ** 4 * trace.pe[0, 0] / 1.5, rel=1e-5)


def test_system_frequency():
    time = np.arange(3) * 0.1
    omega = 2 * np.pi * np.array([[60.2, 59.8]] * 3)
    zeros = np.zeros((3, 2))
    trace = SimulationTrace(time=time, delta=zeros, omega=omega, pe=zeros, pm=zeros,
                            frequency=np.zeros(3), H=np.array([3.0, 3.0]))
    np.testing.assert_allclose(system_frequency(trace), 60.0)
    steady = SimulationTrace(time=time, delta=zeros, omega=np.full((3, 2), 2 * np.pi * 60), pe=zeros, pm=zeros,
                             frequency=np.zeros(3), H=np.array([2.0, 5.0]))
    np.testing.assert_allclose(system_frequency(steady), 60.0, atol=1e-12)


def test_trace_lengths():
    with pytest.raises(ValueError):
        SimulationTrace(time=np.arange(3), delta=np.zeros((2, 1)), omega=np.zeros((3, 1)), pe=np.zeros((3, 1)),
                        pm=np.zeros((3, 1)), frequency=np.zeros(3), H=np.ones(1))


def test_simulation_errors(ieee14, ieee14_pf):
    cfg = SimulationConfig(duration=1.0)
    with pytest.raises(UnknownBus):
        simulate(ieee14, ieee14_pf, [LoadEvent(time=0.5, bus=99, scale=0.0)], cfg)
    with pytest.raises(EventOutsideWindow):
        simulate(ieee14, ieee14_pf, [LoadEvent(time=2.0, bus=9, scale=0.0)], cfg)


def test_divergence_keeps_partial_trace():
    model = single_machine(H=2.0)
    with pytest.raises(SimulationDiverged) as info:
        _run(model, [LoadEvent(time=0.0, bus=1, p=0.5)], duration=2.0)
    trace = info.value.trace
    assert trace.diverged
    assert len(trace.time) < 401
    assert trace.frequency[-1] > 66.0
    assert trace.frequency[-2] <= 66.0


def test_trace_csv(tmp_path, ieee14, ieee14_pf):
    trace = simulate(ieee14, ieee14_pf, [LoadEvent.disconnect(9, 0.5, 0.5)], SimulationConfig(duration=2.0))
    path = write_trace_csv(trace, tmp_path / "trace.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header[0] == "time" and header[-1] == "system_f"
    assert "f_g5" in header and "delta_g1" in header and "pe_g3" in header
    loaded = read_trace_csv(path)
    np.testing.assert_allclose(loaded.frequency, trace.frequency, atol=1e-7)
    np.testing.assert_allclose(loaded.time, trace.time, atol=1e-12)

    broken = tmp_path / "broken.csv"
    broken.write_text("time,f\n0,60\n")
    with pytest.raises(MalformedInput):
        read_trace_csv(broken)
    with pytest.raises(MalformedInput):
        read_trace_csv(tmp_path / "missing.csv")
