import numpy as np
import pytest
from pydantic import ValidationError

from lcasim.errors import (AllZonesZero, Diverged, InputError, IslandedBus, MalformedInput, MissingZone,
                           SingularEliminationBlock, UnknownBus, ZeroImpedanceBranch, ZoneMappingError)
from lcasim.grid import (Branch, Bus, GridModel, Generator, Load, kron_reduce, map_zone_loads, map_zone_ratios,
                         power_flow, read_fixture, ybus, zone_averages, zone_snapshot)
from lcasim.loaddata import ingest_csv
from lcasim.swing import init_dynamics
from lcasim.zones import BUS_TO_ZONE, ZONE_TO_BUS, NyisoZone

ZONES = [zone.value for zone in NyisoZone]


def two_bus(load=1.0, x=0.1, b=0.0, r=0.0) -> GridModel:
    return GridModel(
        name="two-bus",
        buses=(Bus(id=1, type="slack"), Bus(id=2, type="PV")),
        branches=(Branch(from_bus=1, to_bus=2, r=r, x=x, b=b),),
        generators=(Generator(bus=1, v_set=1.0), Generator(bus=2, p=0.0, v_set=1.0)),
        loads=(Load(bus=2, p=load),),
        zones={},
    )


def gauss_seidel(model: GridModel, tol=1e-13, max_iter=20000):
    """Plain Gauss-Seidel with PV magnitude correction, as an independent reference."""
    Y = ybus(model)
    kinds = [bus.type.value for bus in model.buses]
    index = model.index
    V = np.ones(len(kinds), dtype=complex)
    for gen in model.generators:
        if kinds[index[gen.bus]] != "PQ":
            V[index[gen.bus]] = gen.v_set
    spec = model.bus_generation() - model.bus_loads()
    for _ in range(max_iter):
        change = 0.0
        for i, kind in enumerate(kinds):
            if kind == "slack":
                continue
            s = spec[i]
            if kind == "PV":
                q = (V[i] * np.conj(Y[i] @ V)).imag
                s = complex(spec[i].real, q)
            new = (np.conj(s) / np.conj(V[i]) - (Y[i] @ V - Y[i, i] * V[i])) / Y[i, i]
            if kind == "PV":
                new = abs(V[i]) * new / abs(new)
            change = max(change, abs(new - V[i]))
            V[i] = new
        if change < tol:
            return V
    raise AssertionError("Gauss-Seidel did not converge")


def test_fixture_shape(ieee14):
    assert len(ieee14.buses) == 14
    assert len(ieee14.branches) == 20
    assert ieee14.slack == 1
    assert ieee14.mappable_buses == [2, 3, 4, 5, 6, 9, 10, 11, 12, 13, 14]
    assert [zone.value for zone in ieee14.zones] == ZONES
    assert ieee14.total_load() == pytest.approx(2.59)


def test_fixture_machines(ieee14):
    assert sorted(gen.bus for gen in ieee14.generators) == [1, 2, 3, 6, 8]
    for gen in ieee14.generators:
        assert 2 <= gen.H <= 6
        assert gen.xd == 0.25
        assert gen.D == 2.0


def test_zone_mapping_tables():
    assert NyisoZone.WEST.bus == 2
    assert NyisoZone.LONGIL.bus == 14
    assert BUS_TO_ZONE[13] is NyisoZone.NYC
    assert NyisoZone.parse("N.Y.C.") is NyisoZone.NYC
    assert NyisoZone.parse("mhk vl") is NyisoZone.MHK_VL
    assert len(ZONE_TO_BUS) == 11
    with pytest.raises(ValueError):
        NyisoZone.parse("ATLANTIS")


def test_model_invariants():
    with pytest.raises(ValidationError):
        GridModel(buses=(Bus(id=1, type="slack"), Bus(id=2, type="slack")), zones={})
    with pytest.raises(ValidationError):
        GridModel(buses=(Bus(id=1, type="slack"),), loads=(Load(bus=7, p=1.0),), zones={})
    with pytest.raises(ValidationError):
        GridModel(buses=(Bus(id=1, type="slack"),), generators=(Generator(bus=1, H=0.0),), zones={})
    with pytest.raises(ValidationError):
        GridModel(buses=(Bus(id=1, type="slack"),), generators=(Generator(bus=1, xd=-0.1),), zones={})
    with pytest.raises(ValidationError):
        GridModel(buses=(Bus(id=1, type="slack"), Bus(id=1, type="PQ")), zones={})


def test_ybus_two_bus():
    Y = ybus(two_bus())
    np.testing.assert_allclose(Y, [[-10j, 10j], [10j, -10j]])
    charged = ybus(two_bus(b=0.02))
    np.testing.assert_allclose(np.diag(charged - Y), [0.01j, 0.01j])
    np.testing.assert_allclose(charged[0, 1], Y[0, 1])


def test_ybus_isolated_bus():
    model = GridModel(buses=(Bus(id=1, type="slack"), Bus(id=2, type="PQ"), Bus(id=3, type="PQ")),
                      branches=(Branch(from_bus=1, to_bus=2, x=0.2),), zones={})
    Y = ybus(model)
    assert np.all(Y[2] == 0) and np.all(Y[:, 2] == 0)


def test_ybus_symmetric(ieee14):
    Y = ybus(ieee14)
    np.testing.assert_allclose(Y, Y.T)
    assert Y[8, 8].imag < 0


def test_ybus_zero_impedance():
    model = GridModel(buses=(Bus(id=1, type="slack"), Bus(id=2, type="PQ")),
                      branches=(Branch(from_bus=1, to_bus=2, r=0.0, x=0.0),), zones={})
    with pytest.raises(ZeroImpedanceBranch):
        ybus(model)


def test_power_flow_unloaded():
    model = GridModel(
        buses=(Bus(id=1, type="slack"), Bus(id=2, type="PV"), Bus(id=3, type="PQ")),
        branches=(Branch(from_bus=1, to_bus=2, x=0.1), Branch(from_bus=2, to_bus=3, x=0.2),
                  Branch(from_bus=1, to_bus=3, x=0.3)),
        generators=(Generator(bus=1), Generator(bus=2)),
        zones={},
    )
    pf = power_flow(model)
    assert pf.iterations <= 1
    np.testing.assert_allclose(pf.va, 0.0, atol=1e-12)
    np.testing.assert_allclose(pf.vm, 1.0, atol=1e-12)
    assert pf.losses == pytest.approx(0.0, abs=1e-12)


def test_power_flow_two_bus_angle():
    pf = power_flow(two_bus(), tol=1e-13)
    assert pf.va[0] == 0.0
    assert pf.va[1] == pytest.approx(-np.arcsin(0.1), abs=1e-10)
    assert pf.vm[1] == pytest.approx(1.0)
    assert pf.slack_injection.real == pytest.approx(1.0, abs=1e-12)


def test_power_flow_ieee14(ieee14):
    pf = power_flow(ieee14, tol=1e-8)
    assert pf.iterations <= 10
    assert pf.max_mismatch <= 1e-8
    assert pf.va[ieee14.index[ieee14.slack]] == 0.0
    assert pf.branch_flows.shape == (20, 2)

    V = gauss_seidel(ieee14)
    np.testing.assert_allclose(pf.vm, np.abs(V), atol=1e-6)
    np.testing.assert_allclose(pf.va, np.angle(V) - np.angle(V[0]), atol=1e-6)


def test_power_flow_balance(ieee14, ieee14_pf):
    Y = ybus(ieee14)
    V = ieee14_pf.voltage
    mismatch = V * np.conj(Y @ V) - (ieee14.bus_generation() - ieee14.bus_loads())
    kinds = [bus.type.value for bus in ieee14.buses]
    for k, kind in enumerate(kinds):
        if kind != "slack":
            assert abs(mismatch[k].real) <= 1e-10
        if kind == "PQ":
            assert abs(mismatch[k].imag) <= 1e-10
    generation = ieee14_pf.generation(ieee14).real.sum()
    assert generation == pytest.approx(ieee14.total_load() + ieee14_pf.losses, abs=1e-8)
    assert 0.05 < ieee14_pf.losses < 0.3


def test_power_flow_islanded():
    model = GridModel(buses=(Bus(id=1, type="slack"), Bus(id=2, type="PQ"), Bus(id=3, type="PQ")),
                      branches=(Branch(from_bus=1, to_bus=2, x=0.2),),
                      generators=(Generator(bus=1),), loads=(Load(bus=3, p=0.1),), zones={})
    with pytest.raises(IslandedBus, match=r"\[3\]"):
        power_flow(model)


def test_power_flow_diverges():
    with pytest.raises(Diverged):
        power_flow(two_bus(load=20.0))


def test_kron_keep_all():
    Y = ybus(two_bus(b=0.02))
    reduced = kron_reduce(Y, [0, 1])
    np.testing.assert_array_equal(reduced, Y)
    assert reduced is not Y


def test_kron_star():
    y1, y2 = 2 - 5j, 1 - 8j
    Y = np.array([[y1 + y2, -y1, -y2], [-y1, y1, 0], [-y2, 0, y2]])
    reduced = kron_reduce(Y, [1, 2])
    series = y1 * y2 / (y1 + y2)
    np.testing.assert_allclose(reduced, [[series, -series], [-series, series]])


def test_kron_nested():
    rng = np.random.default_rng(21)
    A = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    Y = A + A.T + 12 * np.eye(6)
    inner = kron_reduce(kron_reduce(Y, [0, 1, 2, 3]), [0, 1])
    np.testing.assert_allclose(inner, kron_reduce(Y, [0, 1]), atol=1e-12)


def test_kron_errors():
    Y = np.zeros((3, 3), dtype=complex)
    Y[0, 0] = 1
    with pytest.raises(SingularEliminationBlock):
        kron_reduce(Y, [0])
    with pytest.raises(InputError):
        kron_reduce(np.eye(3), [0, 0])
    with pytest.raises(InputError):
        kron_reduce(np.eye(3), [3])


def test_kron_internal_nodes(ieee14, ieee14_pf):
    """Reduced network injections agree with a full network solve"""
    states, network = init_dynamics(ieee14, ieee14_pf)
    n = network.n_bus
    Y = network.Y_aug.copy()
    Y[np.arange(n), np.arange(n)] += network.y_load
    E = states.E * np.exp(1j * states.delta)
    Vb = -np.linalg.solve(Y[:n, :n], Y[:n, n:] @ E)
    current = Y[n:, :n] @ Vb + Y[n:, n:] @ E
    np.testing.assert_allclose(E * np.conj(current), E * np.conj(network.Y_red @ E), atol=1e-8)
    np.testing.assert_allclose(Vb, ieee14_pf.voltage, atol=1e-8)


def _snapshot(values):
    return dict(zip(ZONES, values))


def test_map_equal_zones(ieee14):
    mapped = map_zone_loads(ieee14, _snapshot([100.0] * 11))
    base = {load.bus: load for load in ieee14.loads}
    for load in mapped.loads:
        assert load.p == pytest.approx(2.59 / 11, abs=1e-12)
        assert load.q / load.p == pytest.approx(base[load.bus].q / base[load.bus].p)
    assert mapped.total_load() == pytest.approx(ieee14.total_load(), abs=1e-9)


def test_map_single_zone(ieee14):
    values = [0.0] * 11
    values[ZONES.index("N.Y.C.")] = 500.0
    mapped = map_zone_loads(ieee14, _snapshot(values))
    loads = {load.bus: load for load in mapped.loads}
    assert loads[13].p == pytest.approx(2.59, abs=1e-12)
    assert all(loads[bus].p == 0 and loads[bus].q == 0 for bus in loads if bus != 13)


def test_map_preserves_total(ieee14):
    rng = np.random.default_rng(13)
    for _ in range(10):
        mapped = map_zone_loads(ieee14, _snapshot(rng.uniform(0, 5000, size=11)))
        assert mapped.total_load() == pytest.approx(ieee14.total_load(), abs=1e-9)
    assert ieee14.total_load() == pytest.approx(2.59)


def test_map_target_includes_unmapped_load(ieee14):
    """Load on a bus outside the zone table still counts toward the distributed total"""
    extended = ieee14.with_bus_loads({7: 0.1 + 0.02j})
    mapped = map_zone_loads(extended, _snapshot([100.0] * 11))
    loads = {load.bus: load for load in mapped.loads}
    assert loads[7].p == pytest.approx(0.1) and loads[7].q == pytest.approx(0.02)
    assert sum(loads[bus].p for bus in extended.mappable_buses) == pytest.approx(2.69, abs=1e-9)
    assert loads[13].p == pytest.approx(2.69 / 11, abs=1e-12)


def test_map_sample_hour(ieee14, data_dir):
    panel = ingest_csv(data_dir / "nyiso-2020.csv")
    k = 12 * 17
    snapshot = zone_snapshot(panel, k)
    share = snapshot["N.Y.C."] / sum(snapshot.values())
    mapped = map_zone_loads(ieee14, snapshot)
    load = next(load for load in mapped.loads if load.bus == 13)
    assert load.p == pytest.approx(share * 2.59, rel=1e-12)
    assert 0.2 < share < 0.45


def test_map_errors(ieee14):
    partial = _snapshot([1.0] * 11)
    del partial["LONGIL"]
    with pytest.raises(MissingZone):
        map_zone_loads(ieee14, partial)
    with pytest.raises(AllZonesZero):
        map_zone_loads(ieee14, _snapshot([0.0] * 11))
    with pytest.raises(ZoneMappingError):
        map_zone_loads(ieee14, _snapshot([-1.0] + [1.0] * 10))
    with pytest.raises(ZoneMappingError):
        map_zone_loads(ieee14, {**_snapshot([1.0] * 11), "ATLANTIS": 3.0})


def test_map_ratios(ieee14):
    reference = _snapshot(np.linspace(100, 2000, 11))
    same = map_zone_ratios(ieee14, reference, reference)
    assert same.loads == ieee14.loads
    doubled = map_zone_ratios(ieee14, {zone: 2 * mw for zone, mw in reference.items()}, reference)
    assert doubled.total_load() == pytest.approx(2 * ieee14.total_load())
    with pytest.raises(ZoneMappingError):
        map_zone_ratios(ieee14, reference, {**reference, "WEST": 0.0})


def test_zone_averages(data_dir):
    panel = ingest_csv(data_dir / "nyiso-2019.csv")
    averages = zone_averages(panel)
    assert list(averages) == list(NyisoZone)
    assert averages[NyisoZone.NYC] == pytest.approx(panel.region("N.Y.C.").mean())


def test_with_bus_loads_unknown(ieee14):
    with pytest.raises(UnknownBus):
        ieee14.with_bus_loads({99: 1 + 0j})


def _cdf_bus(bus, name, kind, load=(0.0, 0.0), gen=0.0, v=1.0, desired=0.0, b=0.0):
    fields = [1, 1, kind, v, 0.0, load[0], load[1], gen, 0.0, 138.0, desired, 0.0, 0.0, 0.0, b, 0]
    return f"{bus:4d} {name:<12} " + " ".join(str(f) for f in fields)


def three_bus_cdf() -> str:
    title = "08/19/93 UW ARCHIVE".ljust(31) + " 100.0" + " 1962 W " + "Three bus case"
    lines = [
        title,
        "BUS DATA FOLLOWS                            3 ITEMS",
        _cdf_bus(1, "Bus 1 HV", 3, v=1.0, desired=1.0),
        _cdf_bus(2, "Bus 2 HV", 2, gen=50.0, v=1.02, desired=1.02),
        _cdf_bus(3, "Bus 3 LV", 0, load=(80.0, 20.0), b=0.05),
        "-999",
        "BRANCH DATA FOLLOWS                         3 ITEMS",
        "   1    2  1  1 1 0  0.01000   0.10000   0.02000",
        "   1    3  1  1 1 0  0.02000   0.15000   0.01000",
        "   2    3  1  1 1 0  0.01500   0.12000   0.01000",
        "-999",
        "END OF DATA",
    ]
    return "\n".join(lines) + "\n"


def test_read_cdf(tmp_path):
    path = tmp_path / "three.cdf"
    path.write_text(three_bus_cdf())
    model = read_fixture(path)
    assert model.name == "Three bus case"
    assert model.bus_ids == [1, 2, 3]
    assert model.slack == 1
    assert [bus.type.value for bus in model.buses] == ["slack", "PV", "PQ"]
    assert model.buses[2].shunt_b == pytest.approx(0.05)
    assert [(load.bus, load.p, load.q) for load in model.loads] == [(3, 0.8, 0.2)]
    assert [(gen.bus, gen.p, gen.v_set) for gen in model.generators] == [(1, 0.0, 1.0), (2, 0.5, 1.02)]
    assert all(gen.H == 4.0 and gen.xd == 0.25 for gen in model.generators)
    assert model.branches[1].x == pytest.approx(0.15)
    assert model.mappable_buses == [2, 3]
    pf = power_flow(model)
    assert pf.max_mismatch <= 1e-8


def test_read_cdf_malformed(tmp_path):
    text = three_bus_cdf().replace("   1    3  1  1 1 0  0.02000", "   1    X  1  1 1 0  0.02000")
    path = tmp_path / "broken.cdf"
    path.write_text(text)
    with pytest.raises(MalformedInput, match="line 9"):
        read_fixture(path)
    with pytest.raises(MalformedInput):
        read_fixture(tmp_path / "missing.json")


def test_read_json_fixture(tmp_path, ieee14):
    path = tmp_path / "case.json"
    path.write_text(ieee14.model_dump_json(by_alias=True, indent=2))
    assert read_fixture(path) == ieee14
