from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from lcasim.grid import Bus, GridModel, Generator, Load, ieee14_fixture, power_flow
from lcasim.loaddata import LoadPanel

DATA_DIR = Path(__file__).resolve().parents[2] / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture(scope="session")
def ieee14():
    return ieee14_fixture()


@pytest.fixture(scope="session")
def ieee14_pf(ieee14):
    return power_flow(ieee14, tol=1e-10)


def single_machine(H=5.0, load=1.0, D=0.0, xd=0.001) -> GridModel:
    """One machine on the slack bus feeding a local load, no branches."""
    return GridModel(
        name="single-machine",
        buses=(Bus(id=1, type="slack"),),
        generators=(Generator(bus=1, p=load, v_set=1.0, H=H, xd=xd, D=D),),
        loads=(Load(bus=1, p=load),),
        zones={},
    )


def make_panel(values, start="2020-04-09T00:00:00", step=300, regions=None, unit="MW") -> LoadPanel:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    regions = regions or tuple(f"R{i}" for i in range(values.shape[0]))
    timestamps = pd.date_range(start, periods=values.shape[1], freq=pd.Timedelta(seconds=step))
    return LoadPanel(regions=tuple(regions), timestamps=timestamps, values=values, resolution=step, unit=unit)


def write_long_csv(path, panel: LoadPanel) -> Path:
    rows = ["timestamp,region,value"]
    for k, stamp in enumerate(panel.timestamps):
        for i, region in enumerate(panel.regions):
            rows.append(f"{stamp:%Y-%m-%dT%H:%M:%S},{region},{float(panel.values[i, k])!r}")
    Path(path).write_text("\n".join(rows) + "\n")
    return Path(path)
