"""
Command line front-end: ingest → dmd → preselect → simulate → report.

Every command writes into a temporary sibling of the output directory and
moves it into place only when the command succeeds.
"""

import argparse
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable, Optional

import pandas as pd
from pydantic import ValidationError

from . import __version__, export_json
from .attack import (ATTACK_DURATION, ATTACK_LEAD, RUN_LENGTH, AttackScenario, PreselectionReport, Recommendation,
                     bus_load_matrix, preselect, read_scenarios, scenario_from_recommendation)
from .config import RunConfig, load_config
from .dmd import build_snapshot_pair, dmd, mode_report
from .errors import ConfigError, EventOutsideWindow, LcasimError, NothingToReport, SimulationDiverged, exit_code_for
from .grid import (GridModel, ieee14_fixture, map_zone_loads, map_zone_ratios, power_flow, read_fixture,
                   zone_averages, zone_snapshot)
from .loaddata import (LoadPanel, day_keys, heatmap_grid, ingest_csv, ingest_temperature_csv, normalize_minmax,
                       percentile_band, resample, select_day, select_days, temperature_similarity,
                       write_panel_csv)
from .protection import TraceSummary, summarize
from .standards import FrequencyStandard, load_standards
from .swing import SimulationConfig, SimulationTrace, read_trace_csv, simulate, write_trace_csv

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
PF_TOLERANCE = 1e-10


@contextmanager
def staged(output: Path):
    """Yields a scratch copy of `output` that replaces it on success and is discarded on error."""
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix=f".{output.name}-", dir=output.parent))
    try:
        os.chmod(work, 0o755)
        if output.is_dir():
            shutil.copytree(output, work, dirs_exist_ok=True)
        yield work
    except BaseException:
        shutil.rmtree(work, ignore_errors=True)
        raise
    if output.exists():
        shutil.rmtree(output)
    os.replace(work, output)
    logger.info("Wrote %s", output)


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


def _fresh(target: Path) -> Path:
    """Empties and recreates the subtree one stage owns."""
    if target.exists():
        shutil.rmtree(target)
    target.mkdir(parents=True)
    return target


# -- stages -------------------------------------------------------------------

def load_panels(config: RunConfig) -> dict[str, LoadPanel]:
    panels = {}
    for year in config.years:
        panel = ingest_csv(year.loads, config.csv_schema)
        if config.resolution is not None:
            panel = resample(panel, config.resolution)
        panels[year.label] = panel
    return panels


def fixture(config: RunConfig) -> GridModel:
    return read_fixture(config.fixture) if config.fixture is not None else ieee14_fixture()


def ingest_stage(config: RunConfig, work: Path) -> dict[str, LoadPanel]:
    """Panels, normalized panels, heatmap grids, percentile bands and temperature screening."""
    target = _fresh(work / "panels")
    panels = load_panels(config)
    temperatures = {}
    for year in config.years:
        panel = panels[year.label]
        write_panel_csv(panel, target / f"{year.label}.csv")
        write_panel_csv(normalize_minmax(panel, config.normalization), target / f"{year.label}-normalized.csv")
        heatmap_grid(panel).to_csv(target / f"{year.label}-heatmap.csv")
        percentile_band(panel).to_csv(target / f"{year.label}-band.csv")
        if year.temperature is not None:
            series = ingest_temperature_csv(year.temperature, config.csv_schema.model_copy(update={"region": None}))
            temperatures[year.label] = series
            pd.DataFrame({"celsius": series.celsius, "normalized": series.normalized()},
                         index=pd.Index(series.timestamps, name="timestamp")).to_csv(
                target / f"{year.label}-temperature.csv", date_format="%Y-%m-%dT%H:%M:%S")
    selection = config.preselection
    if selection is not None and {selection.reference, selection.attacked} <= set(temperatures):
        ranking = temperature_similarity(temperatures[selection.reference], temperatures[selection.attacked])
        pd.DataFrame([(s.day.strftime("%m-%d"), s.score) for s in ranking], columns=["day", "score"]).to_csv(
            target / "temperature-similarity.csv", index=False)
    return panels


def dmd_stage(config: RunConfig, work: Path, panels: dict[str, LoadPanel]) -> None:
    target = _fresh(work / "dmd")
    for label, panel in panels.items():
        data = normalize_minmax(panel, config.normalization) if config.dmd.normalize else panel
        result = dmd(build_snapshot_pair(data), config.dmd.rank, config.dmd.energy)
        _write_json(target / f"{label}.json", result.to_json())
        _write_json(target / f"{label}-eigenvalues.json",
                    [[float(v.real), float(v.imag)] for v in result.eigenvalues])
        pd.DataFrame(mode_report(result, panel.resolution)).to_csv(target / f"{label}-modes.csv", index=False)


def _preselect_day(model: GridModel, day_a: LoadPanel, day_b: LoadPanel, reference, mapping: str,
                   quantile: float, normalization: str, label: str) -> PreselectionReport:
    buses, loads_a = bus_load_matrix(model, day_a, reference, mapping)
    _, loads_b = bus_load_matrix(model, day_b, reference, mapping)
    times = list(day_b.timestamps.strftime("%H:%M"))
    return preselect(loads_a, loads_b, buses, times, quantile, normalization, label)


def _pool_map(fn: Callable, tasks: list[tuple], jobs: int) -> list:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, *zip(*tasks)))
    return [fn(*task) for task in tasks]


def _reference(config: RunConfig, panels: dict[str, LoadPanel]):
    if config.mapping != "ratio":
        return None
    averages = zone_averages(panels[config.preselection.reference])
    return {zone.value: mw for zone, mw in averages.items()}


def preselect_stage(config: RunConfig, panels: dict[str, LoadPanel],
                    work: Optional[Path] = None) -> dict[str, PreselectionReport]:
    """One report per analysed day, keyed "MM-DD"; written to `work` when given."""
    selection = config.preselection
    if selection is None:
        raise ConfigError("Preselection needs a 'preselection' section naming the reference and attacked years")
    panel_a, panel_b = panels[selection.reference], panels[selection.attacked]
    days = selection.days or [key for key in day_keys(panel_a) if key in set(day_keys(panel_b))]
    days_a, days_b = select_days(panel_a, days), select_days(panel_b, days)
    model, reference = fixture(config), _reference(config, panels)
    tasks = [(model, days_a[key], days_b[key], reference, config.mapping, selection.quantile,
              selection.normalization, key) for key in days]
    reports = dict(zip(days, _pool_map(_preselect_day, tasks, config.jobs)))
    if work is not None:
        target = _fresh(work / "preselect")
        for key, report in reports.items():
            _write_json(target / f"{key}.json", export_json(report))
            pd.DataFrame({"time": report.times, "ld": report.ld}).to_csv(target / f"{key}-ld.csv", index=False)
            pd.DataFrame(report.liid, index=pd.Index(report.buses, name="bus"), columns=report.times).to_csv(
                target / f"{key}-liid.csv")
    return reports


def build_scenarios(config: RunConfig, panels: Optional[dict[str, LoadPanel]],
                    reports: dict[str, PreselectionReport]) -> list[AttackScenario]:
    """Scenarios from the scenario file, or one per aligned recommendation, plus the optional baseline."""
    if config.scenarios is not None:
        scenarios = read_scenarios(config.scenarios)
    else:
        scenarios = []
        reference = _reference(config, panels) if reports else None
        # runs shorter than the standard window keep the attack at the same relative position
        shrink = min(1.0, config.simulation.duration / RUN_LENGTH)
        for key, report in reports.items():
            if not isinstance(report.outcome, Recommendation):
                logger.info("%s: no aligned target, nothing to simulate", key)
                continue
            day = select_day(panels[config.preselection.attacked], key)
            k = report.outcome.time_index
            scenarios.append(scenario_from_recommendation(
                report.outcome, day.timestamps[k].to_pydatetime(), lead=ATTACK_LEAD * shrink,
                duration=ATTACK_DURATION * shrink, length=config.simulation.duration,
                zone_snapshot=zone_snapshot(day, k), reference=reference))
    if config.baseline:
        start = datetime(2000, 1, 1)
        if panels and config.preselection is not None:
            start = panels[config.preselection.attacked].timestamps[0].to_pydatetime()
        scenarios.insert(0, AttackScenario(label="baseline", buses=[], start=start,
                                           end=start + timedelta(seconds=config.simulation.duration)))
    labels = [scenario.label for scenario in scenarios]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"Scenario labels must be unique, got {labels}")
    return scenarios


def scenario_model(base: GridModel, scenario: AttackScenario) -> GridModel:
    if scenario.zone_snapshot is None:
        return base
    if scenario.reference is not None:
        return map_zone_ratios(base, scenario.zone_snapshot, scenario.reference)
    return map_zone_loads(base, scenario.zone_snapshot)


def _simulate_one(base: GridModel, scenario: AttackScenario, cfg: SimulationConfig,
                  standards: list[FrequencyStandard], dwell: float) -> tuple[SimulationTrace, TraceSummary]:
    model = scenario_model(base, scenario)
    pf = power_flow(model, tol=PF_TOLERANCE)
    try:
        trace = simulate(model, pf, scenario.events, cfg)
    except SimulationDiverged as e:
        logger.warning("Scenario %s diverged: %s", scenario.label, e)
        trace = e.trace
    return trace, summarize(trace, standards, dwell)


def simulate_stage(config: RunConfig, work: Path, scenarios: list[AttackScenario]) -> None:
    base = fixture(config)
    registry = load_standards(config.standards_file)
    standards = [registry.standard(name) for name in config.standards]
    # reject every scenario before the first run starts
    for scenario in scenarios:
        scenario.check_model(scenario_model(base, scenario))
        for event in scenario.events:
            if event.time > config.simulation.duration:
                raise EventOutsideWindow(f"Scenario {scenario.label}: event at {event.time} s lies outside "
                                         f"the {config.simulation.duration} s run")
    tasks = [(base, scenario, config.simulation, standards, config.dwell) for scenario in scenarios]
    results = _pool_map(_simulate_one, tasks, config.jobs)
    traces = _fresh(work / "traces")
    for scenario, (trace, summary) in zip(scenarios, results):
        target = traces / scenario.label
        target.mkdir()
        write_trace_csv(trace, target / "trace.csv")
        _write_json(target / "summary.json", export_json(summary))
        _write_json(target / "scenario.json", export_json(scenario))


def _day_verdict(report: PreselectionReport) -> dict:
    outcome = report.outcome
    verdict = {"verdict": outcome.verdict, "peak_ld": report.peak_ld, "peak_ld_time": report.peak_ld_time,
               "min_liid": report.min_liid, "min_liid_bus": report.min_liid_bus,
               "min_liid_time": report.min_liid_time}
    if isinstance(outcome, Recommendation):
        verdict.update(buses=outcome.buses, window=[outcome.start, outcome.end], target=outcome.time)
    else:
        verdict.update(reason=outcome.reason)
    return verdict


def report_stage(config: RunConfig, work: Path) -> dict:
    """
    Consolidated `report.json` and `plots/frequency.csv` from the traces and
    preselection reports present in the output directory.

    Raises:
        NothingToReport: No trace was found.
    """
    traces_dir = work / "traces"
    runs = sorted(p for p in traces_dir.iterdir() if (p / "trace.csv").is_file()) if traces_dir.is_dir() else []
    if not runs:
        raise NothingToReport(f"No traces found under {config.output / 'traces'}")
    registry = load_standards(config.standards_file)
    standards = [registry.standard(name) for name in config.standards]

    scenarios, frequency = {}, {}
    for run in runs:
        trace = read_trace_csv(run / "trace.csv")
        entry = export_json(summarize(trace, standards, config.dwell))
        recorded = run / "summary.json"
        if recorded.is_file():
            previous = json.loads(recorded.read_text())
            for key in ("diverged", "machine_buses", "events"):
                entry[key] = previous.get(key, entry[key])
        scenarios[run.name] = entry
        frequency[run.name] = pd.Series(trace.frequency, index=pd.Index(trace.time, name="time"))

    days = {}
    preselect_dir = work / "preselect"
    if preselect_dir.is_dir():
        for file in sorted(preselect_dir.glob("??-??.json")):
            days[file.stem] = _day_verdict(PreselectionReport.model_validate_json(file.read_text()))

    report = {
        "lcasim": __version__,
        "seed": config.seed,
        "standards": [std.name for std in standards],
        "days": days,
        "scenarios": scenarios,
    }
    _write_json(work / "report.json", report)
    plots = _fresh(work / "plots")
    pd.DataFrame(frequency).to_csv(plots / "frequency.csv", float_format="%.12g")
    return report


# -- commands -----------------------------------------------------------------

def cmd_ingest(config: RunConfig) -> None:
    with staged(config.output) as work:
        ingest_stage(config, work)


def cmd_dmd(config: RunConfig) -> None:
    with staged(config.output) as work:
        dmd_stage(config, work, load_panels(config))


def cmd_preselect(config: RunConfig) -> None:
    with staged(config.output) as work:
        preselect_stage(config, load_panels(config), work)


def cmd_simulate(config: RunConfig) -> None:
    panels, reports = None, {}
    if config.scenarios is None and config.preselection is not None:
        panels = load_panels(config)
        reports = preselect_stage(config, panels)
    scenarios = build_scenarios(config, panels, reports)
    with staged(config.output) as work:
        simulate_stage(config, work, scenarios)


def cmd_report(config: RunConfig) -> None:
    with staged(config.output) as work:
        report_stage(config, work)


def cmd_run(config: RunConfig) -> None:
    """The whole pipeline in one staged output directory."""
    with staged(config.output) as work:
        panels = ingest_stage(config, work)
        dmd_stage(config, work, panels)
        reports = preselect_stage(config, panels, work) if config.preselection is not None else {}
        simulate_stage(config, work, build_scenarios(config, panels, reports))
        report_stage(config, work)


COMMANDS = {
    "ingest": (cmd_ingest, "ingest load CSVs into panels, heatmaps and bands"),
    "dmd": (cmd_dmd, "decompose each year's panel and report its modes"),
    "preselect": (cmd_preselect, "compute LD/LIID per day and recommend targets"),
    "simulate": (cmd_simulate, "simulate attack scenarios and judge the traces"),
    "report": (cmd_report, "consolidate traces into report.json"),
    "run": (cmd_run, "run the whole pipeline"),
}


def _rank(value: str):
    return value if value == "auto" else int(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", type=Path, help="run config JSON")
    common.add_argument("--duration", type=float, help="simulated seconds")
    common.add_argument("--step", type=float, help="integration step in seconds")
    common.add_argument("--standard", dest="standards", action="append", help="standard to judge against")
    common.add_argument("--rank", type=_rank, help="DMD rank or 'auto'")
    common.add_argument("--seed", type=int, help="seed recorded in the report")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--output", type=Path, help="output directory")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="lcasim", description="Load-changing attack simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        commands.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv: Optional[Iterable[str]] = None) -> int:
    args = build_parser().parse_args(None if argv is None else list(argv))
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        config = load_config(args.config, duration=args.duration, step=args.step, standards=args.standards,
                             rank=args.rank, seed=args.seed, jobs=args.jobs, output=args.output)
        COMMANDS[args.command][0](config)
    except (LcasimError, ValidationError, ValueError, OSError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return exit_code_for(e)
    return 0
