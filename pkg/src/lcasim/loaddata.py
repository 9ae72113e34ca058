"""Regional load and temperature time series: ingestion, resampling, normalization and screening."""

import logging
import re
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .errors import (
    DegenerateRange,
    EmptyInput,
    IncompatibleResolution,
    MalformedInput,
    MalformedRow,
    NonUniformStep,
    WindowMismatch,
)

logger = logging.getLogger(__name__)

# interior gaps up to this many consecutive missing steps are interpolated
MAX_INTERPOLATED_GAP = 2
TEMPERATURE_EPSILON = 0.1
TEMPERATURE_BOUNDS = (-7.22, 33.9)

_OFFSET_SUFFIX = r"(?:Z|[+-]\d{2}:?\d{2})$"
_NS_PER_SECOND = 1_000_000_000


class CsvSchema(BaseModel):
    """
    Column mapping for long-format CSV input (one row per timestamp and region).

    Args:
        timestamp (str): Column holding ISO-8601 local wall-clock instants.
        region (str): Column holding the region identifier. `None` for single-series files.
        value (str): Column holding demand (MW) or temperature (Celsius).
        offset (str): Optional UTC offset column. Timestamps stay wall-clock; the column is only used to report DST duplicates.
        gap_policy (str): "linear" interpolates interior gaps of at most two steps, "strict" rejects any gap.
        resolution (int): Step in seconds. Inferred from the data when omitted.
        unit (str): Unit label carried by the resulting panel.
    """
    timestamp: str = "timestamp"
    region: str | None = "region"
    value: str = "value"
    offset: str | None = None
    gap_policy: Literal["linear", "strict"] = "linear"
    resolution: int | None = Field(default=None, gt=0)
    unit: str = "MW"


@dataclass(frozen=True, eq=False)
class LoadPanel:
    """
    Spatio-temporal demand matrix, regions × timestamps.

    Args:
        regions (tuple[str]): Ordered, duplicate-free region identifiers.
        timestamps (pd.DatetimeIndex): Strictly increasing instants with a constant step.
        values (np.ndarray): Matrix of shape (len(regions), len(timestamps)); read-only.
        resolution (int): Step between timestamps, in seconds.
        unit (str): "MW" for demand, "unitless" after normalization.
    """
    regions: tuple[str, ...]
    timestamps: pd.DatetimeIndex
    values: np.ndarray
    resolution: int
    unit: str = "MW"

    def __post_init__(self):
        regions = tuple(str(r) for r in self.regions)
        if not regions:
            raise MalformedInput("A panel needs at least one region")
        if len(set(regions)) != len(regions):
            raise MalformedInput(f"Duplicate regions in {regions}")
        timestamps = pd.DatetimeIndex(self.timestamps)
        values = np.array(self.values, dtype=float)
        if values.shape != (len(regions), len(timestamps)):
            raise MalformedInput(
                f"Values shape {values.shape} does not match "
                f"{len(regions)} regions × {len(timestamps)} timestamps")
        if np.isnan(values).any():
            raise MalformedInput("Panel values contain NaN")
        if self.unit == "MW" and (values < 0).any():
            raise MalformedInput("Demand values must be non-negative")
        if self.resolution <= 0:
            raise NonUniformStep(f"Resolution must be positive, got {self.resolution}")
        steps = np.diff(timestamps.asi8)
        if steps.size and not np.all(steps == self.resolution * _NS_PER_SECOND):
            raise NonUniformStep(f"Timestamps are not spaced by {self.resolution} s")
        values.flags.writeable = False
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, LoadPanel):
            return NotImplemented
        return (self.regions == other.regions
                and self.timestamps.equals(other.timestamps)
                and np.array_equal(self.values, other.values)
                and self.resolution == other.resolution
                and self.unit == other.unit)

    __hash__ = None

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_snapshots(self) -> int:
        return len(self.timestamps)

    def to_frame(self) -> pd.DataFrame:
        """Returns the panel as a wide DataFrame (index timestamps, one column per region)."""
        frame = pd.DataFrame(self.values.T, index=self.timestamps, columns=list(self.regions))
        frame.index.name = "timestamp"
        return frame

    def region(self, name: str) -> np.ndarray:
        return self.values[self.regions.index(name)]


@dataclass(frozen=True, eq=False)
class TemperatureSeries:
    """
    Temperature readings of one site.

    Args:
        timestamps (pd.DatetimeIndex): Sample instants.
        celsius (np.ndarray): One reading per timestamp.
        lower (float): Normalization lower bound (Celsius).
        upper (float): Normalization upper bound (Celsius).
    """
    timestamps: pd.DatetimeIndex
    celsius: np.ndarray
    lower: float = TEMPERATURE_BOUNDS[0]
    upper: float = TEMPERATURE_BOUNDS[1]

    def __post_init__(self):
        celsius = np.array(self.celsius, dtype=float)
        if celsius.shape != (len(self.timestamps),):
            raise MalformedInput("One temperature reading per timestamp is required")
        if not self.upper > self.lower:
            raise DegenerateRange(f"Bounds [{self.lower}, {self.upper}] are empty")
        celsius.flags.writeable = False
        object.__setattr__(self, "timestamps", pd.DatetimeIndex(self.timestamps))
        object.__setattr__(self, "celsius", celsius)

    @property
    def resolution(self) -> int | None:
        steps = np.unique(np.diff(self.timestamps.asi8))
        return int(steps[0] // _NS_PER_SECOND) if steps.size == 1 else None

    def normalized(self) -> np.ndarray:
        """Min-max normalizes against the series bounds, clipped to [0, 1]."""
        return np.clip((self.celsius - self.lower) / (self.upper - self.lower), 0.0, 1.0)


class DaySimilarity(NamedTuple):
    day: date
    score: float


# -- ingestion ------------------------------------------------------------------

def _read_long(path, schema: CsvSchema, allow_negative: bool) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise MalformedInput(f"{path}: no such file")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise EmptyInput(f"{path}: file is empty") from None
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        if match:
            raise MalformedRow(int(match.group(1)), "unexpected number of fields") from None
        raise MalformedInput(f"{path}: {exc}") from None
    if raw.empty:
        raise EmptyInput(f"{path}: no data rows")

    wanted = [schema.timestamp, schema.value] + ([schema.region] if schema.region else [])
    if schema.offset:
        wanted.append(schema.offset)
    missing = [c for c in wanted if c not in raw.columns]
    if missing:
        raise MalformedInput(f"{path}: missing columns {missing}")

    raw = raw.fillna("")
    stamps = raw[schema.timestamp].str.strip().str.replace(_OFFSET_SUFFIX, "", regex=True)
    timestamps = pd.to_datetime(stamps, errors="coerce", format="ISO8601")
    values = pd.to_numeric(raw[schema.value].str.strip(), errors="coerce")
    regions = raw[schema.region].str.strip() if schema.region else pd.Series(schema.value, index=raw.index)

    bad_time = timestamps.isna().to_numpy()
    bad_value = values.isna().to_numpy() | ~np.isfinite(values.fillna(0).to_numpy())
    bad_region = (regions == "").to_numpy()
    negative = np.zeros(len(raw), dtype=bool) if allow_negative else (values < 0).to_numpy()
    bad = bad_time | bad_value | bad_region | negative
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        if bad_time[row]:
            reason = f"unparseable timestamp {raw[schema.timestamp].iloc[row]!r}"
        elif bad_value[row]:
            reason = f"unparseable value {raw[schema.value].iloc[row]!r}"
        elif bad_region[row]:
            reason = "empty region"
        else:
            reason = f"negative demand {values.iloc[row]}"
        # header is line 1
        raise MalformedRow(row + 2, reason)

    frame = pd.DataFrame({"timestamp": timestamps, "region": regions, "value": values.astype(float)})
    duplicates = int(frame.duplicated(["timestamp", "region"]).sum())
    if duplicates:
        if schema.offset:
            offsets = raw.loc[frame.duplicated(["timestamp", "region"], keep=False), schema.offset]
            logger.warning("%s: averaging %d repeated wall-clock samples (offsets %s)",
                           path, duplicates, sorted(offsets.str.strip().unique()))
        else:
            logger.warning("%s: averaging %d repeated wall-clock samples", path, duplicates)
    return frame


def _gap_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def _to_grid(frame: pd.DataFrame, schema: CsvSchema, path) -> tuple[pd.DataFrame, int]:
    regions = list(pd.unique(frame["region"]))
    wide = frame.pivot_table(index="timestamp", columns="region", values="value", aggfunc="mean")
    wide = wide.sort_index()[regions]

    stamps = wide.index.asi8
    if schema.resolution:
        step = schema.resolution
    else:
        if len(stamps) < 2:
            raise NonUniformStep(f"{path}: a single timestamp does not define a step")
        step = int(np.diff(stamps).min() // _NS_PER_SECOND)
        if step <= 0:
            raise NonUniformStep(f"{path}: sub-second spacing is not supported")
    if np.any((stamps - stamps[0]) % (step * _NS_PER_SECOND)):
        raise NonUniformStep(f"{path}: timestamps do not fall on a {step} s grid")

    grid = pd.date_range(wide.index[0], wide.index[-1], freq=pd.Timedelta(seconds=step))
    wide = wide.reindex(grid)
    for region in regions:
        mask = wide[region].isna().to_numpy()
        for start, stop in _gap_runs(mask):
            if start == 0 or stop == len(mask):
                raise NonUniformStep(
                    f"{path}: region {region!r} has no sample at {grid[start]} (edge gap)")
            if schema.gap_policy == "strict" or stop - start > MAX_INTERPOLATED_GAP:
                raise NonUniformStep(
                    f"{path}: region {region!r} misses {stop - start} step(s) from {grid[start]}")
            logger.warning("%s: interpolating %d missing sample(s) of %r from %s",
                           path, stop - start, region, grid[start])
    wide = wide.interpolate(method="linear", limit_area="inside")
    return wide, step


def ingest_csv(path, schema: CsvSchema | None = None) -> LoadPanel:
    """
    Reads a long-format demand CSV into a `LoadPanel`.

    Args:
        path: CSV file with a header row.
        schema (CsvSchema): Column mapping; the defaults expect `timestamp,region,value`.

    Returns:
        LoadPanel: Rows sorted by time, regions in order of first appearance.

    Raises:
        MalformedRow: A row cannot be parsed (the line number is reported).
        NonUniformStep: The samples do not lie on a uniform grid and the gap policy cannot repair it.
        EmptyInput: The file holds no data rows.
    """
    schema = schema or CsvSchema()
    frame = _read_long(path, schema, allow_negative=schema.unit != "MW")
    wide, step = _to_grid(frame, schema, path)
    panel = LoadPanel(regions=tuple(wide.columns), timestamps=wide.index,
                      values=wide.to_numpy().T, resolution=step, unit=schema.unit)
    logger.info("Ingested %s: %d regions × %d snapshots at %d s",
                path, panel.n_regions, panel.n_snapshots, step)
    return panel


def ingest_temperature_csv(path, schema: CsvSchema | None = None, site: str | None = None) -> TemperatureSeries:
    """
    Reads a temperature CSV into a `TemperatureSeries`.

    A file with several regions needs `site` to pick one of them.
    """
    schema = (schema or CsvSchema()).model_copy(update={"unit": "Celsius"})
    panel = ingest_csv(path, schema)
    if site is None:
        if panel.n_regions != 1:
            raise MalformedInput(f"{path}: several sites {panel.regions}, choose one")
        site = panel.regions[0]
    if site not in panel.regions:
        raise MalformedInput(f"{path}: no site {site!r}")
    return TemperatureSeries(timestamps=panel.timestamps, celsius=panel.region(site))


def write_panel_csv(panel: LoadPanel, path) -> Path:
    """Writes the wide serialization: first column timestamp, one column per region."""
    path = Path(path)
    panel.to_frame().to_csv(path, date_format="%Y-%m-%dT%H:%M:%S")
    return path


def read_panel_csv(path, unit: str = "MW") -> LoadPanel:
    path = Path(path)
    if not path.is_file():
        raise MalformedInput(f"{path}: no such file")
    frame = pd.read_csv(path, index_col=0, float_precision="round_trip")
    if frame.empty:
        raise EmptyInput(f"{path}: no data rows")
    index = pd.to_datetime(frame.index, format="ISO8601")
    if len(index) < 2:
        raise NonUniformStep(f"{path}: a single timestamp does not define a step")
    step = int((index[1] - index[0]).total_seconds())
    return LoadPanel(regions=tuple(str(c) for c in frame.columns), timestamps=index,
                     values=frame.to_numpy(dtype=float).T, resolution=step, unit=unit)


# -- transformations --------------------------------------------------------------

def resample(panel: LoadPanel, target: int) -> LoadPanel:
    """
    Downsamples a panel by block means.

    Args:
        panel (LoadPanel): Source panel.
        target (int): Target step in seconds, an integer multiple of the source step.

    Returns:
        LoadPanel: floor(m·Δt_src/Δt_dst) snapshots, each the mean of the source samples it covers.
            Trailing samples that do not fill a whole block are dropped.
    """
    if target <= 0 or target % panel.resolution:
        raise IncompatibleResolution(
            f"Cannot resample {panel.resolution} s data to {target} s: target must be a multiple")
    factor = target // panel.resolution
    if factor == 1:
        return panel
    count = panel.n_snapshots // factor
    if count == 0:
        raise IncompatibleResolution(
            f"{panel.n_snapshots} snapshots do not fill one {target} s block")
    blocks = panel.values[:, :count * factor].reshape(panel.n_regions, count, factor)
    return LoadPanel(regions=panel.regions, timestamps=panel.timestamps[:count * factor:factor],
                     values=blocks.mean(axis=2), resolution=target, unit=panel.unit)


def normalize_minmax(panel: LoadPanel, mode: Literal["per-region", "global"] = "per-region") -> LoadPanel:
    """
    Maps values affinely onto [0, 1], per region or with one global range.

    Raises:
        DegenerateRange: A region (or the whole panel in global mode) is constant.
    """
    values = panel.values
    if mode == "per-region":
        low = values.min(axis=1, keepdims=True)
        high = values.max(axis=1, keepdims=True)
        flat = [r for r, span in zip(panel.regions, (high - low).ravel()) if span <= 0]
        if flat:
            raise DegenerateRange(f"Constant regions cannot be normalized: {flat}")
    elif mode == "global":
        low, high = values.min(), values.max()
        if high <= low:
            raise DegenerateRange("Constant panel cannot be normalized")
    else:
        raise ValueError(f"Unknown normalization mode {mode!r}")
    return LoadPanel(regions=panel.regions, timestamps=panel.timestamps,
                     values=(values - low) / (high - low), resolution=panel.resolution,
                     unit="unitless")


def system_total(panel: LoadPanel) -> np.ndarray:
    return panel.values.sum(axis=0)


def select_day(panel: LoadPanel, day: str | date) -> LoadPanel:
    """Restricts a panel to one calendar day, given as a date or an "MM-DD" key."""
    if isinstance(day, date):
        mask = panel.timestamps.date == day
    else:
        mask = panel.timestamps.strftime("%m-%d") == day
    if not mask.any():
        raise WindowMismatch(f"Panel has no samples on {day}")
    first = int(np.flatnonzero(mask)[0])
    # first matching day only, so the result keeps a uniform step
    day_mask = panel.timestamps.date == panel.timestamps[first].date()
    return LoadPanel(regions=panel.regions, timestamps=panel.timestamps[day_mask],
                     values=panel.values[:, day_mask], resolution=panel.resolution, unit=panel.unit)


def day_keys(panel: LoadPanel) -> list[str]:
    """Distinct "MM-DD" keys of a panel in time order."""
    return list(dict.fromkeys(panel.timestamps.strftime("%m-%d")))


def select_days(panel: LoadPanel, days: list[str | date] | None = None) -> dict[str, LoadPanel]:
    """One single-day panel per requested day (every day when `days` is None), keyed "MM-DD"."""
    keys = day_keys(panel) if days is None else [
        d.strftime("%m-%d") if isinstance(d, date) else d for d in days]
    return {key: select_day(panel, key) for key in keys}


def percentile_band(panel: LoadPanel, lower: float = 5, upper: float = 95,
                    weekday_only: bool = False) -> pd.DataFrame:
    """
    Per time-of-day percentiles of system demand across the days of the panel.

    Args:
        lower (float): Lower percentile.
        upper (float): Upper percentile.
        weekday_only (bool): Drop Saturdays and Sundays before computing.

    Returns:
        pd.DataFrame: Index time of day, columns `lower`, `median`, `upper`.
    """
    total = pd.Series(system_total(panel), index=panel.timestamps)
    if weekday_only:
        total = total[total.index.dayofweek < 5]
        if total.empty:
            raise WindowMismatch("No weekday samples in panel")
    grouped = total.groupby(total.index.time)
    band = pd.DataFrame({
        "lower": grouped.quantile(lower / 100),
        "median": grouped.median(),
        "upper": grouped.quantile(upper / 100),
    })
    band.index.name = "time"
    return band


def heatmap_grid(panel: LoadPanel, region: str | None = None) -> pd.DataFrame:
    """
    Day × hour grid of hourly mean demand, min-max normalized over the grid.

    Args:
        region (str): Region to map; `None` uses system total demand.
    """
    series = system_total(panel) if region is None else panel.region(region)
    frame = pd.DataFrame({"value": series}, index=panel.timestamps)
    frame["day"] = frame.index.date
    frame["hour"] = frame.index.hour
    grid = frame.pivot_table(index="day", columns="hour", values="value", aggfunc="mean")
    low, high = np.nanmin(grid.to_numpy()), np.nanmax(grid.to_numpy())
    if high <= low:
        raise DegenerateRange("Constant series cannot be drawn as a normalized heatmap")
    return (grid - low) / (high - low)


# -- temperature screening -----------------------------------------------------

def temperature_similarity(a: TemperatureSeries, b: TemperatureSeries,
                           window: str = "day") -> list[DaySimilarity]:
    """
    Ranks calendar days by the average percentage difference between two years.

    Days are paired by month and day. The per-day score is the mean over samples of
    |a - b| / max(|a|, 0.1 °C) · 100.

    Returns:
        list[DaySimilarity]: Ascending score; ties keep calendar order. Days carry the dates of `a`.

    Raises:
        WindowMismatch: Resolutions differ, the two series cover different days, or a day's samples do not line up.
    """
    if window != "day":
        raise WindowMismatch(f"Unsupported window {window!r}")
    if a.resolution is None or a.resolution != b.resolution:
        raise WindowMismatch(f"Resolutions differ or are irregular: {a.resolution} vs {b.resolution}")

    def by_day(series: TemperatureSeries) -> dict[str, pd.Series]:
        values = pd.Series(series.celsius, index=series.timestamps)
        return {key: day.set_axis(day.index.time) for key, day in
                values.groupby(values.index.strftime("%m-%d"), sort=False)}

    days_a, days_b = by_day(a), by_day(b)
    if set(days_a) != set(days_b):
        raise WindowMismatch(f"Days not covered by both series: {sorted(set(days_a) ^ set(days_b))}")

    scores = []
    for key, day_a in days_a.items():
        day_b = days_b[key]
        if not day_a.index.equals(day_b.index):
            raise WindowMismatch(f"Samples of {key} do not line up")
        ref = day_a.to_numpy()
        diff = np.abs(ref - day_b.to_numpy()) / np.maximum(np.abs(ref), TEMPERATURE_EPSILON)
        when = a.timestamps[a.timestamps.strftime("%m-%d") == key][0].date()
        scores.append(DaySimilarity(day=when, score=float(diff.mean() * 100)))
    scores.sort(key=lambda s: s.day)
    return sorted(scores, key=lambda s: s.score)
