"""
Run configuration of the command line pipeline.

A run config is one JSON file. Relative paths inside it are resolved against
the file's directory, and command line flags override individual fields.
"""

import json
import logging
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import AfterValidator, BaseModel, Field, ValidationInfo, model_validator
from typing_extensions import Annotated

from .errors import ConfigError, MalformedInput
from .loaddata import CsvSchema
from .standards import StandardName
from .swing import SimulationConfig

logger = logging.getLogger(__name__)


def resolve_path(value: Path, info: ValidationInfo) -> Path:
    """
    Anchors a relative path at the config file's directory.

    Args:
        value (Path): Path as written in the config.
        info (ValidationInfo): Carries `base_dir` in its context when loaded from a file.

    Returns:
        Path: Absolute path.
    """
    base = (info.context or {}).get("base_dir")
    value = value.expanduser()
    if base is not None and not value.is_absolute():
        value = Path(base) / value
    return value.resolve()


ConfigPath = Annotated[Path, AfterValidator(resolve_path)]


def validate_label(value: str) -> str:
    if not value or "/" in value or value.startswith("."):
        raise ValueError(f"Label {value!r} cannot be used as a file name")
    return value


Label = Annotated[str, AfterValidator(validate_label)]


class YearInput(BaseModel):
    """
    Args:
        label (str): Name of the year, used for output files ("2019").
        loads (Path): Zone load CSV.
        temperature (Optional[Path]): Temperature CSV of the same period.
    """
    label: Label
    loads: ConfigPath
    temperature: Optional[ConfigPath] = None


class DmdSettings(BaseModel):
    rank: Union[int, Literal["auto"]] = "auto"
    energy: float = Field(0.999, gt=0, le=1)
    normalize: bool = True


class PreselectSettings(BaseModel):
    """
    Args:
        reference (str): Label of the year LD and LIID compare against (year A).
        attacked (str): Label of the year whose grid is attacked (year B).
        quantile (float): High-LD quantile.
        normalization (str): Per-unit treatment of the yearly totals.
        days (Optional[list[str]]): "MM-DD" days to analyse; all common days when omitted.
    """
    reference: str
    attacked: str
    quantile: float = Field(0.9, ge=0, le=1)
    normalization: Literal["minmax", "none"] = "minmax"
    days: Optional[list[str]] = None


class RunConfig(BaseModel):
    """
    Everything one pipeline run needs.

    Args:
        years (list[YearInput]): Input data per year.
        csv_schema (CsvSchema): Column names and gap policy of the load CSVs.
        resolution (Optional[int]): Resample panels to this many seconds.
        normalization (str): Mode of the normalized panel artifacts.
        dmd (DmdSettings): Rank policy.
        fixture (Optional[Path]): Grid fixture; the bundled IEEE 14-bus case when omitted.
        mapping (str): "ratio" scales base-case loads by zone demand over the reference
            year's zone average, "share" distributes the base-case total by zone share.
        preselection (Optional[PreselectSettings]): LD/LIID analysis settings.
        scenarios (Optional[Path]): Scenario file; built from the recommendations when omitted.
        baseline (bool): Also simulate an event-free run.
        simulation (SimulationConfig): Duration, step and options.
        standards (list[str]): Standards to judge traces against.
        standards_file (Optional[Path]): JSON overrides of the built-in standards.
        dwell (float): Seconds of sustained overfrequency before NYISO advisories.
        output (Path): Output directory.
        seed (Optional[int]): Recorded in the report; runs draw no random numbers.
        jobs (int): Worker processes for per-day preselection and scenario runs.
    """
    years: list[YearInput] = Field(min_length=1)
    csv_schema: CsvSchema = Field(default_factory=CsvSchema)
    resolution: Optional[int] = Field(None, gt=0)
    normalization: Literal["per-region", "global"] = "per-region"
    dmd: DmdSettings = Field(default_factory=DmdSettings)
    fixture: Optional[ConfigPath] = None
    mapping: Literal["ratio", "share"] = "ratio"
    preselection: Optional[PreselectSettings] = None
    scenarios: Optional[ConfigPath] = None
    baseline: bool = False
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    standards: list[str] = Field(default_factory=lambda: [name.value for name in StandardName])
    standards_file: Optional[ConfigPath] = None
    dwell: float = Field(10.0, gt=0)
    output: ConfigPath = Path("out")
    seed: Optional[int] = None
    jobs: int = Field(1, ge=1)

    @model_validator(mode="after")
    def check_labels(self):
        labels = [year.label for year in self.years]
        if len(set(labels)) != len(labels):
            raise ValueError(f"Year labels must be unique, got {labels}")
        if self.preselection is not None:
            for role in ("reference", "attacked"):
                if getattr(self.preselection, role) not in labels:
                    raise ValueError(f"Preselection {role} year {getattr(self.preselection, role)!r} "
                                     f"is not one of {labels}")
        return self

    def year(self, label: str) -> YearInput:
        return next(year for year in self.years if year.label == label)

    def check_files(self) -> "RunConfig":
        """
        Raises:
            MalformedInput: A referenced input file does not exist.
        """
        paths = [year.loads for year in self.years]
        paths += [year.temperature for year in self.years if year.temperature is not None]
        paths += [p for p in (self.fixture, self.scenarios, self.standards_file) if p is not None]
        for path in paths:
            if not path.is_file():
                raise MalformedInput(f"Input file '{path}' not found")
        return self


def _apply_overrides(data: dict, overrides: dict[str, Any]) -> dict:
    data = dict(data)
    simulation = dict(data.get("simulation") or {})
    for key in ("duration", "step"):
        if overrides.get(key) is not None:
            simulation[key] = overrides[key]
    data["simulation"] = simulation
    if overrides.get("rank") is not None:
        dmd = dict(data.get("dmd") or {})
        rank = overrides["rank"]
        dmd["rank"] = rank if rank == "auto" else int(rank)
        data["dmd"] = dmd
    if overrides.get("standards"):
        data["standards"] = list(overrides["standards"])
    for key in ("seed", "jobs", "output"):
        if overrides.get(key) is not None:
            data[key] = overrides[key]
    return data


def load_config(path, **overrides) -> RunConfig:
    """
    Reads, overrides and validates a run config, then checks that its inputs exist.

    Overrides: duration, step, standards, rank, seed, jobs, output. An
    `output` given on the command line is taken relative to the working
    directory, not the config file.

    Raises:
        ConfigError: The file is missing or is not a JSON object.
        pydantic.ValidationError: A field is invalid.
        MalformedInput: A referenced input file is missing.
    """
    file = Path(path).expanduser().resolve()
    try:
        data = json.loads(file.read_text())
    except FileNotFoundError:
        raise ConfigError(f"Config '{file}' not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config '{file}' is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"Config '{file}' must hold a JSON object")
    if overrides.get("output") is not None:
        overrides["output"] = str(Path(overrides["output"]).expanduser().resolve())
    config = RunConfig.model_validate(_apply_overrides(data, overrides), context={"base_dir": file.parent})
    logger.debug("Loaded config %s", file)
    return config.check_files()
