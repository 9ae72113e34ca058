"""
Operational frequency standards, UFLS schemes and NYISO overfrequency advisories.

Built-in values can be overridden with a JSON file, see `load_standards`.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from pydantic import AfterValidator, BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Annotated

from .errors import ConfigError, MalformedInput

logger = logging.getLogger(__name__)

NOMINAL_FREQUENCY = 60.0


class StandardName(str, Enum):
    """
    Enum representing the bodies whose frequency limits are built in.
    """
    NERC = "NERC"
    ERCOT = "ERCOT"
    NYISO = "NYISO"


class NyisoAdvisory(str, Enum):
    """
    Enum representing the ordered NYISO operator actions for sustained overfrequency.

    The last item is issued when the condition persists.
    """
    MATCH_SCHEDULES = "ask over-generating suppliers to return to their schedules"
    MINIMUM_DISPATCH = "lower dispatchable generation to minimum operating limits"
    MANUAL_MODE = "ask internal generators to run in manual mode below minimum dispatch"
    SCHEDULE_LOAD = "schedule variable load or storage to absorb the surplus"
    CUT_TRANSACTIONS = "reduce or cancel transactions feeding the imbalance"
    MAJOR_EMERGENCY = "declare a major emergency and de-commit internal generators"


class FrequencyStandard(BaseModel):
    """
    Allowed frequency band of an operator.

    Args:
        name (str): NERC, ERCOT, NYISO or a custom label.
        under (float): Underfrequency limit in Hz.
        over (float): Overfrequency limit in Hz.
        nominal (float): Nominal frequency in Hz.
    """
    model_config = ConfigDict(frozen=True)

    name: str
    under: float
    over: float
    nominal: float = NOMINAL_FREQUENCY

    @model_validator(mode="after")
    def check_band(self):
        if not self.under < self.nominal < self.over:
            raise ValueError(f"{self.name}: limits must satisfy under < {self.nominal} < over")
        return self


def validate_triggers(stages):
    triggers = [stage.trigger for stage in stages]
    if any(a <= b for a, b in zip(triggers, triggers[1:])):
        raise ValueError(f"UFLS triggers must be strictly decreasing, got {triggers}")
    return stages


class UflsStage(BaseModel):
    """
    Args:
        trigger (float): Frequency in Hz below which the stage fires.
        fraction (float): Share of the current system load shed when it fires.
    """
    model_config = ConfigDict(frozen=True)

    trigger: float
    fraction: float = Field(gt=0, lt=1)


class UflsScheme(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    stages: Annotated[tuple[UflsStage, ...], AfterValidator(validate_triggers)]

    @property
    def total(self) -> float:
        return sum(stage.fraction for stage in self.stages)


STANDARDS = {
    StandardName.NERC.value: FrequencyStandard(name="NERC", under=59.5, over=62.2),
    StandardName.ERCOT.value: FrequencyStandard(name="ERCOT", under=59.3, over=61.8),
    StandardName.NYISO.value: FrequencyStandard(name="NYISO", under=59.9, over=60.1),
}

UFLS_SCHEMES = {
    "NYISO": UflsScheme(name="NYISO", stages=tuple(
        UflsStage(trigger=t, fraction=0.07) for t in (59.5, 59.3, 59.1, 58.9))),
    "ERCOT": UflsScheme(name="ERCOT", stages=(
        UflsStage(trigger=59.3, fraction=0.05),
        UflsStage(trigger=58.9, fraction=0.10),
        UflsStage(trigger=58.5, fraction=0.10),
    )),
}


def apply_ufls(scheme: UflsScheme, f: float, armed: tuple[bool, ...]) -> tuple[float, tuple[bool, ...]]:
    """
    Fires every armed stage whose trigger lies strictly above `f`.

    Args:
        scheme (UflsScheme): Stage table.
        f (float): Current frequency in Hz.
        armed (tuple[bool, ...]): Which stages may still fire.

    Returns:
        tuple[float, tuple[bool, ...]]: Fraction of current load to shed now, updated arming.
    """
    if len(armed) != len(scheme.stages):
        raise ValueError(f"Arming state has {len(armed)} entries for {len(scheme.stages)} stages")
    shed = 0.0
    updated = list(armed)
    for k, stage in enumerate(scheme.stages):
        if updated[k] and f < stage.trigger:
            shed += stage.fraction
            updated[k] = False
    return shed, tuple(updated)


@dataclass
class UflsFiring:
    stage: int
    trigger: float
    fraction: float
    time: Optional[float] = None


@dataclass
class UflsRelay:
    """Run-local relay latching each stage of a scheme once."""
    scheme: UflsScheme
    armed: tuple[bool, ...] = ()
    firings: list[UflsFiring] = field(default_factory=list)

    def __post_init__(self):
        if not self.armed:
            self.armed = (True,) * len(self.scheme.stages)

    @property
    def cumulative(self) -> float:
        return sum(firing.fraction for firing in self.firings)

    def update(self, f: float, time: Optional[float] = None) -> float:
        before = self.armed
        shed, self.armed = apply_ufls(self.scheme, f, self.armed)
        for k, (was, now) in enumerate(zip(before, self.armed)):
            if was and not now:
                stage = self.scheme.stages[k]
                self.firings.append(UflsFiring(k, stage.trigger, stage.fraction, time))
                logger.info("%s UFLS stage %d fired at %.4f Hz (t=%s), shedding %.0f%%",
                            self.scheme.name, k + 1, f, time, 100 * stage.fraction)
        return shed


class StandardsFile(BaseModel):
    """JSON override document: entries replace built-ins of the same name."""
    standards: list[FrequencyStandard] = []
    ufls_schemes: list[UflsScheme] = []


@dataclass(frozen=True)
class StandardsRegistry:
    standards: dict[str, FrequencyStandard]
    ufls_schemes: dict[str, UflsScheme]

    def standard(self, name: str) -> FrequencyStandard:
        try:
            return self.standards[name.upper() if name.upper() in self.standards else name]
        except KeyError:
            raise ConfigError(f"Unknown frequency standard {name!r}; known: {sorted(self.standards)}") from None

    def ufls(self, name: str) -> UflsScheme:
        try:
            return self.ufls_schemes[name.upper() if name.upper() in self.ufls_schemes else name]
        except KeyError:
            raise ConfigError(f"Unknown UFLS scheme {name!r}; known: {sorted(self.ufls_schemes)}") from None


def load_standards(path=None) -> StandardsRegistry:
    """
    Built-in standards and UFLS schemes, with the entries of an optional JSON file merged over them.
    """
    standards, schemes = dict(STANDARDS), dict(UFLS_SCHEMES)
    if path is not None:
        file = Path(path).expanduser()
        try:
            data = json.loads(file.read_text())
        except FileNotFoundError:
            raise MalformedInput(f"Standards file '{file}' not found") from None
        overrides = StandardsFile.model_validate(data)
        standards.update({std.name: std for std in overrides.standards})
        schemes.update({scheme.name: scheme for scheme in overrides.ufls_schemes})
        logger.info("Merged %d standard(s) and %d UFLS scheme(s) from %s",
                    len(overrides.standards), len(overrides.ufls_schemes), file)
    return StandardsRegistry(standards=standards, ufls_schemes=schemes)
