import json
from pathlib import Path

from pydantic import BaseModel, ValidationError

__version__ = "0.1.0"


def validate_scenario(scenario_path):
    """
    Validates an attack scenario file.
    - Reads and parses the JSON file at the given path.
    - Validates every scenario it holds with Pydantic.
    - Prints a success message if valid; otherwise, prints an error message.

    Args:
        scenario_path: Path to a scenario JSON file (one scenario or `{"scenarios": [...]}`).

    Returns:
        list[AttackScenario] | None: The scenarios when valid.
    """
    from .attack import read_scenarios

    file = Path(scenario_path).expanduser().resolve()

    if not file.exists():
        print(f"Error: '{file}' not found.")
        return None

    try:
        scenarios = read_scenarios(file)
        print("Scenario validated!")
        return scenarios

    except ValidationError as e:
        print("ERROR!", e.errors())
        return None


def export_json(model: BaseModel, indent=4):
    """
    Exports a pydantic model as plain JSON data.

    Args:
        model: Any lcasim record (report, scenario, summary, config).
        indent: The indentation level for JSON formatting (default is 4).

    Returns:
        dict: The model content with enums, datetimes and paths as JSON values.
    """
    return json.loads(model.model_dump_json(indent=indent))
