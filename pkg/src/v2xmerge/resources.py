"""Files shipped with the package: the merge scenario, its run config, the sensor suite and the default model."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional

from .scenario import Scenario, ScenarioConfig, load_config, load_scenario
from .sensors import SensorSpec, default_sensor_suite, load_sensor_suite

DATA_DIR = Path(__file__).resolve().parent / "data"
MERGE_SCENARIO = DATA_DIR / "merge_scenario.json"
MERGE_CONFIG = DATA_DIR / "merge_config.json"
MERGE_SPEC = DATA_DIR / "merge_spec.json"  # generator input of the merge scenario, seed MERGE_SEED
MERGE_SEED = 7
SENSOR_SUITE = DATA_DIR / "sensor_suite.json"
DEFAULT_MODEL = DATA_DIR / "default_model.v2xp"


def load_merge_scenario() -> Scenario:
    return load_scenario(MERGE_SCENARIO)


def load_merge_config() -> ScenarioConfig:
    return load_config(MERGE_CONFIG)


def resolve_sensor_suite(name: str, base_dir: Optional[Path] = None) -> List[SensorSpec]:
    """``"default"`` or a sensor-suite JSON path, relative paths taken from ``base_dir``."""
    if name == "default":
        return default_sensor_suite()
    path = Path(name)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return load_sensor_suite(path)
