"""Contains the `ExperimentConfig` class that reads flat `key = value` experiment files

Lines look like `grid.N = 64` or `directions = k=[0,1]; k=[1,2]`. Values are
decoded as JSON when possible and kept as strings otherwise; `#` starts a comment.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.coeffs import CoefficientField, builtin_field
from src.lattice import Direction, parse_direction
from src.utils.errors import ConfigError, HomogError

GRID_KEYS = ("grid.N", "grid.M", "grid.s", "front.grid")
GRID_RANGE = (16, 512)

_MISSING = object()


def parse_value(text: str) -> Any:
    """Decode a config value: JSON if it parses, otherwise the stripped string"""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_lines(lines) -> Dict[str, Any]:
    """Build the flat key map from config lines"""
    values: Dict[str, Any] = {}
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, text = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {number}", f"expected `key = value`, got {line!r}")
        if key in values:
            logging.warning(
                "Config key %s repeated on line %s; keeping the last value", key, number
            )
        values[key] = parse_value(text)
    return values


class ExperimentConfig:
    """Typed access to an experiment's configuration keys"""

    def __init__(self, values: Dict[str, Any], source: Optional[str] = None) -> None:
        self.values = dict(values)
        self.source = source
        self._validate()

    def _validate(self):
        for key in GRID_KEYS:
            if key in self.values:
                self.grid(key)
        if "field.family" in self.values:
            self.field()

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, key: str):
        value = self.values.get(key, _MISSING)
        if value is _MISSING:
            raise ConfigError(key, "missing required key")
        return value

    def get_float(self, key: str, default=_MISSING) -> float:
        value = (
            self.require(key) if default is _MISSING else self.values.get(key, default)
        )
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {value!r}")

    def get_int(self, key: str, default=_MISSING) -> int:
        value = (
            self.require(key) if default is _MISSING else self.values.get(key, default)
        )
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value

    def get_list(self, key: str, default=_MISSING) -> List[Any]:
        """A JSON list value; a bare scalar is promoted to a one-element list"""
        value = (
            self.require(key) if default is _MISSING else self.values.get(key, default)
        )
        return list(value) if isinstance(value, (list, tuple)) else [value]

    def grid(self, key: str, default: Optional[int] = None) -> int:
        """A grid size: a power of two in [16, 512]"""
        value = self.get_int(key, default) if default is not None else self.get_int(key)
        low, high = GRID_RANGE
        if not low <= value <= high or value & (value - 1):
            raise ConfigError(
                key, f"grid size must be a power of two in [{low}, {high}]"
            )
        return value

    def get_direction(self, key: str) -> Direction:
        return self.get_directions(key)[0]

    def get_directions(self, key: str) -> List[Direction]:
        """Parse `k=[..]` / `v=[..]` entries separated by `;`"""
        text = str(self.require(key))
        try:
            directions = [
                parse_direction(part) for part in text.split(";") if part.strip()
            ]
        except (ValueError, HomogError) as error:
            raise ConfigError(key, str(error))
        if not directions:
            raise ConfigError(key, "no direction given")
        return directions

    def field(self) -> CoefficientField:
        """Build the coefficient field from `field.family` and `field.params`"""
        params = self.get("field.params", {})
        if not isinstance(params, dict):
            raise ConfigError("field.params", "expected a JSON object")
        try:
            return builtin_field(str(self.require("field.family")), params)
        except HomogError as error:
            raise ConfigError("field.family", str(error))
        except (TypeError, ValueError, IndexError) as error:
            raise ConfigError("field.params", str(error))

    @property
    def seed(self) -> int:
        return self.get_int("seed", 0)

    @property
    def output_dir(self) -> Path:
        return Path(str(self.get("output.dir", "out")))

    def override(self, key: str, value) -> "ExperimentConfig":
        """Return a copy with one key replaced"""
        values = dict(self.values)
        values[key] = value
        return ExperimentConfig(values, self.source)


def load_config(path) -> ExperimentConfig:
    """Read and validate an experiment config file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise ConfigError(str(path), f"cannot read config: {error.strerror}")
    config = ExperimentConfig(parse_lines(text.splitlines()), str(path))
    logging.info("Loaded %s keys from %s", len(config.values), path)
    return config
