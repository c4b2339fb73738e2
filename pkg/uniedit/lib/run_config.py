"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Callable, Optional, Union, TYPE_CHECKING

from .dse_engine import DEFAULT_SCHEDULE, DEFAULT_STEPS, SCHEDULE_KINDS, AlphaScheduleError, DseConfig, make_alpha_schedule
from .semantic_space import DEFAULT_DIMENSION, DEFAULT_WORLD_SEED, SCORE_MAX, ConceptVocabulary
from .uev_loop import DEFAULT_MAX_ROUNDS, LoopConfig
from .velocity_model import DEFAULT_AMPLITUDE, DEFAULT_SCALE_SRC, DEFAULT_SCALE_TAR, DEFAULT_STDDEV, GuidanceConfig
from .verifier import DEFAULT_MIN_IMPROVEMENT, DEFAULT_PATIENCE_WINDOW, DEFAULT_THRESHOLD_SIGMA, VerifierConfig

if TYPE_CHECKING:
    from collections.abc import Mapping
    from .utilities import JSON_TYPE


ENV_PREFIX = "UNIEDIT_"

DEFAULT_SEED = 0
DEFAULT_OUT = "runs"
DEFAULT_WORKERS = 4

KNOWN_KEYS = frozenset({
    "world", "world_seed", "dimension", "t_steps", "schedule", "gains", "scale_src", "scale_tar", "amplitude", "stddev",
    "threshold_sigma", "patience_window", "min_improvement", "max_rounds", "prefer_latest_best", "seed", "out", "workers",
    "log_events",
})

logger = logging.getLogger(__name__)


class RunConfigError(ValueError):
    def __init__(self, key: str, value: JSON_TYPE, reason: str) -> None:
        super().__init__(f"Invalid value {value!r} for '{key}': {reason}")
        self.key = key
        self.value = value


def parse_value(text: str) -> JSON_TYPE:
    """Parse a config value: bool, int, float, comma-separated list, or string."""
    text = text.strip()
    lowered = text.lower()
    if lowered in {"true", "yes"}:
        return True
    if lowered in {"false", "no"}:
        return False
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    for convert in (int, float):
        try:
            return convert(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str) -> dict[str, JSON_TYPE]:
    """Parse `key = value` lines; `#` starts a comment."""
    config: dict[str, JSON_TYPE] = {}
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RunConfigError(f"line {line_number}", raw_line, "expected 'key = value'")
        key, value = line.split("=", 1)
        config[key.strip().lower()] = parse_value(value)
    return config


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, JSON_TYPE]:
    environ = os.environ if environ is None else environ
    return {
        name[len(ENV_PREFIX):].lower(): parse_value(value)
        for name, value in environ.items()
        if name.startswith(ENV_PREFIX) and name[len(ENV_PREFIX):].lower() in KNOWN_KEYS
    }


class RunConfig:
    _config: Optional[dict[str, JSON_TYPE]]
    _config_load: Callable[[], Optional[dict[str, Any]]]
    _config_save: Callable[[dict[str, Any]], None]

    def __init__(
        self,
        config_loader: Callable[[], Optional[dict[str, Any]]],
        config_saver: Callable[[dict[str, Any]], None] | None = None,
    ) -> None:
        self._config = None
        self._config_load = config_loader
        self._config_save = config_saver or (lambda config: None)

    def load(self) -> None:
        if self._config is not None:
            raise ValueError("Config already loaded!")
        config = self._config_load()
        if config is None:
            config = {}
        unknown = sorted(set(config) - KNOWN_KEYS)
        if unknown:
            logger.warning(f"Ignoring unknown config keys: {', '.join(unknown)}")
        self._config = config

    def reload(self) -> None:
        self._config = None
        self.load()

    def load_if_needed(self) -> None:
        if self._config is None:
            self.load()

    def __getitem__(self, key: str) -> JSON_TYPE:
        self.load_if_needed()
        assert self._config is not None
        return self._config[key]

    def __contains__(self, key: str) -> bool:
        self.load_if_needed()
        assert self._config is not None
        return key in self._config

    def get(self, key: str, default: JSON_TYPE) -> JSON_TYPE:
        self.load_if_needed()
        assert self._config is not None
        return self._config.get(key, default)

    def is_enabled(self, key: str, default: bool = False) -> bool:
        val = self.get(key, default)
        if isinstance(val, bool):
            return val
        if isinstance(val, str) and val.lower() in {"y", "yes", "true", "n", "no", "false"}:
            return val.lower() in {"y", "yes", "true"}
        raise RunConfigError(key, val, "expected a boolean")

    def update_setting(self, key: str, value: Union[bool, int, float, str, list[Any], None]) -> None:
        self.load_if_needed()
        assert self._config is not None
        self._config[key] = value
        self._config_save(self._config)

    def snapshot(self, exclude: tuple[str, ...] = ()) -> dict[str, JSON_TYPE]:
        """Settings as loaded (plus updates), for report provenance."""
        self.load_if_needed()
        assert self._config is not None
        return {key: value for key, value in sorted(self._config.items()) if key not in exclude}

    def _get_int_setting(self, key: str, default: int, min_val: int = 1) -> int:
        val = self.get(key, default)
        if isinstance(val, bool) or not isinstance(val, int) or val < min_val:
            raise RunConfigError(key, val, f"expected an integer >= {min_val}")
        return val

    def _get_float_setting(self, key: str, default: float, min_val: float = 0.0) -> float:
        val = self.get(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)) or val < min_val:
            raise RunConfigError(key, val, f"expected a number >= {min_val}")
        return float(val)

    def get_world_path(self) -> Path | None:
        val = self.get("world", None)
        if val is None or val == "":
            return None
        return Path(str(val))

    def get_world_seed(self) -> int:
        return self._get_int_setting("world_seed", DEFAULT_WORLD_SEED, min_val=0)

    def get_dimension(self) -> int:
        return self._get_int_setting("dimension", DEFAULT_DIMENSION)

    def get_steps(self) -> int:
        """Number of integration steps T."""
        return self._get_int_setting("t_steps", DEFAULT_STEPS)

    def get_schedule_kind(self) -> str:
        val = str(self.get("schedule", DEFAULT_SCHEDULE)).lower()
        if val not in SCHEDULE_KINDS:
            raise RunConfigError("schedule", val, f"expected one of {', '.join(SCHEDULE_KINDS)}")
        return val

    def get_gains(self) -> list[float] | None:
        val = self.get("gains", None)
        if val is None:
            return None
        values = val if isinstance(val, list) else [val]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            raise RunConfigError("gains", val, "expected comma-separated numbers")
        return [float(v) for v in values]  # type: ignore[arg-type]

    def get_scale_src(self) -> float:
        return self._get_float_setting("scale_src", DEFAULT_SCALE_SRC)

    def get_scale_tar(self) -> float:
        return self._get_float_setting("scale_tar", DEFAULT_SCALE_TAR)

    def get_amplitude(self) -> float:
        val = self._get_float_setting("amplitude", DEFAULT_AMPLITUDE)
        if val == 0.0:
            raise RunConfigError("amplitude", val, "expected a positive number")
        return val

    def get_stddev(self) -> float:
        val = self._get_float_setting("stddev", DEFAULT_STDDEV)
        if val == 0.0:
            raise RunConfigError("stddev", val, "expected a positive number")
        return val

    def get_threshold_sigma(self) -> float:
        """Score threshold for convergence; values above the score maximum are allowed but never met."""
        val = self._get_float_setting("threshold_sigma", DEFAULT_THRESHOLD_SIGMA)
        if val > SCORE_MAX:
            logger.warning(f"threshold_sigma {val} is above the maximum score {SCORE_MAX}; edits will never converge")
        return val

    def get_patience_window(self) -> int:
        return self._get_int_setting("patience_window", DEFAULT_PATIENCE_WINDOW)

    def get_min_improvement(self) -> float:
        return self._get_float_setting("min_improvement", DEFAULT_MIN_IMPROVEMENT)

    def get_max_rounds(self) -> int:
        return self._get_int_setting("max_rounds", DEFAULT_MAX_ROUNDS)

    def get_seed(self) -> int:
        return self._get_int_setting("seed", DEFAULT_SEED, min_val=0)

    def get_out_dir(self) -> Path:
        return Path(str(self.get("out", DEFAULT_OUT)))

    def get_workers(self) -> int:
        return self._get_int_setting("workers", DEFAULT_WORKERS)

    def dse_config(self) -> DseConfig:
        steps = self.get_steps()
        kind = self.get_schedule_kind()
        try:
            schedule = make_alpha_schedule(kind, steps, self.get_gains() if kind == "custom" else None)
        except AlphaScheduleError as e:
            raise RunConfigError("schedule", kind, str(e)) from e
        return DseConfig(
            steps=steps,
            schedule=schedule,
            guidance=GuidanceConfig(self.get_scale_src(), self.get_scale_tar()),
            seed=self.get_seed(),
            amplitude=self.get_amplitude(),
            stddev=self.get_stddev(),
        )

    def verifier_config(self) -> VerifierConfig:
        return VerifierConfig(
            threshold_sigma=self.get_threshold_sigma(),
            patience_window=self.get_patience_window(),
            min_improvement=self.get_min_improvement(),
            prefer_latest_best=self.is_enabled("prefer_latest_best", False),
        )

    def loop_config(self) -> LoopConfig:
        return LoopConfig(max_rounds=self.get_max_rounds(), dse=self.dse_config(), verifier=self.verifier_config())

    def vocabulary(self) -> ConceptVocabulary:
        """The configured world file, or the default vocabulary built from (dimension, world_seed)."""
        path = self.get_world_path()
        if path is not None:
            return ConceptVocabulary.load(path)
        return ConceptVocabulary.build(self.get_dimension(), self.get_world_seed())

    @staticmethod
    def from_file(path: Path | None, environ: Mapping[str, str] | None = None) -> RunConfig:
        """Config from an optional key-value file, with UNIEDIT_<KEY> environment overrides applied on top."""

        def config_loader() -> dict[str, Any]:
            config: dict[str, Any] = {}
            if path is not None:
                config.update(parse_config_text(path.read_text(encoding="utf-8")))
            config.update(env_overrides(environ))
            return config

        return RunConfig(config_loader)

    @staticmethod
    def from_dict(values: Mapping[str, JSON_TYPE]) -> RunConfig:
        return RunConfig(lambda: dict(values))
