# config.py: Manages application settings and experiment configuration
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from nlkw_lab.core.entities import ExperimentConfig, Settings
from nlkw_lab.core.errors import ConfigError
from nlkw_lab.repositories import log

# Load .env file
root = Path(__file__).parent.parent.parent.resolve()
envpath = (root / ".env").resolve()

load_dotenv(str(envpath))
_settings = None


def get_settings() -> Settings:
    global _settings
    if _settings is None:
        _settings = init_setting()
    return _settings


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {value}")


def _load_env_variable(key: str, default=None, cast_func=None):
    """Load environment variable with optional type casting"""
    value = os.getenv(key)
    if value is None:
        return default
    if cast_func:
        try:
            return cast_func(value)
        except (ValueError, TypeError):
            log.get_logger().warning(
                f"Warning: invalid value {value!r} for {key}, using default {default!r}"
            )
            return default
    return value


def _validate_settings(settings: Settings) -> Settings:
    """Clamp settings that would make the run impossible and log a warning"""
    logger = log.get_logger()
    updates: Dict[str, Any] = {}
    if settings.threads < 1:
        logger.warning("Warning: NLKW_THREADS must be at least 1, using 1")
        updates["threads"] = 1
    if settings.chunk_paths < 1:
        logger.warning("Warning: NLKW_CHUNK_PATHS must be at least 1, using 4096")
        updates["chunk_paths"] = 4096
    return settings.model_copy(update=updates) if updates else settings


def init_setting() -> Settings:
    """Initialize settings from environment variables"""
    settings = Settings(
        threads=_load_env_variable("NLKW_THREADS", 1, int),
        chunk_paths=_load_env_variable("NLKW_CHUNK_PATHS", 4096, int),
        output_dir=_load_env_variable("NLKW_OUTPUT_DIR", "nlkw_output"),
        enable_file_logging=_load_env_variable(
            "NLKW_ENABLE_FILE_LOGGING", False, _parse_bool
        ),
        log_dir=_load_env_variable("NLKW_LOG_DIR"),
    )
    return _validate_settings(settings)


def reset_settings() -> None:
    global _settings
    _settings = None


def _config_error(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    key = ".".join(str(part) for part in first["loc"]) or "config"
    message = first["msg"]
    if first["type"] == "extra_forbidden":
        message = "unknown key"
    elif message.startswith("Value error, "):
        message = message[len("Value error, ") :]
    return ConfigError(key, message)


def build_config(values: Dict[str, Any]) -> ExperimentConfig:
    """Validate a mapping of config values, defaults applied"""
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as e:
        raise _config_error(e) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse a JSON config document"""
    try:
        values = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON: {e.msg} at line {e.lineno}") from None
    if not isinstance(values, dict):
        raise ConfigError("config", "config document must be a JSON object")
    return build_config(values)


def serialize_config(config: ExperimentConfig) -> str:
    return config.model_dump_json(indent=2)


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Read a config file; no path means all defaults"""
    if path is None:
        return build_config({})
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e.strerror}") from None
    return parse_config(text)


def apply_overrides(
    config: ExperimentConfig, overrides: Dict[str, Any]
) -> ExperimentConfig:
    """Override config values (e.g. from CLI flags); None values are ignored"""
    values = config.model_dump()
    values.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(values)
