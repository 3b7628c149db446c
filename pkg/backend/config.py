import configparser
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable

from dotenv import load_dotenv

from backend.errors import ConfigError

# Load environment variables from .env
load_dotenv()


def _env_int(name, default):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from None


# Base project directory
BASE_DIR = os.path.dirname(os.path.abspath(__file__))

# Process settings
LOG_LEVEL = os.getenv("QNG_LOG_LEVEL", "INFO")
THREADS = _env_int("QNG_THREADS", 1)
DEFAULT_SEED = _env_int("QNG_SEED", 0)
BLOCK_TAGS = _env_int("QNG_BLOCK_TAGS", 1 << 20)     # records per streaming block
CHUNK_PULSES = _env_int("QNG_CHUNK_PULSES", 1 << 18)  # pulses per simulation chunk

# HTTP service
PORT = _env_int("PORT", 5000)
FLASK_ENV = os.getenv("FLASK_ENV", "production")

LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"


def configure_logging(level=None):
    """Configure root logging once for CLI and service entry points."""
    level = (level or LOG_LEVEL).upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"unknown log level {level!r}")
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")


# -----------------------------
# Run configuration (INI)
# -----------------------------
def _parse_bool(raw):
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_optional_float(raw):
    return None if raw.strip() == "" else float(raw)


def _parse_float_list(raw):
    return [float(part) for part in raw.replace(";", ",").split(",") if part.strip()]


def _parse_vector(raw):
    """Bloch vector as 'x,y,z' or one of the axis names x, y, z, -x, -y, -z."""
    text = raw.strip().lower()
    if text == "":
        return None
    axes = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}
    if text.lstrip("+-") in axes:
        sign = -1.0 if text.startswith("-") else 1.0
        return tuple(sign * c for c in axes[text.lstrip("+-")])
    values = _parse_float_list(text)
    if len(values) != 3:
        raise ValueError(f"Bloch vector needs 3 components, got {raw!r}")
    return tuple(values)


def _choice(*options):
    def parse(raw):
        value = raw.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {raw!r}")
        return value
    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any


_DETECTOR_FIELDS = ("efficiency", "dark_rate_hz", "jitter_sigma_ps", "dead_time_ps", "delay_ps")
_DETECTOR_ROLES = ("x1", "x2", "xx1", "xx2")

RUN_SCHEMA = {
    "run": {
        "seed": Key(int, DEFAULT_SEED),
        "pulses": Key(int, 100_000),
        "out": Key(str, "stream.qtt"),
    },
    "source": {
        "kind": Key(_choice("qd", "spdc"), "qd"),
        "rep_rate_hz": Key(float, 75.84e6),
        "pulse_area_rad": Key(float, math.pi),
        "power_ratio": Key(_parse_optional_float, None),
        "rabi_damping": Key(float, 0.0),
        "tau_xx_ps": Key(float, 120.0),
        "tau_x_ps": Key(float, 230.0),
        "blink_on_prob": Key(float, 1.0),
        "blink_switch_prob": Key(float, 0.0),
        "fss_uev": Key(float, 0.0),
        "eps_x": Key(float, 0.0),
        "eps_xx": Key(float, 0.0),
        "state": Key(_choice("phi_plus", "phi_minus", "werner", "hh"), "phi_plus"),
        "werner_p": Key(float, 1.0),
        "mu": Key(float, 0.1),
        "modes": Key(int, 1),
        "tau_ps": Key(float, 50.0),
    },
    "chain": {
        "efficiency": Key(float, 0.8),
        "dark_rate_hz": Key(float, 100.0),
        "jitter_sigma_ps": Key(float, 20.0),
        "dead_time_ps": Key(float, 10_000.0),
        "delay_ps": Key(float, 0.0),
        "bs_ratio_x": Key(float, 0.5),
        "bs_ratio_xx": Key(float, 0.5),
        "sync_divider": Key(int, 1),
        "implicit_sync": Key(_parse_bool, False),
        "analyzer_x": Key(_parse_vector, None),
        "analyzer_xx": Key(_parse_vector, None),
        **{
            f"{role}_{name}": Key(_parse_optional_float, None)
            for role in _DETECTOR_ROLES
            for name in _DETECTOR_FIELDS
        },
    },
    "analysis": {
        "windows_ns": Key(_parse_float_list, [0.12, 0.16, 0.28, 0.8]),
        "window_ns": Key(float, 0.28),
        "bin_ps": Key(float, 10.0),
        "range_ns": Key(float, 100.0),
        "side_peaks": Key(int, 5),
        "peak_window_ns": Key(_parse_optional_float, None),
        "herald": Key(_choice("none", "xx", "xx1", "xx2", "x", "x1", "x2"), "none"),
        "bs_ratio": Key(float, 0.5),
        "pair_convention": Key(_choice("detector_pair", "arm"), "detector_pair"),
        "pe_aggregation": Key(_choice("mean", "sum", "max"), "mean"),
        "offsets": Key(str, "auto"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Typed view of a run configuration file; sections map key -> parsed value."""

    run: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)
    chain: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    path: str = ""

    @classmethod
    def defaults(cls):
        return cls(**{name: {k: spec.default for k, spec in keys.items()}
                      for name, keys in RUN_SCHEMA.items()})

    def detector_value(self, role, name):
        """Per-detector value with the `<role>_<name>` override applied."""
        override = self.chain.get(f"{role}_{name}")
        return self.chain[name] if override is None else override


def parse_run_config(text, path="<string>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    sections = {name: {k: spec.default for k, spec in keys.items()}
                for name, keys in RUN_SCHEMA.items()}
    for section in parser.sections():
        if section not in RUN_SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        schema = RUN_SCHEMA[section]
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"{path}: unknown key '{key}' in [{section}]")
            try:
                sections[section][key] = schema[key].parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: [{section}] {key}: {exc}") from None
    return RunConfig(path=path, **sections)


def load_run_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_run_config(text, path=path)
