"""
BenchConfig resolution. Precedence: CLI flag > ESTR_* environment variable >
key = value config file > built-in default.
"""
from __future__ import annotations

import dataclasses
import logging
import os

from dotenv import load_dotenv

from models import BenchConfig, ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "ESTR_"

FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(BenchConfig)}
_PARSERS = {
    "int": int,
    "float": float,
    "Optional[str]": str,
}


def load_env(base_dir=None):
    """Load .env from the code directory (not the cwd) into os.environ."""
    base_dir = base_dir or os.path.abspath(os.path.dirname(__file__))
    load_dotenv(os.path.join(base_dir, ".env"))


def _coerce(key, raw, origin):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r} ({origin})")
    if raw is None:
        return None
    if not isinstance(raw, str):
        if FIELD_TYPES[key] == "float" and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        return raw
    parse = _PARSERS[FIELD_TYPES[key]]
    try:
        return parse(raw.strip())
    except ValueError as e:
        raise ConfigError(f"{key} expects {FIELD_TYPES[key]}, got {raw!r} ({origin})") from e


def parse_config_file(text, origin="config"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = _coerce(key, value, f"{origin}:{lineno}")
    return values


def parse_env(env):
    values = {}
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        values[key] = _coerce(key, raw, f"environment {name}")
    return values


def validate(cfg):
    if cfg.t_count < 1:
        raise ConfigError(f"t_count must be >= 1, got {cfg.t_count}")
    if cfg.m_count < 1:
        raise ConfigError(f"m_count must be >= 1, got {cfg.m_count}")
    if not 1 <= cfg.k <= cfg.m_count:
        raise ConfigError(f"k must be in [1, m_count={cfg.m_count}], got {cfg.k}")
    if cfg.template not in (1, 2, 3):
        raise ConfigError(f"template must be 1, 2 or 3, got {cfg.template}")
    if cfg.max_candidates < 0:
        raise ConfigError(f"max_candidates must be >= 0, got {cfg.max_candidates}")
    if cfg.margin < 0:
        raise ConfigError(f"margin must be >= 0, got {cfg.margin}")
    if not 0.0 <= cfg.noise_rate <= 1.0:
        raise ConfigError(f"noise_rate must be in [0, 1], got {cfg.noise_rate}")
    if cfg.max_concurrency < 1:
        raise ConfigError(f"max_concurrency must be >= 1, got {cfg.max_concurrency}")
    if cfg.timeout_ms < 1:
        raise ConfigError(f"timeout_ms must be >= 1, got {cfg.timeout_ms}")
    return cfg


def load_config(path=None, flags=None, env=None):
    """
    flags: mapping of explicitly given CLI values (None entries are ignored).
    env: environment mapping, os.environ when omitted.
    """
    merged = {}
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                merged.update(parse_config_file(f.read(), origin=os.path.basename(path)))
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
    merged.update(parse_env(os.environ if env is None else env))
    for key, value in (flags or {}).items():
        if value is not None:
            merged[key] = _coerce(key, value, f"flag --{key.replace('_', '-')}")

    cfg = validate(BenchConfig(**merged))
    logger.debug("resolved config %s", cfg)
    return cfg
