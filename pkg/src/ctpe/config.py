"""``key = value`` configuration files.

Blank lines and lines starting with ``#`` or ``;`` are ignored. Keys may use
dashes or underscores interchangeably. Values stay strings; callers convert
them (see :meth:`ctpe.trainer.TrainConfig.from_mapping`).
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError

_SECTION = "ctpe"


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def read_config(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    # configparser wants a section header; the file format has none.
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = normalize_key
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=str(path))
    except configparser.ParsingError as exc:
        # Line numbers are shifted by the injected header line.
        lineno, line = exc.errors[0]
        raise ConfigError(f"{path}:{lineno - 1}: expected 'key = value', got {line}") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{path}:{exc.lineno - 1}: key {exc.option!r} given twice") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser[_SECTION])
