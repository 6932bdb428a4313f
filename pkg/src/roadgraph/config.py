"""Reads flat ``key = value`` configuration files for the command line."""

import argparse
from typing import Any, Dict, List

from .exceptions import ConfigError, DataIOError

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def parse_config(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    Parses ``key = value`` lines; ``#`` starts a comment.

    Raises:
        ConfigError: On a line without ``=`` or a repeated key.
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{number}: expected 'key = value'")
        if key in values:
            raise ConfigError(f"{source}:{number}: '{key}' is set twice")
        values[key] = value.strip()
    return values


def read_config(path: str) -> Dict[str, str]:
    """Reads and parses a configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as file:
            text = file.read()
    except UnicodeDecodeError as e:
        raise ConfigError(f"{path!r}: not UTF-8 text") from e
    except OSError as e:
        raise DataIOError(f"cannot read {path!r}: {e.strerror}") from e
    return parse_config(text, path)


def _convert(action: argparse.Action, key: str, raw: str) -> Any:
    if action.nargs == 0:
        lowered = raw.lower()
        if lowered not in _TRUE + _FALSE:
            raise ConfigError(f"'{key}' expects a boolean, got '{raw}'")
        enabled = lowered in _TRUE
        return action.const if enabled else action.default
    convert = action.type if callable(action.type) else str
    try:
        if action.nargs in ("+", "*"):
            value: Any = [convert(part) for part in raw.split()]
        else:
            value = convert(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"'{key}' has an invalid value '{raw}'") from e
    choices = action.choices
    if choices is not None and value not in choices:
        raise ConfigError(f"'{key}' must be one of {', '.join(map(str, choices))}")
    return value


def apply_config(parser: argparse.ArgumentParser, values: Dict[str, str]) -> None:
    """
    Installs configuration values as the parser's defaults, so that flags
    given on the command line still win.

    Keys are option names with ``-`` or ``_``.

    Raises:
        ConfigError: On an unknown key or a value the option cannot parse.
    """
    # pylint: disable=protected-access
    actions = {
        action.dest: action
        for action in parser._actions
        if action.option_strings and action.dest not in ("help", "config")
    }
    defaults: Dict[str, Any] = {}
    unknown: List[str] = []
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            unknown.append(key)
            continue
        defaults[dest] = _convert(actions[dest], key, raw)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    parser.set_defaults(**defaults)
