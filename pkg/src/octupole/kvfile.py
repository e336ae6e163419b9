"""Flat ``key = value`` text files used for layouts, defects, coefficients,
calibrations, configs and manifests."""

from pathlib import Path

from .errors import ConfigError


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def dumps(items, header=None):
    lines = []
    if header:
        lines.extend(f"# {line}" for line in header.splitlines())
    for key, value in items.items():
        lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"


def loads(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def write(path, items, header=None):
    Path(path).write_text(dumps(items, header))


def read(path):
    return loads(Path(path).read_text())


def get_float(items, key, default=None):
    if key not in items:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    try:
        return float(items[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: not a number: {items[key]!r}") from exc
