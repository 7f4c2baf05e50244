"""Config file loading and the shipped data files."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError


def data_path(name: str) -> Path:
    return Path(str(resources.files("offroad_vv") / "data" / name))


def resolve(path: str | Path, base: Path | None = None) -> Path:
    """Resolve a config reference: absolute, relative to ``base``, or a shipped data file."""
    p = Path(path)
    if p.is_absolute() and p.exists():
        return p
    if base is not None and (base / p).exists():
        return base / p
    if p.exists():
        return p
    shipped = data_path(p.name)
    if shipped.exists():
        return shipped
    raise ConfigurationError(f"config file not found: {path}")


def load_toml(path: str | Path) -> dict:
    p = resolve(path)
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries "(at line N, column M)"
        raise ConfigurationError(f"{p}: {exc}") from None
