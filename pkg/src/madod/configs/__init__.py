"""Bundled experiment configs."""

from importlib.resources import files
from pathlib import Path


def bundled(name: str) -> Path:
    path = files(__name__) / f"{name}.json"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    return Path(str(path))
