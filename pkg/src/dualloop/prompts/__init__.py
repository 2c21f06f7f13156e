"""Prompt templates shipped with the package (not taken from any published model).

Templates are versioned by filename suffix so recorded trajectories can name the
wording they were produced with.
"""

from functools import lru_cache
from importlib import resources

VERSION = "v1"


@lru_cache(maxsize=None)
def load(name: str, version: str = VERSION) -> str:
    return resources.files(__package__).joinpath(f"{name}_{version}.txt").read_text(encoding="utf-8").rstrip("\n")
