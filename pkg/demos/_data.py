"""Locate files bundled with the package."""
from importlib import resources


def bundled(name: str) -> str:
    return str(resources.files("acesched.data").joinpath(name))
