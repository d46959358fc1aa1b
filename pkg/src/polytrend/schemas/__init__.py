"""JSON schemas for the command-line reports."""
import json
from importlib import resources

NAMES = ("trend", "joint", "compare", "polyk", "simulate")


def load(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(name)
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text())
