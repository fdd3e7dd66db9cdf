"""Bundled desk-scale fixture networks and their evaluation dataset.

A 64-32-16-10 MLP and a small CNN (3x3 conv + classifier head), trained
offline on a synthetic 10-class problem and quantized to 8-bit weights, plus
a balanced 600-sample evaluation set. Regenerate with tools/make_fixtures.py.
"""

from __future__ import annotations

import json
from importlib import resources

from .network import Dataset, NetworkModel

FIXTURE_MODELS = ("mlp", "cnn")


def _read(name: str) -> dict:
    ref = resources.files("xbarsec") / "fixtures" / name
    with ref.open("r") as fh:
        return json.load(fh)


def load_model(name: str) -> NetworkModel:
    if name not in FIXTURE_MODELS:
        raise ValueError(f"unknown fixture model {name!r}; have {FIXTURE_MODELS}")
    return NetworkModel.from_dict(_read(f"{name}.json"))


def load_dataset() -> Dataset:
    return Dataset.from_dict(_read("dataset.json"))
