"""JSON persistence for fitted models of any family.

A model document is a JSON object whose "family" key ("gmm", "hmm",
"hmrf") selects the parameter class; the rest of the document is that
class's own serialization.  A "format_version" field guards against
silently loading documents written by an incompatible release.
"""

from __future__ import annotations

import json
from pathlib import Path

from pseudoct.errors import DataError

FORMAT_VERSION = 1


def _registry() -> dict:
    from pseudoct.gmm import GmmParams
    from pseudoct.hmm import HmmParams
    from pseudoct.hmrf import MrfParams

    return {"gmm": GmmParams, "hmm": HmmParams, "hmrf": MrfParams}


def model_to_dict(params) -> dict:
    doc = params.to_dict()
    if doc.get("family") not in _registry():
        raise DataError(f"object of type {type(params).__name__} is not a known model family")
    doc["format_version"] = FORMAT_VERSION
    return doc


def model_from_dict(doc: dict):
    if not isinstance(doc, dict):
        raise DataError(f"model document must be a JSON object, got {type(doc).__name__}")
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise DataError(f"model format version {version} not supported (expected {FORMAT_VERSION})")
    family = doc.get("family")
    registry = _registry()
    if family not in registry:
        known = ", ".join(sorted(registry))
        raise DataError(f"unknown model family {family!r}; expected one of: {known}")
    try:
        return registry[family].from_dict(doc)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed {family} model document: {e}") from e


def save_model(params, path: str | Path) -> None:
    """Write a fitted model as indented JSON (any family)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(model_to_dict(params), f, indent=2)
        f.write("\n")


def load_model(path: str | Path):
    """Read a model JSON and return the family's parameter object."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed model JSON in {path}: {e}") from e
    return model_from_dict(doc)
