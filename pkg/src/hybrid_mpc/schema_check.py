"""Validate JSON documents against the schemas in ``schema/``.

The schemas are authoritative: every document the package reads (problem
instances, run configs, dataset headers, MIQP containers) goes through
:func:`validate_document` before any field is used.
"""

from __future__ import annotations

import json
import pathlib
from typing import Any, Optional

from jsonschema import Draft202012Validator

from hybrid_mpc._paths import schema_dir

_SCHEMA_CACHE: dict[str, dict] = {}

SCHEMA_NAMES = (
    "problem_instance.schema.json",
    "run_config.schema.json",
    "dataset_header.schema.json",
    "miqp.schema.json",
)


class SchemaMismatch(ValueError):
    """A document does not match the schema it is read against."""


def _load_schema(name: str, root: Optional[pathlib.Path]) -> dict:
    directory = schema_dir(root)
    key = f"{directory}:{name}"
    if key not in _SCHEMA_CACHE:
        path = directory / name
        _SCHEMA_CACHE[key] = json.loads(path.read_text(encoding="utf-8"))
    return _SCHEMA_CACHE[key]


def validate_document(doc: Any, name: str, root: Optional[pathlib.Path] = None) -> None:
    """Raise ``SchemaMismatch`` listing every error of ``doc`` against schema ``name``.

    Silent on success. Does not mutate the document.
    """
    schema = _load_schema(name, root)
    validator = Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        msgs = "; ".join(f"{list(e.path) or '<root>'}: {e.message}" for e in errors)
        raise SchemaMismatch(f"{name}: {msgs}")


def load_document(path: pathlib.Path, name: str, root: Optional[pathlib.Path] = None) -> Any:
    """Read a JSON file and validate it; malformed JSON is a ``SchemaMismatch`` too."""
    try:
        doc = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: not valid JSON ({exc})") from exc
    validate_document(doc, name, root)
    return doc
