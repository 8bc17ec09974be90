"""Shared path helpers. Single source of truth for the repo root lookup."""

from __future__ import annotations

import pathlib
from typing import Optional


def repo_root() -> pathlib.Path:
    """Default repository root, the directory holding ``schema/``.

    This file lives at ``src/hybrid_mpc/_paths.py``; ``parents[2]``
    resolves to the repo root.
    """
    return pathlib.Path(__file__).resolve().parents[2]


def schema_dir(root: Optional[pathlib.Path] = None) -> pathlib.Path:
    return (root if root is not None else repo_root()) / "schema"
