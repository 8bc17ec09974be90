"""Tests for JSON schema validation of every document the package reads."""
from __future__ import annotations

import json

import numpy as np
import pytest

from hybrid_mpc.learn import Dataset
from hybrid_mpc.miqp import Affine, ModelBuilder
from hybrid_mpc.schema_check import SCHEMA_NAMES, SchemaMismatch, load_document, validate_document
from hybrid_mpc.types import standing_instance


def test_schema_files_are_json(schema_root):
    for name in SCHEMA_NAMES:
        doc = json.loads((schema_root / "schema" / name).read_text(encoding="utf-8"))
        assert doc["$schema"].endswith("2020-12/schema")


def test_problem_instance_passes(quad, schema_root):
    doc = standing_instance(quad, horizon_n=3).to_dict()
    validate_document(doc, "problem_instance.schema.json", schema_root)


def test_problem_instance_missing_field(quad, schema_root):
    doc = standing_instance(quad, horizon_n=3).to_dict()
    del doc["x0"]
    with pytest.raises(SchemaMismatch, match="x0"):
        validate_document(doc, "problem_instance.schema.json", schema_root)


def test_document_left_untouched(quad):
    doc = standing_instance(quad, horizon_n=3).to_dict()
    before = json.dumps(doc, sort_keys=True)
    validate_document(doc, "problem_instance.schema.json")
    assert json.dumps(doc, sort_keys=True) == before


def test_dataset_header_passes():
    validate_document(Dataset.build([], n_features=14).header(), "dataset_header.schema.json")


def test_zero_scale_span_rejected():
    header = Dataset.build([], n_features=14).header()
    header["scale_span"][0] = 0.0
    with pytest.raises(SchemaMismatch, match="scale_span"):
        validate_document(header, "dataset_header.schema.json")


def test_run_config_minimal():
    validate_document({"schema_version": 1}, "run_config.schema.json")


def test_run_config_every_error_listed():
    with pytest.raises(SchemaMismatch) as info:
        validate_document({"schema_version": 1, "seed": -1, "gap_target": 1.5},
                          "run_config.schema.json")
    assert "seed" in str(info.value) and "gap_target" in str(info.value)


def test_run_config_segmentation_forms():
    validate_document({"schema_version": 1, "segmentation": "reference"}, "run_config.schema.json")
    custom = {"angle": {"lo": -1.0, "hi": 1.0, "regions": 2}}
    validate_document({"schema_version": 1, "segmentation": custom}, "run_config.schema.json")
    with pytest.raises(SchemaMismatch):
        validate_document({"schema_version": 1, "segmentation": "fine"}, "run_config.schema.json")


def test_miqp_container_passes(tmp_path):
    mb = ModelBuilder()
    x = mb.var("x", 0.0, 1.0)
    b = mb.binary_var("b")
    mb.add_square(Affine(-0.5, {x: 1.0}), 1.0)
    mb.row(Affine(0.0, {x: 1.0, b: -1.0}), -np.inf, 0.0, "link")
    path = tmp_path / "m.json"
    mb.build().save(path)
    doc = load_document(path, "miqp.schema.json")
    assert doc["var_names"] == ["x", "b"]
    assert doc["binary_idx"] == [1]


def test_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(SchemaMismatch, match="not valid JSON"):
        load_document(path, "run_config.schema.json")


def test_edited_schema_root_is_used(schema_root):
    path = schema_root / "schema" / "run_config.schema.json"
    schema = json.loads(path.read_text(encoding="utf-8"))
    schema["required"] = ["schema_version", "seed"]
    path.write_text(json.dumps(schema), encoding="utf-8")
    with pytest.raises(SchemaMismatch, match="seed"):
        validate_document({"schema_version": 1}, "run_config.schema.json", schema_root)


@pytest.mark.parametrize("rule", ["MostFractional", "ContactFirst", "PaperOrder"])
def test_run_config_branch_rules(rule):
    validate_document({"schema_version": 1, "solve": {"branch_rule": rule}}, "run_config.schema.json")


def test_run_config_unknown_branch_rule():
    with pytest.raises(SchemaMismatch, match="branch_rule"):
        validate_document({"schema_version": 1, "solve": {"branch_rule": "Random"}},
                          "run_config.schema.json")
