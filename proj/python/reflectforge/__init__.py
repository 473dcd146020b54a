"""ReflectForge: reflective training data for medical QA.

The heavy lifting lives in the compiled ``_core`` module; this package
re-exports it and adds a few conveniences for reading pipeline output.
"""

import json
from pathlib import Path

from ._core import (
    ReflectForgeError,
    ReflectionPair,
    ReflectiveTrajectory,
    Step,
    count_think_blocks,
    dataset_stats,
    extract_choice,
    extract_decision,
    load_consultations,
    load_multichoice,
    parse_training_text,
    project,
    reflection_statistics,
    resolved_config,
    run_pipeline,
    serialize_training_text,
    token_manifest,
    validate,
)

SPECIAL_TOKENS = tuple(token_manifest()["special_tokens"])


def read_training_file(path):
    """Rows of an emitted training JSONL file as dicts."""
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


__all__ = [
    "ReflectForgeError",
    "ReflectionPair",
    "ReflectiveTrajectory",
    "SPECIAL_TOKENS",
    "Step",
    "count_think_blocks",
    "dataset_stats",
    "extract_choice",
    "extract_decision",
    "load_consultations",
    "load_multichoice",
    "parse_training_text",
    "project",
    "read_training_file",
    "reflection_statistics",
    "resolved_config",
    "run_pipeline",
    "serialize_training_text",
    "token_manifest",
    "validate",
]
