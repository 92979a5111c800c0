"""JSON schemas for structured model outputs (search plans, judge verdicts)."""

from __future__ import annotations

import jsonschema

SEARCH_PLAN = "search_plan"
JUDGE_VERDICT = "judge_verdict"

SEARCH_PLAN_SCHEMA = {
    "type": "object",
    "required": ["threads"],
    "properties": {
        "threads": {
            "type": "array",
            "minItems": 5,
            "maxItems": 7,
            "items": {
                "type": "object",
                "required": ["thread_id", "objective", "sub_objectives", "candidate_queries"],
                "properties": {
                    "thread_id": {"type": "integer", "minimum": 1},
                    "objective": {"type": "string", "minLength": 1},
                    "sub_objectives": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"type": "string", "minLength": 1},
                    },
                    "candidate_queries": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"type": "string", "minLength": 1},
                    },
                },
            },
        }
    },
}

JUDGE_VERDICT_SCHEMA = {
    "type": "object",
    "required": ["relevance_score", "coverage_score", "rationale"],
    "properties": {
        "relevance_score": {"type": "integer", "minimum": 1, "maximum": 5},
        "coverage_score": {"type": "integer", "minimum": 1, "maximum": 5},
        "rationale": {"type": "string"},
    },
}

_SCHEMAS = {SEARCH_PLAN: SEARCH_PLAN_SCHEMA, JUDGE_VERDICT: JUDGE_VERDICT_SCHEMA}


def validate_payload(schema_id: str, data: object) -> list[str]:
    """Return validation error messages; empty list means valid.

    Beyond the JSON schema, search plans require thread_ids dense from 1.
    """
    if schema_id not in _SCHEMAS:
        raise ValueError(f"unknown schema_id {schema_id!r}")
    validator = jsonschema.Draft202012Validator(_SCHEMAS[schema_id])
    errors = [
        f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
        for e in validator.iter_errors(data)
    ]
    if errors:
        return errors
    if schema_id == SEARCH_PLAN:
        ids = sorted(t["thread_id"] for t in data["threads"])
        if ids != list(range(1, len(ids) + 1)):
            errors.append(f"thread_ids must be dense from 1, got {ids}")
    return errors
