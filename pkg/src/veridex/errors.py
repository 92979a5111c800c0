"""Exception types shared across the pipeline.

Class names match the error identifiers used in command exit-code mapping
(see cli module docstring).
"""


class VeridexError(Exception):
    """Base class for all veridex failures."""


# -- ingest ------------------------------------------------------------

class EmptyCorpus(VeridexError):
    """Corpus directory contains no readable text documents."""


class DuplicateDocId(VeridexError):
    """Hash-prefix collision that survives extension to 8 hex chars."""


class MalformedDocId(VeridexError):
    """Doc id is not 6 (or collision-extended 8) lowercase hex chars."""


# -- endpoints ---------------------------------------------------------

class EndpointUnavailable(VeridexError):
    """Endpoint stayed unreachable after the configured retries."""


class DimensionMismatch(VeridexError):
    """Embedding dimension differs from the index / batch dimension."""


class ZeroVector(VeridexError):
    """Vector has zero norm; cosine similarity is undefined."""


class StaleEmbedder(VeridexError):
    """Persisted index was built with a different embedder_id."""


class ContextOverflow(VeridexError):
    """Prompt plus output budget would exceed the model context window."""


class EmptyResponse(VeridexError):
    """Model returned an empty completion twice in a row."""


class SchemaViolation(VeridexError):
    """Structured model output failed validation after one repair attempt."""


# -- pipeline ----------------------------------------------------------

class NoPassingReports(VeridexError):
    """Judge gate rejected every thread report."""


class RunLocked(VeridexError):
    """Another pipeline run holds the run-directory lock."""


class StageFailure(VeridexError):
    """A pipeline stage aborted; prior artifacts are left intact."""

    def __init__(self, stage: str, cause: Exception | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


# -- metrics -----------------------------------------------------------

class EmptyReport(VeridexError):
    """No annotations recorded for the report."""


class EmptyRun(VeridexError):
    """No reports available to aggregate."""


class CoverageGap(VeridexError):
    """A planned sub-objective has no recorded outcome."""
