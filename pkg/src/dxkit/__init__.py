"""Toolkit for LLM-directed, assistance-routed stepwise clinical diagnosis:
transcript grammar, session engine, dataset pipelines, retrieval, metrics
and the evaluation service."""

__version__ = "0.1.0"

from .protocol import (  # noqa: F401
    FinalDiagnosis,
    Responder,
    Step,
    Transcript,
    emit_transcript,
    extract_final_answer,
    parse_transcript,
)
