"""Simulated physician/patient assistant.

Answers clinical-operation requests from a case's detailed clinical
information.  Lexical mode is fully offline and deterministic; model mode
delegates to a judge client with the extraction prompt.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import InvariantViolation, JudgeUnavailable
from .prompts import load_prompt

NOT_MENTIONED = "Not mentioned"
OVERLAP_THRESHOLD = 0.2

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> set[str]:
    """Lowercase alphanumeric token set."""
    return set(_TOKEN_RE.findall(text.lower()))


def lexical_overlap(request: str, section_text: str) -> float:
    """|shared tokens| / |request tokens|, 0.0 when the request has none."""
    request_tokens = tokenize(request)
    if not request_tokens:
        return 0.0
    return len(request_tokens & tokenize(section_text)) / len(request_tokens)


@dataclass
class ClinicalInfoDoc:
    """Per-case detailed clinical information, split into labelled sections."""

    case_id: str
    sections: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.sections = [(str(label), str(content)) for label, content in self.sections]
        if not self.sections:
            raise InvariantViolation(f"clinical info for {self.case_id!r} needs a section")

    def as_text(self) -> str:
        return "\n".join(f"{label}: {content}" for label, content in self.sections)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "sections": [{"label": l, "content": c} for l, c in self.sections],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClinicalInfoDoc":
        return cls(
            case_id=d["case_id"],
            sections=[(s["label"], s["content"]) for s in d["sections"]],
        )


def best_section(request: str, doc: ClinicalInfoDoc) -> tuple[int, float]:
    """Index and score of the best-matching section; ties go to the lowest
    index so lexical mode stays deterministic."""
    best_idx, best_score = 0, -1.0
    for idx, (label, content) in enumerate(doc.sections):
        score = lexical_overlap(request, f"{label} {content}")
        if score > best_score:
            best_idx, best_score = idx, score
    return best_idx, best_score


def fulfill_request(request: str, doc: ClinicalInfoDoc, mode: str = "lexical", judge=None) -> str:
    """Answer one clinical-operation request from the case document.

    Returns the literal "Not mentioned" when nothing in the document covers
    the request (lexical mode: every section scores below the threshold).
    """
    if mode == "lexical":
        idx, score = best_section(request, doc)
        if score < OVERLAP_THRESHOLD:
            return NOT_MENTIONED
        return doc.sections[idx][1]
    if mode == "model":
        if judge is None:
            raise JudgeUnavailable("model mode needs a judge client")
        prompt = load_prompt("oracle_fulfill").format(
            request=request, clinical_info=doc.as_text(), not_mentioned=NOT_MENTIONED
        )
        try:
            answer = judge.complete(prompt).strip()
        except JudgeUnavailable:
            raise
        except Exception as exc:
            raise JudgeUnavailable(str(exc)) from exc
        return answer or NOT_MENTIONED
    raise InvariantViolation(f"unknown oracle mode {mode!r}")


class OracleAssistant:
    """AssistantPort adapter: answers from the case's own clinical info."""

    def __init__(self, mode: str = "lexical", judge=None):
        self.mode = mode
        self.judge = judge

    def fulfill(self, request: str, case_ctx) -> str:
        return fulfill_request(request, case_ctx.clinical_info, mode=self.mode, judge=self.judge)
