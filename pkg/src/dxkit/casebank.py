"""Case ingestion and the model-assisted dataset transformation pipeline.

A source QA record becomes a full-process case in three stages: extract the
detailed clinical information, rewrite the presentation as a vague
patient-style chief complaint, and rephrase the question open-ended.
Deep-thinking injection then fills the per-step deliberation of an
instruction-response pair without touching its question/answer text.
Every model call is recorded and cached so pipeline runs are resumable and
idempotent per (case_id, stage).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    DuplicateCaseId,
    ExtractionEmpty,
    JudgeUnavailable,
    LeakageDetected,
    SchemaError,
)
from .oracle import ClinicalInfoDoc
from .prompts import load_prompt
from .protocol import Transcript, emit_transcript, parse_transcript

LEAKAGE_SPAN_TOKENS = 8


@dataclass
class CaseRecord:
    """One full-process evaluation unit."""

    case_id: str
    question: str
    chief_complaint: str
    clinical_info: ClinicalInfoDoc
    gold_answer: str
    department: str | None = None
    task: str | None = None

    def __post_init__(self):
        for name in ("question", "chief_complaint", "gold_answer"):
            if not str(getattr(self, name)).strip():
                raise SchemaError(0, f"{name} must be non-empty")

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "question": self.question,
            "chief_complaint": self.chief_complaint,
            "clinical_info": self.clinical_info.to_dict(),
            "gold_answer": self.gold_answer,
            "department": self.department,
            "task": self.task,
        }


@dataclass
class InstructionResponsePair:
    instruction: str
    response: Transcript


@dataclass
class CaseBank:
    cases: list[CaseRecord] = field(default_factory=list)

    def __post_init__(self):
        self.by_id = {c.case_id: c for c in self.cases}
        if len(self.by_id) != len(self.cases):
            raise DuplicateCaseId("duplicate case_id in bank")

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    def get(self, case_id: str) -> CaseRecord | None:
        return self.by_id.get(case_id)


_REQUIRED_FIELDS = ("case_id", "question", "chief_complaint", "clinical_info", "gold_answer")


def case_from_dict(d: dict, lineno: int = 0) -> CaseRecord:
    for name in _REQUIRED_FIELDS:
        if name not in d or d[name] in (None, "", []):
            raise SchemaError(lineno, f"missing {name}")
    info = d["clinical_info"]
    try:
        if "case_id" not in info:
            info = {**info, "case_id": d["case_id"]}
        doc = ClinicalInfoDoc.from_dict(info)
    except (KeyError, TypeError) as exc:
        raise SchemaError(lineno, f"bad clinical_info: {exc}") from exc
    return CaseRecord(
        case_id=str(d["case_id"]),
        question=d["question"],
        chief_complaint=d["chief_complaint"],
        clinical_info=doc,
        gold_answer=d["gold_answer"],
        department=d.get("department"),
        task=d.get("task"),
    )


def ingest_cases(path: str | Path, format: str = "jsonl") -> CaseBank:
    """Load and validate a JSONL case file; line numbers are 1-based."""
    if format != "jsonl":
        raise SchemaError(0, f"unsupported format {format!r}")
    cases: list[CaseRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, f"invalid json: {exc}") from exc
            try:
                record = case_from_dict(d, lineno)
            except SchemaError as exc:
                raise SchemaError(lineno, exc.reason) from exc
            if record.case_id in seen:
                raise DuplicateCaseId(f"case_id {record.case_id!r} repeated at line {lineno}")
            seen.add(record.case_id)
            cases.append(record)
    return CaseBank(cases=cases)


def write_cases(bank: CaseBank, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for case in bank:
            fh.write(json.dumps(case.to_dict(), ensure_ascii=False) + "\n")


# --- resumable model-call store ---

class TransformStore:
    """Append-only JSONL cache of model calls keyed by (case_id, stage).

    Transformation jobs for distinct case_ids may share a store file:
    every write is a single appended line.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._cache: dict[tuple[str, str], str] = {}
        self.calls: list[dict] = []
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        self._cache[(row["case_id"], row["stage"])] = row["response"]
                        self.calls.append(row)

    def get(self, case_id: str, stage: str) -> str | None:
        return self._cache.get((case_id, stage))

    def put(self, case_id: str, stage: str, prompt: str, response: str) -> None:
        row = {"case_id": case_id, "stage": stage, "prompt": prompt, "response": response}
        self._cache[(case_id, stage)] = response
        self.calls.append(row)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _call_model(model, prompt: str) -> str:
    if model is None:
        raise JudgeUnavailable("no judge client configured and response not in store")
    try:
        return model.complete(prompt)
    except JudgeUnavailable:
        raise
    except Exception as exc:
        raise JudgeUnavailable(str(exc)) from exc


def _staged_call(model, store: TransformStore, case_id: str, stage: str, prompt: str) -> str:
    cached = store.get(case_id, stage)
    if cached is not None:
        return cached
    response = _call_model(model, prompt)
    store.put(case_id, stage, prompt, response)
    return response


# --- three-step transformation ---

def parse_sections(text: str) -> list[tuple[str, str]]:
    """'Label: content' lines to sections; bare lines extend the previous."""
    sections: list[tuple[str, str]] = []
    for raw in text.split("\n"):
        line = raw.strip()
        if not line:
            continue
        if ":" in line:
            label, content = line.split(":", 1)
            sections.append((label.strip(), content.strip()))
        elif sections:
            label, content = sections[-1]
            sections[-1] = (label, f"{content} {line}")
        else:
            sections.append(("Info", line))
    return [(l, c) for l, c in sections if c]


def transform_case(raw: dict, model, store: TransformStore | None = None) -> CaseRecord:
    """Build a CaseRecord from a source QA record via the judge model.

    raw needs "context" and "answer"; "id", "question", "department" and
    "task" are carried through when present.
    """
    store = store if store is not None else TransformStore()
    context = raw.get("context", "")
    answer = raw.get("answer", "")
    if not str(context).strip() or not str(answer).strip():
        raise SchemaError(0, "raw record needs context and answer")
    case_id = str(raw.get("id") or "case-" + hashlib.sha1(context.encode()).hexdigest()[:10])

    extraction = _staged_call(
        model, store, case_id, "extract",
        load_prompt("extract_clinical_info").format(context=context),
    )
    sections = parse_sections(extraction)
    if not sections:
        raise ExtractionEmpty(f"no clinical information extracted for {case_id}")

    complaint = _staged_call(
        model, store, case_id, "complaint",
        load_prompt("rewrite_chief_complaint").format(context=context),
    ).strip()
    question = _staged_call(
        model, store, case_id, "question",
        load_prompt("rephrase_open_question").format(question=raw.get("question", context)),
    ).strip()

    return CaseRecord(
        case_id=case_id,
        question=question,
        chief_complaint=complaint,
        clinical_info=ClinicalInfoDoc(case_id=case_id, sections=sections),
        gold_answer=answer,  # transformation never alters the gold answer
        department=raw.get("department"),
        task=raw.get("task"),
    )


# --- deep thinking injection ---

def _word_ngrams(text: str, n: int) -> set[tuple[str, ...]]:
    words = text.split()
    return {tuple(words[i : i + n]) for i in range(len(words) - n + 1)}


def find_leakage(steps, span_tokens: int = LEAKAGE_SPAN_TOKENS) -> tuple[int, str] | None:
    """First (step index, leaked span) where a deep think quotes a later
    step's answer verbatim for >= span_tokens consecutive tokens."""
    for i, step in enumerate(steps):
        deep_grams = _word_ngrams(step.deep_think or "", span_tokens)
        if not deep_grams:
            continue
        for later in steps[i + 1 :]:
            hit = deep_grams & _word_ngrams(later.answer or "", span_tokens)
            if hit:
                return (step.index, " ".join(sorted(hit)[0]))
    return None


def inject_deep_thinking(
    pair: InstructionResponsePair, model, store: TransformStore | None = None
) -> InstructionResponsePair:
    """Fill every step's deep_think; question/answer text stays byte-identical."""
    store = store if store is not None else TransformStore()
    response = pair.response
    before = [(s.question, s.answer) for s in response.steps]
    case_key = hashlib.sha1(pair.instruction.encode()).hexdigest()[:10]

    filled: list = []
    for step in response.steps:
        if step.question.strip() == "" or not step.completed:
            raise SchemaError(0, f"step {step.index} needs question and answer before injection")
        prefix_t = Transcript(instruction=pair.instruction, steps=filled)
        prefix = emit_transcript(prefix_t) if filled else pair.instruction
        prompt = load_prompt("deep_think").format(
            prefix=prefix, index=step.index, question=step.question
        )
        deep = _staged_call(model, store, case_key, f"deep_think:{step.index}", prompt).strip()
        if not deep:
            raise ExtractionEmpty(f"judge returned empty deep think for step {step.index}")
        step.deep_think = deep
        filled.append(step)

    leak = find_leakage(response.steps)
    if leak is not None:
        raise LeakageDetected(step=leak[0], span=leak[1])
    after = [(s.question, s.answer) for s in response.steps]
    if before != after:
        raise SchemaError(0, "injection altered question/answer content")
    # injected transcript must still round-trip under the grammar
    parse_transcript(emit_transcript(response))
    return pair
