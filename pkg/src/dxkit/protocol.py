"""Grammar, parser and emitter for structured diagnostic transcripts.

A transcript is an instruction block followed by numbered step blocks
(deep think, question with a responder tag, answer), an optional final
diagnosis and an optional reference list.  The emitted form is canonical:
UTF-8, ``\\n`` line endings, exactly one blank line between blocks, one
trailing newline.  ``parse_transcript`` accepts the canonical form plus a
few lenient variants (``\\r\\n`` input, the ``[Final Content]`` alias,
missing trailing newline); ``emit_transcript`` always writes the canonical
form, so ``emit(parse(x)) == x`` holds byte-for-byte on canonical text and
``parse(emit(t)) == t`` holds structurally for every valid transcript.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    DuplicateAnswerLine,
    InvariantViolation,
    MalformedMarker,
    MissingAnswerLine,
    MissingFinal,
    NonContiguousIndex,
)

ANSWER_SENTENCE_PREFIX = "So the final answer is"

# A marker is a bracketed alphabetic header at the start of a line, with an
# optional step index and responder tag, terminated by a colon.  Bracketed
# numerals ("[3]") are reference syntax, never markers.
_MARKER_LIKE = re.compile(r"^\[([A-Za-z][A-Za-z ]*)\]\s*(?:\d+\s*)?(?:<[^<>]*>\s*)?:")

_DEEP_RE = re.compile(r"^\[Deep Think\] (\d+):$")
_QUESTION_RE = re.compile(r"^\[Question\] (\d+) <([^<>]+)>:$")
_ANSWER_RE = re.compile(r"^\[Answer\] (\d+):$")
_FINAL_RE = re.compile(r"^\[(?:Final Diagnosis|Final Content)\]:$")
_REFS_RE = re.compile(r"^\[References\]:$")
_REF_LINE_RE = re.compile(r"^\[(\d+)\] (.+)$")
_INLINE_REF_RE = re.compile(r"\[(\d+)\]")


class Responder(Enum):
    """Who resolves a step's question."""

    LLM = "LLM"
    PHYSICIAN = "Physician"


@dataclass
class Step:
    """One diagnostic step: deep think, question, optional answer."""

    index: int
    deep_think: str
    question: str
    responder: Responder
    answer: str | None = None

    @property
    def completed(self) -> bool:
        return self.answer is not None and self.answer.strip() != ""


@dataclass
class FinalDiagnosis:
    """Final summary block; step_refs and answer_line derive from body."""

    body: str
    step_refs: list[int] = field(default_factory=list)
    answer_line: str | None = None

    @classmethod
    def from_body(cls, body: str) -> "FinalDiagnosis":
        """Build from body text, deriving cited steps and the answer line."""
        refs = sorted({int(m) for m in _INLINE_REF_RE.findall(body)})
        answer_lines = [ln for ln in body.split("\n") if ln.startswith(ANSWER_SENTENCE_PREFIX)]
        if len(answer_lines) > 1:
            raise DuplicateAnswerLine(f"{len(answer_lines)} answer lines in final block")
        if not answer_lines:
            raise MissingAnswerLine(
                f"final block has no line starting with {ANSWER_SENTENCE_PREFIX!r}"
            )
        return cls(body=body, step_refs=refs, answer_line=answer_lines[0])


@dataclass
class Transcript:
    """A full diagnostic session: instruction, steps, final, references."""

    instruction: str
    steps: list[Step] = field(default_factory=list)
    final: FinalDiagnosis | None = None
    references: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        # canonical order so that parse(emit(t)) == t regardless of how the
        # reference list was assembled
        self.references = sorted(
            [(int(k), c) for k, c in self.references], key=lambda kv: kv[0]
        )

    @property
    def n_steps(self) -> int:
        return len(self.steps)


# --- span layout (consumed by the loss-mask builder) ---

@dataclass
class StepLayout:
    deep_think: tuple[int, int]
    question: tuple[int, int]
    answer: tuple[int, int] | None


@dataclass
class TranscriptLayout:
    """Character offsets of every content piece inside the emitted text."""

    text: str
    instruction: tuple[int, int]
    steps: list[StepLayout]
    final: tuple[int, int] | None
    references: list[tuple[int, tuple[int, int]]]


# --- validation ---

def _check_content(text, what: str) -> None:
    if not isinstance(text, str) or text.strip() == "":
        raise InvariantViolation(f"{what} must be non-empty text")
    if "\r" in text:
        raise InvariantViolation(f"{what} must use \\n line endings")
    lines = text.split("\n")
    if lines[0].strip() == "" or lines[-1].strip() == "":
        raise InvariantViolation(f"{what} must not start or end with a blank line")
    for ln in lines:
        if _MARKER_LIKE.match(ln):
            raise InvariantViolation(f"{what} contains a marker-like line: {ln!r}")


def validate_transcript(t: Transcript) -> None:
    """Raise InvariantViolation (or a more specific error) on any breach."""
    _check_content(t.instruction, "instruction")
    for pos, step in enumerate(t.steps, start=1):
        if step.index != pos:
            raise NonContiguousIndex(expected=pos, found=step.index)
        if not isinstance(step.responder, Responder):
            raise InvariantViolation(f"step {pos} responder must be a Responder tag")
        _check_content(step.deep_think, f"step {pos} deep_think")
        _check_content(step.question, f"step {pos} question")
        if step.answer is not None:
            _check_content(step.answer, f"step {pos} answer")
    n = t.n_steps
    if t.final is not None:
        if not all(s.completed for s in t.steps):
            raise InvariantViolation("final diagnosis present but not all steps answered")
        _check_content(t.final.body, "final body")
        derived = FinalDiagnosis.from_body(t.final.body)
        if derived != t.final:
            raise InvariantViolation("final step_refs/answer_line do not match body")
        bad = [k for k in t.final.step_refs if not 1 <= k <= n]
        if bad:
            raise InvariantViolation(f"final cites unknown steps {bad} (have 1..{n})")
    seen: set[int] = set()
    for k, citation in t.references:
        if not 1 <= k <= n:
            raise InvariantViolation(f"reference key {k} outside 1..{n}")
        if k in seen:
            raise InvariantViolation(f"duplicate reference for step {k}")
        seen.add(k)
        if not isinstance(citation, str) or citation.strip() == "" or "\n" in citation:
            raise InvariantViolation(f"reference {k} citation must be a non-empty single line")


# --- emit ---

def _normalize_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def _normalized_copy(t: Transcript) -> Transcript:
    """Transcript with \\r\\n line endings canonicalized in every field."""
    if "\r" not in transcript_probe_text(t):
        return t
    steps = [
        Step(
            index=s.index,
            deep_think=_normalize_newlines(s.deep_think),
            question=_normalize_newlines(s.question),
            responder=s.responder,
            answer=None if s.answer is None else _normalize_newlines(s.answer),
        )
        for s in t.steps
    ]
    final = None if t.final is None else FinalDiagnosis.from_body(_normalize_newlines(t.final.body))
    return Transcript(
        instruction=_normalize_newlines(t.instruction),
        steps=steps,
        final=final,
        references=[(k, _normalize_newlines(c)) for k, c in t.references],
    )


def transcript_probe_text(t: Transcript) -> str:
    parts = [t.instruction]
    for s in t.steps:
        parts.extend([s.deep_think, s.question, s.answer or ""])
    if t.final is not None:
        parts.append(t.final.body)
    parts.extend(c for _k, c in t.references)
    return "\x00".join(parts)


def emit_with_layout(t: Transcript) -> TranscriptLayout:
    """Emit canonical text and record character offsets of all content."""
    t = _normalized_copy(t)
    validate_transcript(t)
    pieces: list[str] = []
    cursor = 0

    def push(text: str) -> tuple[int, int]:
        nonlocal cursor
        start = cursor
        pieces.append(text)
        cursor += len(text)
        return (start, cursor)

    instruction_span = push(t.instruction)
    step_layouts: list[StepLayout] = []
    for s in t.steps:
        push(f"\n\n[Deep Think] {s.index}:\n")
        deep_span = push(s.deep_think)
        push(f"\n\n[Question] {s.index} <{s.responder.value}>:\n")
        q_span = push(s.question)
        a_span = None
        if s.answer is not None:
            push(f"\n\n[Answer] {s.index}:\n")
            a_span = push(s.answer)
        step_layouts.append(StepLayout(deep_think=deep_span, question=q_span, answer=a_span))
    final_span = None
    if t.final is not None:
        push("\n\n[Final Diagnosis]:\n")
        final_span = push(t.final.body)
    ref_spans: list[tuple[int, tuple[int, int]]] = []
    if t.references:
        push("\n\n[References]:")
        for k, citation in sorted(t.references, key=lambda kv: kv[0]):
            push(f"\n[{k}] ")
            ref_spans.append((k, push(citation)))
    push("\n")
    return TranscriptLayout(
        text="".join(pieces),
        instruction=instruction_span,
        steps=step_layouts,
        final=final_span,
        references=ref_spans,
    )


def emit_transcript(t: Transcript) -> str:
    """Canonical text form of a valid transcript."""
    return emit_with_layout(t).text


# --- parse ---

def _match_marker(line: str, lineno: int):
    """Classify a line: None for content, else (kind, payload)."""
    if not _MARKER_LIKE.match(line):
        return None
    m = _DEEP_RE.match(line)
    if m:
        return ("deep", int(m.group(1)))
    m = _QUESTION_RE.match(line)
    if m:
        tag = m.group(2)
        try:
            responder = Responder(tag)
        except ValueError:
            raise MalformedMarker(line, lineno) from None
        return ("question", (int(m.group(1)), responder))
    m = _ANSWER_RE.match(line)
    if m:
        return ("answer", int(m.group(1)))
    if _FINAL_RE.match(line):
        return ("final", None)
    if _REFS_RE.match(line):
        return ("refs", None)
    raise MalformedMarker(line, lineno)


def _segment(lines: list[str], start: int, end: int) -> str:
    """Content between two markers; the canonical blank separator is dropped."""
    seg = lines[start:end]
    if seg and seg[-1] == "":
        seg = seg[:-1]
    return "\n".join(seg)


def parse_transcript(text: str) -> Transcript:
    """Parse transcript text, enforcing every structural invariant."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    markers: list[tuple[int, str, object]] = []
    for i, ln in enumerate(lines):
        found = _match_marker(ln, lineno=i + 1)
        if found is not None:
            markers.append((i, found[0], found[1]))

    first_marker = markers[0][0] if markers else len(lines)
    instruction = _segment(lines, 0, first_marker)
    if instruction.strip() == "":
        raise InvariantViolation("transcript must start with an instruction block")

    steps: list[Step] = []
    final: FinalDiagnosis | None = None
    references: list[tuple[int, str]] = []
    pending: Step | None = None  # step whose blocks are still arriving
    stage = "steps"  # steps -> final -> refs

    for pos, (lineno, kind, payload) in enumerate(markers):
        next_lineno = markers[pos + 1][0] if pos + 1 < len(markers) else len(lines)
        content = _segment(lines, lineno + 1, next_lineno)

        if kind == "deep":
            if stage != "steps":
                raise InvariantViolation("step block after final/references")
            if pending is not None and pending.question == "":
                raise InvariantViolation(f"step {pending.index} has no question block")
            expected = len(steps) + 1
            if payload != expected:
                raise NonContiguousIndex(expected=expected, found=payload)
            pending = Step(index=payload, deep_think=content, question="", responder=Responder.LLM)
            steps.append(pending)
        elif kind == "question":
            idx, responder = payload
            if stage != "steps" or pending is None or pending.question != "":
                raise InvariantViolation("question block without its deep think")
            if idx != pending.index:
                raise NonContiguousIndex(expected=pending.index, found=idx)
            pending.question = content
            pending.responder = responder
        elif kind == "answer":
            if stage != "steps" or pending is None or pending.question == "":
                raise InvariantViolation("answer block without its question")
            if payload != pending.index:
                raise NonContiguousIndex(expected=pending.index, found=payload)
            if pending.answer is not None:
                raise InvariantViolation(f"step {pending.index} has two answer blocks")
            pending.answer = content
        elif kind == "final":
            if stage != "steps":
                raise InvariantViolation("duplicate final block")
            stage = "final"
            final = FinalDiagnosis.from_body(content)
        elif kind == "refs":
            if stage == "refs":
                raise InvariantViolation("duplicate references block")
            stage = "refs"
            for off, raw in enumerate(content.split("\n")):
                m = _REF_LINE_RE.match(raw)
                if m is None:
                    raise MalformedMarker(raw, lineno + 2 + off)
                references.append((int(m.group(1)), m.group(2)))

    t = Transcript(instruction=instruction, steps=steps, final=final, references=references)
    validate_transcript(t)
    return t


# --- fragment parsing (single step block or final block) ---

def parse_fragment(text: str, expected_index: int) -> tuple[str, Step | FinalDiagnosis]:
    """Parse one generated continuation: ("step", Step) or ("final", FinalDiagnosis).

    A step fragment is a deep-think block, a question block and, when the
    responder answers itself, an answer block, all numbered expected_index.
    A final fragment is a single final-diagnosis block.
    """
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = text.split("\n")
    while lines and lines[0].strip() == "":
        lines.pop(0)
    while lines and lines[-1].strip() == "":
        lines.pop()
    if not lines:
        raise InvariantViolation("empty fragment")

    markers: list[tuple[int, str, object]] = []
    for i, ln in enumerate(lines):
        found = _match_marker(ln, lineno=i + 1)
        if found is not None:
            markers.append((i, found[0], found[1]))
    if not markers or markers[0][0] != 0:
        raise InvariantViolation("fragment must start with a marker line")

    def content_after(pos: int) -> str:
        start = markers[pos][0] + 1
        end = markers[pos + 1][0] if pos + 1 < len(markers) else len(lines)
        return _segment(lines, start, end)

    kinds = [m[1] for m in markers]
    if kinds[0] == "final":
        if len(markers) != 1:
            raise InvariantViolation("final fragment must be a single block")
        body = content_after(0)
        final = FinalDiagnosis.from_body(body)
        _check_content(body, "final body")
        return ("final", final)

    if kinds not in (["deep", "question"], ["deep", "question", "answer"]):
        raise InvariantViolation(f"unexpected fragment block order: {kinds}")
    for lineno, kind, payload in markers:
        idx = payload[0] if kind == "question" else payload
        if idx != expected_index:
            raise NonContiguousIndex(expected=expected_index, found=idx)
    step = Step(
        index=expected_index,
        deep_think=content_after(0),
        question=content_after(1),
        responder=markers[1][2][1],
        answer=content_after(2) if len(markers) == 3 else None,
    )
    _check_content(step.deep_think, "fragment deep_think")
    _check_content(step.question, "fragment question")
    if step.answer is not None:
        _check_content(step.answer, "fragment answer")
    return ("step", step)


# --- final answer extraction ---

def extract_final_answer(t: Transcript) -> str:
    """Short answer text from the final block's answer sentence."""
    if t.final is None:
        raise MissingFinal("transcript has no final diagnosis")
    if not t.final.answer_line:
        raise MissingAnswerLine("final diagnosis has no answer line")
    rest = t.final.answer_line[len(ANSWER_SENTENCE_PREFIX):]
    return rest.strip().rstrip(".!?;:,").rstrip()


# --- JSON serialization ---

def transcript_to_dict(t: Transcript) -> dict:
    return {
        "instruction": t.instruction,
        "steps": [
            {
                "index": s.index,
                "deep_think": s.deep_think,
                "question": s.question,
                "responder": s.responder.value,
                "answer": s.answer,
            }
            for s in t.steps
        ],
        "final": None
        if t.final is None
        else {
            "body": t.final.body,
            "step_refs": list(t.final.step_refs),
            "answer_line": t.final.answer_line,
        },
        "references": [[k, c] for k, c in t.references],
    }


def transcript_from_dict(d: dict) -> Transcript:
    steps = [
        Step(
            index=s["index"],
            deep_think=s["deep_think"],
            question=s["question"],
            responder=Responder(s["responder"]),
            answer=s.get("answer"),
        )
        for s in d.get("steps", [])
    ]
    final = None
    if d.get("final") is not None:
        final = FinalDiagnosis.from_body(d["final"]["body"])
    references = [(int(k), c) for k, c in d.get("references", [])]
    return Transcript(
        instruction=d["instruction"], steps=steps, final=final, references=references
    )


def transcript_to_json(t: Transcript) -> str:
    return json.dumps(transcript_to_dict(t), ensure_ascii=False, sort_keys=True)


def transcript_from_json(s: str) -> Transcript:
    return transcript_from_dict(json.loads(s))
