"""Loss-mask construction for decoupled instruction tuning.

Reasoning-mode samples mask everything except deep-think and question
content; knowledge-mode samples mask everything except answer and final
content, with the case's clinical information spliced in after the
instruction.  Masks are character-offset spans over the emitted text;
trainers project them onto their own tokenization (a whitespace reference
projection ships for tests).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .casebank import InstructionResponsePair
from .errors import EmptyMask, InvariantViolation
from .oracle import ClinicalInfoDoc
from .protocol import emit_with_layout

MODE_REASONING = "reasoning"
MODE_KNOWLEDGE = "knowledge"

_WORD_RE = re.compile(r"\S+")


def _check_spans(spans: Sequence[tuple[int, int]], limit: int) -> None:
    prev_end = 0
    for start, end in spans:
        if not 0 <= start < end <= limit:
            raise InvariantViolation(f"span ({start},{end}) outside text of length {limit}")
        if start < prev_end:
            raise InvariantViolation("spans must be sorted and pairwise disjoint")
        prev_end = end


@dataclass
class MaskedSample:
    full_text: str
    spans: list[tuple[int, int]]
    mode: str
    clinical_span: tuple[int, int] | None = None

    def __post_init__(self):
        if self.mode not in (MODE_REASONING, MODE_KNOWLEDGE):
            raise InvariantViolation(f"unknown mask mode {self.mode!r}")
        self.spans = sorted((int(s), int(e)) for s, e in self.spans)
        _check_spans(self.spans, len(self.full_text))

    def masked_text(self) -> str:
        return "".join(self.full_text[s:e] for s, e in self.spans)

    def to_dict(self) -> dict:
        return {"full_text": self.full_text, "spans": [[s, e] for s, e in self.spans],
                "mode": self.mode}


def build_masks(
    pair: InstructionResponsePair, clinical_info: ClinicalInfoDoc, mode: str
) -> MaskedSample:
    """Compute the mask spans for one instruction-response pair.

    Structural markers are format, not content: they belong to neither mask.
    """
    response = pair.response
    if any(not s.completed for s in response.steps):
        raise InvariantViolation("response must be fully populated before masking")
    layout = emit_with_layout(response)

    if mode == MODE_REASONING:
        spans = []
        for sl in layout.steps:
            spans.extend([sl.deep_think, sl.question])
        return MaskedSample(full_text=layout.text, spans=spans, mode=mode)

    if mode == MODE_KNOWLEDGE:
        # splice the clinical information in right after the instruction
        insert_at = layout.instruction[1]
        block = f"\n\n{clinical_info.as_text()}"
        text = layout.text[:insert_at] + block + layout.text[insert_at:]
        shift = len(block)
        clinical_span = (insert_at + 2, insert_at + shift)
        spans = []
        for sl in layout.steps:
            if sl.answer is not None:
                spans.append((sl.answer[0] + shift, sl.answer[1] + shift))
        if layout.final is not None:
            spans.append((layout.final[0] + shift, layout.final[1] + shift))
        return MaskedSample(full_text=text, spans=spans, mode=mode, clinical_span=clinical_span)

    raise InvariantViolation(f"unknown mask mode {mode!r}")


def build_training_samples(
    pair: InstructionResponsePair, clinical_info: ClinicalInfoDoc
) -> list[MaskedSample]:
    """Both modes for one pair; the mode tag lets trainers alternate batches."""
    return [
        build_masks(pair, clinical_info, MODE_REASONING),
        build_masks(pair, clinical_info, MODE_KNOWLEDGE),
    ]


def write_masked_samples(samples: Sequence[MaskedSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_dict(), ensure_ascii=False) + "\n")


# --- token projection and the masked loss ---

def whitespace_token_spans(text: str) -> list[tuple[int, int]]:
    """Character range of each whitespace-delimited token."""
    return [(m.start(), m.end()) for m in _WORD_RE.finditer(text)]


def project_spans_to_tokens(
    text: str, char_spans: Sequence[tuple[int, int]],
    token_spans: Sequence[tuple[int, int]] | None = None,
) -> list[tuple[int, int]]:
    """Character-offset mask to token-position ranges.

    A token is masked when its character range overlaps any mask span.
    Defaults to the whitespace reference tokenization.
    """
    tokens = token_spans if token_spans is not None else whitespace_token_spans(text)
    _check_spans(sorted(char_spans), len(text))
    flags = []
    for ts, te in tokens:
        flags.append(any(ts < e and s < te for s, e in char_spans))
    ranges: list[tuple[int, int]] = []
    start = None
    for i, flag in enumerate(flags):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            ranges.append((start, i))
            start = None
    if start is not None:
        ranges.append((start, len(flags)))
    return ranges


def masked_nll(
    token_logprobs: Sequence[float], token_spans: Sequence[tuple[int, int]]
) -> float:
    """Negative log-likelihood summed over masked token positions only.

    An empty mask is an error rather than 0.0 so span-projection bugs
    surface instead of silently zeroing the loss.
    """
    n = len(token_logprobs)
    spans = sorted((int(s), int(e)) for s, e in token_spans)
    _check_spans(spans, n)
    total = 0.0
    covered = 0
    for s, e in spans:
        covered += e - s
        for i in range(s, e):
            total -= token_logprobs[i]
    if covered == 0:
        raise EmptyMask("mask selects zero token positions")
    return total
