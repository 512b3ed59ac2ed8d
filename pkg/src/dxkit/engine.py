"""Session state machine driving one stepwise diagnostic episode.

The director model proposes the next block given the emitted transcript so
far; physician-tagged questions are routed out through an AssistantPort
(or, in service mode, parked until a human fulfills them).  The episode
ends with a final diagnosis or at the step cap.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol, runtime_checkable

from . import protocol
from .clients import ChatCompletionsClient
from .errors import (
    AssistantUnavailable,
    ClientUnavailable,
    DirectorProtocolError,
    InvariantViolation,
    ProtocolError,
)
from .protocol import FinalDiagnosis, Responder, Step, Transcript


@dataclass(frozen=True)
class SamplingParams:
    """Decoding knobs passed through to the director."""

    temperature: float = 0.6
    top_p: float = 0.95
    top_k: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise InvariantViolation("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise InvariantViolation("top_p must be in (0, 1]")
        if self.top_k < 0:
            raise InvariantViolation("top_k must be >= 0")

    @classmethod
    def evaluation(cls, seed: int = 0) -> "SamplingParams":
        """Deterministic decoding for evaluation runs."""
        return cls(temperature=0.0, top_p=0.95, top_k=20, seed=seed)

    def with_seed(self, seed: int) -> "SamplingParams":
        return SamplingParams(self.temperature, self.top_p, self.top_k, seed)


@dataclass(frozen=True)
class SessionConfig:
    step_cap: int = 20
    sampling: SamplingParams = field(default_factory=SamplingParams.evaluation)
    retry_limit: int = 2

    def __post_init__(self):
        if self.step_cap < 1:
            raise InvariantViolation("step_cap must be >= 1")


@runtime_checkable
class DirectorClient(Protocol):
    def generate(self, prefix: str, sampling: SamplingParams) -> str: ...


@runtime_checkable
class AssistantPort(Protocol):
    def fulfill(self, request: str, case_ctx) -> str: ...


class SessionState(str, Enum):
    RUNNING = "running"
    AWAITING_PHYSICIAN = "awaiting_physician"
    FINAL = "final"
    CAPPED = "capped"
    FAILED = "failed"
    TIMED_OUT = "timeout"


@dataclass
class StepTrace:
    index: int
    responder: str
    seconds: float
    retries: int
    assistant_called: bool = False


@dataclass
class AssistantCall:
    step: int
    request: str
    answer: str
    seconds: float = 0.0


@dataclass
class SessionTrace:
    steps: list[StepTrace] = field(default_factory=list)
    assistant_calls: list[AssistantCall] = field(default_factory=list)
    director_calls: int = 0
    step_cap_reached: bool = False

    def physician_actions(self) -> dict[int, str]:
        """Per-step log text for reference attachment of physician steps."""
        return {
            c.step: f"Physician action for request {c.request!r} (result: {c.answer})"
            for c in self.assistant_calls
        }


_REPAIR_NOTE = (
    "The previous output could not be parsed ({error}). "
    "Reply with exactly one block: either step {index} formatted as "
    "'[Deep Think] {index}:', '[Question] {index} <LLM|Physician>:' and, for an "
    "<LLM> question, '[Answer] {index}:', or a '[Final Diagnosis]:' block whose "
    "body contains one line starting with 'So the final answer is'."
)


class DiagnosticSession:
    """Incremental engine: advance() runs the director until the session
    needs a physician answer, finalizes, or hits the step cap."""

    def __init__(
        self,
        instruction: str,
        director: DirectorClient,
        cfg: SessionConfig,
        transcript: Transcript | None = None,
    ):
        self.transcript = transcript if transcript is not None else Transcript(instruction=instruction)
        self.director = director
        self.cfg = cfg
        self.trace = SessionTrace()
        self.state = SessionState.RUNNING
        self.pending_step: Step | None = None
        if self.transcript.steps and not self.transcript.steps[-1].completed:
            last = self.transcript.steps[-1]
            if last.responder is not Responder.PHYSICIAN:
                raise InvariantViolation("resumed transcript has an unanswered LLM step")
            self.pending_step = last
            self.state = SessionState.AWAITING_PHYSICIAN

    # -- director interaction --

    def _generate_block(self, expected_index: int) -> tuple[str, Step | FinalDiagnosis, int]:
        prefix = protocol.emit_transcript(self.transcript)
        last_error: ProtocolError | None = None
        for attempt in range(self.cfg.retry_limit + 1):
            prompt = prefix
            if attempt > 0:
                note = _REPAIR_NOTE.format(error=last_error, index=expected_index)
                prompt = f"{prefix}\n{note}"
            raw = self.director.generate(prompt, self.cfg.sampling)
            self.trace.director_calls += 1
            try:
                kind, block = protocol.parse_fragment(raw, expected_index)
                if kind == "step":
                    if block.responder is Responder.LLM and not block.completed:
                        raise InvariantViolation("LLM step must include its answer")
                    if block.responder is Responder.PHYSICIAN and block.answer is not None:
                        raise InvariantViolation("physician step must not include an answer")
                return (kind, block, attempt)
            except ProtocolError as exc:
                last_error = exc
        raise DirectorProtocolError(
            f"unparseable director output after {self.cfg.retry_limit + 1} attempts: {last_error}"
        )

    # -- state machine --

    def advance(self) -> SessionState:
        """Run director turns until awaiting_physician, final, or capped."""
        while self.state is SessionState.RUNNING:
            if self.transcript.final is not None:
                self.state = SessionState.FINAL
                break
            if self.transcript.n_steps >= self.cfg.step_cap:
                self.trace.step_cap_reached = True
                self.state = SessionState.CAPPED
                break
            expected = self.transcript.n_steps + 1
            started = time.perf_counter()
            kind, block, retries = self._generate_block(expected)
            elapsed = time.perf_counter() - started
            if kind == "final":
                self.transcript.final = block
                self.state = SessionState.FINAL
                break
            self.transcript.steps.append(block)
            self.trace.steps.append(
                StepTrace(
                    index=block.index,
                    responder=block.responder.value,
                    seconds=elapsed,
                    retries=retries,
                )
            )
            if block.responder is Responder.PHYSICIAN:
                self.pending_step = block
                self.state = SessionState.AWAITING_PHYSICIAN
                break
        return self.state

    def provide_answer(self, answer: str, source: str = "assistant", seconds: float = 0.0) -> None:
        """Fill the pending physician question and resume RUNNING."""
        if self.state is not SessionState.AWAITING_PHYSICIAN or self.pending_step is None:
            raise InvariantViolation("no pending physician question")
        text = answer.strip()
        if text == "":
            text = "Not mentioned"
        step = self.pending_step
        step.answer = text
        self.trace.assistant_calls.append(
            AssistantCall(step=step.index, request=step.question, answer=text, seconds=seconds)
        )
        for st in self.trace.steps:
            if st.index == step.index:
                st.assistant_called = source == "assistant"
        self.pending_step = None
        self.state = SessionState.RUNNING


def build_instruction(chief_complaint: str, question: str) -> str:
    return f"{chief_complaint.strip()}\n{question.strip()}"


def drive_session(
    session: DiagnosticSession, assistant: AssistantPort, case_ctx
) -> tuple[Transcript, SessionTrace]:
    """Advance a session to completion, fulfilling physician questions
    through the assistant port."""
    while True:
        state = session.advance()
        if state is SessionState.AWAITING_PHYSICIAN:
            started = time.perf_counter()
            try:
                answer = assistant.fulfill(session.pending_step.question, case_ctx)
            except AssistantUnavailable:
                raise
            except ClientUnavailable as exc:
                raise AssistantUnavailable(str(exc)) from exc
            session.provide_answer(
                answer, source="assistant", seconds=time.perf_counter() - started
            )
        else:
            break
    return session.transcript, session.trace


def run_session(
    case, director: DirectorClient, assistant: AssistantPort, cfg: SessionConfig | None = None
) -> tuple[Transcript, SessionTrace]:
    """Drive one full episode for a case, routing physician questions to
    the assistant.  Returns the transcript and the routing trace."""
    cfg = cfg or SessionConfig()
    if not case.chief_complaint.strip() or not case.question.strip():
        raise InvariantViolation("case needs a non-empty chief complaint and question")
    session = DiagnosticSession(
        build_instruction(case.chief_complaint, case.question), director, cfg
    )
    return drive_session(session, assistant, case)


def continue_session(
    transcript: Transcript,
    director: DirectorClient,
    assistant: AssistantPort,
    cfg: SessionConfig | None = None,
    case_ctx=None,
) -> tuple[Transcript, SessionTrace]:
    """Roll an existing partial transcript forward to final or the cap."""
    cfg = cfg or SessionConfig()
    session = DiagnosticSession("", director, cfg, transcript=transcript)
    return drive_session(session, assistant, case_ctx)


def count_physician_ops(t: Transcript) -> int:
    """Number of steps whose question was routed to a physician."""
    return sum(1 for s in t.steps if s.responder is Responder.PHYSICIAN)


# --- director implementations ---

class HttpDirector:
    """Director backed by a chat-completions-compatible endpoint."""

    def __init__(self, client: ChatCompletionsClient):
        self.client = client

    @classmethod
    def from_endpoint(
        cls, base_url: str, model: str, api_key_env: str = "DXKIT_API_KEY"
    ) -> "HttpDirector":
        return cls(ChatCompletionsClient(base_url, model, api_key_env=api_key_env))

    def generate(self, prefix: str, sampling: SamplingParams) -> str:
        return self.client.complete(
            prefix,
            temperature=sampling.temperature,
            top_p=sampling.top_p,
            top_k=sampling.top_k or None,
            seed=sampling.seed,
        )


class ReplayDirector:
    """Deterministic director that replays canned block texts in order."""

    def __init__(self, texts: list[str]):
        self._texts = list(texts)
        self._cursor = 0

    def generate(self, prefix: str, sampling: SamplingParams) -> str:
        if self._cursor >= len(self._texts):
            raise DirectorProtocolError("replay script exhausted")
        text = self._texts[self._cursor]
        self._cursor += 1
        return text

    @property
    def remaining(self) -> int:
        return len(self._texts) - self._cursor


class ReplayScript:
    """JSONL file of canned director outputs, optionally tagged by case_id."""

    def __init__(self, entries: list[dict]):
        self.entries = entries

    @classmethod
    def load(cls, path: str | Path) -> "ReplayScript":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entries.append(json.loads(line))
        return cls(entries)

    def director_for(self, case_id: str | None = None) -> ReplayDirector:
        if case_id is None:
            return ReplayDirector([e["text"] for e in self.entries])
        tagged = [e["text"] for e in self.entries if e.get("case_id") == case_id]
        if tagged:
            return ReplayDirector(tagged)
        return ReplayDirector([e["text"] for e in self.entries if e.get("case_id") is None])
