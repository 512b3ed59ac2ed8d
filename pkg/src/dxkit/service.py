"""HTTP service: live sessions for the physician console plus reporting.

Sessions run the engine inline in the request path and park in
awaiting_physician until a fulfill arrives (or the await timeout lapses).
Every state change is appended to the session's event log.
"""

from __future__ import annotations

import os
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import Depends, FastAPI, HTTPException, Request
from pydantic import BaseModel

from .casebank import CaseBank, CaseRecord
from .engine import DiagnosticSession, SessionConfig, SessionState, build_instruction, count_physician_ops
from .errors import DxkitError
from .eventlog import EventLog
from .metrics import judge_accuracy, op_effectiveness
from .oracle import ClinicalInfoDoc, OracleAssistant
from .protocol import extract_final_answer, transcript_to_dict


@dataclass
class ServiceConfig:
    step_cap: int = 20
    retry_limit: int = 2
    await_timeout: float = 24 * 3600.0  # 5s is the test-mode value
    auto_assist: bool = False
    token_env: str = "DXKIT_SERVICE_TOKEN"

    def session_config(self) -> SessionConfig:
        return SessionConfig(step_cap=self.step_cap, retry_limit=self.retry_limit)


@dataclass
class SessionRuntime:
    session_id: str
    session: DiagnosticSession
    case: CaseRecord | None
    created: float
    awaiting_since: float | None = None
    timed_out: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    def state(self) -> str:
        if self.timed_out:
            return SessionState.TIMED_OUT.value
        return self.session.state.value


class SessionManager:
    """Owns all live sessions; one lock per session serializes fulfills."""

    def __init__(
        self,
        director_provider,
        cfg: ServiceConfig | None = None,
        casebank: CaseBank | None = None,
        log: EventLog | None = None,
        assistant=None,
    ):
        self.director_provider = director_provider
        self.cfg = cfg or ServiceConfig()
        self.casebank = casebank
        self.log = log
        self.assistant = assistant or OracleAssistant()
        self._sessions: dict[str, SessionRuntime] = {}
        self._registry_lock = threading.Lock()

    # -- internals --

    def _emit(self, rt: SessionRuntime, event: dict) -> None:
        if self.log is not None:
            self.log.append(rt.session_id, event)

    def _advance(self, rt: SessionRuntime) -> None:
        """Advance the engine and log everything that happened."""
        logged_steps = rt.session.transcript.n_steps
        had_final = rt.session.transcript.final is not None
        state = rt.session.advance()
        for step in rt.session.transcript.steps[logged_steps:]:
            self._emit(
                rt,
                {
                    "type": "step_added",
                    "step": {
                        "index": step.index,
                        "deep_think": step.deep_think,
                        "question": step.question,
                        "responder": step.responder.value,
                        "answer": step.answer,
                    },
                },
            )
        if rt.session.transcript.final is not None and not had_final:
            self._emit(rt, {"type": "final_added", "body": rt.session.transcript.final.body})
        self._emit(rt, {"type": "state_changed", "state": state.value})
        rt.awaiting_since = time.monotonic() if state is SessionState.AWAITING_PHYSICIAN else None

    def _check_timeout(self, rt: SessionRuntime) -> None:
        if (
            not rt.timed_out
            and rt.session.state is SessionState.AWAITING_PHYSICIAN
            and rt.awaiting_since is not None
            and time.monotonic() - rt.awaiting_since > self.cfg.await_timeout
        ):
            rt.timed_out = True
            self._emit(rt, {"type": "state_changed", "state": SessionState.TIMED_OUT.value})

    # -- public operations --

    def start(self, case: CaseRecord | None = None, adhoc: dict | None = None) -> SessionRuntime:
        if case is not None:
            instruction = build_instruction(case.chief_complaint, case.question)
            case_id = case.case_id
        else:
            instruction = build_instruction(adhoc["chief_complaint"], adhoc["question"])
            case_id = None
        director = self.director_provider(case)
        session = DiagnosticSession(instruction, director, self.cfg.session_config())
        rt = SessionRuntime(
            session_id=uuid.uuid4().hex, session=session, case=case, created=time.monotonic()
        )
        with self._registry_lock:
            self._sessions[rt.session_id] = rt
        self._emit(
            rt,
            {"type": "session_started", "instruction": instruction, "case_id": case_id},
        )
        with rt.lock:
            if self.cfg.auto_assist and rt.case is not None:
                self._drive_with_assistant(rt)
            else:
                self._advance(rt)
        return rt

    def _drive_with_assistant(self, rt: SessionRuntime) -> None:
        while True:
            self._advance(rt)
            if rt.session.state is not SessionState.AWAITING_PHYSICIAN:
                break
            answer = self.assistant.fulfill(rt.session.pending_step.question, rt.case)
            rt.session.provide_answer(answer, source="assistant")
            self._emit(
                rt,
                {
                    "type": "answer_added",
                    "step": rt.session.transcript.n_steps,
                    "answer": answer,
                    "source": "assistant",
                },
            )

    def get(self, session_id: str) -> SessionRuntime:
        rt = self._sessions.get(session_id)
        if rt is None:
            raise KeyError(session_id)
        self._check_timeout(rt)
        return rt

    def list(self, state: str | None = None) -> list[SessionRuntime]:
        with self._registry_lock:
            runtimes = list(self._sessions.values())
        for rt in runtimes:
            self._check_timeout(rt)
        runtimes.sort(key=lambda r: r.created)
        if state is not None:
            runtimes = [r for r in runtimes if r.state() == state]
        return runtimes

    def fulfill(self, session_id: str, step: int, answer: str) -> SessionRuntime:
        rt = self.get(session_id)
        with rt.lock:
            self._check_timeout(rt)
            if rt.state() != SessionState.AWAITING_PHYSICIAN.value:
                raise PermissionError(f"session is {rt.state()}, not awaiting_physician")
            pending = rt.session.pending_step
            if pending is None or pending.index != step:
                raise PermissionError(f"pending step is {pending.index if pending else None}, not {step}")
            rt.session.provide_answer(answer, source="human")
            self._emit(
                rt,
                {"type": "answer_added", "step": step, "answer": rt.session.transcript.steps[step - 1].answer, "source": "human"},
            )
            self._advance(rt)
        return rt


# --- HTTP layer ---

class StartSessionBody(BaseModel):
    case_id: str | None = None
    chief_complaint: str | None = None
    question: str | None = None
    clinical_info: dict | None = None
    gold_answer: str | None = None


class FulfillBody(BaseModel):
    step: int
    answer: str


def _session_view(rt: SessionRuntime) -> dict:
    pending = rt.session.pending_step
    return {
        "session_id": rt.session_id,
        "state": rt.state(),
        "case_id": rt.case.case_id if rt.case else None,
        "pending": None
        if pending is None or rt.state() != SessionState.AWAITING_PHYSICIAN.value
        else {"step": pending.index, "question": pending.question},
        "transcript": transcript_to_dict(rt.session.transcript),
    }


def _report_view(rt: SessionRuntime) -> dict:
    transcript = rt.session.transcript
    matched = None
    final_answer = None
    effectiveness = None
    if transcript.final is not None:
        final_answer = extract_final_answer(transcript)
        if rt.case is not None:
            matched = judge_accuracy(final_answer, rt.case.gold_answer).matched
    if rt.case is not None:
        effectiveness = op_effectiveness(transcript, rt.case)
    return {
        "session_id": rt.session_id,
        "state": rt.state(),
        "op_count": count_physician_ops(transcript),
        "final_answer": final_answer,
        "matched": matched,
        "op_effectiveness": effectiveness,
    }


def create_app(manager: SessionManager) -> FastAPI:
    app = FastAPI(title="dxkit service")

    def require_token(request: Request) -> None:
        token = os.environ.get(manager.cfg.token_env, "")
        if not token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "sessions": len(manager.list())}

    @app.post("/sessions", dependencies=[Depends(require_token)])
    def start_session(body: StartSessionBody) -> dict:
        if body.case_id is not None:
            if manager.casebank is None or manager.casebank.get(body.case_id) is None:
                raise HTTPException(status_code=404, detail=f"unknown case {body.case_id!r}")
            case = manager.casebank.get(body.case_id)
            adhoc = None
        else:
            if not body.chief_complaint or not body.question:
                raise HTTPException(
                    status_code=422,
                    detail="need case_id or both chief_complaint and question",
                )
            case = None
            if body.gold_answer and body.clinical_info:
                case = CaseRecord(
                    case_id=f"adhoc-{uuid.uuid4().hex[:8]}",
                    question=body.question,
                    chief_complaint=body.chief_complaint,
                    clinical_info=ClinicalInfoDoc.from_dict(
                        {"case_id": "adhoc", **body.clinical_info}
                    ),
                    gold_answer=body.gold_answer,
                )
            adhoc = {"chief_complaint": body.chief_complaint, "question": body.question}
        try:
            rt = manager.start(case=case, adhoc=adhoc)
        except DxkitError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return _session_view(rt)

    @app.get("/sessions", dependencies=[Depends(require_token)])
    def list_sessions(state: str | None = None) -> dict:
        views = [_session_view(rt) for rt in manager.list(state)]
        return {"sessions": views}

    @app.get("/sessions/{session_id}", dependencies=[Depends(require_token)])
    def get_session(session_id: str) -> dict:
        try:
            return _session_view(manager.get(session_id))
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session") from None

    @app.post("/sessions/{session_id}/fulfill", dependencies=[Depends(require_token)])
    def fulfill(session_id: str, body: FulfillBody) -> dict:
        try:
            rt = manager.fulfill(session_id, body.step, body.answer)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session") from None
        except PermissionError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        return _session_view(rt)

    @app.get("/sessions/{session_id}/report", dependencies=[Depends(require_token)])
    def report(session_id: str) -> dict:
        try:
            return _report_view(manager.get(session_id))
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session") from None

    return app
