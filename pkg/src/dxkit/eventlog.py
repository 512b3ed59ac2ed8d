"""Append-only JSONL event log for diagnostic sessions.

One file per session, one event per line; replaying a log reconstructs the
session transcript exactly.  Chosen over a database so the accountability
trail stays greppable and tamper-evident.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .errors import InvariantViolation
from .protocol import FinalDiagnosis, Responder, Step, Transcript


class EventLog:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.jsonl"

    def append(self, session_id: str, event: dict) -> None:
        with open(self.path_for(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")

    def read(self, session_id: str) -> list[dict]:
        path = self.path_for(session_id)
        if not path.exists():
            return []
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def session_ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.jsonl"))


def replay_transcript(events: Iterable[dict]) -> Transcript:
    """Fold a session's event stream back into its transcript."""
    transcript: Transcript | None = None
    for event in events:
        kind = event["type"]
        if kind == "session_started":
            transcript = Transcript(instruction=event["instruction"])
        elif transcript is None:
            raise InvariantViolation("event stream does not start with session_started")
        elif kind == "step_added":
            s = event["step"]
            transcript.steps.append(
                Step(
                    index=s["index"],
                    deep_think=s["deep_think"],
                    question=s["question"],
                    responder=Responder(s["responder"]),
                    answer=s.get("answer"),
                )
            )
        elif kind == "answer_added":
            transcript.steps[event["step"] - 1].answer = event["answer"]
        elif kind == "final_added":
            transcript.final = FinalDiagnosis.from_body(event["body"])
        elif kind == "references_added":
            transcript.references = sorted(
                [(int(k), c) for k, c in event["references"]], key=lambda kv: kv[0]
            )
        elif kind == "state_changed":
            pass  # state is derived; kept in the log for audit only
        else:
            raise InvariantViolation(f"unknown event type {kind!r}")
    if transcript is None:
        raise InvariantViolation("empty event stream")
    return transcript
