import json
import random

import pytest

from conftest import (
    ScriptedAssistant,
    ScriptedDirector,
    final_block,
    llm_step,
    make_case,
    physician_step,
)
from dxkit.engine import (
    DiagnosticSession,
    ReplayScript,
    SamplingParams,
    SessionConfig,
    SessionState,
    count_physician_ops,
    run_session,
)
from dxkit.errors import DirectorProtocolError, InvariantViolation
from dxkit.protocol import Responder
from transcript_gen import make_transcript


class TestSamplingParams:
    def test_sampling_defaults(self):
        p = SamplingParams()
        assert (p.temperature, p.top_p, p.top_k) == (0.6, 0.95, 20)

    def test_evaluation_mode_is_greedy(self):
        assert SamplingParams.evaluation().temperature == 0.0

    def test_invalid_top_p(self):
        with pytest.raises(InvariantViolation):
            SamplingParams(top_p=0.0)


class TestRunSession:
    def test_two_llm_steps_then_final(self, simple_case):
        director = ScriptedDirector([llm_step(1), llm_step(2), final_block(cites=(1, 2))])
        assistant = ScriptedAssistant([])
        transcript, trace = run_session(simple_case, director, assistant)
        assert transcript.n_steps == 2
        assert transcript.final is not None
        assert assistant.requests == []
        assert trace.director_calls == 3

    def test_physician_step_routes_exactly_one_call(self, simple_case):
        director = ScriptedDirector(
            [physician_step(1, "Check the blood pressure"), final_block(cites=(1,))]
        )
        assistant = ScriptedAssistant(["BP 150/95"])
        transcript, trace = run_session(simple_case, director, assistant)
        assert assistant.requests == ["Check the blood pressure"]
        assert transcript.steps[0].answer == "BP 150/95"
        assert [c.step for c in trace.assistant_calls] == [1]

    def test_step_cap_reported_in_trace(self, simple_case):
        director = ScriptedDirector([llm_step(i) for i in range(1, 6)])
        transcript, trace = run_session(
            simple_case, director, ScriptedAssistant([]), SessionConfig(step_cap=5)
        )
        assert transcript.final is None
        assert transcript.n_steps == 5
        assert trace.step_cap_reached

    def test_empty_complaint_rejected(self, simple_case):
        simple_case.chief_complaint = " "
        with pytest.raises(InvariantViolation):
            run_session(simple_case, ScriptedDirector([]), ScriptedAssistant([]))

    def test_routing_soundness_bijective_and_ordered(self, simple_case):
        director = ScriptedDirector(
            [
                physician_step(1, "first request"),
                llm_step(2),
                physician_step(3, "second request"),
                final_block(cites=(1, 2, 3)),
            ]
        )
        assistant = ScriptedAssistant(["answer one", "answer two"])
        transcript, trace = run_session(simple_case, director, assistant)
        physician_indices = [s.index for s in transcript.steps if s.responder is Responder.PHYSICIAN]
        assert [c.step for c in trace.assistant_calls] == physician_indices
        assert [c.request for c in trace.assistant_calls] == ["first request", "second request"]

    def test_assistant_transport_failure_raised_as_assistant_unavailable(self, simple_case):
        from dxkit.errors import AssistantUnavailable, JudgeUnavailable

        class BrokenAssistant:
            def fulfill(self, request, case_ctx):
                raise JudgeUnavailable("judge endpoint down")

        director = ScriptedDirector([physician_step(1)])
        with pytest.raises(AssistantUnavailable):
            run_session(simple_case, director, BrokenAssistant())

    def test_replay_determinism(self, simple_case):
        blocks = [physician_step(1, "Check the blood pressure"), llm_step(2), final_block(cites=(1, 2))]
        runs = []
        for _ in range(2):
            transcript, _ = run_session(
                simple_case, ScriptedDirector(list(blocks)), ScriptedAssistant(["BP 150/95"])
            )
            runs.append(transcript)
        assert runs[0] == runs[1]


class TestRetries:
    def test_malformed_output_repaired_within_retry_limit(self, simple_case):
        director = ScriptedDirector(["not a block at all", llm_step(1), final_block()])
        transcript, trace = run_session(
            simple_case, director, ScriptedAssistant([]), SessionConfig(retry_limit=2)
        )
        assert transcript.n_steps == 1
        assert trace.steps[0].retries == 1
        # the repair prompt told the director what to fix
        assert "could not be parsed" in director.prompts[1][0]

    def test_protocol_error_after_retries_exhausted(self, simple_case):
        director = ScriptedDirector(["garbage", "garbage", "garbage"])
        with pytest.raises(DirectorProtocolError):
            run_session(simple_case, director, ScriptedAssistant([]), SessionConfig(retry_limit=2))

    def test_llm_step_without_answer_is_protocol_error(self, simple_case):
        bad = "[Deep Think] 1:\nthink\n\n[Question] 1 <LLM>:\nno answer follows"
        director = ScriptedDirector([bad, bad, bad])
        with pytest.raises(DirectorProtocolError):
            run_session(simple_case, director, ScriptedAssistant([]), SessionConfig(retry_limit=2))


class TestDiagnosticSessionStates:
    def test_awaiting_then_resume(self):
        director = ScriptedDirector([physician_step(1), final_block(cites=(1,))])
        session = DiagnosticSession("complaint\nquestion", director, SessionConfig())
        assert session.advance() is SessionState.AWAITING_PHYSICIAN
        session.provide_answer("BP 150/95", source="human")
        assert session.state is SessionState.RUNNING
        assert session.advance() is SessionState.FINAL

    def test_blank_physician_answer_becomes_not_mentioned(self):
        director = ScriptedDirector([physician_step(1), final_block(cites=(1,))])
        session = DiagnosticSession("complaint\nquestion", director, SessionConfig())
        session.advance()
        session.provide_answer("   ", source="human")
        assert session.transcript.steps[0].answer == "Not mentioned"

    def test_provide_answer_outside_awaiting_rejected(self):
        session = DiagnosticSession("c\nq", ScriptedDirector([]), SessionConfig())
        with pytest.raises(InvariantViolation):
            session.provide_answer("x")


class TestCountPhysicianOps:
    def test_all_llm_is_zero(self):
        rng = random.Random(3)
        t = make_transcript(rng, n_steps=4, with_final=True)
        for s in t.steps:
            s.responder = Responder.LLM
        assert count_physician_ops(t) == 0

    def test_mixed_tags(self):
        rng = random.Random(4)
        t = make_transcript(rng, n_steps=4, with_final=True)
        tags = [Responder.LLM, Responder.PHYSICIAN, Responder.PHYSICIAN, Responder.LLM]
        for s, tag in zip(t.steps, tags):
            s.responder = tag
        assert count_physician_ops(t) == 2

    def test_matches_brute_force_recount(self):
        rng = random.Random(6)
        for _ in range(20):
            t = make_transcript(rng, n_steps=10)
            brute = 0  # independent linear scan
            for s in t.steps:
                if s.responder.value == "Physician":
                    brute += 1
            assert count_physician_ops(t) == brute


class TestReplayScript:
    def test_tagged_entries_scope_to_case(self, tmp_path):
        path = tmp_path / "replay.jsonl"
        rows = [
            {"case_id": "a", "text": "A1"},
            {"case_id": "b", "text": "B1"},
            {"case_id": "a", "text": "A2"},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        script = ReplayScript.load(path)
        director = script.director_for("a")
        assert director.generate("", SamplingParams()) == "A1"
        assert director.generate("", SamplingParams()) == "A2"

    def test_exhaustion_raises_protocol_error(self, tmp_path):
        path = tmp_path / "replay.jsonl"
        path.write_text(json.dumps({"text": "only"}) + "\n")
        director = ReplayScript.load(path).director_for()
        director.generate("", SamplingParams())
        with pytest.raises(DirectorProtocolError):
            director.generate("", SamplingParams())
