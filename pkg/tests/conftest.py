"""Shared fixtures: scripted model doubles and the 10-case fixture world."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # transcript_gen, fixture_world

from dxkit.casebank import CaseRecord
from dxkit.oracle import ClinicalInfoDoc


class ScriptedDirector:
    """Returns canned block texts in call order; records every prompt."""

    def __init__(self, texts):
        self.texts = list(texts)
        self.prompts = []
        self.cursor = 0

    def generate(self, prefix, sampling):
        self.prompts.append((prefix, sampling))
        if self.cursor >= len(self.texts):
            raise AssertionError("scripted director exhausted")
        text = self.texts[self.cursor]
        self.cursor += 1
        return text


class SeedKeyedDirector:
    """Returns texts keyed by sampling seed (for k-way sampling tests)."""

    def __init__(self, by_seed):
        self.by_seed = dict(by_seed)
        self.calls = []

    def generate(self, prefix, sampling):
        self.calls.append((prefix, sampling.seed))
        return self.by_seed[sampling.seed]


class ScriptedJudge:
    """complete() pops canned replies, or maps prompts through a function."""

    def __init__(self, replies=None, fn=None):
        self.replies = list(replies or [])
        self.fn = fn
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        if self.fn is not None:
            return self.fn(prompt)
        if not self.replies:
            raise AssertionError("scripted judge exhausted")
        return self.replies.pop(0)


class ScriptedAssistant:
    """fulfill() pops canned answers and records requests."""

    def __init__(self, answers):
        self.answers = list(answers)
        self.requests = []

    def fulfill(self, request, case_ctx):
        self.requests.append(request)
        if not self.answers:
            raise AssertionError("scripted assistant exhausted")
        return self.answers.pop(0)


def deep_block(i, text="Weigh the findings so far and pick the next move."):
    return f"[Deep Think] {i}:\n{text}"


def question_block(i, tag, text):
    return f"[Question] {i} <{tag}>:\n{text}"


def answer_block(i, text):
    return f"[Answer] {i}:\n{text}"


def llm_step(i, question="What condition fits best?", answer="A common benign cause fits."):
    return "\n\n".join([deep_block(i), question_block(i, "LLM", question), answer_block(i, answer)])


def physician_step(i, question="Measure the blood pressure now"):
    return "\n\n".join([deep_block(i), question_block(i, "Physician", question)])


def final_block(answer="hypertension", cites=(1,)):
    cite_str = " ".join(f"[{k}]" for k in cites)
    return f"[Final Diagnosis]:\nThe findings {cite_str} settle it.\nSo the final answer is {answer}."


def make_case(case_id, gold="hypertension", sections=None, department=None, task=None):
    sections = sections or [
        ("Vitals", "blood pressure 150/95 heart rate 88"),
        ("History", "smoker for ten years with morning headaches"),
    ]
    return CaseRecord(
        case_id=case_id,
        question="What disease does the patient most likely have?",
        chief_complaint="I keep getting headaches and feel worn out.",
        clinical_info=ClinicalInfoDoc(case_id=case_id, sections=sections),
        gold_answer=gold,
        department=department,
        task=task,
    )


@pytest.fixture
def simple_case():
    return make_case("case-simple")


@pytest.fixture
def fixture_world(tmp_path):
    """The scripted 10-case world: cases.jsonl + replay.jsonl + answer key."""
    from fixture_world import build_world

    return build_world(tmp_path)
