"""Evaluation metrics and the misdiagnosis-accountability harness.

Covers diagnosis accuracy (normalized string match or judge model),
physician-operation counts and effectiveness, double-blind alignment
scoring, step perturbation with planted attribution labels, and the
three-way attribution report with per-class precision/recall.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum

from . import stats
from .casebank import CaseBank, CaseRecord
from .engine import AssistantPort, SessionConfig, count_physician_ops, run_session
from .errors import (
    EmptyInput,
    InvariantViolation,
    JudgeUnavailable,
    NoPhysicianStep,
    ScoreOutOfRange,
)
from .oracle import NOT_MENTIONED, OVERLAP_THRESHOLD, best_section
from .prompts import load_prompt
from .protocol import Responder, Transcript, emit_transcript, extract_final_answer

_ARTICLES = {"a", "an", "the"}
_PUNCT_RE = re.compile(r"[^\w\s]")
_NUMBER_RE = re.compile(r"\d{2,}")
_SCORE_RE = re.compile(r"-?\d+(?:\.\d+)?")


@dataclass
class JudgeVerdict:
    matched: bool
    rationale: str
    judge_id: str


def normalize_answer(text: str) -> str:
    words = _PUNCT_RE.sub(" ", text.lower()).split()
    return " ".join(w for w in words if w not in _ARTICLES)


def judge_accuracy(
    predicted: str, gold: str, mode: str = "normalized", judge=None, judge_id: str = "judge"
) -> JudgeVerdict:
    """Does the predicted short diagnosis match the gold answer?"""
    if not predicted.strip() or not gold.strip():
        raise InvariantViolation("predicted and gold answers must be non-empty")
    if mode == "normalized":
        a, b = normalize_answer(predicted), normalize_answer(gold)
        return JudgeVerdict(matched=a == b, rationale=f"{a!r} vs {b!r}", judge_id="normalized")
    if mode == "model":
        if judge is None:
            raise JudgeUnavailable("model mode needs a judge client")
        prompt = load_prompt("accuracy_judge").format(predicted=predicted, gold=gold)
        try:
            reply = judge.complete(prompt)
        except Exception as exc:
            raise JudgeUnavailable(str(exc)) from exc
        return JudgeVerdict(
            matched=reply.strip().lower().startswith("true"),
            rationale=reply.strip(),
            judge_id=judge_id,
        )
    raise InvariantViolation(f"unknown accuracy mode {mode!r}")


def op_effectiveness(t: Transcript, case: CaseRecord, mode: str = "lexical", judge=None) -> float:
    """Fraction of physician requests that were actually useful.

    Useful = the fulfilled answer is not "Not mentioned" and the request
    matches case-report content.  By convention a transcript with no
    physician requests scores 1.0 (nothing was wasted).
    """
    physician_steps = [s for s in t.steps if s.responder is Responder.PHYSICIAN]
    if not physician_steps:
        return 1.0
    useful = 0
    for step in physician_steps:
        answer = (step.answer or "").strip()
        if answer == "" or answer == NOT_MENTIONED:
            continue
        if mode == "lexical":
            _idx, score = best_section(step.question, case.clinical_info)
            if score >= OVERLAP_THRESHOLD:
                useful += 1
        elif mode == "model":
            if judge is None:
                raise JudgeUnavailable("model mode needs a judge client")
            prompt = load_prompt("usefulness_judge").format(
                request=step.question, case_report=case.clinical_info.as_text()
            )
            try:
                reply = judge.complete(prompt)
            except Exception as exc:
                raise JudgeUnavailable(str(exc)) from exc
            if reply.strip().lower().startswith("true"):
                useful += 1
        else:
            raise InvariantViolation(f"unknown effectiveness mode {mode!r}")
    return useful / len(physician_steps)


def _parse_score(reply: str) -> float:
    m = _SCORE_RE.search(reply)
    if m is None:
        raise JudgeUnavailable(f"judge reply has no numeric score: {reply!r}")
    return float(m.group(0))


def double_blind_score(llm_diag: str, specialist_diag: str, judges) -> float:
    """Mean of two independent judges' 0-10 alignment scores.

    Blinding is a pipeline property: both diagnoses must have been written
    before this call, so neither author ever saw the other's text; the
    judges see both.
    """
    if len(judges) != 2:
        raise InvariantViolation("double-blind scoring needs exactly two judges")
    prompt = load_prompt("score_judge").format(
        llm_diagnosis=llm_diag, specialist_diagnosis=specialist_diag
    )
    scores = []
    for judge in judges:
        try:
            reply = judge.complete(prompt)
        except Exception as exc:
            raise JudgeUnavailable(str(exc)) from exc
        score = _parse_score(reply)
        if not 0.0 <= score <= 10.0:
            raise ScoreOutOfRange(f"score {score} outside [0, 10]")
        scores.append(score)
    return sum(scores) / 2.0


# --- accountability: perturbation and attribution ---

class AttributionLabel(Enum):
    LLM = "LLM"
    PHYSICIAN = "Physician"
    BOTH = "Both"


@dataclass
class Mutation:
    step: int
    part: str  # deep_think | question | answer
    before: str
    after: str


@dataclass
class PerturbationRecord:
    transcript: Transcript
    label: AttributionLabel
    mutations: list[Mutation]


def _swap_last_two_digits(text: str) -> str:
    def swap(m: re.Match) -> str:
        s = m.group(0)
        return s[:-2] + s[-1] + s[-2]

    return _NUMBER_RE.sub(swap, text)


def mutate_text(text: str) -> str:
    """Deterministic factual inconsistency: number swap, else negation."""
    if _NUMBER_RE.search(text):
        return _swap_last_two_digits(text)
    for verb in (" is ", " are ", " was ", " were "):
        if verb in text:
            return text.replace(verb, verb.rstrip() + " not ", 1)
    return "It is not the case that " + text


def _model_mutate(text: str, judge) -> str:
    try:
        rewritten = judge.complete(load_prompt("perturb_rewrite").format(passage=text)).strip()
    except Exception as exc:
        raise JudgeUnavailable(str(exc)) from exc
    return rewritten or mutate_text(text)


def perturb_step(
    t: Transcript,
    step: int,
    target: AttributionLabel,
    mutator: str = "deterministic",
    judge=None,
) -> PerturbationRecord:
    """Plant a factual inconsistency attributable to the target party.

    LLM perturbations rewrite the step's deep think (always model text);
    physician perturbations rewrite a physician-provided answer, preferring
    the given step and falling back to the first physician step.
    """
    if not 1 <= step <= t.n_steps:
        raise InvariantViolation(f"step {step} outside 1..{t.n_steps}")
    if mutator == "deterministic":
        mutate = mutate_text
    elif mutator == "model":
        mutate = lambda text: _model_mutate(text, judge)  # noqa: E731
    else:
        raise InvariantViolation(f"unknown mutator {mutator!r}")

    steps = [replace(s) for s in t.steps]
    mutations: list[Mutation] = []

    def mutate_llm_part() -> None:
        target_step = steps[step - 1]
        before = target_step.deep_think
        target_step.deep_think = mutate(before)
        mutations.append(Mutation(target_step.index, "deep_think", before, target_step.deep_think))

    def mutate_physician_part() -> None:
        candidates = [s for s in steps if s.responder is Responder.PHYSICIAN and s.completed]
        if not candidates:
            raise NoPhysicianStep("transcript has no completed physician step")
        chosen = steps[step - 1]
        if chosen.responder is not Responder.PHYSICIAN or not chosen.completed:
            chosen = candidates[0]
        before = chosen.answer
        chosen.answer = mutate(before)
        mutations.append(Mutation(chosen.index, "answer", before, chosen.answer))

    if target is AttributionLabel.LLM:
        mutate_llm_part()
    elif target is AttributionLabel.PHYSICIAN:
        mutate_physician_part()
    elif target is AttributionLabel.BOTH:
        mutate_physician_part()  # raises before any mutation if impossible
        mutate_llm_part()
    else:
        raise InvariantViolation(f"unknown target {target!r}")

    perturbed = Transcript(
        instruction=t.instruction,
        steps=steps,
        final=replace(t.final) if t.final is not None else None,
        references=list(t.references),
    )
    return PerturbationRecord(transcript=perturbed, label=target, mutations=mutations)


def attribute_misdiagnosis(perturbed: Transcript, judge) -> AttributionLabel:
    """Ask the judge who caused the misdiagnosis: LLM, Physician, or Both."""
    prompt = load_prompt("attribution_judge").format(transcript=emit_transcript(perturbed))
    try:
        reply = judge.complete(prompt)
    except Exception as exc:
        raise JudgeUnavailable(str(exc)) from exc
    lowered = reply.lower()
    if re.search(r"\bboth\b", lowered):
        return AttributionLabel.BOTH
    if re.search(r"\bphysician\b", lowered):
        return AttributionLabel.PHYSICIAN
    if re.search(r"\bllm\b", lowered):
        return AttributionLabel.LLM
    raise JudgeUnavailable(f"could not parse attribution label from {reply!r}")


@dataclass
class AccountabilityReport:
    confusion: dict[tuple[str, str], int]
    precision: dict[str, float]
    recall: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "confusion": {f"{t}->{p}": n for (t, p), n in sorted(self.confusion.items())},
            "precision": self.precision,
            "recall": self.recall,
        }


def evaluate_attribution(records, judge) -> AccountabilityReport:
    """Per-class precision/recall of the attribution judge on labeled fixtures."""
    records = list(records)
    if not records:
        raise EmptyInput("no labeled perturbation records")
    confusion: dict[tuple[str, str], int] = {}
    for record in records:
        predicted = attribute_misdiagnosis(record.transcript, judge)
        key = (record.label.value, predicted.value)
        confusion[key] = confusion.get(key, 0) + 1
    labels = [l.value for l in AttributionLabel]
    precision, recall = {}, {}
    for label in labels:
        tp = confusion.get((label, label), 0)
        predicted_n = sum(confusion.get((t, label), 0) for t in labels)
        actual_n = sum(confusion.get((label, p), 0) for p in labels)
        precision[label] = tp / predicted_n if predicted_n else 0.0
        recall[label] = tp / actual_n if actual_n else 0.0
    return AccountabilityReport(confusion=confusion, precision=precision, recall=recall)


# --- batch evaluation report ---

@dataclass
class CaseResult:
    case_id: str
    matched: bool
    op_count: int
    op_effectiveness: float
    final_answer: str | None
    state: str
    department: str | None = None
    task: str | None = None

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "matched": self.matched,
            "op_count": self.op_count,
            "op_effectiveness": self.op_effectiveness,
            "final_answer": self.final_answer,
            "state": self.state,
            "department": self.department,
            "task": self.task,
        }


@dataclass
class MetricReport:
    rows: list[CaseResult]
    accuracy: float
    op_count_mean: float
    op_effectiveness_mean: float
    ci: dict[str, tuple[float, float]] = field(default_factory=dict)
    by_department: dict[str, dict] = field(default_factory=dict)
    by_task: dict[str, dict] = field(default_factory=dict)

    def verify(self) -> None:
        """Aggregates must equal recomputation from the per-case rows."""
        n = len(self.rows)
        if n == 0:
            raise EmptyInput("report has no rows")
        checks = (
            (self.accuracy, sum(r.matched for r in self.rows) / n),
            (self.op_count_mean, sum(r.op_count for r in self.rows) / n),
            (self.op_effectiveness_mean, sum(r.op_effectiveness for r in self.rows) / n),
        )
        for have, want in checks:
            if have != want:
                raise InvariantViolation(f"aggregate {have} != recomputed {want}")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "op_count_mean": self.op_count_mean,
            "op_effectiveness_mean": self.op_effectiveness_mean,
            "ci": {k: [lo, hi] for k, (lo, hi) in self.ci.items()},
            "by_department": self.by_department,
            "by_task": self.by_task,
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf,
            fieldnames=[
                "case_id", "matched", "op_count", "op_effectiveness",
                "final_answer", "state", "department", "task",
            ],
        )
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row.to_dict())
        return buf.getvalue()

    def breakdown_csv(self) -> str:
        """Department/task aggregate rows, ready for external heatmap plotting."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["group", "label", "n", "accuracy", "op_count_mean", "op_effectiveness_mean"])
        for group, table in (("department", self.by_department), ("task", self.by_task)):
            for label, cell in table.items():
                writer.writerow(
                    [group, label, cell["n"], cell["accuracy"],
                     cell["op_count_mean"], cell["op_effectiveness_mean"]]
                )
        return buf.getvalue()


def _group_stats(rows: list[CaseResult], key) -> dict[str, dict]:
    grouped: dict[str, list[CaseResult]] = {}
    for row in rows:
        label = key(row)
        if label:
            grouped.setdefault(label, []).append(row)
    out = {}
    for label in sorted(grouped):
        members = grouped[label]
        out[label] = {
            "n": len(members),
            "accuracy": sum(r.matched for r in members) / len(members),
            "op_count_mean": sum(r.op_count for r in members) / len(members),
            "op_effectiveness_mean": sum(r.op_effectiveness for r in members) / len(members),
        }
    return out


def report_from_dict(d: dict, ci_seed: int = 0) -> MetricReport:
    rows = [
        CaseResult(
            case_id=r["case_id"],
            matched=r["matched"],
            op_count=r["op_count"],
            op_effectiveness=r["op_effectiveness"],
            final_answer=r.get("final_answer"),
            state=r.get("state", "final"),
            department=r.get("department"),
            task=r.get("task"),
        )
        for r in d["rows"]
    ]
    return build_report(rows, ci_seed=ci_seed)


def build_report(rows: list[CaseResult], ci_seed: int = 0, n_resamples: int = 1000) -> MetricReport:
    if not rows:
        raise EmptyInput("cannot build a report from zero cases")
    n = len(rows)
    report = MetricReport(
        rows=rows,
        accuracy=sum(r.matched for r in rows) / n,
        op_count_mean=sum(r.op_count for r in rows) / n,
        op_effectiveness_mean=sum(r.op_effectiveness for r in rows) / n,
        ci={
            "accuracy": stats.bootstrap_ci([float(r.matched) for r in rows], seed=ci_seed, n_resamples=n_resamples),
            "op_count_mean": stats.bootstrap_ci([float(r.op_count) for r in rows], seed=ci_seed, n_resamples=n_resamples),
            "op_effectiveness_mean": stats.bootstrap_ci(
                [r.op_effectiveness for r in rows], seed=ci_seed, n_resamples=n_resamples
            ),
        },
        by_department=_group_stats(rows, lambda r: r.department),
        by_task=_group_stats(rows, lambda r: r.task),
    )
    report.verify()
    return report


def evaluate_case(
    case: CaseRecord, director, assistant: AssistantPort, cfg: SessionConfig | None = None,
    accuracy_mode: str = "normalized", judge=None,
) -> CaseResult:
    transcript, trace = run_session(case, director, assistant, cfg)
    matched = False
    final_answer = None
    if transcript.final is not None:
        final_answer = extract_final_answer(transcript)
        matched = judge_accuracy(final_answer, case.gold_answer, mode=accuracy_mode, judge=judge).matched
    state = "final" if transcript.final is not None else "capped"
    return CaseResult(
        case_id=case.case_id,
        matched=matched,
        op_count=count_physician_ops(transcript),
        op_effectiveness=op_effectiveness(transcript, case),
        final_answer=final_answer,
        state=state,
        department=case.department,
        task=case.task,
    )


def evaluate_casebank(
    bank: CaseBank, director_provider, assistant: AssistantPort,
    cfg: SessionConfig | None = None, ci_seed: int = 0,
    accuracy_mode: str = "normalized", judge=None,
) -> MetricReport:
    """Batch-evaluate every case; director_provider(case) supplies a fresh
    director per case (replay scripts need per-case cursors)."""
    rows = [
        evaluate_case(case, director_provider(case), assistant, cfg, accuracy_mode, judge)
        for case in bank
    ]
    return build_report(rows, ci_seed=ci_seed)


def compare_reports(a: MetricReport, b: MetricReport) -> dict:
    """Significance tests between two runs over the same case bank.

    Accuracy uses the two-sided McNemar test on the discordant pairs;
    operation counts and effectiveness use the two-sided Mann-Whitney U
    test.  Cases are paired by case_id and must coincide.
    """
    rows_a = {r.case_id: r for r in a.rows}
    rows_b = {r.case_id: r for r in b.rows}
    if rows_a.keys() != rows_b.keys():
        raise InvariantViolation("reports cover different case sets")
    a_only = sum(1 for cid in rows_a if rows_a[cid].matched and not rows_b[cid].matched)
    b_only = sum(1 for cid in rows_a if rows_b[cid].matched and not rows_a[cid].matched)
    u_ops, p_ops = stats.mann_whitney_two_sided(
        [r.op_count for r in a.rows], [r.op_count for r in b.rows]
    )
    u_eff, p_eff = stats.mann_whitney_two_sided(
        [r.op_effectiveness for r in a.rows], [r.op_effectiveness for r in b.rows]
    )
    return {
        "accuracy": {"b": a_only, "c": b_only, "p_mcnemar": stats.mcnemar_two_sided(a_only, b_only)},
        "op_count": {"U": u_ops, "p_mann_whitney": p_ops},
        "op_effectiveness": {"U": u_eff, "p_mann_whitney": p_eff},
    }
