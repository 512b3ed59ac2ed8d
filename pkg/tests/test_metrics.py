import random

import pytest

from conftest import ScriptedJudge, make_case
from dxkit.errors import (
    EmptyInput,
    InvariantViolation,
    JudgeUnavailable,
    NoPhysicianStep,
    ScoreOutOfRange,
)
from dxkit.metrics import (
    AttributionLabel,
    CaseResult,
    attribute_misdiagnosis,
    build_report,
    double_blind_score,
    evaluate_attribution,
    judge_accuracy,
    mutate_text,
    normalize_answer,
    op_effectiveness,
    perturb_step,
)
from dxkit.protocol import FinalDiagnosis, Responder, Step, Transcript, emit_transcript


class TestJudgeAccuracy:
    def test_normalization_handles_case_and_punctuation(self):
        assert judge_accuracy("Acute pancreatitis.", "acute pancreatitis").matched

    def test_article_stripping(self):
        assert judge_accuracy("a pulmonary embolism", "the pulmonary embolism").matched

    def test_distinct_diagnoses_do_not_match(self):
        assert not judge_accuracy("sepsis", "acute pancreatitis").matched

    def test_model_mode_stores_rationale(self):
        judge = ScriptedJudge(replies=["true\nsame condition, different wording"])
        verdict = judge_accuracy("MI", "myocardial infarction", mode="model", judge=judge)
        assert verdict.matched
        assert "different wording" in verdict.rationale

    def test_model_mode_false(self):
        judge = ScriptedJudge(replies=["false\ndifferent organ"])
        assert not judge_accuracy("x", "y", mode="model", judge=judge).matched

    def test_empty_inputs_rejected(self):
        with pytest.raises(InvariantViolation):
            judge_accuracy("", "gold")

    def test_normalize_answer(self):
        assert normalize_answer("The Acute, Pancreatitis!") == "acute pancreatitis"


def transcript_with_ops(op_specs, final_answer="hypertension"):
    """op_specs: list of (question, answer) physician pairs; LLM filler between."""
    steps = []
    i = 0
    for question, answer in op_specs:
        i += 1
        steps.append(Step(i, "think", question, Responder.PHYSICIAN, answer))
    i += 1
    steps.append(Step(i, "think", "what fits?", Responder.LLM, "synthesis"))
    final = FinalDiagnosis.from_body(f"Done [1].\nSo the final answer is {final_answer}.")
    return Transcript(instruction="c\nq", steps=steps, final=final)


class TestOpEffectiveness:
    def test_two_of_three_matched(self):
        case = make_case("c")
        t = transcript_with_ops(
            [
                ("Check the blood pressure reading", "blood pressure 150/95 heart rate 88"),
                ("Review the smoking history notes", "smoker for ten years with morning headaches"),
                ("Order cranial ultrasound scan", "Not mentioned"),
            ]
        )
        assert op_effectiveness(t, case) == pytest.approx(2 / 3)

    def test_zero_ops_scores_one(self):
        case = make_case("c")
        t = transcript_with_ops([])
        assert op_effectiveness(t, case) == 1.0

    def test_hand_enumerated_fixture(self):
        case = make_case("c")
        specs = [
            ("Check the blood pressure reading", "blood pressure 150/95 heart rate 88"),  # useful
            ("Order cranial ultrasound scan", "Not mentioned"),                           # wasted
            ("Order chest radiograph today", "Not mentioned"),                            # wasted
            ("Ask about morning headaches history", "smoker for ten years with morning headaches"),  # useful
        ]
        t = transcript_with_ops(specs)
        # manual enumeration: 2 useful / 4 requested
        assert op_effectiveness(t, case) == pytest.approx(0.5)

    def test_in_unit_interval_always(self):
        case = make_case("c")
        rng = random.Random(1)
        for _ in range(20):
            specs = []
            for _ in range(rng.randint(0, 5)):
                if rng.random() < 0.5:
                    specs.append(("Check the blood pressure reading", "blood pressure 150/95"))
                else:
                    specs.append(("Order cranial ultrasound scan", "Not mentioned"))
            value = op_effectiveness(transcript_with_ops(specs), case)
            assert 0.0 <= value <= 1.0


class TestDoubleBlindScore:
    def test_mean_of_two_judges(self):
        judges = (ScriptedJudge(replies=["8"]), ScriptedJudge(replies=["6\nclose match"]))
        assert double_blind_score("dx a", "dx b", judges) == 7.0

    def test_score_out_of_range(self):
        judges = (ScriptedJudge(replies=["11"]), ScriptedJudge(replies=["5"]))
        with pytest.raises(ScoreOutOfRange):
            double_blind_score("a", "b", judges)

    def test_identical_diagnoses_rubric(self):
        rubric = lambda prompt: "10" if "same text" in prompt else "0"
        judges = (ScriptedJudge(fn=rubric), ScriptedJudge(fn=rubric))
        assert double_blind_score("same text", "same text", judges) == 10.0

    def test_unparseable_judge_reply(self):
        judges = (ScriptedJudge(replies=["no idea"]), ScriptedJudge(replies=["5"]))
        with pytest.raises(JudgeUnavailable):
            double_blind_score("a", "b", judges)


def correct_transcript():
    steps = [
        Step(1, "reason about onset", "what explains it?", Responder.LLM, "a vascular cause"),
        Step(2, "need the numbers", "Take the blood pressure", Responder.PHYSICIAN, "BP 128/79"),
        Step(3, "synthesize", "which diagnosis?", Responder.LLM, "fits hypertension"),
    ]
    final = FinalDiagnosis.from_body("Steps [1] [2] [3] agree.\nSo the final answer is hypertension.")
    return Transcript(instruction="headaches\nwhat is it?", steps=steps, final=final)


class TestMutateText:
    def test_number_swap_rule(self):
        assert mutate_text("BP 128/79") == "BP 182/97"

    def test_negation_rule(self):
        assert mutate_text("The rhythm is regular") == "The rhythm is not regular"

    def test_fallback_prefix(self):
        assert mutate_text("clear lungs").startswith("It is not the case that")


class TestPerturbStep:
    def test_llm_target_mutates_deep_think(self):
        record = perturb_step(correct_transcript(), 1, AttributionLabel.LLM)
        assert record.label is AttributionLabel.LLM
        assert len(record.mutations) == 1
        assert record.mutations[0].part == "deep_think"
        assert record.transcript.steps[0].deep_think != "reason about onset"

    def test_physician_target_mutates_answer_with_number_swap(self):
        record = perturb_step(correct_transcript(), 2, AttributionLabel.PHYSICIAN)
        assert record.transcript.steps[1].answer == "BP 182/97"
        assert record.mutations[0].part == "answer"

    def test_physician_target_without_physician_step(self):
        t = correct_transcript()
        for s in t.steps:
            s.responder = Responder.LLM
        with pytest.raises(NoPhysicianStep):
            perturb_step(t, 1, AttributionLabel.PHYSICIAN)

    def test_both_target_mutates_exactly_two_spans(self):
        record = perturb_step(correct_transcript(), 1, AttributionLabel.BOTH)
        assert len(record.mutations) == 2
        assert {m.part for m in record.mutations} == {"deep_think", "answer"}

    def test_original_untouched_and_output_emittable(self):
        t = correct_transcript()
        before = emit_transcript(t)
        record = perturb_step(t, 2, AttributionLabel.PHYSICIAN)
        assert emit_transcript(t) == before
        emit_transcript(record.transcript)  # perturbed output still valid


def planted_label_judge(records):
    """Oracle judge: recognizes each perturbed transcript and echoes its label."""
    key = {emit_transcript(r.transcript): r.label.value for r in records}

    def fn(prompt):
        for text, label in key.items():
            if text in prompt:
                return label
        raise AssertionError("prompt does not contain a known transcript")

    return ScriptedJudge(fn=fn)


def make_labeled_records(n=30):
    labels = [AttributionLabel.LLM, AttributionLabel.PHYSICIAN, AttributionLabel.BOTH]
    records = []
    for i in range(n):
        records.append(perturb_step(correct_transcript(), 1 + i % 3, labels[i % 3]))
    return records


class TestAttribution:
    def test_label_parse(self):
        judge = ScriptedJudge(replies=["Both of them contributed"])
        assert attribute_misdiagnosis(correct_transcript(), judge) is AttributionLabel.BOTH

    def test_oracle_judge_perfect_scores(self):
        records = make_labeled_records(30)
        report = evaluate_attribution(records, planted_label_judge(records))
        for label in ("LLM", "Physician", "Both"):
            assert report.precision[label] == 1.0
            assert report.recall[label] == 1.0

    def test_constant_judge_confusion_matrix(self):
        records = make_labeled_records(30)  # 10 per class
        report = evaluate_attribution(records, ScriptedJudge(fn=lambda p: "Physician"))
        # arithmetic oracle: all 30 predicted Physician
        assert report.recall["Physician"] == 1.0
        assert report.precision["Physician"] == pytest.approx(10 / 30)
        assert report.recall["LLM"] == 0.0 and report.precision["LLM"] == 0.0
        assert sum(report.confusion.values()) == 30

    def test_empty_record_set_rejected(self):
        with pytest.raises(EmptyInput):
            evaluate_attribution([], ScriptedJudge(replies=[]))


class TestReport:
    def rows(self):
        return [
            CaseResult("a", True, 2, 1.0, "hypertension", "final", "cardio", "diagnosis"),
            CaseResult("b", False, 0, 1.0, None, "capped", "cardio", "diagnosis"),
            CaseResult("c", True, 4, 0.5, "flu", "final", "pulmo", "etiology"),
        ]

    def test_aggregates_recomputable(self):
        report = build_report(self.rows(), n_resamples=50)
        report.verify()
        assert report.accuracy == pytest.approx(2 / 3)
        assert report.op_count_mean == pytest.approx(2.0)
        assert report.op_effectiveness_mean == pytest.approx(2.5 / 3)

    def test_breakdowns(self):
        report = build_report(self.rows(), n_resamples=50)
        assert report.by_department["cardio"]["n"] == 2
        assert report.by_task["etiology"]["accuracy"] == 1.0

    def test_csv_has_all_rows(self):
        report = build_report(self.rows(), n_resamples=50)
        lines = report.to_csv().strip().splitlines()
        assert len(lines) == 4  # header + 3 rows

    def test_empty_rows_rejected(self):
        with pytest.raises(EmptyInput):
            build_report([])

    def test_breakdown_csv_lists_all_groups(self):
        report = build_report(self.rows(), n_resamples=50)
        lines = report.breakdown_csv().strip().splitlines()
        assert lines[0].startswith("group,label,n,")
        labels = {tuple(l.split(",")[:2]) for l in lines[1:]}
        assert ("department", "cardio") in labels
        assert ("task", "etiology") in labels


class TestCompareReports:
    def paired_reports(self):
        rows_a = [
            CaseResult("a", True, 1, 1.0, None, "final"),
            CaseResult("b", True, 2, 1.0, None, "final"),
            CaseResult("c", False, 3, 0.5, None, "final"),
        ]
        rows_b = [
            CaseResult("a", True, 4, 0.5, None, "final"),
            CaseResult("b", False, 5, 0.5, None, "final"),
            CaseResult("c", False, 6, 0.0, None, "final"),
        ]
        return build_report(rows_a, n_resamples=20), build_report(rows_b, n_resamples=20)

    def test_discordant_counts_and_pvalues(self):
        from dxkit.metrics import compare_reports
        from dxkit.stats import mann_whitney_two_sided, mcnemar_two_sided

        a, b = self.paired_reports()
        out = compare_reports(a, b)
        # one case (b) flipped from matched to not; none the other way
        assert out["accuracy"]["b"] == 1 and out["accuracy"]["c"] == 0
        assert out["accuracy"]["p_mcnemar"] == mcnemar_two_sided(1, 0)
        want_u, want_p = mann_whitney_two_sided([1, 2, 3], [4, 5, 6])
        assert (out["op_count"]["U"], out["op_count"]["p_mann_whitney"]) == (want_u, want_p)

    def test_mismatched_case_sets_rejected(self):
        from dxkit.metrics import compare_reports

        a, _ = self.paired_reports()
        other = build_report([CaseResult("zz", True, 0, 1.0, None, "final")], n_resamples=20)
        with pytest.raises(InvariantViolation):
            compare_reports(a, other)

    def test_report_dict_round_trip(self):
        from dxkit.metrics import report_from_dict

        a, _ = self.paired_reports()
        rebuilt = report_from_dict(a.to_dict())
        assert rebuilt.accuracy == a.accuracy
        assert [r.case_id for r in rebuilt.rows] == [r.case_id for r in a.rows]
