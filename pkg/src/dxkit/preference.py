"""Step-level strategy preference data: k-way sampling, rewards, ordered
pairs and the preference-optimization loss.

A candidate continuation earns reward 10/max(gamma, 1) when its rolled-out
path reaches a correct final answer (gamma counts physician requests along
the whole path) and 0 otherwise, so correct-and-autonomous strategies
dominate.  Training pairs are all ordered candidate pairs with strictly
greater chosen reward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import engine as eng
from .errors import DirectorProtocolError, EmptyPairList, InvariantViolation, ProtocolError
from .protocol import (
    FinalDiagnosis,
    Responder,
    Step,
    Transcript,
    emit_transcript,
    extract_final_answer,
    parse_fragment,
    parse_transcript,
)

MAX_REWARD = 10.0


def assign_reward(correct: bool, gamma: int) -> float:
    """0 for a wrong path; 10/max(gamma, 1) for a correct one.

    gamma=0 is capped at 10 so a fully autonomous correct path gets the
    maximum reward and the reward stays non-increasing in gamma.
    """
    if gamma < 0:
        raise InvariantViolation("gamma must be >= 0")
    if not correct:
        return 0.0
    return MAX_REWARD / max(gamma, 1)


@dataclass
class RewardedResponse:
    """One sampled step continuation plus its rollout outcome."""

    deep_think: str
    question: str
    answer: str | None
    responder: Responder = Responder.LLM
    reward: float = 0.0
    gamma: int = 0
    correct: bool = False
    rewarded: bool = False

    def key(self) -> tuple[str, str, str | None]:
        return (self.deep_think, self.question, self.answer)


@dataclass
class StepSample:
    """k candidates sampled at one step for a shared prefix."""

    prefix: str
    candidates: list[RewardedResponse]
    final_candidates: list[FinalDiagnosis] = field(default_factory=list)
    has_duplicates: bool = False


@dataclass
class PreferencePair:
    prefix: str
    chosen: RewardedResponse
    rejected: RewardedResponse

    def __post_init__(self):
        if not self.chosen.reward > self.rejected.reward:
            raise InvariantViolation("chosen reward must strictly exceed rejected reward")

    def to_dict(self) -> dict:
        def row(r: RewardedResponse) -> dict:
            return {"d": r.deep_think, "q": r.question, "a": r.answer, "r": r.reward}

        return {"prefix": self.prefix, "chosen": row(self.chosen), "rejected": row(self.rejected)}


def build_pairs(sample: StepSample) -> list[PreferencePair]:
    """All ordered pairs with strictly greater chosen reward; ties yield none."""
    if any(not c.rewarded for c in sample.candidates):
        raise InvariantViolation("candidates must be rewarded before pairing")
    pairs = []
    for chosen in sample.candidates:
        for rejected in sample.candidates:
            if chosen.reward > rejected.reward:
                pairs.append(PreferencePair(sample.prefix, chosen, rejected))
    return pairs


def sample_step_candidates(
    prefix: str,
    director: eng.DirectorClient,
    k: int,
    base_sampling: eng.SamplingParams | None = None,
) -> StepSample:
    """Sample k continuations with seeds base..base+k-1 and parse each.

    Generations that finalize instead of proposing a step are collected
    separately; duplicates among step candidates are allowed but flagged.
    """
    if k < 2:
        raise InvariantViolation("k must be >= 2 to yield any pair")
    base_sampling = base_sampling or eng.SamplingParams()
    expected = parse_transcript(prefix).n_steps + 1

    candidates: list[RewardedResponse] = []
    finals: list[FinalDiagnosis] = []
    for offset in range(k):
        raw = director.generate(prefix, base_sampling.with_seed(base_sampling.seed + offset))
        try:
            kind, block = parse_fragment(raw, expected)
        except ProtocolError as exc:
            raise DirectorProtocolError(f"candidate {offset} unparseable: {exc}") from exc
        if kind == "final":
            finals.append(block)
            continue
        if block.responder is Responder.LLM and not block.completed:
            raise DirectorProtocolError(f"candidate {offset}: LLM step without an answer")
        candidates.append(
            RewardedResponse(
                deep_think=block.deep_think,
                question=block.question,
                answer=block.answer,
                responder=block.responder,
            )
        )
    keys = [c.key() for c in candidates]
    return StepSample(
        prefix=prefix,
        candidates=candidates,
        final_candidates=finals,
        has_duplicates=len(set(keys)) < len(keys),
    )


@dataclass
class RolloutResult:
    sample: StepSample
    best_index: int
    next_prefix: str
    finished: bool  # best candidate's path finalized right after this step


def rollout_and_reward(
    sample: StepSample,
    case,
    director: eng.DirectorClient,
    assistant: eng.AssistantPort,
    cfg: eng.SessionConfig | None = None,
    match=None,
) -> RolloutResult:
    """Roll each candidate's path to completion and assign rewards.

    Correctness comes from matching the rolled-out final answer against the
    case's gold answer (normalized match by default); a capped path counts
    as incorrect.  The highest-reward candidate (ties: lowest index)
    extends the prefix for the next step.
    """
    from .metrics import judge_accuracy

    cfg = cfg or eng.SessionConfig()
    matcher = match or (lambda pred, gold: judge_accuracy(pred, gold, mode="normalized").matched)
    base = parse_transcript(sample.prefix)
    step_index = base.n_steps + 1

    rollouts: list[Transcript] = []
    for cand in sample.candidates:
        t = parse_transcript(sample.prefix)  # fresh copy per rollout
        step = Step(
            index=step_index,
            deep_think=cand.deep_think,
            question=cand.question,
            responder=cand.responder,
            answer=cand.answer,
        )
        if cand.responder is Responder.PHYSICIAN and not step.completed:
            step.answer = assistant.fulfill(cand.question, case)
        t.steps.append(step)
        full, _trace = eng.continue_session(t, director, assistant, cfg, case_ctx=case)
        cand.answer = step.answer
        cand.gamma = eng.count_physician_ops(full)
        if full.final is not None:
            cand.correct = bool(matcher(extract_final_answer(full), case.gold_answer))
        else:
            cand.correct = False  # step cap or stall: treated as incorrect
        cand.reward = assign_reward(cand.correct, cand.gamma)
        cand.rewarded = True
        rollouts.append(full)

    best_index = max(range(len(sample.candidates)), key=lambda i: (sample.candidates[i].reward, -i))
    best = sample.candidates[best_index]
    next_t = parse_transcript(sample.prefix)
    next_t.steps.append(
        Step(
            index=step_index,
            deep_think=best.deep_think,
            question=best.question,
            responder=best.responder,
            answer=best.answer,
        )
    )
    return RolloutResult(
        sample=sample,
        best_index=best_index,
        next_prefix=emit_transcript(next_t),
        finished=rollouts[best_index].n_steps == step_index,
    )


def build_preference_dataset(
    case,
    director: eng.DirectorClient,
    assistant: eng.AssistantPort,
    k: int = 3,
    cfg: eng.SessionConfig | None = None,
    base_sampling: eng.SamplingParams | None = None,
    max_steps: int | None = None,
) -> list[PreferencePair]:
    """Walk a case step by step, emitting preference pairs at each step."""
    cfg = cfg or eng.SessionConfig()
    limit = max_steps if max_steps is not None else cfg.step_cap
    prefix = emit_transcript(
        Transcript(instruction=eng.build_instruction(case.chief_complaint, case.question))
    )
    pairs: list[PreferencePair] = []
    for _ in range(limit):
        sample = sample_step_candidates(prefix, director, k, base_sampling)
        if len(sample.candidates) < 2:
            break
        result = rollout_and_reward(sample, case, director, assistant, cfg)
        pairs.extend(build_pairs(result.sample))
        prefix = result.next_prefix
        if result.finished:
            break
    return pairs


def write_preference_pairs(pairs: Sequence[PreferencePair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_dict(), ensure_ascii=False) + "\n")


# --- preference-optimization loss ---

def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _softplus(x: float) -> float:
    # log(1 + e^x) without overflow on either tail
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def dpo_loss(pairs: Sequence[tuple[float, float, float, float]], beta: float = 0.1) -> float:
    """Mean -log sigmoid(beta * (policy/reference margin difference)).

    Each pair is (logp_policy_chosen, logp_ref_chosen, logp_policy_rejected,
    logp_ref_rejected).  Stable for margins up to +-700.
    """
    return dpo_loss_and_grad(pairs, beta)[0]


def dpo_loss_and_grad(
    pairs: Sequence[tuple[float, float, float, float]], beta: float = 0.1
) -> tuple[float, list[tuple[float, float, float, float]]]:
    """Loss plus the partial derivative w.r.t. every log-probability input."""
    if beta <= 0:
        raise InvariantViolation("beta must be > 0")
    if len(pairs) == 0:
        raise EmptyPairList("preference loss needs at least one pair")
    n = len(pairs)
    total = 0.0
    grads: list[tuple[float, float, float, float]] = []
    for pc, rc, pr, rr in pairs:
        margin = beta * ((pc - rc) - (pr - rr))
        total += _softplus(-margin)
        g = _sigmoid(-margin) * beta / n  # d softplus(-m)/dm = -sigmoid(-m)
        grads.append((-g, g, g, -g))
    return total / n, grads
