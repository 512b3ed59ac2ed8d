/**
 * Pure view-model builders.  Everything here is a function of service
 * responses (plus, for accountability review, a loaded dataset row), so
 * the console never owns diagnostic state.
 */

import type { SessionView, StepJson, TranscriptJson } from "./api.js";

// --- physician inbox ---

export interface InboxRow {
  sessionId: string;
  caseId: string | null;
  step: number;
  question: string;
}

export function inboxRows(sessions: SessionView[]): InboxRow[] {
  const rows: InboxRow[] = [];
  for (const session of sessions) {
    if (session.state === "awaiting_physician" && session.pending) {
      rows.push({
        sessionId: session.session_id,
        caseId: session.case_id,
        step: session.pending.step,
        question: session.pending.question,
      });
    }
  }
  return rows;
}

// --- transcript viewer ---

export type FinalSegment =
  | { kind: "text"; text: string }
  | { kind: "ref"; step: number };

const REF_RE = /\[(\d+)\]/g;

/** Split a final-diagnosis body into text runs and [k] reference links. */
export function splitFinalBody(body: string): FinalSegment[] {
  const segments: FinalSegment[] = [];
  let last = 0;
  for (const match of body.matchAll(REF_RE)) {
    const at = match.index ?? 0;
    if (at > last) {
      segments.push({ kind: "text", text: body.slice(last, at) });
    }
    segments.push({ kind: "ref", step: Number(match[1]) });
    last = at + match[0].length;
  }
  if (last < body.length) {
    segments.push({ kind: "text", text: body.slice(last) });
  }
  return segments;
}

export interface ReferenceEntry {
  step: number;
  anchorId: string;
  citation: string;
  /** true when no citation was attached and the entry points at the step itself */
  synthesized: boolean;
}

function stepSummary(step: StepJson): string {
  const who = step.responder === "Physician" ? "physician operation" : "model reasoning";
  return `Step ${step.index} (${who}): ${step.question}`;
}

/**
 * One panel entry per step, so every inline [k] link has a target: the
 * attached citation when the transcript carries one, otherwise a
 * synthesized pointer back at the step.
 */
export function referenceEntries(transcript: TranscriptJson): ReferenceEntry[] {
  const attached = new Map<number, string>();
  for (const [step, citation] of transcript.references) {
    attached.set(step, citation);
  }
  return transcript.steps.map((step) => {
    const citation = attached.get(step.index);
    return {
      step: step.index,
      anchorId: `ref-${step.index}`,
      citation: citation ?? stepSummary(step),
      synthesized: citation === undefined,
    };
  });
}

export function resolveReference(
  entries: ReferenceEntry[],
  step: number,
): ReferenceEntry | undefined {
  return entries.find((entry) => entry.step === step);
}

export interface StepView {
  index: number;
  badge: "LLM" | "Physician";
  deepThink: string;
  question: string;
  answer: string | null;
  pending: boolean;
}

export interface TranscriptViewModel {
  instruction: string;
  steps: StepView[];
  finalSegments: FinalSegment[] | null;
  references: ReferenceEntry[];
  state: string;
}

export function transcriptView(session: SessionView): TranscriptViewModel {
  const t = session.transcript;
  return {
    instruction: t.instruction,
    steps: t.steps.map((step) => ({
      index: step.index,
      badge: step.responder,
      deepThink: step.deep_think,
      question: step.question,
      answer: step.answer,
      pending: step.answer === null,
    })),
    finalSegments: t.final ? splitFinalBody(t.final.body) : null,
    references: referenceEntries(t),
    state: session.state,
  };
}

// --- accountability review ---

export type AttributionChoice = "LLM" | "Physician" | "Both";

export interface FieldDiff {
  original: string;
  perturbed: string;
  changed: boolean;
}

export interface AccountabilityRow {
  step: number;
  badge: "LLM" | "Physician";
  deepThink: FieldDiff;
  question: FieldDiff;
  answer: FieldDiff;
}

function diff(original: string | null, perturbed: string | null): FieldDiff {
  const a = original ?? "";
  const b = perturbed ?? "";
  return { original: a, perturbed: b, changed: a !== b };
}

/** Side-by-side rows for the original vs perturbed transcript. */
export function buildAccountabilityView(
  original: TranscriptJson,
  perturbed: TranscriptJson,
): AccountabilityRow[] {
  if (original.steps.length !== perturbed.steps.length) {
    throw new Error("original and perturbed transcripts must have the same steps");
  }
  return original.steps.map((step, i) => {
    const other = perturbed.steps[i]!;
    return {
      step: step.index,
      badge: step.responder,
      deepThink: diff(step.deep_think, other.deep_think),
      question: diff(step.question, other.question),
      answer: diff(step.answer, other.answer),
    };
  });
}

export function changedSteps(rows: AccountabilityRow[]): number[] {
  return rows
    .filter((row) => row.deepThink.changed || row.question.changed || row.answer.changed)
    .map((row) => row.step);
}
