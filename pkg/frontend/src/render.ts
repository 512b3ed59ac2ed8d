/**
 * DOM rendering.  Every interactive element carries a data-* hook so the
 * tests (and operators' userscripts) can address it without relying on
 * styling classes.
 */

import type { FulfillResult } from "./api.js";
import {
  buildAccountabilityView,
  changedSteps,
  resolveReference,
  type AccountabilityRow,
  type AttributionChoice,
  type InboxRow,
  type TranscriptViewModel,
} from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export type FulfillHandler = (
  sessionId: string,
  step: number,
  answer: string,
) => Promise<FulfillResult>;

export function renderInbox(
  container: HTMLElement,
  rows: InboxRow[],
  onFulfill: FulfillHandler,
  onOpen: (sessionId: string) => void,
): void {
  const doc = container.ownerDocument;
  container.replaceChildren();
  if (rows.length === 0) {
    container.append(el(doc, "p", { "data-role": "inbox-empty" }, "No pending requests."));
    return;
  }
  for (const row of rows) {
    const item = el(doc, "div", {
      "data-role": "inbox-row",
      "data-session": row.sessionId,
      "data-step": String(row.step),
    });
    item.append(
      el(doc, "span", { "data-role": "inbox-question" }, row.question),
      el(doc, "span", { "data-role": "inbox-case" }, row.caseId ?? "ad hoc"),
    );
    const input = el(doc, "textarea", { "data-role": "inbox-answer" });
    const submit = el(doc, "button", { "data-role": "inbox-submit" }, "Submit result");
    const status = el(doc, "span", { "data-role": "inbox-status" }, "");
    submit.addEventListener("click", () => {
      void (async () => {
        submit.toggleAttribute("disabled", true);
        const result = await onFulfill(row.sessionId, row.step, input.value);
        if (!result.ok) {
          // someone else won the fulfill; the next poll refreshes the row away
          status.textContent = "already handled; refreshing";
        }
        onOpen(row.sessionId);
      })();
    });
    const open = el(doc, "button", { "data-role": "inbox-open" }, "View transcript");
    open.addEventListener("click", () => onOpen(row.sessionId));
    item.append(input, submit, open, status);
    container.append(item);
  }
}

export function renderTranscript(
  container: HTMLElement,
  refsPanel: HTMLElement,
  view: TranscriptViewModel,
): void {
  const doc = container.ownerDocument;
  container.replaceChildren();
  container.append(
    el(doc, "p", { "data-role": "instruction" }, view.instruction),
    el(doc, "p", { "data-role": "session-state" }, view.state),
  );
  for (const step of view.steps) {
    const block = el(doc, "section", {
      "data-role": "step",
      "data-step": String(step.index),
    });
    block.append(
      el(
        doc,
        "span",
        { "data-role": "badge", "data-badge": step.badge },
        step.badge === "Physician" ? "Physician" : "LLM",
      ),
      el(doc, "p", { "data-role": "deep-think" }, step.deepThink),
      el(doc, "p", { "data-role": "question" }, step.question),
    );
    if (step.answer !== null) {
      block.append(el(doc, "p", { "data-role": "answer" }, step.answer));
    } else {
      block.append(el(doc, "p", { "data-role": "answer-pending" }, "awaiting result"));
    }
    container.append(block);
  }
  if (view.finalSegments) {
    const final = el(doc, "section", { "data-role": "final" });
    for (const segment of view.finalSegments) {
      if (segment.kind === "text") {
        final.append(doc.createTextNode(segment.text));
      } else {
        const link = el(
          doc,
          "a",
          {
            "data-role": "ref-link",
            "data-step": String(segment.step),
            href: `#ref-${segment.step}`,
          },
          `[${segment.step}]`,
        );
        link.addEventListener("click", (event) => {
          event.preventDefault();
          const entry = resolveReference(view.references, segment.step);
          if (entry) {
            const target = refsPanel.querySelector<HTMLElement>(`#${entry.anchorId}`);
            target?.scrollIntoView();
            target?.setAttribute("data-highlight", "true");
          }
        });
        final.append(link);
      }
    }
    container.append(final);
  }
  refsPanel.replaceChildren();
  for (const entry of view.references) {
    refsPanel.append(
      el(
        doc,
        "div",
        {
          "data-role": "reference",
          id: entry.anchorId,
          "data-step": String(entry.step),
          "data-synthesized": String(entry.synthesized),
        },
        `[${entry.step}] ${entry.citation}`,
      ),
    );
  }
}

export interface AccountabilityState {
  rows: AccountabilityRow[];
  label: AttributionChoice | null;
}

export function renderAccountability(
  container: HTMLElement,
  state: AccountabilityState,
  onLabel: (label: AttributionChoice) => void,
): void {
  const doc = container.ownerDocument;
  container.replaceChildren();
  const flagged = new Set(changedSteps(state.rows));
  for (const row of state.rows) {
    const section = el(doc, "section", {
      "data-role": "diff-row",
      "data-step": String(row.step),
      "data-changed": String(flagged.has(row.step)),
    });
    for (const [part, pair] of [
      ["deep-think", row.deepThink],
      ["question", row.question],
      ["answer", row.answer],
    ] as const) {
      const cell = el(doc, "div", { "data-role": `diff-${part}`, "data-changed": String(pair.changed) });
      cell.append(
        el(doc, "p", { "data-side": "original" }, pair.original),
        el(doc, "p", { "data-side": "perturbed" }, pair.perturbed),
      );
      section.append(cell);
    }
    container.append(section);
  }
  const controls = el(doc, "div", { "data-role": "label-controls" });
  for (const choice of ["LLM", "Physician", "Both"] as const) {
    const button = el(
      doc,
      "button",
      {
        "data-role": "label-button",
        "data-label": choice,
        "data-selected": String(state.label === choice),
      },
      choice,
    );
    button.addEventListener("click", () => onLabel(choice));
    controls.append(button);
  }
  container.append(controls);
}

export { buildAccountabilityView };
