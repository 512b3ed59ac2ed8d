/**
 * Console entry point: wires the service client, the 2s poller and the
 * three panels (inbox, transcript + references, accountability review).
 */

import { ServiceClient } from "./api.js";
import { Poller } from "./poller.js";
import { renderAccountability, renderInbox, renderTranscript } from "./render.js";
import {
  buildAccountabilityView,
  transcriptView,
  type AccountabilityRow,
  type AttributionChoice,
} from "./state.js";

function mustFind(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node;
}

export function bootConsole(): void {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get("service") ?? "http://127.0.0.1:8321";
  const client = new ServiceClient(baseUrl);

  const inboxPanel = mustFind("inbox");
  const transcriptPanel = mustFind("transcript");
  const refsPanel = mustFind("references");
  const accountabilityPanel = mustFind("accountability");
  const filePicker = mustFind("accountability-file") as HTMLInputElement;

  let openSession: string | null = null;

  async function showSession(sessionId: string): Promise<void> {
    openSession = sessionId;
    const session = await client.getSession(sessionId);
    renderTranscript(transcriptPanel, refsPanel, transcriptView(session));
  }

  const poller = new Poller(
    client,
    (rows) => {
      renderInbox(
        inboxPanel,
        rows,
        (sessionId, step, answer) => client.fulfill(sessionId, step, answer),
        (sessionId) => void showSession(sessionId),
      );
    },
    (sessions) => {
      if (openSession) {
        const current = sessions.find((s) => s.session_id === openSession);
        if (current) {
          renderTranscript(transcriptPanel, refsPanel, transcriptView(current));
        }
      }
    },
  );
  poller.start();

  // accountability review: operator loads a perturbation dataset row
  // ({"transcript": ..., "original": ...} or a pair of files) exported by
  // the dataset pipeline; labeling stays local until submitted elsewhere.
  let accountability: { rows: AccountabilityRow[]; label: AttributionChoice | null } = {
    rows: [],
    label: null,
  };
  filePicker.addEventListener("change", () => {
    const file = filePicker.files?.[0];
    if (!file) {
      return;
    }
    void file.text().then((raw) => {
      const row = JSON.parse(raw) as { original: never; transcript: never };
      accountability = {
        rows: buildAccountabilityView(row.original, row.transcript),
        label: null,
      };
      renderAccountability(accountabilityPanel, accountability, (label) => {
        accountability = { ...accountability, label };
        renderAccountability(accountabilityPanel, accountability, () => {});
      });
    });
  });
}

if (typeof document !== "undefined" && document.getElementById("inbox")) {
  bootConsole();
}
