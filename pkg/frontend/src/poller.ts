/**
 * Polling loop for the inbox and the open transcript.  Polling (default
 * 2s) keeps failure semantics simple: a missed tick just means the next
 * one refreshes everything from the service.
 */

import type { ServiceClient, SessionView } from "./api.js";
import { inboxRows, type InboxRow } from "./state.js";

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;

  constructor(
    private readonly client: ServiceClient,
    private readonly onInbox: (rows: InboxRow[]) => void,
    private readonly onSessions: (sessions: SessionView[]) => void = () => {},
    readonly intervalMs: number = 2000,
  ) {}

  async tick(): Promise<void> {
    if (this.inFlight) {
      return; // skip overlapping polls; the next tick catches up
    }
    this.inFlight = true;
    try {
      const sessions = await this.client.listSessions();
      this.onSessions(sessions);
      this.onInbox(inboxRows(sessions));
    } finally {
      this.inFlight = false;
    }
  }

  start(): void {
    if (this.timer === null) {
      void this.tick();
      this.timer = setInterval(() => void this.tick(), this.intervalMs);
    }
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Poll until the predicate holds or timeoutMs elapses. */
  async waitFor<T>(
    probe: () => Promise<T | undefined>,
    timeoutMs: number,
  ): Promise<T> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const value = await probe();
      if (value !== undefined) {
        return value;
      }
      if (Date.now() > deadline) {
        throw new Error(`condition not met within ${timeoutMs}ms`);
      }
      await new Promise((resolve) => setTimeout(resolve, Math.min(this.intervalMs, 250)));
    }
  }
}
