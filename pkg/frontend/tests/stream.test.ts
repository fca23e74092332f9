import { describe, expect, it } from "vitest";

import { SessionStream } from "../src/stream.js";
import type { EventSourceLike } from "../src/stream.js";
import type { Snapshot, StreamEvent } from "../src/types.js";

class FakeEventSource implements EventSourceLike {
  listeners = new Map<string, ((ev: MessageEvent) => void)[]>();
  onerror: ((ev: unknown) => void) | null = null;
  onopen: ((ev: unknown) => void) | null = null;
  closed = false;

  constructor(public readonly url: string) {}

  addEventListener(type: string, listener: (ev: MessageEvent) => void): void {
    const bucket = this.listeners.get(type) ?? [];
    bucket.push(listener);
    this.listeners.set(type, bucket);
  }

  close(): void {
    this.closed = true;
  }

  emit(type: string, data: unknown): void {
    for (const fn of this.listeners.get(type) ?? []) {
      fn({ data: JSON.stringify(data) } as MessageEvent);
    }
  }

  open(): void {
    this.onopen?.({});
  }

  fail(): void {
    this.onerror?.({});
  }
}

interface Timer {
  fn: () => void;
  ms: number;
}

function harness(options: { fetchState?: () => Promise<Snapshot> } = {}) {
  const sources: FakeEventSource[] = [];
  const timers: Timer[] = [];
  const events: StreamEvent[] = [];
  const connection: boolean[] = [];
  const stream = new SessionStream("/api/stream", {
    makeSource: (url) => {
      const s = new FakeEventSource(url);
      sources.push(s);
      return s;
    },
    fetchState: options.fetchState,
    backoffMs: 100,
    maxBackoffMs: 400,
    setTimer: (fn, ms) => {
      timers.push({ fn, ms });
      return timers.length;
    },
  });
  stream.onEvent = (e) => events.push(e);
  stream.onConnectionChange = (c) => connection.push(c);
  return { stream, sources, timers, events, connection };
}

describe("session stream", () => {
  it("parses named frames into typed events", () => {
    const h = harness();
    h.stream.start();
    const src = h.sources[0];
    src.emit("transition", {
      ts: 5,
      phase_from: "Idle",
      phase_to: "Introduction",
      event_kind: "StartSession",
      trial_index: 0,
      stage: "enroll",
      admissible: [],
    });
    src.emit("utterance", { speaker: "robot", text: "hi", started_ms: 0, ended_ms: 1 });
    expect(h.events.map((e) => e.kind)).toEqual(["transition", "utterance"]);
    if (h.events[0].kind === "transition") {
      expect(h.events[0].data.phase_to).toBe("Introduction");
    }
  });

  it("resyncs from /api/state when the connection (re)opens", async () => {
    const snap = {
      phase: "HumanTurn",
      stage: "listen",
      trial_index: 2,
      trials_total: 3,
      participant_id: "p01",
      admissible: [],
      records: 1,
      session_dir: null,
      finished: false,
    } as Snapshot;
    const h = harness({ fetchState: () => Promise.resolve(snap) });
    h.stream.start();
    h.sources[0].open();
    await Promise.resolve(); // let the fetch promise settle
    await Promise.resolve();
    expect(h.connection).toEqual([true]);
    expect(h.events[0]).toEqual({ kind: "state", data: snap });
  });

  it("reconnects with exponential backoff and resets after success", () => {
    const h = harness();
    h.stream.start();

    h.sources[0].fail();
    expect(h.sources[0].closed).toBe(true);
    expect(h.timers.map((t) => t.ms)).toEqual([100]);

    h.timers[0].fn(); // fires the reconnect
    expect(h.sources).toHaveLength(2);
    h.sources[1].fail();
    h.timers[1].fn();
    h.sources[2].fail();
    h.timers[2].fn();
    h.sources[3].fail();
    // 100, 200, 400, then capped at 400
    expect(h.timers.map((t) => t.ms)).toEqual([100, 200, 400, 400]);

    h.timers[3].fn();
    h.sources[4].open();
    h.sources[4].fail(); // next failure starts from the initial delay again
    expect(h.timers[4].ms).toBe(100);
    expect(h.connection).toEqual([false, false, false, false, true, false]);
  });

  it("close() stops the stream and suppresses reconnects", () => {
    const h = harness();
    h.stream.start();
    h.stream.close();
    expect(h.sources[0].closed).toBe(true);
    h.sources[0].fail();
    expect(h.timers).toHaveLength(0);
  });
});
