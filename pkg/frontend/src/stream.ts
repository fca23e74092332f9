/** Reconnecting wrapper around the gateway's server-sent event feed.
 *
 * On connection loss it backs off exponentially and, once reconnected,
 * re-syncs from GET /api/state so the view never drifts (the stream's own
 * initial `state` frame covers the common case; the explicit resync covers
 * proxies that replay stale frames).
 */
import type { Snapshot, StreamEvent } from "./types.js";

const EVENT_KINDS = [
  "state",
  "transition",
  "utterance",
  "percept",
  "trial",
  "annotation",
  "session",
] as const;

export interface EventSourceLike {
  addEventListener(type: string, listener: (ev: MessageEvent) => void): void;
  close(): void;
  onerror: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface StreamOptions {
  makeSource?: EventSourceFactory;
  fetchState?: () => Promise<Snapshot>;
  /** initial reconnect delay; doubles per failure up to maxBackoffMs */
  backoffMs?: number;
  maxBackoffMs?: number;
  setTimer?: (fn: () => void, ms: number) => unknown;
}

export class SessionStream {
  private source: EventSourceLike | null = null;
  private backoff: number;
  private readonly initialBackoff: number;
  private readonly maxBackoff: number;
  private closed = false;
  private readonly makeSource: EventSourceFactory;
  private readonly fetchState?: () => Promise<Snapshot>;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;

  onEvent: (event: StreamEvent) => void = () => {};
  onConnectionChange: (connected: boolean) => void = () => {};

  constructor(
    private readonly url: string,
    options: StreamOptions = {},
  ) {
    this.makeSource =
      options.makeSource ??
      ((u: string) => new EventSource(u) as unknown as EventSourceLike);
    this.fetchState = options.fetchState;
    this.initialBackoff = options.backoffMs ?? 500;
    this.maxBackoff = options.maxBackoffMs ?? 10_000;
    this.backoff = this.initialBackoff;
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
  }

  start(): void {
    if (this.closed) return;
    const source = this.makeSource(this.url);
    this.source = source;
    for (const kind of EVENT_KINDS) {
      source.addEventListener(kind, (ev: MessageEvent) => {
        this.onEvent({ kind, data: JSON.parse(ev.data) } as StreamEvent);
      });
    }
    source.onopen = () => {
      this.backoff = this.initialBackoff;
      this.onConnectionChange(true);
      this.resync();
    };
    source.onerror = () => {
      if (this.closed) return;
      this.onConnectionChange(false);
      source.close();
      this.source = null;
      this.setTimer(() => this.start(), this.backoff);
      this.backoff = Math.min(this.backoff * 2, this.maxBackoff);
    };
  }

  private resync(): void {
    if (!this.fetchState) return;
    this.fetchState()
      .then((snap) => this.onEvent({ kind: "state", data: snap }))
      .catch(() => {
        /* the stream's own state frame still applies */
      });
  }

  close(): void {
    this.closed = true;
    this.source?.close();
    this.source = null;
  }
}
