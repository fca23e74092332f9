/** Thin fetch client for the gateway REST surface. */
import type { FsmGraph, InputKind, ManifestEntry, Snapshot } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function asJson<T>(res: Response): Promise<T> {
  const body = await res.json().catch(() => ({}));
  if (!res.ok) {
    const msg =
      typeof body === "object" && body && "error" in body
        ? String((body as { error: unknown }).error)
        : res.statusText;
    throw new ApiError(res.status, msg);
  }
  return body as T;
}

export class GatewayClient {
  constructor(private readonly base: string = "") {}

  getState(): Promise<Snapshot> {
    return fetch(`${this.base}/api/state`).then((r) => asJson<Snapshot>(r));
  }

  getFsm(): Promise<FsmGraph> {
    return fetch(`${this.base}/api/fsm`).then((r) => asJson<FsmGraph>(r));
  }

  getManifest(): Promise<ManifestEntry[]> {
    return fetch(`${this.base}/api/manifest`).then((r) => asJson<ManifestEntry[]>(r));
  }

  assetUrl(asset: string): string {
    return `${this.base}/assets/${asset}`;
  }

  streamUrl(): string {
    return `${this.base}/api/stream`;
  }

  postInput(kind: InputKind, payload: Record<string, unknown> = {}): Promise<{ accepted: string }> {
    return fetch(`${this.base}/api/input`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ kind, payload }),
    }).then((r) => asJson<{ accepted: string }>(r));
  }

  startSession(overrides: Record<string, unknown> = {}): Promise<Snapshot> {
    return fetch(`${this.base}/api/session/start`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(overrides),
    }).then((r) => asJson<Snapshot>(r));
  }
}
