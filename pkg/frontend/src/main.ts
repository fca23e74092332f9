/** Console entry point: wire API + stream + reducer + renderer together. */
import { GatewayClient, ApiError } from "./api.js";
import { initialState, markDisconnected, markPending, reduce } from "./model.js";
import type { ConsoleState } from "./model.js";
import { SessionStream } from "./stream.js";
import { renderAll } from "./render.js";
import type { FsmGraph, InputKind, ManifestEntry } from "./types.js";

const client = new GatewayClient("");

let state: ConsoleState = initialState();
let manifest: ManifestEntry[] = [];
let graph: FsmGraph = { nodes: [], edges: [] };

function redraw(): void {
  renderAll(state, manifest, graph, (a) => client.assetUrl(a), handlers);
}

function update(next: ConsoleState): void {
  state = next;
  redraw();
}

function showError(message: string): void {
  const banner = document.getElementById("error-banner")!;
  banner.textContent = message;
  banner.classList.add("visible");
  setTimeout(() => banner.classList.remove("visible"), 4000);
}

function submit(kind: InputKind, payload: Record<string, unknown> = {}): void {
  update(markPending(state, kind));
  client.postInput(kind, payload).catch((err) => {
    update({ ...state, pendingInput: null });
    showError(err instanceof ApiError ? `${err.status}: ${err.message}` : String(err));
  });
}

const handlers = {
  onCube: (id: string) => submit("hand_cube", { cube_id: id }),
  onSpeech: (text: string) => submit("speech_text", { text }),
  onAbort: () => submit("abort"),
  onForceRetry: () => submit("force_retry"),
  onAnnotate: (flag: string, value: boolean) =>
    submit("annotation", { trial_index: state.snapshot.trial_index, [flag]: value }),
  onStart: () => {
    client.startSession({}).catch((err) => showError(String(err)));
  },
};

function wireLayoutToggle(): void {
  const toggle = document.getElementById("layout-toggle")!;
  toggle.addEventListener("click", () => {
    const body = document.body;
    const participant = body.classList.toggle("participant");
    toggle.textContent = participant ? "experimenter view" : "participant view";
  });
}

async function boot(): Promise<void> {
  wireLayoutToggle();
  try {
    [manifest, graph] = await Promise.all([client.getManifest(), client.getFsm()]);
  } catch (err) {
    showError(`gateway unreachable: ${String(err)}`);
  }
  const stream = new SessionStream(client.streamUrl(), {
    fetchState: () => client.getState(),
  });
  stream.onEvent = (event) => update(reduce(state, event));
  stream.onConnectionChange = (connected) => {
    if (!connected) update(markDisconnected(state));
  };
  stream.start();
  redraw();
}

boot();
