/** DOM rendering. Everything here is write-only glue over ConsoleState;
 * all logic that deserves tests lives in model.ts and gating.ts.
 */
import type { ConsoleState } from "./model.js";
import type { FsmGraph, ManifestEntry } from "./types.js";
import { isEnabled } from "./gating.js";

export interface Handlers {
  onCube(id: string): void;
  onSpeech(text: string): void;
  onAbort(): void;
  onForceRetry(): void;
  onAnnotate(flag: "llm_added_elements" | "llm_fixed_human", value: boolean): void;
  onStart(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function renderHeader(state: ConsoleState): void {
  const snap = state.snapshot;
  byId("phase-badge").textContent = snap.phase;
  byId("phase-badge").dataset.phase = snap.phase;
  byId("stage").textContent = snap.stage ?? "";
  byId("progress").textContent =
    snap.trials_total > 0 ? `trial ${snap.trial_index} of ${snap.trials_total}` : "";
  const dot = byId("conn");
  dot.classList.toggle("on", state.connected);
  dot.title = state.connected ? "stream connected" : "stream reconnecting";
  byId("pending").textContent = state.pendingInput
    ? `waiting for ${state.pendingInput}...`
    : "";
  const status = byId("session-status");
  status.textContent = state.sessionStatus ? `session ${state.sessionStatus}` : "";
}

export function renderGraph(graph: FsmGraph, state: ConsoleState): void {
  const host = byId("fsm-graph");
  host.replaceChildren();
  for (const node of graph.nodes) {
    const pill = el("span", "fsm-node", node);
    if (node === state.snapshot.phase) pill.classList.add("active");
    host.appendChild(pill);
  }
}

export function renderEventLog(state: ConsoleState): void {
  const pane = byId("event-log");
  pane.replaceChildren();
  for (const line of state.eventLog) {
    const row = el("div", "log-line");
    row.appendChild(el("span", "ts", (line.ts / 1000).toFixed(1) + "s"));
    row.appendChild(el("span", "msg", line.text));
    pane.appendChild(row);
  }
  pane.scrollTop = pane.scrollHeight;
}

export function renderTranscript(state: ConsoleState): void {
  const pane = byId("transcript");
  pane.replaceChildren();
  for (const line of state.transcript) {
    const row = el("div", `say ${line.speaker}`);
    row.appendChild(el("span", "who", line.speaker));
    row.appendChild(el("span", "text", line.text));
    pane.appendChild(row);
  }
  pane.scrollTop = pane.scrollHeight;
}

export function renderTrials(state: ConsoleState): void {
  const host = byId("trials");
  host.replaceChildren();
  for (const t of state.trials) {
    const chip = el("span", `trial-chip ${t.outcome}`);
    chip.textContent = t.failure_kind
      ? `#${t.trial_index} ${t.outcome} (${t.failure_kind})`
      : `#${t.trial_index} ${t.outcome}`;
    host.appendChild(chip);
  }
}

export function renderPalette(
  manifest: ManifestEntry[],
  state: ConsoleState,
  assetUrl: (asset: string) => string,
  handlers: Handlers,
): void {
  const host = byId("palette");
  host.replaceChildren();
  const enabled = isEnabled("hand_cube", state.snapshot);
  for (const entry of manifest) {
    const tile = el("button", `tile ${entry.kind}`);
    tile.disabled = !enabled;
    tile.title = entry.description;
    const img = el("img");
    img.src = assetUrl(entry.asset);
    img.alt = entry.id;
    tile.appendChild(img);
    tile.appendChild(el("span", "tile-label", entry.id.replace(/_/g, " ")));
    tile.addEventListener("click", () => handlers.onCube(entry.id));
    host.appendChild(tile);
  }
}

export function renderControls(state: ConsoleState, handlers: Handlers): void {
  const snap = state.snapshot;
  const speech = byId<HTMLTextAreaElement>("speech-input");
  const speechSend = byId<HTMLButtonElement>("speech-send");
  const speechOk = isEnabled("speech_text", snap);
  speech.disabled = !speechOk;
  speechSend.disabled = !speechOk;

  const start = byId<HTMLButtonElement>("start-btn");
  start.disabled = !(snap.phase === "Idle" || snap.finished);
  start.onclick = handlers.onStart;

  const abort = byId<HTMLButtonElement>("abort-btn");
  abort.disabled = !isEnabled("abort", snap);
  abort.onclick = handlers.onAbort;

  const retry = byId<HTMLButtonElement>("retry-btn");
  retry.disabled = !isEnabled("force_retry", snap);
  retry.onclick = handlers.onForceRetry;

  const annOk = isEnabled("annotation", snap);
  const ann = state.annotations[snap.trial_index];
  for (const flag of ["llm_added_elements", "llm_fixed_human"] as const) {
    const box = byId<HTMLInputElement>(flag);
    box.disabled = !annOk;
    box.checked = ann ? ann[flag] : false;
    box.onchange = () => handlers.onAnnotate(flag, box.checked);
  }

  speechSend.onclick = () => {
    const text = speech.value.trim();
    if (!text) return;
    handlers.onSpeech(text);
    speech.value = "";
  };
}

export function renderAll(
  state: ConsoleState,
  manifest: ManifestEntry[],
  graph: FsmGraph,
  assetUrl: (asset: string) => string,
  handlers: Handlers,
): void {
  renderHeader(state);
  renderGraph(graph, state);
  renderEventLog(state);
  renderTranscript(state);
  renderTrials(state);
  renderPalette(manifest, state, assetUrl, handlers);
  renderControls(state, handlers);
}
