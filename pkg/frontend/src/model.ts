/** Console view model: a pure reducer over stream events.
 *
 * All state changes come from the server stream (no optimistic UI), so the
 * whole view is reconstructible from a snapshot plus replayed events.
 */
import type {
  AnnotationEvent,
  Snapshot,
  StreamEvent,
  TransitionEvent,
  TrialEvent,
} from "./types.js";

export interface LogLine {
  ts: number;
  text: string;
}

export interface TranscriptLine {
  speaker: "robot" | "human";
  text: string;
}

export interface TrialStatus {
  trial_index: number;
  outcome: string;
  failure_kind: string | null;
}

export interface ConsoleState {
  snapshot: Snapshot;
  connected: boolean;
  eventLog: LogLine[];
  transcript: TranscriptLine[];
  trials: TrialStatus[];
  annotations: Record<number, AnnotationEvent>;
  sessionStatus: string | null;
  /** Set while a posted input has not yet been confirmed by the stream. */
  pendingInput: string | null;
}

export function idleSnapshot(): Snapshot {
  return {
    phase: "Idle",
    stage: null,
    trial_index: 0,
    trials_total: 0,
    participant_id: "",
    admissible: ["StartSession"],
    records: 0,
    session_dir: null,
    finished: false,
  };
}

export function initialState(): ConsoleState {
  return {
    snapshot: idleSnapshot(),
    connected: false,
    eventLog: [],
    transcript: [],
    trials: [],
    annotations: {},
    sessionStatus: null,
    pendingInput: null,
  };
}

function describeTransition(t: TransitionEvent): string {
  const move =
    t.phase_from === t.phase_to
      ? `${t.phase_to} (${t.stage})`
      : `${t.phase_from} → ${t.phase_to}`;
  return `[trial ${t.trial_index}] ${t.event_kind}: ${move}`;
}

function applyTransition(state: ConsoleState, t: TransitionEvent): ConsoleState {
  const snapshot: Snapshot = {
    ...state.snapshot,
    phase: t.phase_to,
    stage: t.stage,
    trial_index: t.trial_index,
    admissible: t.admissible,
    admissible_inputs: undefined, // derive locally until the next snapshot
  };
  return {
    ...state,
    snapshot,
    pendingInput: null,
    eventLog: [...state.eventLog, { ts: t.ts, text: describeTransition(t) }],
  };
}

function applyTrial(state: ConsoleState, t: TrialEvent): ConsoleState {
  const trials = [
    ...state.trials.filter((x) => x.trial_index !== t.trial_index),
    { trial_index: t.trial_index, outcome: t.outcome, failure_kind: t.failure_kind },
  ].sort((a, b) => a.trial_index - b.trial_index);
  const snapshot = { ...state.snapshot, records: trials.length };
  return { ...state, trials, snapshot };
}

export function reduce(state: ConsoleState, event: StreamEvent): ConsoleState {
  switch (event.kind) {
    case "state":
      return { ...state, snapshot: event.data, connected: true };
    case "transition":
      return applyTransition(state, event.data);
    case "utterance":
      return {
        ...state,
        transcript: [
          ...state.transcript,
          { speaker: event.data.speaker, text: event.data.text },
        ],
      };
    case "trial":
      return applyTrial(state, event.data);
    case "annotation":
      return {
        ...state,
        annotations: {
          ...state.annotations,
          [event.data.trial_index]: event.data,
        },
      };
    case "session":
      return {
        ...state,
        sessionStatus: event.data.status,
        snapshot: { ...state.snapshot, finished: true },
        pendingInput: null,
      };
    case "percept":
      return state; // shown transiently, never stored
    default:
      return state;
  }
}

export function markPending(state: ConsoleState, kind: string): ConsoleState {
  return { ...state, pendingInput: kind };
}

export function markDisconnected(state: ConsoleState): ConsoleState {
  return { ...state, connected: false };
}
