/** Wire types for the session gateway API. */

export type Phase =
  | "Idle"
  | "Introduction"
  | "IcubTurnOpen"
  | "HumanTurn"
  | "IcubTurnClose"
  | "WrapUp"
  | "Closure"
  | "FailureRecovery";

export type InputKind =
  | "hand_cube"
  | "speech_text"
  | "annotation"
  | "abort"
  | "force_retry";

/** GET /api/state response and the `state` stream event payload. */
export interface Snapshot {
  phase: Phase;
  stage: string | null;
  trial_index: number;
  trials_total: number;
  participant_id: string;
  admissible: string[];
  admissible_inputs?: InputKind[];
  records: number;
  session_dir: string | null;
  finished: boolean;
}

export interface TransitionEvent {
  ts: number;
  phase_from: Phase;
  phase_to: Phase;
  event_kind: string;
  trial_index: number;
  stage: string;
  admissible: string[];
}

export interface UtteranceEvent {
  speaker: "robot" | "human";
  text: string;
  started_ms: number;
  ended_ms: number;
}

export interface TrialEvent {
  trial_index: number;
  outcome: "success" | "failed" | "aborted";
  failure_kind: string | null;
}

export interface AnnotationEvent {
  trial_index: number;
  llm_added_elements: boolean;
  llm_fixed_human: boolean;
}

export interface SessionEvent {
  status: string;
  records: number;
}

export type StreamEvent =
  | { kind: "state"; data: Snapshot }
  | { kind: "transition"; data: TransitionEvent }
  | { kind: "utterance"; data: UtteranceEvent }
  | { kind: "percept"; data: Record<string, unknown> }
  | { kind: "trial"; data: TrialEvent }
  | { kind: "annotation"; data: AnnotationEvent }
  | { kind: "session"; data: SessionEvent };

export interface ManifestEntry {
  id: string;
  kind: "place" | "character" | "object";
  description: string;
  asset: string;
}

export interface FsmGraph {
  nodes: string[];
  edges: { from: string; to: string; on: string }[];
}
