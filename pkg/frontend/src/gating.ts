/** Control gating mirrored from the gateway's admissibility rules.
 *
 * The server remains the authority (it answers 409 when we get it wrong);
 * this mirror only decides which controls are enabled, so that a current
 * UI can never produce a 409.
 */
import type { InputKind, Snapshot } from "./types.js";

export function admissibleInputs(snap: Snapshot): InputKind[] {
  // prefer the server's own verdict when present
  if (snap.admissible_inputs) return snap.admissible_inputs;
  const events = new Set(snap.admissible);
  const allowed: InputKind[] = [];
  if (events.has("CubeHandedOver")) allowed.push("hand_cube");
  if (events.has("HumanSpeechFinal")) allowed.push("speech_text");
  if (snap.phase === "FailureRecovery") allowed.push("force_retry");
  if (snap.phase !== "Idle" && snap.phase !== "Closure") {
    allowed.push("abort", "annotation");
  }
  return allowed;
}

export function isEnabled(kind: InputKind, snap: Snapshot): boolean {
  if (snap.finished) return false;
  return admissibleInputs(snap).includes(kind);
}
