"""Session runner: the event loop around the pure FSM.

All state mutation happens on the loop thread.  Side-effect commands execute
on a single worker thread and complete by submitting new events; perception
results arrive over middleware ports and are translated to events; operator
verbs (abort, force_retry, annotate) funnel through the same queue.  The FSM's
generation counter plus the admissibility table make late completions and
cancelled listens harmless, so the runner never has to reason about races.
"""
from __future__ import annotations

import logging
import queue
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

from . import fsm
from .clock import Clock
from .config import SessionConfig, load_manifest
from .genai import (
    ContextViolation,
    IncompleteTranscript,
    PromptConfig,
    StickerDescription,
    TransportFailure,
    describe_sticker,
    generate_recap,
    generate_snippet,
    make_transport,
)
from .perception.modules import (
    COMMANDS_PORT,
    CUBE_PORT,
    EVENTS_PORT,
    FACE_PORT,
    GAZE_PORT,
    PerceptionHost,
)
from .portnet import MessageKind, PortRegistry
from .scenes import SceneFeeds, SceneScript
from .speech import SpeechIO, Utterance
from .store import Annotations, SessionStore, TrialRecord
from .story import StoryTranscript

log = logging.getLogger(__name__)

Listener = Callable[[str, dict], None]


class ModuleBootFailure(Exception):
    """A module port could not be brought up."""


class AbortedByOperator(Exception):
    """Reserved for callers that want abort to be an error; the runner
    itself finishes gracefully and returns the records."""


class FatalModuleLoss(Exception):
    """Watchdog expired or the middleware died mid-session."""


@dataclass
class _Control:
    verb: str
    payload: dict


class SessionRunner:
    def __init__(
        self,
        config: SessionConfig,
        *,
        clock: Optional[Clock] = None,
        feeds: Optional[SceneFeeds] = None,
        registry: Optional[PortRegistry] = None,
        transport=None,
        session_dir: Optional[str] = None,
    ):
        config.validate()
        self.config = config
        self.clock = clock or Clock(config.clock_scale)
        self.stickers = load_manifest(config.manifest_path)
        if feeds is not None:
            self.feeds = feeds
        elif config.scene_path:
            script = SceneScript.from_file(config.scene_path)
            if script.config_overrides:
                self.config = config = config.with_overrides(script.config_overrides)
            self.feeds = SceneFeeds.from_script(self.clock, script)
        else:
            self.feeds = SceneFeeds.live(self.clock)
        self._own_registry = registry is None
        self.registry = registry or PortRegistry(port_base=config.port_base)
        self.transport = transport or make_transport(
            config.genai_transport,
            seed=config.seed,
            fixture_path=config.genai_fixture_path,
            model_timeout_s=config.genai_timeout_s,
        )
        self.prompt_cfg = PromptConfig(
            model_name=config.genai_model,
            temperature=config.genai_temperature,
            describe_temperature=config.genai_describe_temperature,
            max_retries=config.max_retries,
        )
        dir_ = session_dir or config.session_dir or tempfile.mkdtemp(prefix="narravine-")
        self.store = SessionStore(dir_)
        self._events: "queue.Queue[object]" = queue.Queue()
        self._commands: "queue.Queue[object]" = queue.Queue()
        self._listeners: list[Listener] = []
        self._state = fsm.initial_state(self.config)
        self._state_lock = threading.Lock()
        self._records: list[TrialRecord] = []
        self._annotations: dict[int, Annotations] = {}
        self._speech: Optional[SpeechIO] = None
        self._host: Optional[PerceptionHost] = None
        self._finished = threading.Event()
        self._started = False
        self._aborted = False

    # --- public surface --------------------------------------------------

    def add_listener(self, fn: Listener) -> None:
        self._listeners.append(fn)

    def snapshot(self) -> dict:
        with self._state_lock:
            s = self._state
        return {
            "phase": s.phase.value,
            "stage": s.stage,
            "trial_index": s.trial_index,
            "trials_total": s.trials_total,
            "participant_id": s.participant_id,
            "admissible": sorted(k.value for k in fsm.admissible(s.phase)),
            "records": len(self._records),
            "session_dir": str(self.store.dir),
            "finished": self._finished.is_set(),
        }

    def state(self) -> fsm.SessionState:
        with self._state_lock:
            return self._state

    def submit_control(self, verb: str, payload: Optional[dict] = None) -> None:
        self._events.put(_Control(verb, dict(payload or {})))

    def run(self, watchdog_s: Optional[float] = None) -> list[TrialRecord]:
        started_real = time.monotonic()
        self._boot()
        outcome = "completed"
        try:
            self._submit(fsm.EventKind.START_SESSION, {})
            while True:
                if watchdog_s is not None and time.monotonic() - started_real > watchdog_s:
                    log.error("session watchdog expired after %.1fs", watchdog_s)
                    outcome = "watchdog"
                    self._do_abort()
                try:
                    item = self._events.get(timeout=0.05)
                except queue.Empty:
                    continue
                if isinstance(item, _Control):
                    if item.verb == "_terminate":
                        break
                    if item.verb == "abort":
                        outcome = "aborted"
                        self._do_abort()
                    elif item.verb == "force_retry":
                        self._apply(fsm.force_retry(self.state()), "OperatorForceRetry")
                    elif item.verb == "annotate":
                        self._annotate(item.payload)
                    continue
                self._dispatch(item)
        finally:
            self._shutdown(outcome, started_real)
        return list(self._records)

    # --- boot/shutdown ----------------------------------------------------

    def _boot(self) -> None:
        if self._started:
            raise RuntimeError("runner is single-use")
        self._started = True
        try:
            events_port = self.registry.register(EVENTS_PORT)
            self.registry.register(COMMANDS_PORT)
        except Exception as exc:
            raise ModuleBootFailure(str(exc)) from exc
        events_port.subscribe(self._on_port_message)
        self._host = PerceptionHost(
            self.registry, self.clock, self.feeds, self.config, self.stickers
        )
        self._host.start()
        cmd_port = self.registry.port(COMMANDS_PORT)
        for name in (FACE_PORT, CUBE_PORT):
            cmd_port.connect(name)
        self._speech = SpeechIO(self.clock, self.feeds.speech, on_utterance=self._on_utterance)
        overrides = self.prompt_cfg.overridden_prompts()
        if overrides:
            self.store.append_genai_log({"prompt_override": overrides})
        self.store.write_meta(
            {
                "status": "running",
                "trials_total": self.config.trials_total,
                "scene": self.config.scene_path or "interactive",
                "config": self.config.to_dict(),
            }
        )
        worker = threading.Thread(target=self._command_loop, name="fsm-exec", daemon=True)
        worker.start()

    def _shutdown(self, outcome: str, started_real: float) -> None:
        self._finished.set()
        self._commands.put(None)
        if self._speech:
            self._speech.cancel_listen()
        if self._host:
            self._host.stop()
        self.feeds.close()
        if self._own_registry:
            self.registry.close()
        state = self.state()
        self.store.write_meta(
            {
                "status": outcome,
                "participant_id": state.participant_id,
                "trials_total": self.config.trials_total,
                "records": len(self._records),
                "scene": self.config.scene_path or "interactive",
                "wall_time_s": round(time.monotonic() - started_real, 3),
                "config": self.config.to_dict(),
            }
        )
        self._notify("session", {"status": outcome, "records": len(self._records)})

    # --- event handling ----------------------------------------------------

    def _submit(self, kind: fsm.EventKind, payload: dict) -> None:
        self._events.put(fsm.TransitionEvent(kind, payload, received_at=self.clock.now_ms()))

    def _dispatch(self, event: fsm.TransitionEvent) -> None:
        state = self.state()
        new_state, commands = fsm.step(state, event)
        if new_state is state:
            log.debug(
                "dropped %s in %s/%s", event.kind.value, state.phase.value, state.stage
            )
            return
        self._apply((new_state, commands), event.kind.value)

    def _apply(self, result, event_name: str) -> None:
        state = self.state()
        new_state, commands = result
        if new_state is state and not commands:
            return
        entry = {
            "ts": self.clock.now_ms(),
            "phase_from": state.phase.value,
            "phase_to": new_state.phase.value,
            "event_kind": event_name,
            "trial_index": new_state.trial_index,
        }
        self.store.append_fsm_log(entry)
        with self._state_lock:
            self._state = new_state
        self._persist_new_records(new_state)
        self._notify("transition", {**entry, "stage": new_state.stage,
                                    "admissible": sorted(k.value for k in fsm.admissible(new_state.phase))})
        if new_state.stage == "recover":
            gen = new_state.await_gen
            self.clock.timer(
                self.config.recovery_pause_s,
                self._submit,
                fsm.EventKind.TIMEOUT,
                {"stage": "recover", "gen": gen},
            )
        for cmd in commands:
            self._commands.put(cmd)

    def _persist_new_records(self, state: fsm.SessionState) -> None:
        for record in state.completed[len(self._records):]:
            ann = self._annotations.get(record.trial_index)
            if ann is not None:
                record = replace(record, annotations=ann)
            self._records.append(record)
            self.store.persist_record(record)
            self.store.append_transcript(
                "--- trial %d: %s ---" % (record.trial_index, record.outcome)
            )
            self._notify("trial", {"trial_index": record.trial_index,
                                   "outcome": record.outcome,
                                   "failure_kind": record.failure_kind})

    def _annotate(self, payload: dict) -> None:
        target = int(payload.get("trial_index") or self.state().trial_index)
        current = self._annotations.get(target, Annotations())
        ann = Annotations(
            llm_added_elements=bool(
                payload.get("llm_added_elements", current.llm_added_elements)
            ),
            llm_fixed_human=bool(payload.get("llm_fixed_human", current.llm_fixed_human)),
        )
        self._annotations[target] = ann
        for i, record in enumerate(self._records):
            if record.trial_index == target:
                updated = replace(record, annotations=ann)
                self._records[i] = updated
                self.store.persist_record(updated)
        self._notify("annotation", {"trial_index": target, **ann.to_dict()})

    def _do_abort(self) -> None:
        if self._aborted:
            return
        self._aborted = True
        if self._speech:
            self._speech.cancel_listen()
        self._apply(fsm.abort(self.state()), "OperatorAbort")

    # --- port + speech plumbing --------------------------------------------

    def _on_port_message(self, message) -> None:
        payload = dict(message.payload)
        if "gaze" in payload:
            self._notify("percept", payload)
            return
        self._notify("percept", payload)
        if "participant_id" in payload:
            self._submit(fsm.EventKind.PARTICIPANT_RECOGNIZED, payload)
        elif "enroll_failed" in payload:
            self._submit(
                fsm.EventKind.MODULE_FAILURE,
                {"failure_kind": "other", "gen": payload.get("gen")},
            )
        elif "observation" in payload:
            self._submit(fsm.EventKind.CUBE_HANDED_OVER, payload)
        elif "drop" in payload:
            self._submit(
                fsm.EventKind.MODULE_FAILURE,
                {"failure_kind": "cube_drop", "gen": payload.get("gen")},
            )
        elif "no_cube" in payload:
            self._submit(
                fsm.EventKind.TIMEOUT, {"stage": "cube", "gen": payload.get("gen")}
            )

    def _on_utterance(self, utt: Utterance) -> None:
        self.store.append_transcript("%s: %s" % (utt.speaker, utt.text))
        self._notify("utterance", utt.to_dict())

    def _notify(self, kind: str, data: dict) -> None:
        for fn in self._listeners:
            try:
                fn(kind, data)
            except Exception:  # listeners must never take the session down
                log.exception("listener failed for %s", kind)

    # --- command execution ---------------------------------------------------

    def _command_loop(self) -> None:
        while True:
            cmd = self._commands.get()
            if cmd is None or self._finished.is_set():
                return
            try:
                self._execute(cmd)
            except Exception:
                log.exception("command %s failed", cmd.kind.value)

    def _publish_command(self, payload: dict) -> None:
        self.registry.port(COMMANDS_PORT).publish(payload, MessageKind.COMMAND)

    def _execute(self, cmd: fsm.Command) -> None:
        kind = cmd.kind
        p = dict(cmd.params)
        if kind in (fsm.CommandKind.SPEAK, fsm.CommandKind.GREET):
            self._speech.speak(p["text"])
        elif kind == fsm.CommandKind.ENROLL_PARTNER:
            self._publish_command({"op": "enroll", "gen": cmd.gen, **p})
        elif kind == fsm.CommandKind.REQUEST_CUBE:
            self._publish_command({"op": "request_cube", "gen": cmd.gen, **p})
        elif kind == fsm.CommandKind.CALL_VLM:
            self._call_vlm(cmd.gen, p["observation"])
        elif kind == fsm.CommandKind.CALL_LLM:
            self._call_llm(cmd.gen, p)
        elif kind == fsm.CommandKind.RECAP:
            self._call_recap(cmd.gen, p)
        elif kind == fsm.CommandKind.LISTEN:
            utt = self._speech.listen(p["deadline_s"])
            if utt is not None:
                self._submit(
                    fsm.EventKind.HUMAN_SPEECH_FINAL, {"text": utt.text, "gen": cmd.gen}
                )
            else:
                # also fires on cancel; admissibility/generation guards
                # make the spurious timeout a no-op then
                self._submit(fsm.EventKind.TIMEOUT, {"stage": "listen", "gen": cmd.gen})
        elif kind == fsm.CommandKind.EMIT_FEEDBACK:
            self._speech.speak(p["text"])
            self._submit(fsm.EventKind.FEEDBACK_DELIVERED, {"gen": cmd.gen})
        elif kind == fsm.CommandKind.DELIVER_RECAP:
            self._speech.speak(p["text"])
            self._submit(fsm.EventKind.RECAP_DELIVERED, {"gen": cmd.gen})
        elif kind == fsm.CommandKind.END_SESSION:
            self._events.put(_Control("_terminate", {}))

    def _call_vlm(self, gen: int, observation: dict) -> None:
        label = observation.get("class_label", "")
        try:
            desc = describe_sticker(
                label, self.prompt_cfg, self.transport, log=self.store.append_genai_log
            )
        except TransportFailure as exc:
            log.warning("describe failed: %s", exc)
            self._submit(
                fsm.EventKind.MODULE_FAILURE,
                {"failure_kind": "sticker_detection", "gen": gen},
            )
            return
        self._submit(
            fsm.EventKind.STICKER_DESCRIBED, {"description": desc.to_dict(), "gen": gen}
        )

    def _call_llm(self, gen: int, params: dict) -> None:
        context = StoryTranscript.from_dict(params.get("context", {}))
        description = StickerDescription.from_dict(params["description"])
        try:
            snippet = generate_snippet(
                context,
                params["step"],
                description,
                self.prompt_cfg,
                self.transport,
                trial_index=int(params.get("trial_index", 0)),
                log=self.store.append_genai_log,
            )
        except (TransportFailure, ContextViolation) as exc:
            log.warning("narration failed: %s", exc)
            self._submit(
                fsm.EventKind.MODULE_FAILURE, {"failure_kind": "llm_failure", "gen": gen}
            )
            return
        self._submit(
            fsm.EventKind.STORY_SNIPPET_READY, {"snippet": snippet.to_dict(), "gen": gen}
        )

    def _call_recap(self, gen: int, params: dict) -> None:
        transcript = StoryTranscript.from_dict(params.get("transcript", {}))
        try:
            snippet = generate_recap(
                transcript,
                self.prompt_cfg,
                self.transport,
                trial_index=int(params.get("trial_index", 0)),
                log=self.store.append_genai_log,
            )
        except (TransportFailure, IncompleteTranscript) as exc:
            log.warning("recap failed: %s", exc)
            self._submit(
                fsm.EventKind.MODULE_FAILURE, {"failure_kind": "llm_failure", "gen": gen}
            )
            return
        self._submit(
            fsm.EventKind.STORY_SNIPPET_READY, {"snippet": snippet.to_dict(), "gen": gen}
        )


def run_session(
    config: SessionConfig,
    *,
    watchdog_s: Optional[float] = None,
    session_dir: Optional[str] = None,
    transport=None,
) -> list[TrialRecord]:
    """Boot, run to Closure, tear down; returns one record per trial."""
    runner = SessionRunner(
        config, transport=transport, session_dir=session_dir
    )
    return runner.run(watchdog_s=watchdog_s)
