"""Supervisor state machine for the co-creative storytelling session.

Phases: Idle, Introduction, then per trial IcubTurnOpen (robot opens the
story from the first cube), HumanTurn (participant hands the second cube and
continues), IcubTurnClose (robot ends the story from the third cube), WrapUp
(robot retells the full story); after the last trial, Closure.  Any stage can
fall into FailureRecovery once its retry budget is spent.

step() is a pure function: feed it a state and an event and it returns the
successor state plus side-effect commands.  All waiting, timing and I/O live
in the runner.  Inadmissible or stale events leave the state untouched (the
same object is returned, which callers use to detect a drop).

Stale-event handling: every stage change bumps a generation counter; async
completions echo the generation they were issued under and step ignores
mismatches, so a late timeout can never fire into the wrong stage.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional

from .config import SessionConfig
from .genai import StickerDescription, StorySnippet
from .store import Annotations, TrialRecord
from .story import StoryTranscript, Turn


class Phase(str, Enum):
    IDLE = "Idle"
    INTRODUCTION = "Introduction"
    ICUB_TURN_OPEN = "IcubTurnOpen"
    HUMAN_TURN = "HumanTurn"
    ICUB_TURN_CLOSE = "IcubTurnClose"
    WRAP_UP = "WrapUp"
    CLOSURE = "Closure"
    FAILURE_RECOVERY = "FailureRecovery"


class EventKind(str, Enum):
    START_SESSION = "StartSession"
    PARTICIPANT_RECOGNIZED = "ParticipantRecognized"
    CUBE_HANDED_OVER = "CubeHandedOver"
    STICKER_DESCRIBED = "StickerDescribed"
    STORY_SNIPPET_READY = "StorySnippetReady"
    HUMAN_SPEECH_FINAL = "HumanSpeechFinal"
    FEEDBACK_DELIVERED = "FeedbackDelivered"
    RECAP_DELIVERED = "RecapDelivered"
    TIMEOUT = "Timeout"
    MODULE_FAILURE = "ModuleFailure"


class CommandKind(str, Enum):
    SPEAK = "speak"
    ENROLL_PARTNER = "enroll_partner"
    REQUEST_CUBE = "request_cube"
    CALL_VLM = "call_vlm"
    CALL_LLM = "call_llm"
    RECAP = "recap"
    LISTEN = "listen"
    EMIT_FEEDBACK = "emit_feedback"
    DELIVER_RECAP = "deliver_recap"
    GREET = "greet"
    END_SESSION = "end_session"


# what each awaited stage turns into when it times out or its module fails
STAGE_FAILURE_KIND = {
    "enroll": "other",
    "cube": "cube_drop",
    "describe": "sticker_detection",
    "narrate": "llm_failure",
    "listen": "voice_timeout",
    "feedback": "other",
    "recap_gen": "llm_failure",
    "recap_speak": "other",
}

_ADMISSIBLE: dict[Phase, frozenset[EventKind]] = {
    Phase.IDLE: frozenset({EventKind.START_SESSION}),
    Phase.INTRODUCTION: frozenset(
        {EventKind.PARTICIPANT_RECOGNIZED, EventKind.TIMEOUT, EventKind.MODULE_FAILURE}
    ),
    Phase.ICUB_TURN_OPEN: frozenset(
        {
            EventKind.CUBE_HANDED_OVER,
            EventKind.STICKER_DESCRIBED,
            EventKind.STORY_SNIPPET_READY,
            EventKind.TIMEOUT,
            EventKind.MODULE_FAILURE,
        }
    ),
    Phase.HUMAN_TURN: frozenset(
        {
            EventKind.CUBE_HANDED_OVER,
            EventKind.STICKER_DESCRIBED,
            EventKind.HUMAN_SPEECH_FINAL,
            EventKind.FEEDBACK_DELIVERED,
            EventKind.TIMEOUT,
            EventKind.MODULE_FAILURE,
        }
    ),
    Phase.ICUB_TURN_CLOSE: frozenset(
        {
            EventKind.CUBE_HANDED_OVER,
            EventKind.STICKER_DESCRIBED,
            EventKind.STORY_SNIPPET_READY,
            EventKind.TIMEOUT,
            EventKind.MODULE_FAILURE,
        }
    ),
    Phase.WRAP_UP: frozenset(
        {
            EventKind.STORY_SNIPPET_READY,
            EventKind.RECAP_DELIVERED,
            EventKind.TIMEOUT,
            EventKind.MODULE_FAILURE,
        }
    ),
    Phase.CLOSURE: frozenset(),
    Phase.FAILURE_RECOVERY: frozenset({EventKind.TIMEOUT}),
}

TRIAL_PHASES = (
    Phase.ICUB_TURN_OPEN,
    Phase.HUMAN_TURN,
    Phase.ICUB_TURN_CLOSE,
    Phase.WRAP_UP,
)


class IllegalTransition(Exception):
    """Event not admissible in the current phase (strict mode only)."""


def admissible(phase: Phase) -> frozenset[EventKind]:
    return _ADMISSIBLE[phase]


@dataclass(frozen=True)
class TransitionEvent:
    kind: EventKind
    payload: Mapping = field(default_factory=dict)
    received_at: int = 0


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    params: Mapping = field(default_factory=dict)
    gen: int = 0


@dataclass(frozen=True)
class SessionState:
    config: SessionConfig
    phase: Phase = Phase.IDLE
    trial_index: int = 0
    participant_id: str = ""
    stage: Optional[str] = None
    await_gen: int = 0
    retry_counts: Mapping[str, int] = field(default_factory=dict)
    transcript: StoryTranscript = field(default_factory=StoryTranscript)
    cube_sequence: tuple[str, ...] = ()
    descriptions: tuple[StickerDescription, ...] = ()
    last_observation: Optional[Mapping] = None
    completed: tuple[TrialRecord, ...] = ()
    pending_failure: Optional[str] = None

    def __post_init__(self):
        if self.trial_index > self.trials_total:
            raise ValueError("trial_index beyond trials_total")
        for kind, count in self.retry_counts.items():
            if count > self.config.max_retries:
                raise ValueError("retry count for %s exceeds maximum" % kind)

    @property
    def trials_total(self) -> int:
        return self.config.trials_total


def initial_state(config: SessionConfig) -> SessionState:
    return SessionState(config=config)


def _feedback_text(config: SessionConfig, trial_index: int) -> str:
    digest = hashlib.sha256(("%d:%d" % (config.seed, trial_index)).encode()).digest()
    return config.feedback_templates[digest[0] % len(config.feedback_templates)]


def _speak(text: str) -> Command:
    return Command(CommandKind.SPEAK, {"text": text})


def _fresh_trial(state: SessionState, trial_index: int) -> SessionState:
    return replace(
        state,
        phase=Phase.ICUB_TURN_OPEN,
        trial_index=trial_index,
        stage="cube",
        await_gen=state.await_gen + 1,
        retry_counts={},
        transcript=StoryTranscript(),
        cube_sequence=(),
        descriptions=(),
        last_observation=None,
        pending_failure=None,
    )


def _finalize(state: SessionState, outcome: str, failure_kind: Optional[str] = None) -> SessionState:
    record = TrialRecord(
        trial_index=state.trial_index,
        cube_sequence=state.cube_sequence,
        vlm_descriptions=state.descriptions,
        transcript=state.transcript,
        outcome=outcome,
        failure_kind=failure_kind,
        annotations=Annotations(),
    )
    return replace(state, completed=state.completed + (record,))


def _close_session(state: SessionState, *, joyful: bool) -> tuple[SessionState, tuple[Command, ...]]:
    cfg = state.config
    commands: list[Command] = []
    if joyful:
        commands.append(_speak(cfg.phrase("joy")))
    commands.append(Command(CommandKind.GREET, {"text": cfg.phrase("farewell")}))
    commands.append(Command(CommandKind.END_SESSION))
    new = replace(
        state,
        phase=Phase.CLOSURE,
        stage="done",
        await_gen=state.await_gen + 1,
        pending_failure=None,
    )
    return new, tuple(commands)


def _stage_commands(state: SessionState, stage: str, gen: int, *, retry: bool) -> tuple[Command, ...]:
    """Commands that (re)arm a stage; retry variants prepend an apology."""
    cfg = state.config
    out: list[Command] = []
    if stage == "enroll":
        out.append(Command(CommandKind.ENROLL_PARTNER,
                           {"duration_s": cfg.enroll_duration_s,
                            "timeout_s": cfg.enroll_timeout_s}, gen))
    elif stage == "cube":
        if retry:
            out.append(_speak(cfg.phrase("retry_cube")))
        out.append(Command(CommandKind.REQUEST_CUBE,
                           {"timeout_s": cfg.cube_timeout_s}, gen))
    elif stage == "describe":
        if retry:
            out.append(_speak(cfg.phrase("retry_genai")))
        out.append(Command(CommandKind.CALL_VLM,
                           {"observation": state.last_observation}, gen))
    elif stage == "narrate":
        if retry:
            out.append(_speak(cfg.phrase("retry_genai")))
        step_name = "opening" if state.phase == Phase.ICUB_TURN_OPEN else "ending"
        out.append(Command(CommandKind.CALL_LLM,
                           {"step": step_name,
                            "description": state.descriptions[-1].to_dict(),
                            "context": state.transcript.to_dict(),
                            "trial_index": state.trial_index}, gen))
    elif stage == "listen":
        if retry:
            out.append(_speak(cfg.phrase("reprompt_listen")))
        out.append(Command(CommandKind.LISTEN,
                           {"deadline_s": cfg.speech_timeout_s}, gen))
    elif stage == "feedback":
        out.append(Command(CommandKind.EMIT_FEEDBACK,
                           {"text": _feedback_text(cfg, state.trial_index)}, gen))
    elif stage == "recap_gen":
        if retry:
            out.append(_speak(cfg.phrase("retry_genai")))
        out.append(Command(CommandKind.RECAP,
                           {"transcript": state.transcript.to_dict(),
                            "trial_index": state.trial_index}, gen))
    elif stage == "recap_speak":
        recap = state.transcript.first("recap")
        out.append(Command(CommandKind.DELIVER_RECAP,
                           {"text": recap.text if recap else ""}, gen))
    return tuple(out)


def _fail(state: SessionState, kind: str) -> tuple[SessionState, tuple[Command, ...]]:
    cfg = state.config
    used = state.retry_counts.get(kind, 0)
    if used < cfg.max_retries:
        counts = dict(state.retry_counts)
        counts[kind] = used + 1
        gen = state.await_gen + 1
        new = replace(state, retry_counts=counts, await_gen=gen)
        return new, _stage_commands(new, state.stage or "", gen, retry=True)
    new = replace(
        state,
        phase=Phase.FAILURE_RECOVERY,
        stage="recover",
        await_gen=state.await_gen + 1,
        pending_failure=kind,
    )
    return new, (_speak(cfg.phrase("recovery")),)


def step(
    state: SessionState, event: TransitionEvent, *, strict: bool = False
) -> tuple[SessionState, tuple[Command, ...]]:
    kind = event.kind
    if kind not in _ADMISSIBLE[state.phase]:
        if strict:
            raise IllegalTransition("%s not admissible in %s" % (kind.value, state.phase.value))
        return state, ()
    gen = event.payload.get("gen")
    if gen is not None and gen != state.await_gen:
        return state, ()  # stale completion from an earlier stage
    cfg = state.config

    if kind == EventKind.START_SESSION:
        new = replace(state, phase=Phase.INTRODUCTION, stage="enroll",
                      await_gen=state.await_gen + 1)
        return new, (_speak(cfg.phrase("welcome")),) + _stage_commands(
            new, "enroll", new.await_gen, retry=False
        )

    if kind == EventKind.TIMEOUT:
        if state.stage is None:
            return state, ()
        if state.phase == Phase.FAILURE_RECOVERY:
            return _leave_recovery(state)
        return _fail(state, STAGE_FAILURE_KIND.get(state.stage, "other"))

    if kind == EventKind.MODULE_FAILURE:
        declared = event.payload.get("failure_kind")
        fallback = STAGE_FAILURE_KIND.get(state.stage or "", "other")
        return _fail(state, declared or fallback)

    if kind == EventKind.PARTICIPANT_RECOGNIZED:
        if state.stage != "enroll":
            return state, ()
        new = _fresh_trial(
            replace(state, participant_id=str(event.payload.get("participant_id", ""))),
            trial_index=1,
        )
        return new, (_speak(cfg.phrase("briefing")),) + _stage_commands(
            new, "cube", new.await_gen, retry=False
        )

    if kind == EventKind.CUBE_HANDED_OVER:
        if state.stage != "cube":
            return state, ()
        obs = dict(event.payload.get("observation", {}))
        if float(obs.get("confidence", 0.0)) < cfg.cube_confidence_min:
            return _fail(state, "sticker_detection")
        true_label = obs.get("true_label") or obs.get("class_label", "")
        new = replace(
            state,
            stage="describe",
            await_gen=state.await_gen + 1,
            cube_sequence=state.cube_sequence + (str(true_label),),
            last_observation=obs,
        )
        return new, _stage_commands(new, "describe", new.await_gen, retry=False)

    if kind == EventKind.STICKER_DESCRIBED:
        if state.stage != "describe":
            return state, ()
        desc = StickerDescription.from_dict(dict(event.payload["description"]))
        new = replace(
            state,
            descriptions=state.descriptions + (desc,),
            await_gen=state.await_gen + 1,
        )
        if state.phase == Phase.HUMAN_TURN:
            new = replace(new, stage="listen")
            return new, _stage_commands(new, "listen", new.await_gen, retry=False)
        new = replace(new, stage="narrate")
        speak_desc = _speak(cfg.phrase("see_sticker", description=desc.text))
        return new, (speak_desc,) + _stage_commands(new, "narrate", new.await_gen, retry=False)

    if kind == EventKind.STORY_SNIPPET_READY:
        snippet = StorySnippet.from_dict(dict(event.payload["snippet"]))
        if state.phase == Phase.ICUB_TURN_OPEN and state.stage == "narrate":
            turn = Turn("robot", "opening", snippet.text, state.cube_sequence[0])
            new = replace(
                state,
                phase=Phase.HUMAN_TURN,
                stage="cube",
                await_gen=state.await_gen + 1,
                transcript=state.transcript.with_turn(turn),
            )
            return new, (
                _speak(snippet.text),
                _speak(cfg.phrase("invite_continue")),
            ) + _stage_commands(new, "cube", new.await_gen, retry=False)
        if state.phase == Phase.ICUB_TURN_CLOSE and state.stage == "narrate":
            turn = Turn("robot", "ending", snippet.text, state.cube_sequence[-1])
            new = replace(
                state,
                phase=Phase.WRAP_UP,
                stage="recap_gen",
                await_gen=state.await_gen + 1,
                transcript=state.transcript.with_turn(turn),
            )
            return new, (_speak(snippet.text),) + _stage_commands(
                new, "recap_gen", new.await_gen, retry=False
            )
        if state.phase == Phase.WRAP_UP and state.stage == "recap_gen":
            turn = Turn("robot", "recap", snippet.text)
            new = replace(
                state,
                stage="recap_speak",
                await_gen=state.await_gen + 1,
                transcript=state.transcript.with_turn(turn),
            )
            return new, (_speak(cfg.phrase("recap_intro")),) + _stage_commands(
                new, "recap_speak", new.await_gen, retry=False
            )
        return state, ()

    if kind == EventKind.HUMAN_SPEECH_FINAL:
        if state.stage != "listen":
            return state, ()
        text = str(event.payload.get("text", "")).strip()
        if not text:
            return _fail(state, "voice_timeout")
        cube = state.cube_sequence[-1] if state.cube_sequence else None
        new = replace(
            state,
            stage="feedback",
            await_gen=state.await_gen + 1,
            transcript=state.transcript.with_turn(Turn("human", "human", text, cube)),
        )
        return new, _stage_commands(new, "feedback", new.await_gen, retry=False)

    if kind == EventKind.FEEDBACK_DELIVERED:
        if state.stage != "feedback":
            return state, ()
        new = replace(
            state,
            phase=Phase.ICUB_TURN_CLOSE,
            stage="cube",
            await_gen=state.await_gen + 1,
        )
        return new, (_speak(cfg.phrase("invite_ending")),) + _stage_commands(
            new, "cube", new.await_gen, retry=False
        )

    if kind == EventKind.RECAP_DELIVERED:
        if state.stage != "recap_speak":
            return state, ()
        done = _finalize(state, "success")
        if state.trial_index < state.trials_total:
            new = _fresh_trial(done, state.trial_index + 1)
            return new, (_speak(cfg.phrase("next_trial")),) + _stage_commands(
                new, "cube", new.await_gen, retry=False
            )
        return _close_session(done, joyful=True)

    return state, ()


def _leave_recovery(state: SessionState) -> tuple[SessionState, tuple[Command, ...]]:
    """Recovery pause elapsed: write off the trial and move on."""
    cfg = state.config
    if state.trial_index == 0:
        # enrollment never succeeded; there is no trial to record
        return _close_session(state, joyful=False)
    done = _finalize(state, "failed", state.pending_failure or "other")
    if state.trial_index < state.trials_total:
        new = _fresh_trial(done, state.trial_index + 1)
        return new, (_speak(cfg.phrase("next_trial")),) + _stage_commands(
            new, "cube", new.await_gen, retry=False
        )
    return _close_session(done, joyful=False)


def force_retry(state: SessionState) -> tuple[SessionState, tuple[Command, ...]]:
    """Operator override: redo the current trial from its first cube instead
    of writing it off.  Only meaningful during FailureRecovery."""
    if state.phase != Phase.FAILURE_RECOVERY or state.trial_index == 0:
        return state, ()
    new = _fresh_trial(state, state.trial_index)
    return new, (_speak(state.config.phrase("retry_cube")),) + _stage_commands(
        new, "cube", new.await_gen, retry=False
    )


def abort(state: SessionState) -> tuple[SessionState, tuple[Command, ...]]:
    """Operator abort: record the in-flight trial as aborted and close."""
    if state.phase in (Phase.IDLE, Phase.CLOSURE):
        return replace(state, phase=Phase.CLOSURE, stage="done"), (
            Command(CommandKind.END_SESSION),
        )
    if state.trial_index >= 1 and state.phase in TRIAL_PHASES + (Phase.FAILURE_RECOVERY,):
        state = _finalize(state, "aborted")
    new = replace(state, phase=Phase.CLOSURE, stage="done",
                  await_gen=state.await_gen + 1, pending_failure=None)
    return new, (
        Command(CommandKind.GREET, {"text": state.config.phrase("farewell")}),
        Command(CommandKind.END_SESSION),
    )


def graph() -> dict:
    """Phase graph for console rendering."""
    nodes = [p.value for p in Phase]
    edges = [
        {"from": "Idle", "to": "Introduction", "on": "StartSession"},
        {"from": "Introduction", "to": "IcubTurnOpen", "on": "ParticipantRecognized"},
        {"from": "IcubTurnOpen", "to": "HumanTurn", "on": "StorySnippetReady(opening)"},
        {"from": "HumanTurn", "to": "IcubTurnClose", "on": "FeedbackDelivered"},
        {"from": "IcubTurnClose", "to": "WrapUp", "on": "StorySnippetReady(ending)"},
        {"from": "WrapUp", "to": "IcubTurnOpen", "on": "RecapDelivered(next trial)"},
        {"from": "WrapUp", "to": "Closure", "on": "RecapDelivered(last trial)"},
        {"from": "FailureRecovery", "to": "IcubTurnOpen", "on": "Timeout(next trial)"},
        {"from": "FailureRecovery", "to": "Closure", "on": "Timeout(last trial)"},
    ]
    for p in (Phase.INTRODUCTION,) + TRIAL_PHASES:
        edges.append({"from": p.value, "to": "FailureRecovery", "on": "retries exhausted"})
    return {"nodes": nodes, "edges": edges}
