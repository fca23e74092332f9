import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narravine import fsm
from narravine.config import SessionConfig
from narravine.fsm import (
    Command,
    CommandKind,
    EventKind,
    IllegalTransition,
    Phase,
    TransitionEvent,
    admissible,
    initial_state,
    step,
)
from narravine.genai import StickerDescription, StorySnippet


def config(**overrides):
    base = dict(manifest_path="fixtures/stickers.json", trials_total=3)
    base.update(overrides)
    return SessionConfig(**base)


def ev(kind, **payload):
    return TransitionEvent(kind=kind, payload=payload)


def observation(label, confidence=0.97):
    return {"bbox": (100, 100, 90, 90), "class_label": label,
            "confidence": confidence, "frame_ts": 0, "true_label": label}


def desc_payload(label, text=None):
    text = text or ("a friendly %s drawing" % label.rsplit("_", 1)[-1])
    return StickerDescription(text=text, word_count=len(text.split()),
                              source_cube=label, latency_ms=1).to_dict()


def snippet_payload(step_name, trial, text=None):
    text = text or ("Once upon a time, something happened." if step_name == "opening"
                    else "Finally, it all worked out fine.")
    return StorySnippet(text=text, word_count=len(text.split()),
                        step=step_name, trial_index=trial).to_dict()


def kinds(commands):
    return [c.kind for c in commands]


def run_sequence(state, events):
    emitted = []
    for e in events:
        state, cmds = step(state, e)
        emitted.extend(cmds)
    return state, emitted


def happy_trial_events(state):
    """The completion events one clean trial feeds back, given current state."""
    t = state.trial_index
    g = lambda s: s.await_gen  # noqa: E731 - terse on purpose
    return t, g


def drive_one_trial(state, cubes=("castle", "alien", "key")):
    """Feeds a full successful trial; returns the state after RecapDelivered."""
    state, _ = step(state, ev(EventKind.CUBE_HANDED_OVER, observation=observation(cubes[0]),
                              gen=state.await_gen))
    state, _ = step(state, ev(EventKind.STICKER_DESCRIBED, description=desc_payload(cubes[0]),
                              gen=state.await_gen))
    state, _ = step(state, ev(EventKind.STORY_SNIPPET_READY,
                              snippet=snippet_payload("opening", state.trial_index),
                              gen=state.await_gen))
    assert state.phase is Phase.HUMAN_TURN
    state, _ = step(state, ev(EventKind.CUBE_HANDED_OVER, observation=observation(cubes[1]),
                              gen=state.await_gen))
    state, _ = step(state, ev(EventKind.STICKER_DESCRIBED, description=desc_payload(cubes[1]),
                              gen=state.await_gen))
    assert state.stage == "listen"
    state, _ = step(state, ev(EventKind.HUMAN_SPEECH_FINAL,
                              text="then the %s arrived" % cubes[1], gen=state.await_gen))
    state, _ = step(state, ev(EventKind.FEEDBACK_DELIVERED, gen=state.await_gen))
    assert state.phase is Phase.ICUB_TURN_CLOSE
    state, _ = step(state, ev(EventKind.CUBE_HANDED_OVER, observation=observation(cubes[2]),
                              gen=state.await_gen))
    state, _ = step(state, ev(EventKind.STICKER_DESCRIBED, description=desc_payload(cubes[2]),
                              gen=state.await_gen))
    state, _ = step(state, ev(EventKind.STORY_SNIPPET_READY,
                              snippet=snippet_payload("ending", state.trial_index),
                              gen=state.await_gen))
    assert state.phase is Phase.WRAP_UP
    state, _ = step(state, ev(EventKind.STORY_SNIPPET_READY,
                              snippet=snippet_payload("recap", state.trial_index,
                                                      text="And so the story ends."),
                              gen=state.await_gen))
    state, cmds = step(state, ev(EventKind.RECAP_DELIVERED, gen=state.await_gen))
    return state, cmds


def to_introduction(cfg=None):
    state = initial_state(cfg or config())
    state, _ = step(state, ev(EventKind.START_SESSION))
    return state


def to_first_cube(cfg=None):
    state = to_introduction(cfg)
    state, _ = step(state, ev(EventKind.PARTICIPANT_RECOGNIZED,
                              participant_id="p01", gen=state.await_gen))
    return state


# --- admissibility ------------------------------------------------------------

def test_idle_admits_only_start():
    assert admissible(Phase.IDLE) == frozenset({EventKind.START_SESSION})


def test_closure_admits_nothing():
    assert admissible(Phase.CLOSURE) == frozenset()


def test_inadmissible_event_is_a_silent_no_op():
    state = initial_state(config())
    out, cmds = step(state, ev(EventKind.CUBE_HANDED_OVER, observation=observation("castle")))
    assert out is state
    assert cmds == ()


def test_inadmissible_event_raises_in_strict_mode():
    state = initial_state(config())
    with pytest.raises(IllegalTransition):
        step(state, ev(EventKind.RECAP_DELIVERED), strict=True)


# --- the documented transitions -------------------------------------------------

def test_start_session_enters_introduction():
    state = initial_state(config())
    new, cmds = step(state, ev(EventKind.START_SESSION))
    assert new.phase is Phase.INTRODUCTION
    assert new.stage == "enroll"
    assert kinds(cmds) == [CommandKind.SPEAK, CommandKind.ENROLL_PARTNER]


def test_recognition_starts_first_icub_turn():
    state = to_introduction()
    new, cmds = step(state, ev(EventKind.PARTICIPANT_RECOGNIZED,
                               participant_id="p01", gen=state.await_gen))
    assert new.phase is Phase.ICUB_TURN_OPEN
    assert new.trial_index == 1
    assert new.participant_id == "p01"
    assert kinds(cmds) == [CommandKind.SPEAK, CommandKind.REQUEST_CUBE]
    assert "story" in cmds[0].params["text"]  # the task briefing line


def test_recap_delivered_mid_session_starts_next_trial():
    state = to_first_cube()
    state, cmds = drive_one_trial(state)
    assert state.phase is Phase.ICUB_TURN_OPEN
    assert state.trial_index == 2
    assert state.completed[-1].outcome == "success"
    assert kinds(cmds) == [CommandKind.SPEAK, CommandKind.REQUEST_CUBE]


def test_recap_delivered_on_last_trial_closes_joyfully():
    state = to_first_cube(config(trials_total=1))
    state, cmds = drive_one_trial(state)
    assert state.phase is Phase.CLOSURE
    assert state.stage == "done"
    assert kinds(cmds) == [CommandKind.SPEAK, CommandKind.GREET, CommandKind.END_SESSION]
    assert len(state.completed) == 1


def test_full_three_trial_walk():
    state = to_first_cube()
    cube_sets = [("castle", "alien", "key"),
                 ("mushroom_house", "koala", "balloon"),
                 ("lighthouse", "pirate", "drum")]
    for cubes in cube_sets:
        state, _ = drive_one_trial(state, cubes)
    assert state.phase is Phase.CLOSURE
    assert [r.outcome for r in state.completed] == ["success"] * 3
    assert state.completed[1].cube_sequence == ("mushroom_house", "koala", "balloon")
    steps = [t.step for t in state.completed[0].transcript.turns]
    assert steps == ["opening", "human", "ending", "recap"]


# --- purity and determinism -----------------------------------------------------

def test_step_is_deterministic():
    state = to_first_cube()
    e = ev(EventKind.CUBE_HANDED_OVER, observation=observation("castle"),
           gen=state.await_gen)
    out1 = step(state, e)
    out2 = step(state, e)
    assert out1 == out2


def test_step_does_not_mutate_input_state():
    state = to_first_cube()
    before = state
    step(state, ev(EventKind.CUBE_HANDED_OVER, observation=observation("castle"),
                   gen=state.await_gen))
    assert state == before
    assert state.cube_sequence == ()


def test_stale_generation_is_ignored():
    state = to_first_cube()
    stale = ev(EventKind.CUBE_HANDED_OVER, observation=observation("castle"),
               gen=state.await_gen - 1)
    out, cmds = step(state, stale)
    assert out is state
    assert cmds == ()


# --- failures and retries ---------------------------------------------------------

def test_low_confidence_handover_takes_detection_retry():
    state = to_first_cube()
    new, cmds = step(state, ev(EventKind.CUBE_HANDED_OVER,
                               observation=observation("castle", confidence=0.3),
                               gen=state.await_gen))
    assert new.phase is Phase.ICUB_TURN_OPEN  # stays in the same turn
    assert new.retry_counts["sticker_detection"] == 1
    assert kinds(cmds) == [CommandKind.SPEAK, CommandKind.REQUEST_CUBE]
    assert new.cube_sequence == ()


def test_retry_budget_exhaustion_enters_recovery():
    state = to_first_cube()
    for expected_count in (1, 2):
        state, _ = step(state, ev(EventKind.TIMEOUT, gen=state.await_gen))
        assert state.retry_counts["cube_drop"] == expected_count
        assert state.phase is Phase.ICUB_TURN_OPEN
    state, cmds = step(state, ev(EventKind.TIMEOUT, gen=state.await_gen))
    assert state.phase is Phase.FAILURE_RECOVERY
    assert state.pending_failure == "cube_drop"
    assert kinds(cmds) == [CommandKind.SPEAK]


def test_recovery_timeout_writes_off_trial_and_moves_on():
    state = to_first_cube()
    for _ in range(3):
        state, _ = step(state, ev(EventKind.TIMEOUT, gen=state.await_gen))
    state, cmds = step(state, ev(EventKind.TIMEOUT, gen=state.await_gen))
    assert state.phase is Phase.ICUB_TURN_OPEN
    assert state.trial_index == 2
    assert state.completed[-1].outcome == "failed"
    assert state.completed[-1].failure_kind == "cube_drop"


def test_recovery_on_final_trial_closes_session():
    state = to_first_cube(config(trials_total=1))
    for _ in range(3):
        state, _ = step(state, ev(EventKind.TIMEOUT, gen=state.await_gen))
    state, cmds = step(state, ev(EventKind.TIMEOUT, gen=state.await_gen))
    assert state.phase is Phase.CLOSURE
    assert state.completed[-1].outcome == "failed"
    # no joy on a failed finale, but still a farewell
    assert kinds(cmds) == [CommandKind.GREET, CommandKind.END_SESSION]


def test_module_failure_carries_declared_kind():
    state = to_first_cube()
    new, _ = step(state, ev(EventKind.MODULE_FAILURE, failure_kind="cube_drop",
                            gen=state.await_gen))
    assert new.retry_counts == {"cube_drop": 1}


def test_retry_budgets_tracked_per_kind():
    state = to_first_cube()
    state, _ = step(state, ev(EventKind.TIMEOUT, gen=state.await_gen))  # cube_drop 1
    state, _ = step(state, ev(EventKind.CUBE_HANDED_OVER,
                              observation=observation("castle", confidence=0.2),
                              gen=state.await_gen))  # sticker_detection 1
    assert state.retry_counts == {"cube_drop": 1, "sticker_detection": 1}
    assert state.phase is Phase.ICUB_TURN_OPEN


def test_speech_timeout_maps_to_voice_kind():
    state = to_first_cube()
    state, _ = step(state, ev(EventKind.CUBE_HANDED_OVER, observation=observation("castle"),
                              gen=state.await_gen))
    state, _ = step(state, ev(EventKind.STICKER_DESCRIBED, description=desc_payload("castle"),
                              gen=state.await_gen))
    state, _ = step(state, ev(EventKind.STORY_SNIPPET_READY,
                              snippet=snippet_payload("opening", 1), gen=state.await_gen))
    state, _ = step(state, ev(EventKind.CUBE_HANDED_OVER, observation=observation("alien"),
                              gen=state.await_gen))
    state, _ = step(state, ev(EventKind.STICKER_DESCRIBED, description=desc_payload("alien"),
                              gen=state.await_gen))
    assert state.stage == "listen"
    state, cmds = step(state, ev(EventKind.TIMEOUT, gen=state.await_gen))
    assert state.retry_counts == {"voice_timeout": 1}
    # reprompt apology then a fresh listen window
    assert kinds(cmds) == [CommandKind.SPEAK, CommandKind.LISTEN]


# --- operator verbs ----------------------------------------------------------------

def test_force_retry_outside_recovery_is_a_no_op():
    state = to_first_cube()
    out, cmds = fsm.force_retry(state)
    assert out is state
    assert cmds == ()


def test_force_retry_reruns_same_trial_fresh():
    state = to_first_cube()
    state, _ = step(state, ev(EventKind.CUBE_HANDED_OVER, observation=observation("castle"),
                              gen=state.await_gen))
    for _ in range(3):
        state, _ = step(state, ev(EventKind.TIMEOUT, gen=state.await_gen))
    assert state.phase is Phase.FAILURE_RECOVERY
    new, cmds = fsm.force_retry(state)
    assert new.phase is Phase.ICUB_TURN_OPEN
    assert new.trial_index == 1
    assert new.cube_sequence == ()
    assert new.retry_counts == {}
    assert len(new.completed) == 0  # retried, not written off


def test_abort_finalizes_current_trial_and_closes():
    state = to_first_cube()
    state, _ = step(state, ev(EventKind.CUBE_HANDED_OVER, observation=observation("castle"),
                              gen=state.await_gen))
    new, cmds = fsm.abort(state)
    assert new.phase is Phase.CLOSURE
    assert new.completed[-1].outcome == "aborted"
    assert CommandKind.END_SESSION in kinds(cmds)


def test_abort_from_idle_just_closes():
    state = initial_state(config())
    new, _ = fsm.abort(state)
    assert new.phase is Phase.CLOSURE
    assert new.completed == ()


# --- graph export --------------------------------------------------------------------

def test_graph_shape():
    g = fsm.graph()
    assert set(g["nodes"]) == {p.value for p in Phase}
    assert len(g["nodes"]) == 8
    edges = {(e["from"], e["to"]) for e in g["edges"]}
    assert ("Idle", "Introduction") in edges
    assert ("WrapUp", "IcubTurnOpen") in edges
    assert ("WrapUp", "Closure") in edges


# --- properties ------------------------------------------------------------------------

EVENT_BUILDERS = [
    lambda s: ev(EventKind.START_SESSION),
    lambda s: ev(EventKind.PARTICIPANT_RECOGNIZED, participant_id="p", gen=s.await_gen),
    lambda s: ev(EventKind.CUBE_HANDED_OVER, observation=observation("castle"), gen=s.await_gen),
    lambda s: ev(EventKind.CUBE_HANDED_OVER, observation=observation("drum", 0.1), gen=s.await_gen),
    lambda s: ev(EventKind.STICKER_DESCRIBED, description=desc_payload("castle"), gen=s.await_gen),
    lambda s: ev(EventKind.STORY_SNIPPET_READY,
                 snippet=snippet_payload("opening", max(s.trial_index, 1)), gen=s.await_gen),
    lambda s: ev(EventKind.STORY_SNIPPET_READY,
                 snippet=snippet_payload("ending", max(s.trial_index, 1)), gen=s.await_gen),
    lambda s: ev(EventKind.STORY_SNIPPET_READY,
                 snippet=snippet_payload("recap", max(s.trial_index, 1), text="The end."),
                 gen=s.await_gen),
    lambda s: ev(EventKind.HUMAN_SPEECH_FINAL, text="a drum appears", gen=s.await_gen),
    lambda s: ev(EventKind.FEEDBACK_DELIVERED, gen=s.await_gen),
    lambda s: ev(EventKind.RECAP_DELIVERED, gen=s.await_gen),
    lambda s: ev(EventKind.TIMEOUT, gen=s.await_gen),
    lambda s: ev(EventKind.MODULE_FAILURE, failure_kind="llm_failure", gen=s.await_gen),
    lambda s: ev(EventKind.TIMEOUT, gen=s.await_gen - 1),  # always stale
]


@settings(max_examples=200, deadline=None)
@given(choices=st.lists(st.integers(min_value=0, max_value=len(EVENT_BUILDERS) - 1),
                        min_size=1, max_size=60))
def test_random_event_storms_never_corrupt_state(choices):
    state = initial_state(config())
    max_retries = state.config.max_retries
    trial_seen = state.trial_index
    for idx in choices:
        state, cmds = step(state, EVENT_BUILDERS[idx](state))
        assert state.phase in set(Phase)
        assert 0 <= state.trial_index <= state.trials_total
        assert state.trial_index >= trial_seen  # trials never run backwards
        trial_seen = state.trial_index
        assert all(v <= max_retries for v in state.retry_counts.values())
        assert len(state.completed) <= state.trials_total
        assert isinstance(cmds, tuple)
        assert all(isinstance(c, Command) for c in cmds)
        if state.phase is Phase.CLOSURE:
            # closure is terminal under every event
            for builder in EVENT_BUILDERS:
                after, emitted = step(state, builder(state))
                assert after is state and emitted == ()
            break
