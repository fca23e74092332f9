import json
import random

import pytest

from narravine.genai import StickerDescription
from narravine.store import (
    CUBES_PER_TRIAL,
    FAILURE_KINDS,
    OUTCOMES,
    Annotations,
    EmptyInput,
    SessionStore,
    TrialRecord,
    compute_metrics,
    description_matches,
    load_record,
    load_session_records,
    match_token,
    persist,
)
from narravine.story import StoryTranscript, Turn


def desc(text, cube):
    return StickerDescription(text=text, word_count=len(text.split()),
                              source_cube=cube, latency_ms=2)


def full_record(trial=1, outcome="success", failure_kind=None,
                annotations=Annotations()):
    cubes = ("castle", "alien", "key")
    transcript = (
        StoryTranscript()
        .with_turn(Turn("robot", "opening", "Once upon a time, a castle appeared.", "castle"))
        .with_turn(Turn("human", "human", "An alien came by.", "alien"))
        .with_turn(Turn("robot", "ending", "Finally, a key saved the day.", "key"))
        .with_turn(Turn("robot", "recap", "Castle, alien, key. The end."))
    )
    return TrialRecord(
        trial_index=trial,
        cube_sequence=cubes,
        vlm_descriptions=tuple(desc("a drawing of a %s here" % match_token(c), c) for c in cubes),
        transcript=transcript,
        outcome=outcome,
        failure_kind=failure_kind,
        annotations=annotations,
    )


def test_match_token_uses_last_segment():
    assert match_token("mushroom_house") == "house"
    assert match_token("castle") == "castle"
    assert match_token("Mushroom_House") == "house"


def test_description_matching_is_token_based():
    assert description_matches(desc("a mushroom house with red roof", "mushroom_house"),
                               "mushroom_house")
    assert description_matches(desc("A grey smiling koala!", "koala"), "koala")
    assert not description_matches(desc("a lighthouse by the sea", "koala"), "koala")
    # substring is not a token match
    assert not description_matches(desc("a henhouse of chickens", "mushroom_house"),
                                   "mushroom_house")


def test_record_round_trip():
    rec = full_record()
    again = TrialRecord.from_dict(rec.to_dict())
    assert again == rec


def test_record_validation():
    with pytest.raises(ValueError):
        full_record(outcome="escaped")
    with pytest.raises(ValueError):
        full_record(outcome="failed", failure_kind="gremlins")
    with pytest.raises(ValueError):
        full_record(outcome="failed")  # failed requires a kind
    ok = full_record(outcome="failed", failure_kind="voice_timeout")
    assert ok.failure_kind in FAILURE_KINDS


def test_persist_and_load(tmp_path):
    rec = full_record(trial=2)
    path = persist(rec, tmp_path)
    assert path.name == "trial_2.rec"
    assert load_record(path) == rec
    json.loads(path.read_text())  # stays plain JSON on disk


def test_load_session_records_sorted(tmp_path):
    for t in (3, 1, 2):
        persist(full_record(trial=t), tmp_path)
    assert [r.trial_index for r in load_session_records(tmp_path)] == [1, 2, 3]


def test_metrics_example_by_hand():
    records = [
        full_record(trial=1),
        full_record(trial=2, outcome="failed", failure_kind="cube_drop"),
        full_record(trial=3, annotations=Annotations(llm_added_elements=True)),
    ]
    m = compute_metrics(records)
    assert m.n_records == 3
    assert m.n_success == 2
    assert m.success_rate == pytest.approx(2 / 3)
    assert m.n_descriptions == 9
    assert m.n_matches == 9
    assert m.vlm_agreement == 1.0
    assert m.n_additions == 1
    assert m.llm_addition_rate == pytest.approx(1 / 3)
    assert m.failure_count_map() == {"cube_drop": 1}


def test_metrics_reject_empty():
    with pytest.raises(EmptyInput):
        compute_metrics([])


def random_record(rng, trial):
    outcome = rng.choice(OUTCOMES)
    kind = rng.choice(FAILURE_KINDS) if outcome == "failed" else None
    # a success always carries a full cube set; anything else may be partial
    n_cubes = CUBES_PER_TRIAL if outcome == "success" else rng.randint(0, CUBES_PER_TRIAL)
    pool = ["castle", "alien", "key", "drum", "koala", "mushroom_house"]
    cubes = tuple(rng.sample(pool, n_cubes))
    descriptions = []
    for c in cubes:
        if rng.random() < 0.6:
            descriptions.append(desc("a nice %s drawing" % match_token(c), c))
        else:
            descriptions.append(desc("something else entirely", c))
    return TrialRecord(
        trial_index=trial,
        cube_sequence=cubes,
        vlm_descriptions=tuple(descriptions),
        transcript=StoryTranscript(),
        outcome=outcome,
        failure_kind=kind,
        annotations=Annotations(
            llm_added_elements=rng.random() < 0.5,
            llm_fixed_human=rng.random() < 0.5,
        ),
    )


def brute_force(records):
    succ = sum(r.outcome == "success" for r in records)
    total_desc = match = 0
    for r in records:
        for cube, d in zip(r.cube_sequence, r.vlm_descriptions):
            total_desc += 1
            token = cube.rsplit("_", 1)[-1].lower()
            words = {w.lower().strip(".,!?;:'\"") for w in d.text.split()}
            match += token in words
    return {
        "n_success": succ,
        "n_descriptions": total_desc,
        "n_matches": match,
        "n_additions": sum(r.annotations.llm_added_elements for r in records),
        "n_fixes": sum(r.annotations.llm_fixed_human for r in records),
    }


def test_metrics_match_brute_force_on_random_sets():
    rng = random.Random(42)
    for _ in range(30):
        records = [random_record(rng, t + 1) for t in range(rng.randint(1, 8))]
        m = compute_metrics(records)
        expect = brute_force(records)
        assert m.n_success == expect["n_success"]
        assert m.n_descriptions == expect["n_descriptions"]
        assert m.n_matches == expect["n_matches"]
        assert m.n_additions == expect["n_additions"]
        assert m.n_fixes == expect["n_fixes"]


def test_session_store_logs_and_meta(tmp_path):
    store = SessionStore(tmp_path / "s")
    store.write_meta({"status": "running"})
    store.append_fsm_log({"phase_from": "Idle", "phase_to": "Introduction"})
    store.append_fsm_log({"phase_from": "Introduction", "phase_to": "IcubTurnOpen"})
    store.append_genai_log({"endpoint": "describe"})
    store.append_transcript("robot: Hello!")
    assert store.read_meta()["status"] == "running"
    lines = (tmp_path / "s" / "fsm.log").read_text().strip().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["phase_to"] == "Introduction"
    assert "Hello" in (tmp_path / "s" / "transcript.txt").read_text()


def test_annotations_round_trip():
    ann = Annotations(llm_added_elements=True, llm_fixed_human=False)
    assert Annotations.from_dict(ann.to_dict()) == ann
