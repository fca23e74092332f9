import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narravine.perception.faces import (
    EMBED_DIM,
    EmptyScene,
    NoFaceSeen,
    enroll_partner,
    identity_embedding,
    make_detection,
    recognize_partner,
)
from narravine.perception.gaze import (
    CONTACT_YAW_RAD,
    EYE_CONTACT,
    N_ELEMENTS,
    NO_EYE_CONTACT,
    GazeFeatureVector,
    MalformedFeature,
    classify_mutual_gaze,
    load_default_gaze_model,
    synth_gaze_dataset,
    synth_gaze_vector,
    train_gaze_model,
)
from narravine.perception.linear import LinearBinaryClassifier
from narravine.perception.objects import (
    CUBE_BASE_CONFIDENCE,
    DuplicateLabel,
    NoCubeVisible,
    ObjectClassRegistry,
)


# --- identity embeddings and enrollment -------------------------------------

def test_identity_embedding_is_unit_and_stable():
    a = identity_embedding("p01")
    b = identity_embedding("p01")
    c = identity_embedding("p02")
    assert a.shape == (EMBED_DIM,)
    assert np.allclose(a, b)
    assert not np.allclose(a, c)
    assert abs(float(np.linalg.norm(a)) - 1.0) < 1e-9


def test_make_detection_clamps_bbox_into_frame():
    det = make_detection("p01", area=90000, center=(5, 5))
    x, y, w, h = det.bbox
    assert x >= 0 and y >= 0
    assert w > 0 and h > 0


def _frame(*specs, rng=None):
    """specs: (identity, area) pairs rendered into one frame."""
    rng = rng or np.random.default_rng(0)
    return [
        make_detection(ident, area, noise=0.02, rng=rng, track_id=i)
        for i, (ident, area) in enumerate(specs)
    ]


def test_enrollment_labels_biggest_box_positive():
    rng = np.random.default_rng(1)
    frames = [_frame(("kid", 40000), ("parent", 15000), rng=rng) for _ in range(10)]
    model = enroll_partner(frames)
    assert model.n_frames == 10
    probe = _frame(("parent", 41000), ("kid", 12000), rng=rng)
    # areas flipped on purpose: recognition must follow the embedding
    chosen = recognize_partner(probe, model)
    assert chosen.track_id == 1


def test_enrollment_with_lone_face_still_discriminates():
    rng = np.random.default_rng(2)
    frames = [_frame(("solo", 30000), rng=rng) for _ in range(8)]
    model = enroll_partner(frames)
    probe = _frame(("solo", 20000), ("stranger", 45000), rng=rng)
    assert recognize_partner(probe, model).track_id == 0


def test_fallback_to_biggest_box_when_nobody_clears_threshold():
    rng = np.random.default_rng(3)
    frames = [_frame(("kid", 40000), rng=rng) for _ in range(8)]
    model = enroll_partner(frames)
    probe = _frame(("ghost1", 22000), ("ghost2", 36000), rng=rng)
    assert recognize_partner(probe, model).track_id == 1


def test_enroll_needs_at_least_one_face():
    with pytest.raises(NoFaceSeen):
        enroll_partner([[], [], []])


def test_recognize_empty_scene_raises():
    rng = np.random.default_rng(4)
    model = enroll_partner([_frame(("kid", 40000), rng=rng)])
    with pytest.raises(EmptyScene):
        recognize_partner([], model)


def test_multi_face_scenes_pick_enrolled_partner():
    rng = np.random.default_rng(5)
    hits = 0
    for i in range(20):
        partner = "partner_%d" % i
        others = ["other_%d_%d" % (i, j) for j in range(2)]
        frames = [
            _frame((partner, 38000 + 500 * f), (others[0], 15000), rng=rng)
            for f in range(10)
        ]
        model = enroll_partner(frames)
        probe = _frame((others[0], 30000), (partner, 18000), (others[1], 26000), rng=rng)
        if recognize_partner(probe, model).track_id == 1:
            hits += 1
    assert hits == 20


# --- gaze --------------------------------------------------------------------

def test_gaze_vector_has_57_elements_across_the_sweep():
    rng = np.random.default_rng(6)
    for yaw in np.linspace(-math.pi / 2, math.pi / 2, 41):
        vec = synth_gaze_vector(float(yaw), rng=rng)
        assert len(vec.elements) == N_ELEMENTS == 57


def test_gaze_vector_arity_and_confidence_validation():
    with pytest.raises(MalformedFeature):
        GazeFeatureVector(tuple([0.5] * 56))
    bad = [0.5] * 57
    bad[2] = 1.5  # confidence slot out of range
    with pytest.raises(MalformedFeature):
        GazeFeatureVector(tuple(bad))


def test_keypoints_round_trip():
    vec = synth_gaze_vector(0.2, rng=np.random.default_rng(7))
    again = GazeFeatureVector.from_keypoints(vec.keypoints())
    assert again == vec


def test_trained_model_separates_prototypes():
    vectors, labels = synth_gaze_dataset(n=160, seed=11)
    model = train_gaze_model(vectors, labels)
    rng = np.random.default_rng(12)
    assert classify_mutual_gaze(synth_gaze_vector(0.0, rng=rng), model) == EYE_CONTACT
    assert classify_mutual_gaze(synth_gaze_vector(0.1, rng=rng), model) == EYE_CONTACT
    assert classify_mutual_gaze(synth_gaze_vector(math.pi / 2, rng=rng), model) == NO_EYE_CONTACT
    assert classify_mutual_gaze(synth_gaze_vector(-1.2, rng=rng), model) == NO_EYE_CONTACT


def test_default_model_ships_with_the_package():
    model = load_default_gaze_model()
    rng = np.random.default_rng(13)
    assert classify_mutual_gaze(synth_gaze_vector(0.05, rng=rng), model) == EYE_CONTACT


@settings(max_examples=80, deadline=None)
@given(yaw=st.floats(min_value=-1.5, max_value=1.5), seed=st.integers(min_value=0, max_value=999))
def test_classifier_total_on_synthetic_inputs(yaw, seed):
    model = load_default_gaze_model()
    vec = synth_gaze_vector(yaw, rng=np.random.default_rng(seed))
    assert classify_mutual_gaze(vec, model) in (EYE_CONTACT, NO_EYE_CONTACT)


def test_classifier_respects_contact_threshold_outside_margin():
    model = load_default_gaze_model()
    rng = np.random.default_rng(14)
    for yaw in (-0.25, -0.1, 0.0, 0.1, 0.25):
        assert classify_mutual_gaze(synth_gaze_vector(yaw, rng=rng), model) == EYE_CONTACT
    for yaw in (-1.4, -0.8, 0.5, 0.9, 1.4):
        assert classify_mutual_gaze(synth_gaze_vector(yaw, rng=rng), model) == NO_EYE_CONTACT
    assert CONTACT_YAW_RAD == pytest.approx(0.35)


# --- object classes -----------------------------------------------------------

def _sample(label):
    from narravine.perception.objects import CubeObservation
    return CubeObservation(bbox=(100, 100, 90, 90), class_label=label,
                           confidence=0.99, frame_ts=0, true_label=label)


def test_register_then_observe_round_trips_label():
    reg = ObjectClassRegistry()
    reg.register("castle", [_sample("castle")])
    obs = reg.observe("castle", rng=np.random.default_rng(21))
    assert obs.class_label == "castle"
    assert obs.true_label == "castle"
    assert obs.confidence > 0.5


def test_duplicate_and_unknown_labels():
    reg = ObjectClassRegistry()
    reg.register("drum", [_sample("drum")])
    with pytest.raises(DuplicateLabel):
        reg.register("drum", [_sample("drum")])
    with pytest.raises(NoCubeVisible):
        reg.observe("unicorn", rng=np.random.default_rng(22))
    with pytest.raises(ValueError):
        reg.register("empty", [])


def test_misdetection_swaps_label_at_low_confidence():
    reg = ObjectClassRegistry()
    reg.register("castle", [_sample("castle")])
    reg.register("drum", [_sample("drum")])
    obs = reg.observe("castle", rng=np.random.default_rng(23), misdetect=True)
    assert obs.true_label == "castle"
    assert obs.class_label != "castle"
    assert obs.confidence < 0.5


def test_interleaved_register_observe_consistency():
    reg = ObjectClassRegistry()
    rng = np.random.default_rng(24)
    labels = ["castle", "drum", "koala", "key", "alien"]
    seen = []
    for lbl in labels:
        reg.register(lbl, [_sample(lbl)])
        seen.append(lbl)
        for probe in seen:  # everything taught so far stays detectable
            obs = reg.observe(probe, rng=rng)
            assert obs.class_label == probe
            assert obs.confidence >= CUBE_BASE_CONFIDENCE - 0.06
    assert reg.labels() == labels
    assert len(reg) == 5


@settings(max_examples=60, deadline=None)
@given(order=st.permutations(["a", "b", "c", "d"]),
       probes=st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=12))
def test_registry_interleaving_property(order, probes):
    reg = ObjectClassRegistry()
    rng = np.random.default_rng(25)
    taught = set()
    it = iter(order)
    for probe in probes:
        # teach one more class between probes until all are known
        nxt = next(it, None)
        if nxt is not None:
            reg.register(nxt, [_sample(nxt)])
            taught.add(nxt)
        if probe in taught:
            assert reg.observe(probe, rng=rng).class_label == probe
        else:
            with pytest.raises(NoCubeVisible):
                reg.observe(probe, rng=rng)


# --- linear classifier --------------------------------------------------------

def test_linear_classifier_fits_separable_data():
    xs = [(1.0, 0.2), (0.8, 0.1), (0.9, 0.3), (-1.0, -0.2), (-0.7, -0.1), (-0.9, -0.4)]
    ys = [1, 1, 1, -1, -1, -1]
    clf = LinearBinaryClassifier.fit(xs, ys)
    assert [1 if clf.predict(x) else -1 for x in xs] == ys
    assert 0.0 <= clf.confidence(xs[0]) <= 1.0


def test_linear_classifier_serialization_round_trip():
    xs = [(1.0, 0.0), (-1.0, 0.0)]
    clf = LinearBinaryClassifier.fit(xs, [1, -1])
    again = LinearBinaryClassifier.from_dict(clf.to_dict())
    assert again.decision(xs[0]) == pytest.approx(clf.decision(xs[0]))


def test_fit_is_deterministic():
    vectors, labels = synth_gaze_dataset(n=60, seed=31)
    m1 = train_gaze_model(vectors, labels)
    m2 = train_gaze_model(vectors, labels)
    assert m1.classifier.to_dict() == m2.classifier.to_dict()
