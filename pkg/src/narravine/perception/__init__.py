"""Simulated perception: partner faces, mutual gaze, cube identification.

Real image processing is out of scope; these modules reproduce the decision
rules a camera pipeline would apply, over synthetic embeddings and keypoints,
and publish on the same middleware channels a live pipeline would use.
"""
from .faces import (  # noqa: F401
    FaceDetection,
    NoFaceSeen,
    EmptyScene,
    PartnerModel,
    enroll_partner,
    recognize_partner,
    identity_embedding,
    make_detection,
)
from .gaze import (  # noqa: F401
    GazeFeatureVector,
    MalformedFeature,
    classify_mutual_gaze,
    synth_gaze_vector,
    train_gaze_model,
    load_default_gaze_model,
)
from .objects import (  # noqa: F401
    CubeObservation,
    DuplicateLabel,
    NoCubeVisible,
    ObjectClassRegistry,
)
