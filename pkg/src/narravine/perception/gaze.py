"""Mutual-gaze classification from facial keypoint features.

A feature vector holds 19 keypoints as (x, y, k) triplets: 8 rim points per
eye, one point per ear, one nose tip, 57 floats total.  Coordinates are
normalized to [0, 1]; k is detector confidence.  The synthetic generator
derives keypoints from a head-yaw angle, which gives a geometry where eye
contact (|yaw| below ~20 degrees) is linearly separable from averted gaze:
the eye-to-eye spread shrinks with cos(yaw) and the far ear fades out.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .linear import LinearBinaryClassifier

N_KEYPOINTS = 19  # 8 + 8 eye rim, 2 ears, 1 nose
N_ELEMENTS = N_KEYPOINTS * 3
CONTACT_YAW_RAD = 0.35
# samples inside this band around the boundary are skipped during synthesis
# so the training set stays cleanly separable
_YAW_MARGIN = (0.30, 0.42)

EYE_CONTACT = "eye_contact"
NO_EYE_CONTACT = "no_eye_contact"


class MalformedFeature(Exception):
    """Wrong arity or out-of-range confidence in a gaze vector."""


@dataclass(frozen=True)
class GazeFeatureVector:
    elements: tuple[float, ...]

    def __post_init__(self):
        if len(self.elements) != N_ELEMENTS:
            raise MalformedFeature(
                "expected %d elements, got %d" % (N_ELEMENTS, len(self.elements))
            )
        for i in range(2, N_ELEMENTS, 3):
            k = self.elements[i]
            if not (0.0 <= k <= 1.0):
                raise MalformedFeature("confidence %r at index %d" % (k, i))

    @classmethod
    def from_keypoints(
        cls, keypoints: Sequence[tuple[float, float, float]]
    ) -> "GazeFeatureVector":
        if len(keypoints) != N_KEYPOINTS:
            raise MalformedFeature("expected %d keypoints" % N_KEYPOINTS)
        flat: list[float] = []
        for x, y, k in keypoints:
            flat.extend((float(x), float(y), float(k)))
        return cls(tuple(flat))

    def keypoints(self) -> list[tuple[float, float, float]]:
        e = self.elements
        return [(e[i], e[i + 1], e[i + 2]) for i in range(0, N_ELEMENTS, 3)]


def synth_gaze_vector(
    yaw_rad: float,
    *,
    rng: Optional[np.random.Generator] = None,
    noise: float = 0.004,
) -> GazeFeatureVector:
    """Keypoints for a head rotated yaw_rad from the camera axis.

    yaw 0 looks straight at the robot; positive yaw turns toward the
    viewer's right.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    cx = 0.5 + 0.28 * math.sin(yaw_rad)
    cy = 0.5
    eye_dx = 0.055 * math.cos(yaw_rad)
    pts: list[tuple[float, float, float]] = []
    for side in (-1.0, 1.0):  # left rim, then right rim
        ex, ey = cx + side * eye_dx, cy - 0.04
        for j in range(8):
            ang = 2 * math.pi * j / 8
            pts.append(
                (
                    ex + 0.012 * math.cos(ang) * math.cos(yaw_rad),
                    ey + 0.012 * math.sin(ang),
                    1.0,
                )
            )
    # far ear loses confidence as the head turns away from it
    k_left = max(0.0, min(1.0, 1.0 - 1.3 * max(0.0, math.sin(yaw_rad))))
    k_right = max(0.0, min(1.0, 1.0 - 1.3 * max(0.0, -math.sin(yaw_rad))))
    ear_dx = 0.11 * math.cos(yaw_rad)
    pts.append((cx - ear_dx, cy + 0.01, k_left))
    pts.append((cx + ear_dx, cy + 0.01, k_right))
    pts.append((cx + 0.07 * math.sin(yaw_rad), cy + 0.03, 1.0))  # nose leads the turn
    if noise > 0.0:
        jitter = rng.standard_normal((N_KEYPOINTS, 2)) * noise
        pts = [
            (
                min(max(x + jitter[i][0], 0.0), 1.0),
                min(max(y + jitter[i][1], 0.0), 1.0),
                k,
            )
            for i, (x, y, k) in enumerate(pts)
        ]
    return GazeFeatureVector.from_keypoints(pts)


def synth_gaze_dataset(
    n: int, seed: int = 7
) -> tuple[list[GazeFeatureVector], list[str]]:
    rng = np.random.default_rng(seed)
    vectors: list[GazeFeatureVector] = []
    labels: list[str] = []
    while len(vectors) < n:
        yaw = float(rng.uniform(-math.pi / 2, math.pi / 2))
        if _YAW_MARGIN[0] < abs(yaw) < _YAW_MARGIN[1]:
            continue
        vectors.append(synth_gaze_vector(yaw, rng=rng))
        labels.append(EYE_CONTACT if abs(yaw) <= CONTACT_YAW_RAD else NO_EYE_CONTACT)
    return vectors, labels


@dataclass(frozen=True)
class GazeModel:
    classifier: LinearBinaryClassifier


def train_gaze_model(
    vectors: Sequence[GazeFeatureVector], labels: Sequence[str]
) -> GazeModel:
    samples = [v.elements for v in vectors]
    signed = [1 if lbl == EYE_CONTACT else -1 for lbl in labels]
    return GazeModel(LinearBinaryClassifier.fit(samples, signed))


def classify_mutual_gaze(vector: GazeFeatureVector, model: GazeModel) -> str:
    return EYE_CONTACT if model.classifier.predict(vector.elements) else NO_EYE_CONTACT


_default_model: Optional[GazeModel] = None


def load_default_gaze_model() -> GazeModel:
    """Model fit on the labeled vectors shipped under narravine/data."""
    global _default_model
    if _default_model is None:
        ref = resources.files("narravine.data").joinpath("gaze_training.json")
        raw = json.loads(ref.read_text(encoding="utf-8"))
        vectors = [GazeFeatureVector(tuple(row)) for row in raw["vectors"]]
        _default_model = train_gaze_model(vectors, raw["labels"])
    return _default_model
