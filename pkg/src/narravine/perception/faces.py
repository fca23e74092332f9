"""Partner face enrollment and recognition over synthetic embeddings.

Each identity maps to a fixed unit vector in R^128; detections carry a noisy
copy plus a bounding box.  Enrollment follows the big-face heuristic: in every
captured frame the largest box is taken as the partner, everything else as a
negative, and a linear model is fit on those labels.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .linear import LinearBinaryClassifier

FRAME_W = 640
FRAME_H = 480
EMBED_DIM = 128
RECOGNIZE_THRESHOLD = 0.5
# one-face enrollments still need a negative class to fit against
_SYNTH_NEGATIVES = 8


class NoFaceSeen(Exception):
    """Enrollment window closed without a single detection."""


class EmptyScene(Exception):
    """Recognition asked for a partner in a frame with no faces."""


@dataclass(frozen=True)
class FaceDetection:
    bbox: tuple[float, float, float, float]  # x, y, w, h in pixels
    embedding: tuple[float, ...]
    track_id: int = 0

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ValueError("degenerate bbox")
        if x < 0 or y < 0 or x + w > FRAME_W or y + h > FRAME_H:
            raise ValueError("bbox outside frame")
        if len(self.embedding) != EMBED_DIM:
            raise ValueError("embedding must have %d elements" % EMBED_DIM)
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError("embedding must be unit length")

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]


def _identity_seed(identity: str, seed: int) -> int:
    digest = hashlib.sha256(("%d:%s" % (seed, identity)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def identity_embedding(identity: str, seed: int = 0) -> np.ndarray:
    """The canonical (noise-free) embedding for an identity."""
    rng = np.random.default_rng(_identity_seed(identity, seed))
    v = rng.standard_normal(EMBED_DIM)
    return v / np.linalg.norm(v)


def make_detection(
    identity: str,
    area: float,
    *,
    seed: int = 0,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    track_id: int = 0,
    center: Optional[tuple[float, float]] = None,
) -> FaceDetection:
    """Builds a detection whose embedding is a (possibly jittered) copy of
    the identity vector, renormalized to unit length."""
    emb = identity_embedding(identity, seed)
    if noise > 0.0:
        if rng is None:
            rng = np.random.default_rng(_identity_seed(identity, seed) ^ 0x5EED)
        emb = emb + noise * rng.standard_normal(EMBED_DIM)
        emb = emb / np.linalg.norm(emb)
    side = float(np.sqrt(area))
    side = min(side, FRAME_W - 2.0, FRAME_H - 2.0)
    cx, cy = center if center is not None else (FRAME_W / 2, FRAME_H / 2)
    x = min(max(cx - side / 2, 0.0), FRAME_W - side)
    y = min(max(cy - side / 2, 0.0), FRAME_H - side)
    return FaceDetection(
        bbox=(x, y, side, side),
        embedding=tuple(float(e) for e in emb),
        track_id=track_id,
    )


@dataclass(frozen=True)
class PartnerModel:
    classifier: LinearBinaryClassifier
    threshold: float = RECOGNIZE_THRESHOLD
    n_frames: int = 0


def enroll_partner(
    frames: Sequence[Sequence[FaceDetection]],
    threshold: float = RECOGNIZE_THRESHOLD,
) -> PartnerModel:
    """Trains a partner model from an enrollment window.

    frames: detections captured per frame, in capture order.  The biggest box
    in each frame is the positive; remaining boxes are negatives.  Raises
    NoFaceSeen if no frame contained a face.
    """
    positives: list[tuple[float, ...]] = []
    negatives: list[tuple[float, ...]] = []
    for dets in frames:
        if not dets:
            continue
        biggest = max(dets, key=lambda d: d.area)
        positives.append(biggest.embedding)
        negatives.extend(d.embedding for d in dets if d is not biggest)
    if not positives:
        raise NoFaceSeen("no detections in enrollment window")
    if not negatives:
        # lone participant: oppose against fixed random directions so the
        # hinge fit still has two classes
        rng = np.random.default_rng(0xFACE)
        for _ in range(_SYNTH_NEGATIVES):
            v = rng.standard_normal(EMBED_DIM)
            negatives.append(tuple(float(e) for e in v / np.linalg.norm(v)))
    samples = list(positives) + list(negatives)
    labels = [1] * len(positives) + [-1] * len(negatives)
    clf = LinearBinaryClassifier.fit(samples, labels)
    return PartnerModel(classifier=clf, threshold=threshold, n_frames=len(frames))


def recognize_partner(
    detections: Sequence[FaceDetection], model: PartnerModel
) -> FaceDetection:
    """Picks the partner out of a frame.

    Returns the detection with the highest classifier confidence when at
    least one clears the threshold; otherwise falls back to the closest
    (largest) box.  Raises EmptyScene on an empty frame.
    """
    if not detections:
        raise EmptyScene("no faces in frame")
    scored = [(model.classifier.confidence(d.embedding), d) for d in detections]
    best_conf, best_det = max(scored, key=lambda s: s[0])
    if best_conf >= model.threshold:
        return best_det
    return max(detections, key=lambda d: d.area)
