"""Online cube identification with an incrementally taught class registry.

Cube classes are registered one at a time as the experimenter shows each
sticker; detection only ever answers with labels the registry has seen.
Misdetections are injected by the noise model, not by the geometry: a
misdetect swaps the label for another registered one at low confidence.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

CUBE_BASE_CONFIDENCE = 0.97
MISDETECT_CONFIDENCE = 0.30


class DuplicateLabel(Exception):
    """A class label was registered twice."""


class NoCubeVisible(Exception):
    """Scan window elapsed with no cube in view."""


@dataclass(frozen=True)
class CubeObservation:
    bbox: tuple[float, float, float, float]
    class_label: str
    confidence: float
    frame_ts: int = 0
    true_label: Optional[str] = None  # ground truth carried for scoring only

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence out of range")


class ObjectClassRegistry:
    """Grows as cube classes are taught; thread safe for reader/writer mix."""

    def __init__(self):
        self._samples: dict[str, list[CubeObservation]] = {}
        self._order: list[str] = []
        self._lock = threading.Lock()

    def register(self, label: str, samples: Sequence[CubeObservation]) -> None:
        if not samples:
            raise ValueError("need at least one sample observation")
        with self._lock:
            if label in self._samples:
                raise DuplicateLabel(label)
            self._samples[label] = list(samples)
            self._order.append(label)

    def labels(self) -> list[str]:
        with self._lock:
            return list(self._order)

    def __contains__(self, label: str) -> bool:
        with self._lock:
            return label in self._samples

    def __len__(self) -> int:
        with self._lock:
            return len(self._order)

    def observe(
        self,
        true_label: str,
        *,
        rng: np.random.Generator,
        noise_level: float = 0.0,
        misdetect: bool = False,
        frame_ts: int = 0,
    ) -> CubeObservation:
        """Simulated single-frame readout of a presented cube.

        Raises NoCubeVisible for labels the registry has never been taught;
        a real detector would simply not fire on an unknown class.
        """
        with self._lock:
            known = list(self._order)
        if true_label not in known:
            raise NoCubeVisible("no registered class matches the scene")
        label = true_label
        if misdetect and len(known) > 1:
            others = [lbl for lbl in known if lbl != true_label]
            label = others[int(rng.integers(len(others)))]
            confidence = MISDETECT_CONFIDENCE + float(rng.uniform(-0.05, 0.05))
        else:
            confidence = CUBE_BASE_CONFIDENCE - 0.5 * noise_level
            confidence += float(rng.uniform(-0.01, 0.01))
        confidence = min(max(confidence, 0.0), 1.0)
        side = 90.0 + float(rng.uniform(-5.0, 5.0))
        x = 275.0 + float(rng.uniform(-20.0, 20.0))
        y = 195.0 + float(rng.uniform(-20.0, 20.0))
        return CubeObservation(
            bbox=(x, y, side, side),
            class_label=label,
            confidence=confidence,
            frame_ts=frame_ts,
            true_label=true_label,
        )
