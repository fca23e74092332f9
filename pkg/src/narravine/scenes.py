"""Scripted scene replay: timestamped stimulus events fed to the simulators.

A scene script is a JSON document:

    {
      "name": "happy3",
      "config": { ...optional session config overrides... },
      "events": [
        {"at_ms": 0, "kind": "face", "params": {"faces": [...]}} ,
        {"at_ms": 4000, "kind": "cube", "params": {"label": "castle"}},
        ...
      ]
    }

Timestamps are in simulated session time.  Feeds gate availability on the
session clock: a consumer asking for the next event blocks until the event's
timestamp has passed or its own deadline expires.  Interactive sessions use
the same feeds and push events as operator input arrives.
"""
from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .clock import Clock

EVENT_KINDS = ("face", "gaze", "cube", "cube_drop", "speech")


class SceneError(Exception):
    """Malformed scene script."""


@dataclass(frozen=True)
class SceneEvent:
    at_ms: int
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.at_ms < 0:
            raise SceneError("negative timestamp")
        if self.kind not in EVENT_KINDS:
            raise SceneError("unknown event kind %r" % self.kind)


@dataclass
class SceneScript:
    name: str
    events: list[SceneEvent]
    config_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneScript":
        try:
            events = [
                SceneEvent(int(e["at_ms"]), str(e["kind"]), dict(e.get("params", {})))
                for e in data.get("events", [])
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError("bad event entry: %s" % exc) from exc
        return cls(
            name=str(data.get("name", "scene")),
            events=sorted(events, key=lambda e: e.at_ms),
            config_overrides=dict(data.get("config", {})),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "SceneScript":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SceneError("scene is not valid JSON: %s" % exc) from exc
        return cls.from_dict(data)

    def of_kind(self, *kinds: str) -> list[SceneEvent]:
        return [e for e in self.events if e.kind in kinds]


class SceneFeed:
    """Single-kind event queue gated on the session clock.

    next() pops the head event once its timestamp is due, or returns None on
    deadline.  push() injects a live event stamped at the current time.
    """

    def __init__(self, clock: Clock, events: Iterable[SceneEvent] = ()):
        self._clock = clock
        self._events: deque[SceneEvent] = deque(sorted(events, key=lambda e: e.at_ms))
        self._cv = threading.Condition()
        self._closed = False

    def push(self, kind: str, params: Optional[dict] = None) -> None:
        ev = SceneEvent(self._clock.now_ms(), kind, dict(params or {}))
        with self._cv:
            self._events.append(ev)
            self._cv.notify_all()

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()

    def next(self, timeout_s: float) -> Optional[SceneEvent]:
        """timeout_s is in simulated seconds."""
        deadline_ms = self._clock.now_ms() + int(timeout_s * 1000)
        with self._cv:
            while True:
                now = self._clock.now_ms()
                if self._events and self._events[0].at_ms <= now:
                    return self._events.popleft()
                if self._closed or now >= deadline_ms:
                    return None
                next_due = self._events[0].at_ms if self._events else deadline_ms
                wait_ms = min(next_due, deadline_ms) - now
                # condition timeout runs in real seconds
                self._cv.wait(max(wait_ms, 1) / 1000.0 * self._clock.scale)


class FaceTimeline:
    """State-style view of face events: the latest event at or before `now`
    defines the set of visible faces."""

    def __init__(self, clock: Clock, events: Iterable[SceneEvent] = ()):
        self._clock = clock
        self._events = sorted(
            (e for e in events if e.kind == "face"), key=lambda e: e.at_ms
        )
        self._cv = threading.Condition()
        self._closed = False

    def push(self, params: dict) -> None:
        with self._cv:
            self._events.append(SceneEvent(self._clock.now_ms(), "face", dict(params)))
            self._cv.notify_all()

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()

    def current(self) -> list[dict]:
        now = self._clock.now_ms()
        latest: Optional[SceneEvent] = None
        with self._cv:
            for e in self._events:
                if e.at_ms <= now:
                    latest = e
                else:
                    break
        return list(latest.params.get("faces", [])) if latest else []

    def wait_for_faces(self, timeout_s: float) -> list[dict]:
        """Blocks until at least one face is visible or the deadline passes;
        returns whatever is visible at that point (possibly empty)."""
        deadline_ms = self._clock.now_ms() + int(timeout_s * 1000)
        with self._cv:
            while True:
                faces_now = self.current()
                if faces_now:
                    return faces_now
                now = self._clock.now_ms()
                if self._closed or now >= deadline_ms:
                    return []
                upcoming = [e.at_ms for e in self._events if e.at_ms > now]
                next_due = min(upcoming) if upcoming else deadline_ms
                wait_ms = min(next_due, deadline_ms) - now
                self._cv.wait(max(wait_ms, 1) / 1000.0 * self._clock.scale)


@dataclass
class SceneFeeds:
    """The per-channel feeds a running session consumes."""

    faces: FaceTimeline
    gaze: SceneFeed
    cube: SceneFeed
    speech: SceneFeed

    @classmethod
    def from_script(cls, clock: Clock, script: SceneScript) -> "SceneFeeds":
        return cls(
            faces=FaceTimeline(clock, script.of_kind("face")),
            gaze=SceneFeed(clock, script.of_kind("gaze")),
            cube=SceneFeed(clock, script.of_kind("cube", "cube_drop")),
            speech=SceneFeed(clock, script.of_kind("speech")),
        )

    @classmethod
    def live(cls, clock: Clock) -> "SceneFeeds":
        return cls(
            faces=FaceTimeline(clock),
            gaze=SceneFeed(clock),
            cube=SceneFeed(clock),
            speech=SceneFeed(clock),
        )

    def close(self) -> None:
        self.faces.close()
        self.gaze.close()
        self.cube.close()
        self.speech.close()
