"""Speech synthesis and transcription with a console fallback.

The console channel is the reference implementation: speaking publishes the
text to listeners and takes a simulated duration of max(1 s, words x 300 ms);
listening consumes the next submitted text line.  Audio backends plug in
behind the same interface but are not a build dependency.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional

from .clock import Clock
from .scenes import SceneFeed

CHANNELS = ("audio", "console")
WORD_MS = 300
MIN_SPEAK_MS = 1000
# listen polls in short simulated slices so cancellation stays responsive
_LISTEN_SLICE_S = 0.5


class ConcurrentListen(Exception):
    """A second listen was started while one was active."""


class AudioDeviceFailure(Exception):
    pass


class RecognizerFailure(Exception):
    pass


@dataclass(frozen=True)
class Utterance:
    text: str
    speaker: str
    started_at: int
    ended_at: int
    channel: str = "console"

    def __post_init__(self):
        if self.speaker not in ("robot", "human"):
            raise ValueError("unknown speaker %r" % self.speaker)
        if self.channel not in CHANNELS:
            raise ValueError("unknown channel %r" % self.channel)
        if self.ended_at < self.started_at:
            raise ValueError("utterance ends before it starts")
        if not self.text:
            raise ValueError("empty utterance")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "speaker": self.speaker,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "channel": self.channel,
        }


def speak_duration_ms(text: str) -> int:
    return max(MIN_SPEAK_MS, len(text.split()) * WORD_MS)


class SpeechIO:
    """One instance per session; speech events arrive on a scene feed."""

    def __init__(
        self,
        clock: Clock,
        feed: SceneFeed,
        on_utterance: Optional[Callable[[Utterance], None]] = None,
    ):
        self._clock = clock
        self._feed = feed
        self._on_utterance = on_utterance
        self._listen_lock = threading.Lock()
        self._listening = False
        self._cancel = threading.Event()
        self._drained = threading.Condition()

    def speak(self, text: str) -> Utterance:
        if not text:
            raise ValueError("cannot speak empty text")
        started = self._clock.now_ms()
        duration = speak_duration_ms(text)
        self._clock.sleep(duration / 1000.0)
        utt = Utterance(
            text=text,
            speaker="robot",
            started_at=started,
            ended_at=started + duration,
        )
        if self._on_utterance:
            self._on_utterance(utt)
        return utt

    def listen(self, deadline_s: float) -> Optional[Utterance]:
        """Blocks for the next submitted line; None on deadline or cancel.

        Exactly one listen may be active at a time.
        """
        with self._listen_lock:
            if self._listening:
                raise ConcurrentListen("listen already active")
            self._listening = True
            self._cancel.clear()
        try:
            started = self._clock.now_ms()
            end_ms = started + int(deadline_s * 1000)
            while not self._cancel.is_set():
                remaining_s = (end_ms - self._clock.now_ms()) / 1000.0
                if remaining_s <= 0:
                    return None
                ev = self._feed.next(min(remaining_s, _LISTEN_SLICE_S))
                if ev is None:
                    continue
                text = str(ev.params.get("text", "")).strip()
                if not text:
                    continue
                utt = Utterance(
                    text=text,
                    speaker="human",
                    started_at=started,
                    ended_at=self._clock.now_ms(),
                )
                if self._on_utterance:
                    self._on_utterance(utt)
                return utt
            return None
        finally:
            with self._drained:
                self._listening = False
                self._drained.notify_all()

    def cancel_listen(self, drain_timeout_s: float = 5.0) -> None:
        """Cancel-then-drain: returns only after any active listen exited,
        so a later listen can never race the cancelled one."""
        self._cancel.set()
        with self._drained:
            deadline = drain_timeout_s
            while self._listening and deadline > 0:
                self._drained.wait(0.05)
                deadline -= 0.05

    @property
    def listening(self) -> bool:
        return self._listening
