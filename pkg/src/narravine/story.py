"""Story transcript types shared by the narration clients, the FSM and the
session store.

A trial's transcript is an ordered, immutable sequence of turns.  A finished
trial reads: robot opening, human continuation, robot ending, robot recap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

SPEAKERS = ("robot", "human")
STEPS = ("opening", "human", "ending", "recap")


@dataclass(frozen=True)
class Turn:
    speaker: str
    step: str
    text: str
    cube_id: Optional[str] = None

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ValueError("unknown speaker %r" % self.speaker)
        if self.step not in STEPS:
            raise ValueError("unknown step %r" % self.step)
        if not self.text:
            raise ValueError("empty turn text")

    def to_dict(self) -> dict:
        return {
            "speaker": self.speaker,
            "step": self.step,
            "text": self.text,
            "cube_id": self.cube_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Turn":
        return cls(
            speaker=data["speaker"],
            step=data["step"],
            text=data["text"],
            cube_id=data.get("cube_id"),
        )


@dataclass(frozen=True)
class StoryTranscript:
    turns: tuple[Turn, ...] = field(default_factory=tuple)

    def with_turn(self, turn: Turn) -> "StoryTranscript":
        return StoryTranscript(self.turns + (turn,))

    def steps(self) -> tuple[str, ...]:
        return tuple(t.step for t in self.turns)

    def has(self, step: str) -> bool:
        return any(t.step == step for t in self.turns)

    def first(self, step: str) -> Optional[Turn]:
        for t in self.turns:
            if t.step == step:
                return t
        return None

    @property
    def cube_ids(self) -> tuple[str, ...]:
        return tuple(t.cube_id for t in self.turns if t.cube_id is not None)

    def to_dict(self) -> dict:
        return {"turns": [t.to_dict() for t in self.turns]}

    @classmethod
    def from_dict(cls, data: dict) -> "StoryTranscript":
        return cls(tuple(Turn.from_dict(t) for t in data.get("turns", [])))
