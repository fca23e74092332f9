"""Session configuration: one frozen object threaded through the FSM,
runner, gateway and CLI.  Loaded from a JSON file, overridable per field.

Spoken-phrase templates are configuration, not canon: the interaction gives
the robot lines to say at fixed points, and any deployment may reword them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

DEFAULT_PHRASES: Mapping[str, str] = {
    "welcome": "Hello! I am so happy you came to play with me today.",
    "briefing": "Let us invent a short story together. Please hand me the first cube.",
    "see_sticker": "I see {description}.",
    "invite_continue": "Now choose the next cube and continue our story.",
    "invite_ending": "Wonderful. Hand me the last cube and I will finish our story.",
    "recap_intro": "Here is the story we created together.",
    "next_trial": "That was fun! Let us make another story.",
    "farewell": "Thank you for playing with me. I had a wonderful time. Goodbye!",
    "joy": "This was so much fun!",
    "retry_cube": "I could not see the cube well. Could you show it to me again?",
    "reprompt_listen": "I did not hear you. Could you repeat your part of the story?",
    "retry_genai": "Give me a moment, I am still thinking.",
    "recovery": "I am sorry, something went wrong. Let us move on to a new story.",
}

DEFAULT_FEEDBACK = (
    "What a great idea!",
    "I love how our story is growing!",
    "That is a wonderful twist!",
)


class ConfigError(Exception):
    """Invalid or unusable session configuration."""


@dataclass(frozen=True)
class SessionConfig:
    trials_total: int = 3
    manifest_path: str = "fixtures/stickers.json"
    scene_path: Optional[str] = None  # None means interactive
    genai_transport: str = "mock"  # mock | live
    genai_fixture_path: Optional[str] = None
    genai_model: str = "gpt-4o"
    genai_temperature: float = 0.7
    genai_describe_temperature: float = 0.0
    max_retries: int = 2
    cube_timeout_s: float = 60.0
    speech_timeout_s: float = 90.0
    genai_timeout_s: float = 30.0
    enroll_duration_s: float = 5.0
    enroll_timeout_s: float = 20.0
    recovery_pause_s: float = 3.0
    face_threshold: float = 0.5
    cube_confidence_min: float = 0.5
    misdetect_probability: float = 0.0
    noise_level: float = 0.0
    port_base: Optional[int] = None
    clock_scale: float = 1.0
    seed: int = 0
    session_dir: Optional[str] = None
    participant_hint: str = "participant"
    phrases: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_PHRASES))
    feedback_templates: tuple[str, ...] = DEFAULT_FEEDBACK

    def phrase(self, key: str, **kwargs: Any) -> str:
        text = self.phrases.get(key, DEFAULT_PHRASES.get(key, ""))
        return text.format(**kwargs) if kwargs else text

    def validate(self, *, check_files: bool = True) -> None:
        problems = []
        if self.trials_total < 1:
            problems.append("trials_total must be >= 1")
        if self.genai_transport not in ("mock", "live"):
            problems.append("genai_transport must be mock or live")
        if self.max_retries < 0:
            problems.append("max_retries must be >= 0")
        if not (0.0 <= self.misdetect_probability <= 1.0):
            problems.append("misdetect_probability must be in [0, 1]")
        if self.clock_scale <= 0:
            problems.append("clock_scale must be positive")
        for name in ("cube_timeout_s", "speech_timeout_s", "genai_timeout_s",
                     "enroll_duration_s", "recovery_pause_s"):
            if getattr(self, name) <= 0:
                problems.append("%s must be positive" % name)
        if check_files:
            if not Path(self.manifest_path).is_file():
                problems.append("sticker manifest not found: %s" % self.manifest_path)
            if self.scene_path is not None and not Path(self.scene_path).is_file():
                problems.append("scene script not found: %s" % self.scene_path)
            if self.genai_fixture_path is not None and not Path(self.genai_fixture_path).is_file():
                problems.append("genai fixture not found: %s" % self.genai_fixture_path)
        if problems:
            raise ConfigError("; ".join(problems))

    def with_overrides(self, overrides: Mapping[str, Any]) -> "SessionConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError("unknown config keys: %s" % ", ".join(sorted(unknown)))
        clean = dict(overrides)
        if "phrases" in clean:
            merged = dict(DEFAULT_PHRASES)
            merged.update(clean["phrases"])
            clean["phrases"] = merged
        if "feedback_templates" in clean:
            clean["feedback_templates"] = tuple(clean["feedback_templates"])
        return replace(self, **clean)

    @classmethod
    def from_file(cls, path: str | Path) -> "SessionConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("cannot read config: %s" % exc) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config is not valid JSON: %s" % exc) from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        return cls().with_overrides(data)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, Mapping):
                v = dict(v)
            out[f.name] = v
        return out


def load_manifest(path: str | Path) -> list[dict]:
    """Sticker manifest: [{id, description, asset?}, ...]; 9 canonical ids."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("cannot read sticker manifest: %s" % exc) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("manifest is not valid JSON: %s" % exc) from exc
    stickers = data["stickers"] if isinstance(data, dict) else data
    if not isinstance(stickers, list) or not stickers:
        raise ConfigError("manifest must list at least one sticker")
    seen = set()
    for entry in stickers:
        if "id" not in entry:
            raise ConfigError("manifest entry missing id")
        if entry["id"] in seen:
            raise ConfigError("duplicate sticker id %r" % entry["id"])
        seen.add(entry["id"])
    return stickers
