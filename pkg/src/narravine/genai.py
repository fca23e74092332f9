"""Clients for the sticker describer (vision-language route) and the story
narrator (text route).

Both clients carry fixed system prompts and enforce the limits those prompts
ask for: descriptions of at most 10 words never containing the word
"sticker"; opening and ending snippets of at most 15 words avoiding
"cartoon", "cardbox" and "sticker".  Violations are retried against the
transport and, as a last resort, sanitized locally, so the limits hold no
matter what the model returns.  Recaps are exempt from the word cap.

Transports are pluggable: a deterministic mock for tests and replays, and a
chat-completions HTTP client for live runs.
"""
from __future__ import annotations

import hashlib
import json
import random
import string
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .story import StoryTranscript

DESCRIBER_SYSTEM_PROMPT = (
    "You will cooperate with a narrative LLM to create a story. You will be "
    "provided with a small cardboard box with a sticker on it. The sticker can "
    "depict various scenarios/animals/object/characters. You are a describer "
    "that will be asked to recognize what is inside the sticker with a cartoon. "
    "Do not invent, be conservative. You have to be very confident in your "
    "answer. Do not be too much wordy, provide short descriptions. As much "
    "brief as possible, You must use maximum 10 words. What is inside the "
    "sticker? Tell only which character/object you see in the sticker, using "
    "only 2 adjectiives, without using the word 'sticker'. E.g. A grey smiling "
    "koala or a mushroom house with red roof."
)

NARRATOR_SYSTEM_PROMPT = (
    "You are a humanoid robot called iCub, developped at the Italian Institute "
    "of Technology. iCub can emulate many of a 6-8 years-old human capacities. "
    "Manipulation, vision, and hearing are its main capacities. You will be "
    "asked to invent a story for a 6-8 years-old child. To do this, you will "
    "be asked to invent short pieces of a simple complete story in three "
    "steps, starting from the description of a scenario. Avoid using words "
    "like cartoon, cardbox or sticker. Please, remember to be short- maximum "
    "15 words- and simple, and to create a homogeneous story that ends in 3 "
    "steps."
)

DESCRIPTION_WORD_LIMIT = 10
SNIPPET_WORD_LIMIT = 15
DESCRIPTION_FORBIDDEN = ("sticker",)
SNIPPET_FORBIDDEN = ("cartoon", "cardbox", "sticker")
SANITIZE_FALLBACK = "a colorful drawing"

SNIPPET_STEPS = ("opening", "ending", "recap")


class TransportFailure(Exception):
    """The generation backend failed for all allowed attempts."""


class ContextViolation(Exception):
    """Snippet requested out of order (e.g. ending before the human turn)."""


class IncompleteTranscript(Exception):
    """Recap requested before the story has all three pieces."""


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def word_tokens(text: str) -> list[str]:
    toks = (t.strip(string.punctuation) for t in text.split())
    return [t for t in toks if t]


def word_count(text: str) -> int:
    return len(word_tokens(text))


def forbidden_hits(text: str, forbidden: Sequence[str]) -> list[str]:
    bad = set()
    for w in forbidden:
        bad.add(w)
        bad.add(w + "s")
    return [t for t in word_tokens(text) if t.lower() in bad]


def violations(text: str, limit: Optional[int], forbidden: Sequence[str]) -> list[str]:
    out = []
    if limit is not None and word_count(text) > limit:
        out.append("word_count %d > %d" % (word_count(text), limit))
    hits = forbidden_hits(text, forbidden)
    if hits:
        out.append("forbidden words: %s" % ", ".join(sorted(set(h.lower() for h in hits))))
    return out


def sanitize(text: str, limit: Optional[int], forbidden: Sequence[str]) -> str:
    """Deterministic local repair: drop forbidden tokens, then cut at the
    word limit.  Falls back to a neutral phrase when nothing survives."""
    bad = set()
    for w in forbidden:
        bad.add(w)
        bad.add(w + "s")
    kept = [
        tok
        for tok in text.split()
        if tok.strip(string.punctuation).lower() not in bad
    ]
    if limit is not None:
        kept = kept[:limit]
    cleaned = " ".join(kept).strip()
    return cleaned if word_count(cleaned) > 0 else SANITIZE_FALLBACK


@dataclass(frozen=True)
class PromptConfig:
    describer_system_prompt: str = DESCRIBER_SYSTEM_PROMPT
    narrator_system_prompt: str = NARRATOR_SYSTEM_PROMPT
    model_name: str = "gpt-4o"
    temperature: float = 0.7  # narration; description runs greedy
    describe_temperature: float = 0.0
    max_retries: int = 2

    def overridden_prompts(self) -> list[str]:
        out = []
        if self.describer_system_prompt != DESCRIBER_SYSTEM_PROMPT:
            out.append("describer")
        if self.narrator_system_prompt != NARRATOR_SYSTEM_PROMPT:
            out.append("narrator")
        return out


@dataclass(frozen=True)
class StickerDescription:
    text: str
    word_count: int
    source_cube: str
    latency_ms: int = 0
    sanitized: bool = False

    def __post_init__(self):
        if self.word_count > DESCRIPTION_WORD_LIMIT:
            raise ValueError("description exceeds %d words" % DESCRIPTION_WORD_LIMIT)
        if forbidden_hits(self.text, DESCRIPTION_FORBIDDEN):
            raise ValueError("description contains a forbidden word")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "word_count": self.word_count,
            "source_cube": self.source_cube,
            "latency_ms": self.latency_ms,
            "sanitized": self.sanitized,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StickerDescription":
        return cls(
            text=data["text"],
            word_count=data["word_count"],
            source_cube=data["source_cube"],
            latency_ms=data.get("latency_ms", 0),
            sanitized=data.get("sanitized", False),
        )


@dataclass(frozen=True)
class StorySnippet:
    text: str
    word_count: int
    step: str
    trial_index: int = 0
    sanitized: bool = False

    def __post_init__(self):
        if self.step not in SNIPPET_STEPS:
            raise ValueError("unknown snippet step %r" % self.step)
        if self.step != "recap":
            if self.word_count > SNIPPET_WORD_LIMIT:
                raise ValueError("snippet exceeds %d words" % SNIPPET_WORD_LIMIT)
            if forbidden_hits(self.text, SNIPPET_FORBIDDEN):
                raise ValueError("snippet contains a forbidden word")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "word_count": self.word_count,
            "step": self.step,
            "trial_index": self.trial_index,
            "sanitized": self.sanitized,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StorySnippet":
        return cls(
            text=data["text"],
            word_count=data["word_count"],
            step=data["step"],
            trial_index=data.get("trial_index", 0),
            sanitized=data.get("sanitized", False),
        )


@dataclass(frozen=True)
class GenRequest:
    endpoint: str  # describe | narrate | recap
    system: str
    user: str
    temperature: float
    model: str
    cube_label: Optional[str] = None  # set for describe calls in label mode
    image_path: Optional[str] = None


class Transport(Protocol):
    def complete(self, request: GenRequest) -> str: ...


# canned descriptions for the shipped sticker vocabulary; each stays within
# the 10-word limit and names the cube's head noun
_MOCK_DESCRIPTIONS = {
    "castle": "A big grey castle with three towers",
    "mushroom_house": "a mushroom house with red roof",
    "lighthouse": "A tall striped lighthouse by the sea",
    "alien": "A small green alien with big eyes",
    "koala": "A grey smiling koala",
    "pirate": "A bearded pirate with black hat",
    "key": "A golden old key",
    "balloon": "A red shiny balloon",
    "drum": "A colorful little drum",
}

# template tails add at most five words, so a 10-word description still fits
# within the 15-word snippet cap
_MOCK_OPENINGS = (
    "Once upon a time, {d} appeared.",
    "One morning, {d} woke up.",
    "Long ago, {d} lived happily.",
)
_MOCK_ENDINGS = (
    "Finally, {d} made everyone happy.",
    "At last, {d} came home.",
    "In the end, {d} smiled.",
)

_VIOLATION_TEXT = (
    "This sticker shows a cartoon from a cardbox with many many many many "
    "extra words beyond every limit anyone configured"
)


class MockTransport:
    """Deterministic stand-in for the generation services.

    Canned responses are consumed per endpoint in order; once a list runs dry
    the transport falls back to seeded template synthesis.  Failure and
    violation counters make the retry paths testable:

        fail:    {"narrate": "always"} or {"describe": 2}  (first N calls)
        violate: {"describe": 1}                            (first N calls)
        lie:     true  -> descriptions avoid the cube's own noun
    """

    def __init__(
        self,
        seed: int = 0,
        fixtures: Optional[dict] = None,
        fail: Optional[dict] = None,
        violate: Optional[dict] = None,
        lie: bool = False,
        latency_s: float = 0.0,
    ):
        fixtures = dict(fixtures or {})
        self.seed = int(fixtures.pop("seed", seed))
        self._fail = dict(fail or fixtures.pop("fail", {}))
        self._violate = dict(violate or fixtures.pop("violate", {}))
        self._lie = bool(fixtures.pop("lie", lie))
        self._canned = {
            ep: list(fixtures.get(ep, [])) for ep in ("describe", "narrate", "recap")
        }
        self._calls: dict[str, int] = {}
        self._latency_s = latency_s
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, seed: int = 0) -> "MockTransport":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(seed=seed, fixtures=data)

    def _next_call(self, endpoint: str) -> int:
        with self._lock:
            n = self._calls.get(endpoint, 0)
            self._calls[endpoint] = n + 1
            return n

    def calls(self, endpoint: str) -> int:
        with self._lock:
            return self._calls.get(endpoint, 0)

    def _mode_active(self, table: dict, endpoint: str, ordinal: int) -> bool:
        rule = table.get(endpoint)
        if rule is None:
            return False
        if rule == "always":
            return True
        return ordinal < int(rule)

    def complete(self, request: GenRequest) -> str:
        ordinal = self._next_call(request.endpoint)
        if self._latency_s:
            time.sleep(self._latency_s)
        if self._mode_active(self._fail, request.endpoint, ordinal):
            raise TransportFailure("mock %s backend down" % request.endpoint)
        if self._mode_active(self._violate, request.endpoint, ordinal):
            return _VIOLATION_TEXT
        with self._lock:
            canned = self._canned.get(request.endpoint)
            if canned:
                return canned.pop(0)
        return self._synthesize(request, ordinal)

    def _synthesize(self, request: GenRequest, ordinal: int) -> str:
        rng = random.Random("%d:%s:%d" % (self.seed, request.endpoint, ordinal))
        if request.endpoint == "describe":
            label = request.cube_label or "unknown"
            if self._lie:
                return "A mysterious shiny thing"
            text = _MOCK_DESCRIPTIONS.get(label)
            if text is None:
                text = "A colorful %s drawing" % label.replace("_", " ")
            return text
        if request.endpoint == "narrate":
            d = _extract_marked(request.user, "scenario")
            d = d[0].lower() + d[1:] if d else "a little hero"
            if "step 1" in request.user:
                return rng.choice(_MOCK_OPENINGS).format(d=d)
            return rng.choice(_MOCK_ENDINGS).format(d=d)
        if request.endpoint == "recap":
            body = _extract_marked(request.user, "story") or "We made a story."
            return "Here is our story. %s The end!" % body
        raise TransportFailure("unknown endpoint %r" % request.endpoint)


def _extract_marked(user: str, kind: str) -> str:
    """Pulls the content between <<kind>> markers out of a user message."""
    open_tag, close_tag = "<<%s>>" % kind, "<</%s>>" % kind
    i = user.find(open_tag)
    if i < 0:
        return ""
    j = user.find(close_tag, i)
    if j < 0:
        return ""
    return user[i + len(open_tag):j].strip()


class LiveTransport:
    """Chat-completions HTTP client.  Needs NARRAVINE_API_KEY; never used by
    the test suite."""

    API_KEY_ENV = "NARRAVINE_API_KEY"

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        api_key: Optional[str] = None,
        timeout_s: float = 30.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        if api_key is None:
            import os

            api_key = os.environ.get(self.API_KEY_ENV)
        if not api_key:
            raise TransportFailure("no API key configured (%s)" % self.API_KEY_ENV)
        self._api_key = api_key

    def complete(self, request: GenRequest) -> str:
        import requests

        user_content: object = request.user
        if request.image_path:
            user_content = [
                {"type": "text", "text": request.user},
                {"type": "image_url", "image_url": {"url": _file_to_data_url(request.image_path)}},
            ]
        try:
            resp = requests.post(
                self.base_url + "/chat/completions",
                json={
                    "model": request.model,
                    "temperature": request.temperature,
                    "messages": [
                        {"role": "system", "content": request.system},
                        {"role": "user", "content": user_content},
                    ],
                },
                headers={"Authorization": "Bearer " + self._api_key},
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:  # noqa: BLE001 - every transport error maps the same way
            raise TransportFailure(str(exc)) from exc


def _file_to_data_url(path: str) -> str:
    import base64

    raw = Path(path).read_bytes()
    return "data:image/png;base64," + base64.b64encode(raw).decode("ascii")


LogFn = Callable[[dict], None]


def _log(log: Optional[LogFn], entry: dict) -> None:
    if log is not None:
        log(entry)


def _attempt_loop(
    transport: Transport,
    request: GenRequest,
    limit: Optional[int],
    forbidden: Sequence[str],
    max_retries: int,
    log: Optional[LogFn],
) -> tuple[str, bool, int]:
    """Returns (text, sanitized?, latency_ms).  Transport errors count
    against the same attempt budget as constraint violations."""
    attempts = max_retries + 1
    last_text: Optional[str] = None
    last_error: Optional[Exception] = None
    started = time.monotonic()
    for attempt in range(attempts):
        entry = {
            "endpoint": request.endpoint,
            "attempt": attempt,
            "request": {"system": request.system, "user": request.user},
        }
        try:
            text = transport.complete(request)
        except TransportFailure as exc:
            last_error = exc
            entry["error"] = str(exc)
            _log(log, entry)
            continue
        entry["response"] = text
        found = violations(text, limit, forbidden)
        if not found:
            _log(log, entry)
            return text, False, int((time.monotonic() - started) * 1000)
        entry["violations"] = found
        _log(log, entry)
        last_text = text
    if last_text is None:
        raise TransportFailure(
            "%s failed after %d attempts: %s" % (request.endpoint, attempts, last_error)
        )
    cleaned = sanitize(last_text, limit, forbidden)
    _log(
        log,
        {
            "endpoint": request.endpoint,
            "sanitized": True,
            "raw": last_text,
            "response": cleaned,
        },
    )
    return cleaned, True, int((time.monotonic() - started) * 1000)


def _describe_user_message(cube_label: Optional[str], image_path: Optional[str]) -> str:
    msg = "Here is the camera view of the cube. What is inside the sticker?"
    if image_path:
        return msg
    # simulated scenes have no pixels: the scene reference carries the
    # ground-truth label in text form instead of an image attachment
    label_text = (cube_label or "unknown").replace("_", " ")
    return msg + " [scene reference: %s]" % label_text


def describe_sticker(
    cube_ref,
    cfg: PromptConfig,
    transport: Transport,
    *,
    image_path: Optional[str] = None,
    log: Optional[LogFn] = None,
) -> StickerDescription:
    """cube_ref is a CubeObservation or a plain class label string."""
    label = getattr(cube_ref, "class_label", None) or str(cube_ref)
    request = GenRequest(
        endpoint="describe",
        system=cfg.describer_system_prompt,
        user=_describe_user_message(label, image_path),
        temperature=cfg.describe_temperature,
        model=cfg.model_name,
        cube_label=label,
        image_path=image_path,
    )
    text, sanitized, latency = _attempt_loop(
        transport, request, DESCRIPTION_WORD_LIMIT, DESCRIPTION_FORBIDDEN,
        cfg.max_retries, log,
    )
    return StickerDescription(
        text=text,
        word_count=word_count(text),
        source_cube=label,
        latency_ms=latency,
        sanitized=sanitized,
    )


def _narrate_user_message(
    step: str, context: StoryTranscript, description: StickerDescription
) -> str:
    if step == "opening":
        return (
            "This is the description of the scenario: <<scenario>>%s<</scenario>>. "
            "Invent the first piece of the story (step 1 of 3)."
            % description.text
        )
    opening = context.first("opening")
    human = context.first("human")
    return (
        "The story so far:\nRobot: %s\nChild: %s\n"
        "This is the description of the final scenario: <<scenario>>%s<</scenario>>. "
        "Invent the last piece that ends the story (step 3 of 3)."
        % (opening.text if opening else "", human.text if human else "", description.text)
    )


def generate_snippet(
    context: StoryTranscript,
    step: str,
    description: StickerDescription,
    cfg: PromptConfig,
    transport: Transport,
    *,
    trial_index: int = 0,
    log: Optional[LogFn] = None,
) -> StorySnippet:
    if step not in ("opening", "ending"):
        raise ValueError("step must be opening or ending")
    if step == "opening" and context.turns:
        raise ContextViolation("opening requires an empty trial transcript")
    if step == "ending" and not (context.has("opening") and context.has("human")):
        raise ContextViolation("ending requires the opening and the human turn")
    request = GenRequest(
        endpoint="narrate",
        system=cfg.narrator_system_prompt,
        user=_narrate_user_message(step, context, description),
        temperature=cfg.temperature,
        model=cfg.model_name,
    )
    text, sanitized, _ = _attempt_loop(
        transport, request, SNIPPET_WORD_LIMIT, SNIPPET_FORBIDDEN, cfg.max_retries, log
    )
    return StorySnippet(
        text=text,
        word_count=word_count(text),
        step=step,
        trial_index=trial_index,
        sanitized=sanitized,
    )


def generate_recap(
    transcript: StoryTranscript,
    cfg: PromptConfig,
    transport: Transport,
    *,
    trial_index: int = 0,
    log: Optional[LogFn] = None,
) -> StorySnippet:
    for needed in ("opening", "human", "ending"):
        if not transcript.has(needed):
            raise IncompleteTranscript("missing %s turn" % needed)
    lines = " ".join(t.text for t in transcript.turns if t.step != "recap")
    request = GenRequest(
        endpoint="recap",
        system=cfg.narrator_system_prompt,
        user=(
            "Here is the complete story:\n<<story>>%s<</story>>\n"
            "Retell the whole story briefly to the child." % lines
        ),
        temperature=cfg.temperature,
        model=cfg.model_name,
    )
    text, sanitized, _ = _attempt_loop(
        transport, request, None, SNIPPET_FORBIDDEN, cfg.max_retries, log
    )
    missing = [
        cube for cube in transcript.cube_ids
        if cube.rsplit("_", 1)[-1].lower() not in {t.lower() for t in word_tokens(text)}
    ]
    if missing:
        _log(log, {"endpoint": "recap", "coverage_missing": missing})
    return StorySnippet(
        text=text,
        word_count=word_count(text),
        step="recap",
        trial_index=trial_index,
        sanitized=sanitized,
    )


def make_transport(kind: str, *, seed: int = 0, fixture_path: Optional[str] = None,
                   model_timeout_s: float = 30.0) -> Transport:
    if kind == "mock":
        if fixture_path:
            return MockTransport.from_file(fixture_path, seed=seed)
        return MockTransport(seed=seed)
    if kind == "live":
        return LiveTransport(timeout_s=model_timeout_s)
    raise ValueError("unknown transport kind %r" % kind)
