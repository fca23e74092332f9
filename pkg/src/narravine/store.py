"""Trial records, session metrics, and on-disk persistence.

Session directory layout:

    session.meta    one JSON document (config summary, participant, outcome)
    trial_<k>.rec   one JSON document per trial
    fsm.log         line-delimited JSON transition entries
    genai.log       line-delimited JSON request/response entries
    transcript.txt  human-readable story text

All rates in SessionMetrics are backed by integer counts so recomputation
from persisted records is exact.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .genai import StickerDescription
from .story import StoryTranscript

OUTCOMES = ("success", "failed", "aborted")
FAILURE_KINDS = ("sticker_detection", "voice_timeout", "llm_failure", "cube_drop", "other")
CUBES_PER_TRIAL = 3


class EmptyInput(Exception):
    """Metrics asked for on zero records."""


class IoFailure(Exception):
    """Session directory could not be written or read."""


class CorruptRecord(Exception):
    """A persisted record failed to parse back."""


def match_token(cube_id: str) -> str:
    """Head noun used for description agreement: the final id segment
    ('mushroom_house' -> 'house')."""
    return cube_id.rsplit("_", 1)[-1].lower()


def description_matches(description: StickerDescription, cube_id: str) -> bool:
    tokens = {t.lower().strip(".,!?;:'\"") for t in description.text.split()}
    return match_token(cube_id) in tokens


@dataclass(frozen=True)
class Annotations:
    llm_added_elements: bool = False
    llm_fixed_human: bool = False

    def to_dict(self) -> dict:
        return {
            "llm_added_elements": self.llm_added_elements,
            "llm_fixed_human": self.llm_fixed_human,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Annotations":
        return cls(
            llm_added_elements=bool(data.get("llm_added_elements", False)),
            llm_fixed_human=bool(data.get("llm_fixed_human", False)),
        )


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    cube_sequence: tuple[str, ...]
    vlm_descriptions: tuple[StickerDescription, ...]
    transcript: StoryTranscript
    outcome: str
    failure_kind: Optional[str] = None
    annotations: Annotations = field(default_factory=Annotations)

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError("unknown outcome %r" % self.outcome)
        if self.outcome == "failed" and self.failure_kind is None:
            raise ValueError("failed trial needs a failure kind")
        if self.failure_kind is not None and self.failure_kind not in FAILURE_KINDS:
            raise ValueError("unknown failure kind %r" % self.failure_kind)
        if self.outcome == "success" and len(self.cube_sequence) != CUBES_PER_TRIAL:
            raise ValueError("completed trial must have %d cubes" % CUBES_PER_TRIAL)

    def to_dict(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "cube_sequence": list(self.cube_sequence),
            "vlm_descriptions": [d.to_dict() for d in self.vlm_descriptions],
            "transcript": self.transcript.to_dict(),
            "outcome": self.outcome,
            "failure_kind": self.failure_kind,
            "annotations": self.annotations.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrialRecord":
        return cls(
            trial_index=int(data["trial_index"]),
            cube_sequence=tuple(data["cube_sequence"]),
            vlm_descriptions=tuple(
                StickerDescription.from_dict(d) for d in data["vlm_descriptions"]
            ),
            transcript=StoryTranscript.from_dict(data["transcript"]),
            outcome=data["outcome"],
            failure_kind=data.get("failure_kind"),
            annotations=Annotations.from_dict(data.get("annotations", {})),
        )


@dataclass(frozen=True)
class SessionMetrics:
    n_records: int
    n_success: int
    n_descriptions: int
    n_matches: int
    n_additions: int
    n_fixes: int
    failure_counts: tuple[tuple[str, int], ...]

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_records

    @property
    def vlm_agreement(self) -> float:
        return self.n_matches / self.n_descriptions if self.n_descriptions else 0.0

    @property
    def llm_addition_rate(self) -> float:
        return self.n_additions / self.n_records

    @property
    def llm_fix_rate(self) -> float:
        return self.n_fixes / self.n_records

    def failure_count_map(self) -> dict[str, int]:
        return dict(self.failure_counts)

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "n_success": self.n_success,
            "n_descriptions": self.n_descriptions,
            "n_matches": self.n_matches,
            "n_additions": self.n_additions,
            "n_fixes": self.n_fixes,
            "success_rate": self.success_rate,
            "vlm_agreement": self.vlm_agreement,
            "llm_addition_rate": self.llm_addition_rate,
            "llm_fix_rate": self.llm_fix_rate,
            "failure_counts": self.failure_count_map(),
        }


def compute_metrics(records: Sequence[TrialRecord]) -> SessionMetrics:
    """Agreement counts every recorded handover: a description agrees when
    it names the ground-truth cube's head noun."""
    if not records:
        raise EmptyInput("no trial records")
    n_success = sum(1 for r in records if r.outcome == "success")
    n_descriptions = 0
    n_matches = 0
    for r in records:
        for cube_id, desc in zip(r.cube_sequence, r.vlm_descriptions):
            n_descriptions += 1
            if description_matches(desc, cube_id):
                n_matches += 1
    n_additions = sum(1 for r in records if r.annotations.llm_added_elements)
    n_fixes = sum(1 for r in records if r.annotations.llm_fixed_human)
    failures: dict[str, int] = {}
    for r in records:
        if r.outcome == "failed":
            failures[r.failure_kind] = failures.get(r.failure_kind, 0) + 1
    return SessionMetrics(
        n_records=len(records),
        n_success=n_success,
        n_descriptions=n_descriptions,
        n_matches=n_matches,
        n_additions=n_additions,
        n_fixes=n_fixes,
        failure_counts=tuple(sorted(failures.items())),
    )


def persist(record: TrialRecord, session_dir: str | Path) -> Path:
    path = Path(session_dir) / ("trial_%d.rec" % record.trial_index)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return path


def load_record(path: str | Path) -> TrialRecord:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise CorruptRecord(str(exc)) from exc
    return TrialRecord.from_dict(data)


def load_session_records(session_dir: str | Path) -> list[TrialRecord]:
    base = Path(session_dir)
    if not base.is_dir():
        raise IoFailure("no such session directory: %s" % base)
    paths = sorted(base.glob("trial_*.rec"), key=lambda p: int(p.stem.split("_")[1]))
    return [load_record(p) for p in paths]


class SessionStore:
    """Single writer for one session directory."""

    def __init__(self, session_dir: str | Path):
        self.dir = Path(session_dir)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self._lock = threading.Lock()

    def write_meta(self, meta: dict) -> None:
        self._write(self.dir / "session.meta", json.dumps(meta, indent=2, sort_keys=True) + "\n")

    def read_meta(self) -> dict:
        try:
            return json.loads((self.dir / "session.meta").read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def persist_record(self, record: TrialRecord) -> Path:
        with self._lock:
            return persist(record, self.dir)

    def append_fsm_log(self, entry: dict) -> None:
        self._append(self.dir / "fsm.log", entry)

    def append_genai_log(self, entry: dict) -> None:
        self._append(self.dir / "genai.log", entry)

    def append_transcript(self, line: str) -> None:
        with self._lock:
            try:
                with open(self.dir / "transcript.txt", "a", encoding="utf-8") as fh:
                    fh.write(line.rstrip("\n") + "\n")
            except OSError as exc:
                raise IoFailure(str(exc)) from exc

    def read_fsm_log(self) -> list[dict]:
        return self._read_ndjson(self.dir / "fsm.log")

    def read_genai_log(self) -> list[dict]:
        return self._read_ndjson(self.dir / "genai.log")

    def _append(self, path: Path, entry: dict) -> None:
        with self._lock:
            try:
                with open(path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")
            except OSError as exc:
                raise IoFailure(str(exc)) from exc

    def _write(self, path: Path, text: str) -> None:
        with self._lock:
            try:
                path.write_text(text, encoding="utf-8")
            except OSError as exc:
                raise IoFailure(str(exc)) from exc

    @staticmethod
    def _read_ndjson(path: Path) -> list[dict]:
        if not path.exists():
            return []
        out = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                out.append(json.loads(line))
        return out
