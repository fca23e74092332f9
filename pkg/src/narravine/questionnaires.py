"""Scoring and statistics for the study questionnaires.

Covers the 10-item usability scale (0-100 via adjusted item sums x 2.5),
the 26-item user-experience questionnaire with six scales on -3..+3 and a
benchmark classification, and categorical vote analysis (goodness-of-fit
plus pairwise proportion tests with Holm correction).

The item-to-scale map and the benchmark thresholds ship as editable data
files; both come from the public instrument material, not from this project.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import stats
from .stats import DegenerateGroup, ZeroExpected  # re-exported  # noqa: F401

BENCHMARK_CATEGORIES = ["Excellent", "Good", "Above Average", "Below Average", "Bad"]


class RangeViolation(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class UnknownScale(KeyError):
    pass


def _load_data(name: str) -> dict:
    with resources.files("narravine.data").joinpath(name).open("r", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# SUS
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SusResponse:
    items: tuple[int, ...]

    def __post_init__(self):
        if len(self.items) != 10:
            raise RangeViolation("a response needs exactly 10 items")
        if any(not (1 <= v <= 5) for v in self.items):
            raise RangeViolation("items must be integers in 1..5")


def score_sus(response: SusResponse) -> float:
    """0-100 usability score: odd items add (r - 1), even items add (5 - r), total x 2.5."""
    total = 0
    for idx, rating in enumerate(response.items, start=1):
        total += (rating - 1) if idx % 2 == 1 else (5 - rating)
    return total * 2.5


# ---------------------------------------------------------------------------
# UEQ
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UeqResponse:
    items: tuple[int, ...]

    def __post_init__(self):
        if len(self.items) != 26:
            raise RangeViolation("a response needs exactly 26 items")
        if any(not (1 <= v <= 7) for v in self.items):
            raise RangeViolation("items must be integers in 1..7")


@dataclass(frozen=True)
class ScaleScore:
    scale: str
    mean: float
    sd: float
    n: int


def load_scale_map(path: Optional[Path] = None) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8")) if path else _load_data("ueq_scale_map.json")
    for scale in doc["scales"]:
        if not any(it["scale"] == scale for it in doc["items"]):
            raise ValueError(f"scale {scale} has no items")
    return doc


def key_item(raw: int, positive_first: bool) -> int:
    """Map a raw 1..7 rating onto -3..+3, flipping items keyed positive-pole-first."""
    return (4 - raw) if positive_first else (raw - 4)


def score_ueq(responses: Sequence[UeqResponse], scale_map: Optional[dict] = None) -> dict[str, ScaleScore]:
    """Per-scale mean and sample standard deviation over respondents."""
    if not responses:
        raise EmptyInput("no responses")
    smap = scale_map or load_scale_map()
    by_scale: dict[str, list[int]] = {}
    for it in smap["items"]:
        by_scale.setdefault(it["scale"], []).append(it["item"])

    out: dict[str, ScaleScore] = {}
    for scale, item_ids in by_scale.items():
        person_means = []
        for resp in responses:
            keyed = [
                key_item(resp.items[i - 1], next(it for it in smap["items"] if it["item"] == i)["positive_first"])
                for i in item_ids
            ]
            person_means.append(sum(keyed) / len(keyed))
        n = len(person_means)
        mean = sum(person_means) / n
        sd = math.sqrt(sum((m - mean) ** 2 for m in person_means) / (n - 1)) if n > 1 else 0.0
        out[scale] = ScaleScore(scale=scale, mean=mean, sd=sd, n=n)
    return out


def load_benchmark(path: Optional[Path] = None) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8")) if path else _load_data("ueq_benchmark.json")


def classify_benchmark(scale: str, mean: float, benchmark: Optional[dict] = None) -> str:
    """Interval lookup of a scale mean against the benchmark category bounds."""
    table = (benchmark or load_benchmark())["thresholds"]
    if scale not in table:
        raise UnknownScale(scale)
    bounds = table[scale]
    for category in ("Excellent", "Good", "Above Average", "Below Average"):
        if mean >= bounds[category]:
            return category
    return "Bad"


# ---------------------------------------------------------------------------
# Categorical votes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CategoricalVotes:
    categories: tuple[str, ...]
    counts: tuple[int, ...]
    n_respondents: int

    def __post_init__(self):
        if len(self.categories) != len(self.counts):
            raise ValueError("categories/counts length mismatch")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")


def chi_square_gof(votes: CategoricalVotes, expected: Optional[Sequence[float]] = None) -> tuple[float, int, float]:
    """Goodness-of-fit over the vote counts (uniform expectation by default)."""
    return stats.chi_square_gof(votes.counts, expected)


def pairwise_proportion_tests(votes: CategoricalVotes) -> list[list[float]]:
    """Holm-adjusted pairwise z-tests, each category vs each other.

    Multi-select votes are treated as independent per-category proportions
    over the respondent count.
    """
    groups = [(c, votes.n_respondents) for c in votes.counts]
    return stats.pairwise_proportion_tests(groups)


# ---------------------------------------------------------------------------
# CSV input and reporting
# ---------------------------------------------------------------------------

def _read_rows(path: Path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise EmptyInput(f"{path}: need a header row plus data")
    return rows

def load_sus_csv(path: Path) -> list[SusResponse]:
    rows = _read_rows(Path(path))
    return [SusResponse(items=tuple(int(v) for v in row[:10])) for row in rows[1:] if row]


def load_ueq_csv(path: Path) -> list[UeqResponse]:
    rows = _read_rows(Path(path))
    return [UeqResponse(items=tuple(int(v) for v in row[:26])) for row in rows[1:] if row]


def load_votes_csv(path: Path) -> CategoricalVotes:
    """Multi-select table: header = category labels, one 0/1 row per respondent."""
    rows = _read_rows(Path(path))
    header = tuple(h.strip() for h in rows[0])
    body = [row for row in rows[1:] if row]
    counts = tuple(sum(int(row[i]) for row in body) for i in range(len(header)))
    return CategoricalVotes(categories=header, counts=counts, n_respondents=len(body))


def questionnaire_report(
    sus: Optional[Iterable[SusResponse]] = None,
    ueq: Optional[Sequence[UeqResponse]] = None,
    votes: Optional[CategoricalVotes] = None,
    benchmark: Optional[dict] = None,
) -> dict:
    """Assemble a JSON-ready report for whatever instruments were provided."""
    report: dict = {}
    if sus is not None:
        scores = [score_sus(r) for r in sus]
        n = len(scores)
        mean = sum(scores) / n if n else 0.0
        sd = math.sqrt(sum((s - mean) ** 2 for s in scores) / (n - 1)) if n > 1 else 0.0
        report["sus"] = {"n": n, "mean": mean, "sd": sd, "scores": scores}
    if ueq is not None:
        scales = score_ueq(ueq)
        report["ueq"] = {
            name: {
                "mean": sc.mean,
                "sd": sc.sd,
                "n": sc.n,
                "category": classify_benchmark(name, sc.mean, benchmark),
            }
            for name, sc in scales.items()
        }
    if votes is not None:
        chi2, df, p = chi_square_gof(votes)
        report["votes"] = {
            "categories": list(votes.categories),
            "counts": list(votes.counts),
            "n_respondents": votes.n_respondents,
            "chi2": chi2,
            "df": df,
            "p": p,
            "pairwise_adjusted_p": pairwise_proportion_tests(votes),
        }
    return report


def plot_data(ueq_scales: dict[str, ScaleScore], benchmark: Optional[dict] = None) -> dict:
    """Per-scale means plus benchmark band edges, ready for a bar chart."""
    table = (benchmark or load_benchmark())["thresholds"]
    return {
        "scales": [
            {"scale": name, "mean": sc.mean, "sd": sc.sd, "bands": dict(table[name])}
            for name, sc in ueq_scales.items()
        ]
    }
