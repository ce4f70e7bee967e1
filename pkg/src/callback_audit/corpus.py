"""Job-posting corpora: loading, validation, synthesis and pre-filtering."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EDUCATION_LEVELS = (
    "secondary",
    "senior_secondary",
    "diploma",
    "graduate",
    "postgraduate",
    "unspecified",
)
JOB_TYPES = ("full_time", "part_time", "internship")
EXPLICIT_REQUESTS = ("male", "female", "none")

CSV_COLUMNS = (
    "id",
    "title",
    "description",
    "wage_low",
    "wage_high",
    "education",
    "experience",
    "sector",
    "org_type",
    "job_type",
    "state",
    "month_year",
    "skill_tags",
)

_MONTH_YEAR = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")
_MALE_WORD = re.compile(r"\bmale\b")
_FEMALE_WORD = re.compile(r"\bfemale\b")


class CorpusError(ValueError):
    """Malformed or inconsistent corpus input."""


def detect_explicit_request(title: str, description: str, *, substring: bool = False) -> str:
    """Classify an ad as explicitly requesting ``"male"``, ``"female"`` or ``"none"``.

    An ad requests men when the word "male" appears without "female", and
    women when "female" appears without a standalone "male". Matching is
    case-insensitive. By default words are matched on word boundaries, so
    "female" never counts as an occurrence of "male"; ``substring=True``
    switches to plain substring search (with "female" masked out before
    looking for "male").
    """
    text = f"{title} {description}".lower()
    if substring:
        has_female = "female" in text
        has_male = "male" in text.replace("female", " ")
    else:
        has_female = _FEMALE_WORD.search(text) is not None
        has_male = _MALE_WORD.search(text) is not None
    if has_male and not has_female:
        return "male"
    if has_female and not has_male:
        return "female"
    return "none"


@dataclass(frozen=True)
class JobPosting:
    id: str
    title: str
    description: str
    wage_range: tuple[float, float] | None = None
    education: str = "unspecified"
    experience_years: float | None = None
    sector: str | None = None
    org_type: str | None = None
    job_type: str | None = None
    state: str | None = None
    month_year: str | None = None
    skill_tags: frozenset[str] = frozenset()
    explicit_request: str = "none"
    metadata: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("posting id must be non-empty")
        if not self.job_text:
            raise CorpusError(f"posting {self.id!r}: title and description are both empty")
        if self.wage_range is not None:
            low, high = self.wage_range
            if not (math.isfinite(low) and math.isfinite(high)) or low <= 0:
                raise CorpusError(f"posting {self.id!r}: wage values must be positive and finite")
            if low > high:
                raise CorpusError(f"posting {self.id!r}: wage_low {low} exceeds wage_high {high}")
        if self.education not in EDUCATION_LEVELS:
            raise CorpusError(f"posting {self.id!r}: unknown education level {self.education!r}")
        if self.job_type is not None and self.job_type not in JOB_TYPES:
            raise CorpusError(f"posting {self.id!r}: unknown job type {self.job_type!r}")
        if self.experience_years is not None and not (self.experience_years >= 0):
            raise CorpusError(f"posting {self.id!r}: experience must be non-negative")
        if self.month_year is not None and not _MONTH_YEAR.match(self.month_year):
            raise CorpusError(f"posting {self.id!r}: month_year must look like YYYY-MM")
        if self.explicit_request not in EXPLICIT_REQUESTS:
            raise CorpusError(f"posting {self.id!r}: bad explicit_request {self.explicit_request!r}")

    @property
    def job_text(self) -> str:
        return f"{self.title} {self.description}".strip()

    @property
    def wage_midpoint(self) -> float | None:
        if self.wage_range is None:
            return None
        low, high = self.wage_range
        return (low + high) / 2.0

    def to_record(self) -> dict:
        """Flat dict using the CSV/JSONL column names."""
        low, high = self.wage_range if self.wage_range is not None else (None, None)
        return {
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "wage_low": low,
            "wage_high": high,
            "education": self.education,
            "experience": self.experience_years,
            "sector": self.sector,
            "org_type": self.org_type,
            "job_type": self.job_type,
            "state": self.state,
            "month_year": self.month_year,
            "skill_tags": sorted(self.skill_tags),
        }


@dataclass(frozen=True)
class WagePoint:
    posting_id: str
    log_wage: float


@dataclass(frozen=True)
class CorpusStats:
    n_postings: int
    share_with_wage: float
    share_explicit_male: float
    share_explicit_female: float


# --- loading -------------------------------------------------------------


def _blank(value) -> bool:
    return value is None or (isinstance(value, str) and value.strip() == "")


def _as_float(value, row: int, name: str) -> float | None:
    if _blank(value):
        return None
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise CorpusError(f"row {row}: field {name!r} is not a number: {value!r}") from None
    if not math.isfinite(out):
        raise CorpusError(f"row {row}: field {name!r} is not finite")
    return out


def _as_text(value) -> str | None:
    if _blank(value):
        return None
    return str(value).strip()


def _parse_tags(value) -> frozenset[str]:
    if _blank(value):
        return frozenset()
    if isinstance(value, (list, tuple, set, frozenset)):
        return frozenset(str(v).strip() for v in value if str(v).strip())
    return frozenset(t.strip() for t in str(value).split(";") if t.strip())


def posting_from_record(rec: Mapping, row: int, *, substring_match: bool = False) -> JobPosting:
    """Build a validated posting from a raw CSV/JSONL record (``row`` is 1-based)."""
    for name in ("id", "title", "description"):
        if name not in rec:
            raise CorpusError(f"row {row}: missing required field {name!r}")
    pid = _as_text(rec["id"])
    if pid is None:
        raise CorpusError(f"row {row}: field 'id' is empty")
    title = "" if rec["title"] is None else str(rec["title"]).strip()
    description = "" if rec["description"] is None else str(rec["description"]).strip()

    low = _as_float(rec.get("wage_low"), row, "wage_low")
    high = _as_float(rec.get("wage_high"), row, "wage_high")
    if low is None and high is None:
        wage = None
    else:
        # a single reported wage stands for both ends of the range
        wage = (low if low is not None else high, high if high is not None else low)

    education = _as_text(rec.get("education")) or "unspecified"
    try:
        return JobPosting(
            id=pid,
            title=title,
            description=description,
            wage_range=wage,
            education=education.lower(),
            experience_years=_as_float(rec.get("experience"), row, "experience"),
            sector=_as_text(rec.get("sector")),
            org_type=_as_text(rec.get("org_type")),
            job_type=_as_text(rec.get("job_type")),
            state=_as_text(rec.get("state")),
            month_year=_as_text(rec.get("month_year")),
            skill_tags=_parse_tags(rec.get("skill_tags")),
            explicit_request=detect_explicit_request(title, description, substring=substring_match),
            metadata=dict(rec.get("metadata") or {}),
        )
    except CorpusError as exc:
        raise CorpusError(f"row {row}: {exc}") from None


def load_corpus(path: str | Path, format: str | None = None, *, substring_match: bool = False) -> list[JobPosting]:
    """Read a CSV or JSONL corpus. ``format`` defaults to the file suffix."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("csv", "jsonl"):
        raise CorpusError(f"unsupported corpus format {fmt!r}")

    records: list[tuple[int, Mapping]] = []
    if fmt == "csv":
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"id", "title", "description"} - set(reader.fieldnames or ())
            if missing:
                raise CorpusError(f"missing required columns: {sorted(missing)}")
            for i, rec in enumerate(reader, start=1):
                records.append((i, rec))
    else:
        with path.open(encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"row {i}: invalid JSON ({exc.msg})") from None
                if not isinstance(rec, dict):
                    raise CorpusError(f"row {i}: expected a JSON object")
                records.append((i, rec))

    postings: list[JobPosting] = []
    seen: dict[str, int] = {}
    for row, rec in records:
        posting = posting_from_record(rec, row, substring_match=substring_match)
        if posting.id in seen:
            raise CorpusError(f"row {row}: duplicate id {posting.id!r} (first seen in row {seen[posting.id]})")
        seen[posting.id] = row
        postings.append(posting)
    return postings


def write_corpus(postings: Iterable[JobPosting], path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for p in postings:
                rec = p.to_record()
                rec["skill_tags"] = ";".join(rec["skill_tags"])
                writer.writerow({k: "" if v is None else v for k, v in rec.items()})
    elif fmt == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for p in postings:
                rec = p.to_record()
                if p.metadata:
                    rec["metadata"] = dict(p.metadata)
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    else:
        raise CorpusError(f"unsupported corpus format {fmt!r}")


def corpus_stats(postings: Sequence[JobPosting]) -> CorpusStats:
    n = len(postings)
    if n == 0:
        return CorpusStats(0, 0.0, 0.0, 0.0)
    return CorpusStats(
        n_postings=n,
        share_with_wage=sum(p.wage_range is not None for p in postings) / n,
        share_explicit_male=sum(p.explicit_request == "male" for p in postings) / n,
        share_explicit_female=sum(p.explicit_request == "female" for p in postings) / n,
    )


# --- wages ---------------------------------------------------------------


def wage_bounds(postings: Sequence[JobPosting], lower_pct: float = 1.0, upper_pct: float = 99.0) -> tuple[float, float]:
    """Percentile bounds of the wage mid-points (linear interpolation)."""
    mids = np.array([p.wage_midpoint for p in postings if p.wage_range is not None], dtype=float)
    if mids.size < 2:
        raise CorpusError(f"need at least 2 postings with wages, got {mids.size}")
    if mids.size < 100:
        logger.warning("only %d wage observations; percentile trimming is unstable", mids.size)
    lo, hi = np.percentile(mids, [lower_pct, upper_pct], method="linear")
    return float(lo), float(hi)


def trim_wage_outliers(
    postings: Sequence[JobPosting],
    bounds: tuple[float, float] | None = None,
) -> list[WagePoint]:
    """Log wage mid-points of postings whose wage lies within the 1st..99th percentiles.

    Postings below the 1st or above the 99th percentile are dropped. Pass
    ``bounds`` to reuse bounds computed on another sample.
    """
    lo, hi = bounds if bounds is not None else wage_bounds(postings)
    out = []
    for p in postings:
        mid = p.wage_midpoint
        if mid is not None and lo <= mid <= hi:
            out.append(WagePoint(p.id, math.log(mid)))
    return out
