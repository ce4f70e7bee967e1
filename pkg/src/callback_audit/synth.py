"""Deterministic synthetic job-posting corpora with planted structure.

Generated postings carry their ground truth in ``metadata``:
``true_soc`` (the occupation the ad was drawn from), ``planted_keywords``
(gendered keywords inserted into the text) and ``true_request``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import CorpusError, JobPosting, detect_explicit_request


@dataclass(frozen=True)
class OccupationSeed:
    soc_code: str
    title: str
    keywords: tuple[str, ...]
    log_wage_mean: float
    log_wage_sd: float = 0.4
    # probability that each gendered keyword shows up in an ad of this occupation
    gendered_rates: Mapping[str, float] = field(default_factory=dict)
    skill_tags: tuple[str, ...] = ()
    weight: float = 1.0

    def profile_row(self) -> dict:
        """Row for the occupation-profile CSV consumed by the occupation mapper."""
        return {
            "soc_code": self.soc_code,
            "title": self.title,
            "alt_titles": "",
            "tasks": " ".join(self.keywords),
            "knowledge": "",
        }


FEMALE_KEYWORDS = ("pleasant", "caring", "presentable", "friendly")
MALE_KEYWORDS = ("strong", "lifting", "night", "travel")


def _rates(female: float, male: float) -> dict[str, float]:
    out = {k: female for k in FEMALE_KEYWORDS}
    out.update({k: male for k in MALE_KEYWORDS})
    return out


DEFAULT_OCCUPATIONS: tuple[OccupationSeed, ...] = (
    OccupationSeed("47-2031", "Carpenter", ("carpentry", "wood", "furniture", "framing", "joinery", "saw", "cabinets", "plywood", "polishing", "fitting"), 12.0, 0.35, _rates(0.03, 0.45), ("s01", "s02")),
    OccupationSeed("47-2111", "Electrician", ("wiring", "electrical", "circuits", "panels", "voltage", "conduit", "breakers", "earthing", "lighting", "switchgear"), 12.3, 0.35, _rates(0.03, 0.4), ("s02", "s03")),
    OccupationSeed("49-3023", "Automotive Technician", ("automotive", "engine", "brakes", "diagnostics", "workshop", "transmission", "mechanic", "tyres", "servicing", "gearbox"), 12.2, 0.35, _rates(0.04, 0.4), ("s03", "s04")),
    OccupationSeed("33-9032", "Security Guard", ("security", "patrol", "guard", "surveillance", "premises", "gate", "cctv", "visitors", "vigilance", "access"), 11.7, 0.3, _rates(0.05, 0.5), ("s05",)),
    OccupationSeed("53-3032", "Truck Driver", ("truck", "driving", "licence", "cargo", "highway", "routes", "loading", "logistics", "diesel", "haulage"), 12.1, 0.3, _rates(0.03, 0.55), ("s04", "s06")),
    OccupationSeed("39-5012", "Hairdresser", ("hair", "salon", "styling", "beauty", "haircut", "colouring", "grooming", "makeup", "facials", "spa"), 11.8, 0.35, _rates(0.45, 0.04), ("s07", "s08")),
    OccupationSeed("25-2021", "Primary School Teacher", ("teaching", "students", "classroom", "curriculum", "lessons", "school", "pupils", "homework", "syllabus", "tutoring"), 12.2, 0.35, _rates(0.35, 0.05), ("s09", "s10")),
    OccupationSeed("43-4051", "Customer Service Representative", ("customer", "calls", "queries", "telecalling", "complaints", "crm", "voice", "helpdesk", "inbound", "escalations"), 11.9, 0.3, _rates(0.4, 0.08), ("s08", "s11")),
    OccupationSeed("29-1141", "Staff Nurse", ("nursing", "hospital", "ward", "medication", "clinical", "patients", "injections", "icu", "vitals", "dressing"), 12.4, 0.35, _rates(0.4, 0.15), ("s10", "s12")),
    OccupationSeed("15-1252", "Software Developer", ("software", "programming", "python", "java", "developer", "applications", "database", "debugging", "api", "backend"), 13.0, 0.45, _rates(0.08, 0.12), ("s13", "s14")),
    OccupationSeed("13-2011", "Accountant", ("accounting", "tally", "ledger", "invoices", "taxation", "gst", "audit", "reconciliation", "bookkeeping", "payable"), 12.5, 0.35, _rates(0.12, 0.08), ("s14", "s15")),
    OccupationSeed("41-2031", "Retail Sales Associate", ("retail", "showroom", "merchandise", "billing", "counter", "store", "footfall", "displays", "upselling", "stock"), 11.8, 0.3, _rates(0.3, 0.15), ("s11", "s16")),
)

FILLER_WORDS = (
    "job", "candidate", "work", "apply", "experience", "required", "good", "salary",
    "company", "team", "location", "immediate", "joining", "skills", "knowledge", "role",
)

FEMALE_REQUEST_PHRASES = ("Female candidates preferred.", "Only female applicants.")
MALE_REQUEST_PHRASES = ("Male candidates preferred.", "Only male applicants.")

STATES = ("Delhi", "Gujarat", "Karnataka", "Maharashtra", "Punjab", "Tamil Nadu", "Uttar Pradesh", "West Bengal")
SECTORS = ("services", "manufacturing", "construction", "agriculture")
ORG_TYPES = ("private", "government", "ngo", "others")
EDUCATION_SHARES = {
    "secondary": 0.03,
    "senior_secondary": 0.2,
    "diploma": 0.04,
    "graduate": 0.29,
    "postgraduate": 0.02,
    "unspecified": 0.42,
}
JOB_TYPE_SHARES = {"full_time": 0.81, "part_time": 0.065, "internship": 0.125}


def _months() -> tuple[str, ...]:
    out = []
    year, month = 2020, 7
    while (year, month) <= (2022, 11):
        out.append(f"{year:04d}-{month:02d}")
        month += 1
        if month == 13:
            year, month = year + 1, 1
    return tuple(out)


MONTHS = _months()
SKILL_CATEGORIES = tuple(f"s{i:02d}" for i in range(1, 38))


@dataclass(frozen=True)
class SynthConfig:
    n: int = 1000
    occupations: Sequence[OccupationSeed] = DEFAULT_OCCUPATIONS
    explicit_request_rate: float = 0.02
    female_request_share: float = 0.5
    wage_share: float = 0.36
    occupation_words: int = 6
    filler_words: int = 4
    skill_tag_rate: float = 0.5
    background_tag_rate: float = 0.02
    experience_missing_rate: float = 0.05

    def __post_init__(self) -> None:
        if self.n < 0:
            raise CorpusError("n must be non-negative")
        for name in ("explicit_request_rate", "female_request_share", "wage_share",
                     "skill_tag_rate", "background_tag_rate", "experience_missing_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise CorpusError(f"{name} must lie in [0, 1], got {v}")
        if not self.occupations:
            raise CorpusError("at least one occupation seed is required")


def _choice(rng: np.random.Generator, options: Sequence[str], probs: Sequence[float] | None = None) -> str:
    idx = rng.choice(len(options), p=None if probs is None else np.asarray(probs) / np.sum(probs))
    return options[int(idx)]


def synthesize_corpus(config: SynthConfig, seed: int) -> list[JobPosting]:
    """Generate ``config.n`` postings; identical output for identical ``(config, seed)``."""
    rng = np.random.default_rng(seed)
    occs = list(config.occupations)
    weights = np.array([o.weight for o in occs], dtype=float)
    weights /= weights.sum()
    edu_levels, edu_p = zip(*EDUCATION_SHARES.items())
    jt_levels, jt_p = zip(*JOB_TYPE_SHARES.items())

    postings = []
    for i in range(config.n):
        occ = occs[int(rng.choice(len(occs), p=weights))]
        words = list(rng.choice(occ.keywords, size=config.occupation_words, replace=True))
        words += list(rng.choice(FILLER_WORDS, size=config.filler_words, replace=True))
        planted = sorted(k for k, r in occ.gendered_rates.items() if rng.random() < r)
        words += planted
        rng.shuffle(words)
        description = " ".join(words) + "."

        request = "none"
        if rng.random() < config.explicit_request_rate:
            if rng.random() < config.female_request_share:
                request = "female"
                description += " " + _choice(rng, FEMALE_REQUEST_PHRASES)
            else:
                request = "male"
                description += " " + _choice(rng, MALE_REQUEST_PHRASES)

        wage = None
        if rng.random() < config.wage_share:
            mid = math.exp(rng.normal(occ.log_wage_mean, occ.log_wage_sd))
            wage = (round(mid * 0.9, 2), round(mid * 1.1, 2))

        experience = None
        if rng.random() >= config.experience_missing_rate:
            experience = float(rng.integers(0, 21)) / 2.0

        tags = {t for t in occ.skill_tags if rng.random() < config.skill_tag_rate}
        tags |= {t for t in SKILL_CATEGORIES if rng.random() < config.background_tag_rate}

        title = occ.title
        postings.append(
            JobPosting(
                id=f"job{i:06d}",
                title=title,
                description=description,
                wage_range=wage,
                education=_choice(rng, edu_levels, edu_p),
                experience_years=experience,
                sector=_choice(rng, SECTORS, (0.9, 0.06, 0.03, 0.01)),
                org_type=_choice(rng, ORG_TYPES, (0.43, 0.03, 0.01, 0.53)),
                job_type=_choice(rng, jt_levels, jt_p),
                state=_choice(rng, STATES),
                month_year=_choice(rng, MONTHS),
                skill_tags=frozenset(tags),
                explicit_request=detect_explicit_request(title, description),
                metadata={"true_soc": occ.soc_code, "planted_keywords": planted, "true_request": request},
            )
        )
    return postings


def plant_wage_gap(postings: Sequence[JobPosting], female: Mapping[str, bool], gap: float) -> list[JobPosting]:
    """Shift the log wage of every posting flagged female in ``female`` by ``gap``.

    Postings absent from ``female`` (e.g. refusals) keep their wages.
    """
    factor = math.exp(gap)
    out = []
    for p in postings:
        if p.wage_range is not None and female.get(p.id, False):
            low, high = p.wage_range
            p = dataclasses.replace(p, wage_range=(low * factor, high * factor))
        out.append(p)
    return out


def occupation_profile_rows(occupations: Sequence[OccupationSeed] = DEFAULT_OCCUPATIONS) -> list[dict]:
    return [o.profile_row() for o in occupations]
