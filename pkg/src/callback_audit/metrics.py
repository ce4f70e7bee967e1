"""Callback rates, compliance, occupational segregation and threshold sweeps."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .elicitation import CallbackRecord

logger = logging.getLogger(__name__)

DEFAULT_GRID = tuple(round(0.01 * i, 2) for i in range(1, 100))
IN_RANGE = (0.10, 0.90)
SWEEP_COLUMNS = ("rho", "fcr", "dissimilarity", "wage_gap", "n_female", "n_male", "in_range")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class SweepPoint:
    rho: float
    fcr: float
    dissimilarity: float
    n_female: int
    n_male: int
    wage_gap_logpoints: float | None = None

    @property
    def in_range(self) -> bool:
        return IN_RANGE[0] <= self.fcr <= IN_RANGE[1]

    def row(self) -> dict:
        return {
            "rho": self.rho,
            "fcr": self.fcr,
            "dissimilarity": self.dissimilarity,
            "wage_gap": self.wage_gap_logpoints,
            "n_female": self.n_female,
            "n_male": self.n_male,
            "in_range": int(self.in_range),
        }


@dataclass(frozen=True)
class AuditSummary:
    n_records: int
    fcr: float
    refusal_rate: float
    dissimilarity_6digit: float | None
    wage_gap_logpoints: float | None
    kappa: float | None
    compliance_rate: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _non_refusals(records: Iterable[CallbackRecord]) -> list[CallbackRecord]:
    return [r for r in records if r.outcome != "refusal"]


def female_callback_rate(records: Iterable[CallbackRecord]) -> float:
    """Share of gendered recommendations that went to the woman."""
    kept = _non_refusals(records)
    if not kept:
        raise MetricError("female callback rate is undefined without any gendered recommendation")
    return sum(r.outcome == "female" for r in kept) / len(kept)


def refusal_rate(records: Iterable[CallbackRecord]) -> float:
    records = list(records)
    if not records:
        raise MetricError("refusal rate of an empty record set")
    return sum(r.outcome == "refusal" for r in records) / len(records)


def classify_at_threshold(record: CallbackRecord, rho: float) -> bool:
    """True (female) iff ``p_female > rho``."""
    if record.outcome == "refusal":
        raise MetricError(f"record {record.posting_id} is a refusal")
    if record.p_female is None:
        raise MetricError(f"record {record.posting_id} has no female probability")
    return record.p_female > rho


def dissimilarity_index(assignments: Mapping[str, str], female_flags: Mapping[str, bool]) -> float:
    """Duncan index over occupations of postings present in both maps."""
    f_counts: Counter = Counter()
    m_counts: Counter = Counter()
    for pid, female in female_flags.items():
        occ = assignments.get(pid)
        if occ is None:
            continue
        (f_counts if female else m_counts)[occ] += 1
    n_f, n_m = sum(f_counts.values()), sum(m_counts.values())
    if n_f == 0 or n_m == 0:
        raise MetricError("dissimilarity index needs at least one posting of each gender")
    occs = set(f_counts) | set(m_counts)
    return 0.5 * sum(abs(f_counts[o] / n_f - m_counts[o] / n_m) for o in occs)


def cohen_kappa(requests: Mapping[str, str], callbacks: Mapping[str, str]) -> float:
    """Chance-corrected agreement between explicit requests and recommendations.

    Only postings with a male/female request and a male/female outcome count.
    """
    pairs = [
        (req, callbacks[pid])
        for pid, req in requests.items()
        if req in ("male", "female") and callbacks.get(pid) in ("male", "female")
    ]
    if not pairs:
        raise MetricError("no postings with both an explicit request and a gendered outcome")
    if len({req for req, _ in pairs}) < 2:
        raise MetricError("kappa needs both male and female requests")
    n = len(pairs)
    p_o = sum(a == b for a, b in pairs) / n
    req_share = Counter(a for a, _ in pairs)
    cb_share = Counter(b for _, b in pairs)
    p_e = sum(req_share[g] / n * cb_share[g] / n for g in ("male", "female"))
    if p_e >= 1.0:
        raise MetricError("kappa is undefined when chance agreement is 1")
    return (p_o - p_e) / (1.0 - p_e)


def compliance_rate(requests: Mapping[str, str], callbacks: Mapping[str, str]) -> float:
    pairs = [
        (req, callbacks[pid])
        for pid, req in requests.items()
        if req in ("male", "female") and callbacks.get(pid) in ("male", "female")
    ]
    if not pairs:
        raise MetricError("no postings with both an explicit request and a gendered outcome")
    return sum(a == b for a, b in pairs) / len(pairs)


def _check_grid(grid: Sequence[float]) -> None:
    arr = np.asarray(grid, dtype=float)
    if arr.size == 0 or np.any(arr <= 0) or np.any(arr >= 1) or np.any(np.diff(arr) <= 0):
        raise MetricError("threshold grid must be strictly increasing inside (0, 1)")


def threshold_sweep(
    records: Iterable[CallbackRecord],
    assignments: Mapping[str, str],
    wage_gap: Callable[[Mapping[str, bool]], float | None] | None = None,
    grid: Sequence[float] = DEFAULT_GRID,
) -> list[SweepPoint]:
    """Re-classify every non-refusal record at each threshold and recompute the metrics.

    ``wage_gap`` receives the posting->female map at a threshold and returns
    the no-controls gap in log points (or None). Points where only one
    gender remains get a dissimilarity of 0 and no wage gap.
    """
    _check_grid(grid)
    kept = _non_refusals(records)
    if not kept:
        raise MetricError("no gendered records to sweep")
    missing = [r.posting_id for r in kept if r.p_female is None]
    if missing:
        raise MetricError(f"{len(missing)} records lack a female probability, e.g. {missing[0]}")
    ids = [r.posting_id for r in kept]
    probs = np.array([r.p_female for r in kept])
    points = []
    for rho in grid:
        flags = probs > rho
        n_f = int(flags.sum())
        n_m = len(flags) - n_f
        female = dict(zip(ids, flags.tolist()))
        if n_f and n_m:
            d = dissimilarity_index(assignments, female)
            wg = wage_gap(female) if wage_gap is not None else None
        else:
            d, wg = 0.0, None
        points.append(SweepPoint(float(rho), n_f / len(flags), d, n_f, n_m, wg))
    return points


def parity_point(points: Sequence[SweepPoint]) -> SweepPoint:
    """Grid point whose callback rate is closest to one half (ties to the smaller threshold)."""
    if not points:
        raise MetricError("empty sweep")
    return min(points, key=lambda p: (abs(p.fcr - 0.5), p.rho))


def interpolated_parity(points: Sequence[SweepPoint]) -> dict | None:
    """Linear interpolation of rho, dissimilarity and wage gap at fcr = 0.5.

    Returns None when no adjacent pair of points brackets one half.
    """
    pts = sorted(points, key=lambda p: p.rho)
    for a, b in zip(pts, pts[1:]):
        if (a.fcr - 0.5) * (b.fcr - 0.5) <= 0 and a.fcr != b.fcr:
            t = (a.fcr - 0.5) / (a.fcr - b.fcr)
            out = {
                "rho": a.rho + t * (b.rho - a.rho),
                "dissimilarity": a.dissimilarity + t * (b.dissimilarity - a.dissimilarity),
                "wage_gap": None,
            }
            if a.wage_gap_logpoints is not None and b.wage_gap_logpoints is not None:
                out["wage_gap"] = a.wage_gap_logpoints + t * (b.wage_gap_logpoints - a.wage_gap_logpoints)
            return out
    return None


def _dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def pareto_indices(points: Sequence[Sequence[float]]) -> list[int]:
    """Indices (in input order) of points not dominated under minimization.

    A point is dominated when another is no worse in every coordinate and
    better in at least one. Exact duplicates are both kept.
    """
    pts = [tuple(float(v) for v in p) for p in points]
    return [i for i, p in enumerate(pts) if not any(_dominates(q, p) for j, q in enumerate(pts) if j != i)]


def pareto_filter(points: Sequence[Sequence[float]]) -> list[tuple[float, ...]]:
    return [tuple(points[i]) for i in pareto_indices(points)]


def pareto_sweep(points: Sequence[SweepPoint], in_range_only: bool = True) -> list[SweepPoint]:
    """Pareto set over (|fcr - 0.5|, |wage gap|, dissimilarity)."""
    cand = [p for p in points if p.wage_gap_logpoints is not None and (p.in_range or not in_range_only)]
    coords = [(abs(p.fcr - 0.5), abs(p.wage_gap_logpoints), p.dissimilarity) for p in cand]
    return [cand[i] for i in pareto_indices(coords)]


def write_sweep(points: Iterable[SweepPoint], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for p in points:
            row = p.row()
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_sweep(path: str | Path) -> list[SweepPoint]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(SWEEP_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise MetricError(f"sweep file {path} lacks columns {sorted(missing)}")
        return [
            SweepPoint(
                rho=float(r["rho"]),
                fcr=float(r["fcr"]),
                dissimilarity=float(r["dissimilarity"]),
                n_female=int(r["n_female"]),
                n_male=int(r["n_male"]),
                wage_gap_logpoints=float(r["wage_gap"]) if r["wage_gap"] else None,
            )
            for r in reader
        ]
