"""Map postings to 2018 SOC occupations by cosine similarity of embeddings."""

from __future__ import annotations

import csv
import hashlib
import os
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import httpx
import numpy as np

SOC_PATTERN = re.compile(r"^\d{2}-\d{4}$")
PROFILE_COLUMNS = ("soc_code", "title", "alt_titles", "tasks", "knowledge")
_TOKEN = re.compile(r"[a-z0-9]+")


class OccupationError(ValueError):
    pass


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise OccupationError(f"dimension mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise OccupationError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class OccupationProfile:
    soc_code: str
    title: str
    summary_text: str
    embedding: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self) -> None:
        if not SOC_PATTERN.match(self.soc_code):
            raise OccupationError(f"malformed SOC code {self.soc_code!r}")


@dataclass(frozen=True)
class OccupationAssignment:
    posting_id: str
    soc_code: str
    similarity: float


def aggregate_level(soc_code: str, level: int) -> str:
    """SOC prefix at the 2 (major), 3 (minor), 4 (broad) or 6 (detailed) digit level."""
    if not SOC_PATTERN.match(soc_code or ""):
        raise OccupationError(f"malformed SOC code {soc_code!r}")
    try:
        return {2: soc_code[:2], 3: soc_code[:4], 4: soc_code[:6], 6: soc_code}[level]
    except KeyError:
        raise OccupationError(f"level must be one of 2, 3, 4, 6; got {level!r}") from None


# --- embedding providers --------------------------------------------------


@lru_cache(maxsize=200_000)
def _token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


class HashedBowEmbedder:
    """Deterministic hashed term-frequency vectors, l2-normalized.

    Tokens are lowercase alphanumeric runs; each is hashed with 64-bit
    BLAKE2b (little-endian) and counted in bucket ``hash % dimension``.
    """

    kind = "hashed_bow_test_stub"

    def __init__(self, dimension: int = 512):
        if dimension < 1:
            raise OccupationError("dimension must be positive")
        self.dimension = dimension

    def embed_one(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension)
        for tok in _TOKEN.findall(text.lower()):
            v[_token_hash(tok) % self.dimension] += 1.0
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension))
        for i, t in enumerate(texts):
            out[i] = self.embed_one(t)
        return out


class RemoteEmbedder:
    """Embeddings from an HTTP ``/embeddings`` endpoint (OpenAI-style JSON)."""

    kind = "remote_endpoint"

    def __init__(
        self,
        base_url: str,
        model: str,
        dimension: int | None = None,
        api_key_env: str | None = None,
        timeout: float = 60.0,
        batch_size: int = 64,
        transport: httpx.BaseTransport | None = None,
    ):
        headers = {}
        if api_key_env:
            token = os.environ.get(api_key_env)
            if not token:
                raise OccupationError(f"environment variable {api_key_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        self.model = model
        self.dimension = dimension
        self.batch_size = batch_size
        self._http = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            resp = self._http.post("/embeddings", json={"model": self.model, "input": batch})
            if resp.status_code >= 300:
                raise OccupationError(f"embedding endpoint returned HTTP {resp.status_code}: {resp.text[:300]}")
            data = sorted(resp.json()["data"], key=lambda d: d.get("index", 0))
            rows.extend(d["embedding"] for d in data)
        out = np.asarray(rows, dtype=float).reshape(len(texts), -1)
        if self.dimension is not None and out.shape[1] != self.dimension:
            raise OccupationError(f"expected {self.dimension}-dimensional embeddings, got {out.shape[1]}")
        return out

    def embed_one(self, text: str) -> np.ndarray:
        return self.embed([text])[0]


def make_embedder(config: Mapping | None):
    config = dict(config or {})
    kind = config.pop("kind", "hashed")
    if kind in ("hashed", "hashed_bow", "hashed_bow_test_stub"):
        return HashedBowEmbedder(int(config.get("dimension", 512)))
    if kind in ("remote", "remote_endpoint"):
        return RemoteEmbedder(**config)
    raise OccupationError(f"unknown embedding provider {kind!r}")


# --- profiles and assignment ---------------------------------------------


def profile_summary(row: Mapping[str, str]) -> str:
    return " ".join(str(row.get(c) or "").strip() for c in ("title", "alt_titles", "tasks", "knowledge")).strip()


def build_profiles(rows: Iterable[Mapping[str, str]], embedder) -> list[OccupationProfile]:
    rows = list(rows)
    texts = [profile_summary(r) for r in rows]
    emb = embedder.embed(texts)
    profiles = [OccupationProfile(r["soc_code"].strip(), r.get("title", ""), t, emb[i]) for i, (r, t) in enumerate(zip(rows, texts))]
    dims = {p.embedding.shape[0] for p in profiles}
    if len(dims) > 1:
        raise OccupationError("profile embeddings have different dimensions")
    return profiles


def load_profiles(path: str | Path, embedder) -> list[OccupationProfile]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"soc_code", "title"} - set(reader.fieldnames or ())
        if missing:
            raise OccupationError(f"profile file lacks columns {sorted(missing)}")
        return build_profiles(reader, embedder)


def write_profile_rows(rows: Iterable[Mapping[str, str]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=PROFILE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in PROFILE_COLUMNS})


class ProfileIndex:
    """Normalized profile matrix for exact nearest-neighbour search."""

    def __init__(self, profiles: Sequence[OccupationProfile]):
        if not profiles:
            raise OccupationError("at least one occupation profile is required")
        # sort by code so that the first maximum is the smallest code
        self.profiles = sorted(profiles, key=lambda p: p.soc_code)
        mat = np.vstack([p.embedding for p in self.profiles]).astype(float)
        norms = np.linalg.norm(mat, axis=1)
        if np.any(norms == 0):
            bad = self.profiles[int(np.argmin(norms))].soc_code
            raise OccupationError(f"profile {bad} has a zero embedding")
        self._unit = mat / norms[:, None]
        self.dimension = mat.shape[1]

    def similarities(self, job_embedding) -> np.ndarray:
        v = np.asarray(job_embedding, dtype=float).ravel()
        if v.shape[0] != self.dimension:
            raise OccupationError(f"dimension mismatch: {v.shape[0]} vs {self.dimension}")
        n = np.linalg.norm(v)
        if n == 0:
            raise OccupationError("cannot assign a zero job embedding")
        return np.clip(self._unit @ (v / n), -1.0, 1.0)

    def assign(self, job_embedding, posting_id: str = "", tie_tol: float = 1e-12) -> OccupationAssignment:
        sims = self.similarities(job_embedding)
        best = sims.max()
        k = int(np.flatnonzero(sims >= best - tie_tol)[0])
        return OccupationAssignment(posting_id, self.profiles[k].soc_code, float(sims[k]))


def assign_occupation(job_embedding, profiles: Sequence[OccupationProfile], posting_id: str = "") -> OccupationAssignment:
    """Nearest profile by cosine similarity; ties go to the smallest SOC code."""
    return ProfileIndex(profiles).assign(job_embedding, posting_id)


def assign_postings(postings: Sequence, profiles: Sequence[OccupationProfile], embedder) -> list[OccupationAssignment]:
    index = ProfileIndex(profiles)
    emb = embedder.embed([p.job_text for p in postings])
    return [index.assign(emb[i], p.id) for i, p in enumerate(postings)]


def write_assignments(assignments: Iterable[OccupationAssignment], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["posting_id", "soc_code", "similarity"])
        for a in assignments:
            w.writerow([a.posting_id, a.soc_code, repr(a.similarity)])


def read_assignments(path: str | Path) -> list[OccupationAssignment]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [OccupationAssignment(r["posting_id"], r["soc_code"], float(r["similarity"])) for r in csv.DictReader(fh)]
