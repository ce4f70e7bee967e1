import json

import httpx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from callback_audit.occupations import (
    HashedBowEmbedder,
    OccupationError,
    OccupationProfile,
    RemoteEmbedder,
    aggregate_level,
    assign_occupation,
    assign_postings,
    build_profiles,
    cosine_similarity,
    load_profiles,
    make_embedder,
    read_assignments,
    write_assignments,
    write_profile_rows,
)
from callback_audit.synth import SynthConfig, occupation_profile_rows, synthesize_corpus


def test_cosine_examples():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1, 0], [1, 0, 0]) == pytest.approx(0.70710678, abs=1e-8)
    with pytest.raises(OccupationError):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(OccupationError):
        cosine_similarity([1, 0], [1, 0, 0])


def _profile(code, vec):
    return OccupationProfile(code, code, code, np.asarray(vec, dtype=float))


def test_assign_examples():
    assert assign_occupation([0.0, 1.0], [_profile("11-1011", [1.0, 0.0])]).soc_code == "11-1011"
    profiles = [_profile("11-1011", [1, 0, 0]), _profile("15-1252", [0, 1, 0]), _profile("29-1141", [0, 0, 1])]
    a = assign_occupation([0, 2, 0], profiles, "p")
    assert a.soc_code == "15-1252" and a.similarity == pytest.approx(1.0) and a.posting_id == "p"
    # both profiles at similarity 0.8 with the job vector
    tie = [_profile("47-2111", [0.8, 0.6]), _profile("47-2031", [0.8, -0.6])]
    a = assign_occupation([1.0, 0.0], tie)
    assert a.soc_code == "47-2031" and a.similarity == pytest.approx(0.8)
    with pytest.raises(OccupationError):
        assign_occupation([1.0], [])


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3), st.floats(1e-3, 1e3))
def test_assignment_scale_invariant(v, c):
    rng = np.random.default_rng(0)
    profiles = [_profile(f"1{i}-0000", rng.normal(size=3)) for i in range(5)]
    a, b = assign_occupation(v, profiles), assign_occupation(np.asarray(v) * c, profiles)
    assert a.soc_code == b.soc_code and a.similarity == pytest.approx(b.similarity, abs=1e-12)


def test_aggregate_level():
    assert aggregate_level("47-2031", 2) == "47"
    assert aggregate_level("47-2031", 3) == "47-2"
    assert aggregate_level("47-2031", 4) == "47-203"
    assert aggregate_level("47-2031", 6) == "47-2031"
    with pytest.raises(OccupationError):
        aggregate_level("4-7203", 2)
    with pytest.raises(OccupationError):
        aggregate_level("47-2031", 5)
    with pytest.raises(OccupationError):
        _profile("472031", [1.0])


def test_hashed_embedder_deterministic_and_normalized():
    e = HashedBowEmbedder(512)
    a, b = e.embed_one("Wiring and circuits"), e.embed_one("wiring AND circuits!")
    assert np.array_equal(a, b) and np.linalg.norm(a) == pytest.approx(1.0)
    assert np.all(e.embed_one("") == 0)
    assert make_embedder({"kind": "hashed", "dimension": 64}).dimension == 64
    with pytest.raises(OccupationError):
        make_embedder({"kind": "bert"})


def test_remote_embedder_batches():
    calls = []

    def handler(request):
        body = json.loads(request.content)
        calls.append(len(body["input"]))
        data = [{"index": i, "embedding": [float(len(t)), 1.0]} for i, t in reversed(list(enumerate(body["input"])))]
        return httpx.Response(200, json={"data": data})

    emb = RemoteEmbedder("http://emb.test/v1", "m", dimension=2, batch_size=2, transport=httpx.MockTransport(handler))
    out = emb.embed(["a", "bb", "ccc"])
    assert calls == [2, 1] and out[:, 0].tolist() == [1.0, 2.0, 3.0]
    bad = RemoteEmbedder("http://emb.test/v1", "m", transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    with pytest.raises(OccupationError):
        bad.embed(["x"])


def test_synthetic_postings_map_to_their_occupation(tmp_path):
    cfg = SynthConfig(n=2000)
    postings = synthesize_corpus(cfg, seed=11)
    write_profile_rows(occupation_profile_rows(cfg.occupations), tmp_path / "profiles.csv")
    emb = HashedBowEmbedder()
    assigned = assign_postings(postings, load_profiles(tmp_path / "profiles.csv", emb), emb)
    hit = np.mean([a.soc_code == p.metadata["true_soc"] for a, p in zip(assigned, postings)])
    assert hit >= 0.95
    write_assignments(assigned, tmp_path / "a.csv")
    assert read_assignments(tmp_path / "a.csv") == assigned


def test_profile_dimension_mismatch():
    class Ragged:
        def embed(self, texts):
            return [np.ones(2), np.ones(3)]

    with pytest.raises(OccupationError):
        build_profiles([{"soc_code": "11-1011", "title": "a"}, {"soc_code": "11-1021", "title": "b"}], Ragged())
