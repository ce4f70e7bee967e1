import json

import httpx
import pytest
import yaml

from callback_audit import cli
from callback_audit.llm_gateway import ChatClient


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["corpus", "synth", "--n", "400", "--seed", "2", "--explicit-request-rate", "0.1",
                     "--out", str(root / "corpus.jsonl"), "--profiles-out", str(root / "profiles.csv")]) == 0
    cfg = {
        "corpus": "corpus.jsonl",
        "output_dir": "bundle",
        "backend": {"kind": "mock", "params": {"base_female_logodds": -0.4, "keyword_weights": {"salon": 2.0, "truck": -2.0}}},
        "personas": {"base": True},
        "order_arms": ["mr_first"],
        "occupations": {"profiles": "profiles.csv"},
    }
    (root / "run.yaml").write_text(yaml.safe_dump(cfg))
    assert cli.main(["audit", "run", "--config", str(root / "run.yaml")]) == 0
    return root


def test_corpus_stats(ws, capsys):
    assert cli.main(["corpus", "stats", str(ws / "corpus.jsonl")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["n_postings"] == 400


def test_report_formats(ws):
    for fmt in ("json", "text", "csv_dir"):
        assert cli.main(["report", "render", "--bundle", str(ws / "bundle"), "--format", fmt]) == 0
    assert (ws / "bundle" / "report" / "report.txt").read_text().startswith("Summary")
    assert (ws / "bundle" / "report" / "csv" / "table1.csv").exists()


def test_audit_sweep_matches_bundle(ws, capsys):
    out = ws / "sweep.csv"
    assert cli.main(["audit", "sweep", "--records", str(ws / "bundle" / "records" / "base__mr_first.jsonl"),
                     "--assignments", str(ws / "bundle" / "assignments.csv"), "--corpus", str(ws / "corpus.jsonl"),
                     "--out", str(out)]) == 0
    assert out.read_bytes() == (ws / "bundle" / "sweeps" / "base__mr_first.csv").read_bytes()
    assert "parity at rho=" in capsys.readouterr().out


def test_occupations_map(ws):
    out = ws / "assign.csv"
    assert cli.main(["occupations", "map", "--corpus", str(ws / "corpus.jsonl"), "--profiles", str(ws / "profiles.csv"),
                     "--out", str(out)]) == 0
    assert out.read_bytes() == (ws / "bundle" / "assignments.csv").read_bytes()


def test_econ_wage_gap(ws, capsys):
    args = ["econ", "wage-gap", "--corpus", str(ws / "corpus.jsonl"),
            "--records", str(ws / "bundle" / "records" / "base__mr_first.jsonl"),
            "--assignments", str(ws / "bundle" / "assignments.csv")]
    assert cli.main(args + ["--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert set(data) == {"none", "state_occ_fe", "+month", "+controls", "occXstate_fe"}
    assert cli.main(args + ["--variant", "none", "--se", "cluster_cr1"]) == 0
    assert "female" in capsys.readouterr().out
    no_assign = args[:6]
    assert cli.main(no_assign + ["--variant", "+month"]) == 2


def test_lexicon_fit(ws, capsys):
    out = ws / "attr.csv"
    assert cli.main(["lexicon", "fit", "--corpus", str(ws / "corpus.jsonl"),
                     "--records", str(ws / "bundle" / "records" / "base__mr_first.jsonl"), "--out", str(out)]) == 0
    assert out.read_text().startswith("term,score,category")
    assert "vocabulary" in capsys.readouterr().out


def test_persona_tipi(ws, capsys):
    assert cli.main(["persona", "tipi", "--config", str(ws / "run.yaml"), "--figure", "Marie Curie", "--runs", "2"]) == 0
    scores = json.loads(capsys.readouterr().out)
    assert set(scores) == {"agreeableness", "conscientiousness", "emotional_stability", "extraversion", "openness"}


def test_exit_codes(ws, tmp_path, monkeypatch):
    # config error
    assert cli.main(["audit", "run", "--config", str(tmp_path / "absent.yaml")]) == 2
    (tmp_path / "bad.yaml").write_text("corpus: x\n")
    assert cli.main(["audit", "run", "--config", str(tmp_path / "bad.yaml")]) == 2
    # analysis error: render a bundle that does not exist
    assert cli.main(["report", "render", "--bundle", str(tmp_path / "nothing")]) == 4
    # transport error: http backend whose endpoint always fails
    cfg = {"corpus": str(ws / "corpus.jsonl"), "output_dir": str(tmp_path / "http"),
           "backend": {"kind": "http", "endpoint": {"base_url": "http://llm.invalid/v1", "model": "m",
                                                    "max_retries": 0}}}
    (tmp_path / "http.yaml").write_text(yaml.safe_dump(cfg))
    real_init = ChatClient.__init__

    def failing_init(self, endpoint, transport=None, sleep=None):
        def handler(request):
            raise httpx.ConnectError("unreachable")

        real_init(self, endpoint, transport=httpx.MockTransport(handler), sleep=lambda s: None)

    monkeypatch.setattr(ChatClient, "__init__", failing_init)
    assert cli.main(["audit", "run", "--config", str(tmp_path / "http.yaml")]) == 3


def test_usage_error_exits():
    with pytest.raises(SystemExit):
        cli.main(["corpus"])
