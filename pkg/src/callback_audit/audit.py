"""Batch audit runs: configuration, resumable elicitation, analysis and report bundles."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .corpus import CorpusError, JobPosting, load_corpus, trim_wage_outliers
from .econometrics import (
    WAGE_VARIANTS,
    RegressionError,
    RegressionResult,
    liwc_association,
    render_table,
    skill_association,
    trait_segregation_regression,
    trait_wage_regression,
    wage_gap_regression,
)
from .elicitation import (
    ORDER_ARMS,
    CallbackRecord,
    PersonaSpec,
    elicit_tipi,
    iter_personas,
    make_record,
    recommendation_request,
)
from .lexicon import CategoryDictionary, category_frame, fit_lexicon, read_external_lexicon, merge_external_lexicon, write_attribution
from .llm_gateway import ChatClient, EndpointConfig, HttpBackend, MockRecruiter, MockRecruiterParams
from .metrics import (
    DEFAULT_GRID,
    AuditSummary,
    MetricError,
    SweepPoint,
    cohen_kappa,
    compliance_rate,
    dissimilarity_index,
    female_callback_rate,
    interpolated_parity,
    parity_point,
    pareto_sweep,
    read_sweep,
    refusal_rate,
    threshold_sweep,
    write_sweep,
)
from .occupations import assign_postings, load_profiles, make_embedder, read_assignments, write_assignments

logger = logging.getLogger(__name__)

UNTRACKED = ("provenance.json", "manifest.json")


class ConfigError(ValueError):
    pass


class BundleError(RuntimeError):
    pass


# --- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class PersonaPlan:
    base: bool = True
    traits: tuple[tuple[str, str], ...] = ()
    figures: tuple[str, ...] = ()

    def specs(self) -> list[PersonaSpec]:
        return list(iter_personas(self.base, self.traits, self.figures))


@dataclass(frozen=True)
class RunConfig:
    corpus: str
    output_dir: str
    backend: Mapping[str, Any]
    personas: PersonaPlan = PersonaPlan()
    order_arms: tuple[str, ...] = ("mr_first",)
    grid: tuple[float, ...] = DEFAULT_GRID
    occupations: Mapping[str, Any] | None = None
    lexicon: Mapping[str, Any] | None = None
    dictionary: str | None = None
    tipi_runs: int = 10
    seed: int = 0
    chunk_size: int = 256

    def __post_init__(self) -> None:
        if not self.personas.specs():
            raise ConfigError("persona list is empty")
        bad = [a for a in self.order_arms if a not in ORDER_ARMS]
        if bad or not self.order_arms:
            raise ConfigError(f"order_arms must be a non-empty subset of {ORDER_ARMS}")
        kind = self.backend.get("kind")
        if kind not in ("mock", "http"):
            raise ConfigError("backend.kind must be 'mock' or 'http'")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["personas"] = {
            "base": self.personas.base,
            "traits": [f"{t}:{'+' if k == 'positive' else '-'}" for t, k in self.personas.traits],
            "figures": list(self.personas.figures),
        }
        d["order_arms"] = list(self.order_arms)
        d["grid"] = list(self.grid)
        return d

    def config_hash(self) -> str:
        """Digest of everything that influences results (the output location does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()


_CONFIG_KEYS = {f for f in RunConfig.__dataclass_fields__}


def _parse_trait(item) -> tuple[str, str]:
    if isinstance(item, (list, tuple)) and len(item) == 2:
        return str(item[0]), str(item[1])
    m = re.fullmatch(r"(\w+):([+-]|positive|negative)", str(item))
    if not m:
        raise ConfigError(f"cannot parse trait persona {item!r}; use 'openness:+' or ['openness', 'positive']")
    keyed = {"+": "positive", "-": "negative"}.get(m.group(2), m.group(2))
    return m.group(1), keyed


def _parse_grid(value) -> tuple[float, ...]:
    if value is None:
        return DEFAULT_GRID
    if isinstance(value, Mapping):
        start, stop, step = float(value["start"]), float(value["stop"]), float(value["step"])
        n = int(round((stop - start) / step)) + 1
        return tuple(round(start + i * step, 10) for i in range(n))
    return tuple(float(v) for v in value)


def config_from_dict(raw: Mapping, base_dir: str | Path = ".") -> RunConfig:
    """Build a :class:`RunConfig` from a parsed key-value tree; relative paths resolve against ``base_dir``."""
    if not isinstance(raw, Mapping):
        raise ConfigError("configuration must be a mapping")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for key in ("corpus", "output_dir", "backend"):
        if key not in raw:
            raise ConfigError(f"missing configuration key {key!r}")
    base_dir = Path(base_dir)

    def resolve(p):
        return None if p is None else str((base_dir / p) if not os.path.isabs(p) else Path(p))

    pers = raw.get("personas") or {"base": True}
    try:
        plan = PersonaPlan(
            base=bool(pers.get("base", True)),
            traits=tuple(_parse_trait(t) for t in pers.get("traits") or ()),
            figures=tuple(pers.get("figures") or ()),
        )
        plan.specs()  # validates trait names and figures
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    occ = dict(raw["occupations"]) if raw.get("occupations") else None
    if occ is not None:
        if "profiles" not in occ:
            raise ConfigError("occupations.profiles is required")
        occ["profiles"] = resolve(occ["profiles"])
    lex = dict(raw["lexicon"]) if raw.get("lexicon") else None
    if lex is not None and lex.get("external"):
        lex["external"] = resolve(lex["external"])
    backend = dict(raw["backend"])
    try:
        if backend.get("kind") == "mock":
            MockRecruiterParams.from_dict(backend.get("params") or {})
        elif backend.get("kind") == "http":
            EndpointConfig(**(backend.get("endpoint") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid backend settings: {exc}") from exc
    try:
        return RunConfig(
            corpus=resolve(raw["corpus"]),
            output_dir=resolve(raw["output_dir"]),
            backend=backend,
            personas=plan,
            order_arms=tuple(raw.get("order_arms") or ("mr_first",)),
            grid=_parse_grid(raw.get("grid")),
            occupations=occ,
            lexicon=lex,
            dictionary=resolve(raw.get("dictionary")),
            tipi_runs=int(raw.get("tipi_runs", 10)),
            seed=int(raw.get("seed", 0)),
            chunk_size=int(raw.get("chunk_size", 256)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw or {}, path.parent)


def make_backend(config: RunConfig):
    b = config.backend
    if b["kind"] == "mock":
        params = dict(b.get("params") or {})
        params.setdefault("seed", config.seed)
        return MockRecruiter(MockRecruiterParams.from_dict(params))
    return HttpBackend(ChatClient(EndpointConfig(**b["endpoint"])))


# --- resumable record logs ----------------------------------------------------------


def _load_log(path: Path) -> list[CallbackRecord]:
    """Read a record log, truncating a partially written final line."""
    if not path.exists():
        return []
    raw = path.read_bytes()
    good_end = raw.rfind(b"\n") + 1
    if good_end < len(raw):
        logger.warning("truncating partial trailing record in %s", path)
        with path.open("r+b") as fh:
            fh.truncate(good_end)
    records = []
    for line in raw[:good_end].decode("utf-8").splitlines():
        if line.strip():
            records.append(CallbackRecord.from_json(line))
    return records


def elicit_log(postings: Sequence[JobPosting], persona: PersonaSpec, arm: str, backend, path: Path,
               chunk_size: int = 256) -> list[CallbackRecord]:
    """Elicit every posting once, appending to ``path`` in posting order; resumes where a previous run stopped."""
    done = _load_log(path)
    expected = [p.id for p in postings[: len(done)]]
    if [r.posting_id for r in done] != expected:
        raise BundleError(f"{path} does not match the corpus order; remove it to start over")
    todo = postings[len(done):]
    if done:
        logger.info("resuming %s/%s at posting %d of %d", persona.key, arm, len(done), len(postings))
    workers = max(1, int(getattr(backend, "parallelism", 1)))

    def one(job):
        req = recommendation_request(job, persona, arm)
        return make_record(job.id, persona, arm, backend.complete(req, job=job, persona=persona))

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh, ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, len(todo), chunk_size):
            chunk = todo[start : start + chunk_size]
            # map() yields in input order, and stops at the first failure after
            # the records before it have been written
            for rec in (pool.map(one, chunk) if workers > 1 else map(one, chunk)):
                fh.write(rec.to_json() + "\n")
                done.append(rec)
            fh.flush()
    return done


# --- analysis ------------------------------------------------------------------------


def _json_dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _GapCalculator:
    """No-controls wage gap (difference in mean log wage, in log points) for a female map."""

    def __init__(self, postings: Sequence[JobPosting]):
        try:
            wages = trim_wage_outliers(postings)
        except CorpusError:
            wages = []
        self.ids = [w.posting_id for w in wages]
        self.logw = np.array([w.log_wage for w in wages])

    def __call__(self, female: Mapping[str, bool]) -> float | None:
        mask = np.array([i in female for i in self.ids], dtype=bool)
        if not mask.any():
            return None
        flags = np.array([female[i] for i, m in zip(self.ids, mask) if m], dtype=bool)
        lw = self.logw[mask]
        if flags.all() or not flags.any():
            return None
        return 100.0 * float(lw[flags].mean() - lw[~flags].mean())


def summarize(records: Sequence[CallbackRecord], postings: Sequence[JobPosting],
              assignments: Mapping[str, str] | None, gap: _GapCalculator | None = None) -> AuditSummary:
    kept = {r.posting_id: r.outcome for r in records if r.outcome != "refusal"}
    female = {pid: o == "female" for pid, o in kept.items()}
    dis = None
    if assignments is not None:
        try:
            dis = dissimilarity_index(assignments, female)
        except MetricError:
            pass
    gap = gap or _GapCalculator(postings)
    requests = {p.id: p.explicit_request for p in postings}
    kappa = comp = None
    try:
        comp = compliance_rate(requests, kept)
        kappa = cohen_kappa(requests, kept)
    except MetricError:
        pass
    return AuditSummary(
        n_records=len(records),
        fcr=female_callback_rate(records),
        refusal_rate=refusal_rate(records),
        dissimilarity_6digit=dis,
        wage_gap_logpoints=gap(female),
        kappa=kappa,
        compliance_rate=comp,
    )


def _regressions(records, postings, assignments, dictionary) -> dict[str, RegressionResult]:
    out: dict[str, RegressionResult] = {}
    callbacks = {r.posting_id: r.outcome == "female" for r in records if r.outcome != "refusal"}
    variants = WAGE_VARIANTS if assignments is not None else ("none",)
    for v in variants:
        try:
            out[f"wage_gap__{v}"] = wage_gap_regression(postings, callbacks, v, assignments=assignments)
        except (RegressionError, CorpusError) as exc:
            logger.warning("wage-gap variant %s skipped: %s", v, exc)
    p_female = {r.posting_id: r.p_female for r in records if r.p_female is not None}
    if p_female and any(p.skill_tags for p in postings):
        try:
            out["skills"] = skill_association(postings, p_female)
        except RegressionError as exc:
            logger.warning("skill regression skipped: %s", exc)
    if p_female and dictionary is not None:
        rows = [p for p in postings if p.id in p_female]
        feats = category_frame([p.job_text for p in rows], dictionary)
        try:
            out["categories"] = liwc_association(feats, [p_female[p.id] for p in rows])
        except RegressionError as exc:
            logger.warning("category regression skipped: %s", exc)
    return out


@dataclass
class ReportBundle:
    root: Path
    manifest: dict
    summary: dict = field(default_factory=dict)

    @property
    def files(self) -> list[str]:
        return sorted(self.manifest.get("files", {}))


def run_key(persona: PersonaSpec, arm: str) -> str:
    return f"{persona.slug}__{arm}"


def run_audit(config: RunConfig, backend=None) -> ReportBundle:
    """Elicit, persist and analyse every persona x order arm, then write the bundle."""
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash()
    run_file = out / "run.json"
    if run_file.exists():
        previous = json.loads(run_file.read_text(encoding="utf-8")).get("config_hash")
        if previous != chash:
            raise ConfigError(f"{out} holds a run with a different configuration ({previous[:12]} != {chash[:12]})")
    else:
        _json_dump({"config_hash": chash, "version": __version__}, run_file)

    try:
        postings = load_corpus(config.corpus)
    except (OSError, CorpusError) as exc:
        raise ConfigError(f"cannot load corpus: {exc}") from exc
    if not postings:
        raise ConfigError("corpus is empty")
    backend = backend or make_backend(config)

    assignments = None
    if config.occupations:
        embedder = make_embedder(config.occupations.get("embedder"))
        assigned = assign_postings(postings, load_profiles(config.occupations["profiles"], embedder), embedder)
        write_assignments(assigned, out / "assignments.csv")
        assignments = {a.posting_id: a.soc_code for a in assigned}
    dictionary = CategoryDictionary.load(config.dictionary) if config.dictionary else None

    personas = config.personas.specs()
    all_records: dict[str, list[CallbackRecord]] = {}
    for persona in personas:
        for arm in config.order_arms:
            key = run_key(persona, arm)
            all_records[key] = elicit_log(postings, persona, arm, backend, out / "records" / f"{key}.jsonl", config.chunk_size)

    gap = _GapCalculator(postings)
    summary: dict[str, dict] = {}
    sweeps: dict[str, list[SweepPoint]] = {}
    for persona in personas:
        for arm in config.order_arms:
            key = run_key(persona, arm)
            records = all_records[key]
            s = summarize(records, postings, assignments, gap)
            entry = {"persona": persona.key, "order_arm": arm, **s.to_dict()}
            if assignments is not None and any(r.p_female is not None for r in records):
                pts = threshold_sweep(records, assignments, gap, config.grid)
                write_sweep(pts, out / "sweeps" / f"{key}.csv")
                sweeps[key] = pts
                par = parity_point(pts)
                entry["parity"] = {**par.row(), "interpolated": interpolated_parity(pts)}
                entry["pareto"] = [p.row() for p in pareto_sweep(pts)]
            summary[key] = entry
            for name, res in _regressions(records, postings, assignments, dictionary).items():
                _json_dump(res.to_dict(), out / "regressions" / f"{key}__{name}.json")

    _figure_analysis(config, personas, sweeps, backend, out)
    if config.lexicon and config.lexicon.get("enabled", True):
        _lexicon_analysis(config, personas, all_records, postings, out)

    _json_dump({"runs": summary}, out / "summary.json")
    manifest = write_manifest(out, chash)
    _json_dump(
        {
            "config_hash": chash,
            "backend": getattr(backend, "identity", type(backend).__name__),
            "version": __version__,
            "started_at": started,
            "finished_at": dt.datetime.now(dt.timezone.utc).isoformat(),
        },
        out / "provenance.json",
    )
    return ReportBundle(out, manifest, {"runs": summary})


def _figure_analysis(config, personas, sweeps, backend, out: Path) -> None:
    figures = [p for p in personas if p.kind == "identity"]
    if len(figures) < 2:
        return
    arm = config.order_arms[0]
    tipi = {}
    for fig in figures:
        ratings = elicit_tipi(backend, fig.identity_name, runs=config.tipi_runs)
        tipi[fig.identity_name] = {t: r.final_score for t, r in ratings.items()}
    _json_dump(tipi, out / "tipi.json")
    rows = []
    for fig in figures:
        for p in sweeps.get(run_key(fig, arm), []):
            rows.append({"figure": fig.identity_name, "rho": p.rho, "fcr": p.fcr,
                         "dissimilarity": p.dissimilarity, "wage_gap": p.wage_gap_logpoints})
    if not rows:
        return
    points = pd.DataFrame(rows)
    for name, fn in (("traits_segregation", trait_segregation_regression), ("traits_wage", trait_wage_regression)):
        try:
            _json_dump(fn(points, tipi).to_dict(), out / "regressions" / f"{name}.json")
        except RegressionError as exc:
            logger.warning("%s regression skipped: %s", name, exc)


def _lexicon_analysis(config, personas, all_records, postings, out: Path) -> None:
    persona = next((p for p in personas if p.kind == "base"), personas[0])
    records = all_records[run_key(persona, config.order_arms[0])]
    p_female = {r.posting_id: r.p_female for r in records if r.p_female is not None}
    rows = [p for p in postings if p.id in p_female]
    lex = config.lexicon
    res = fit_lexicon(
        [p.job_text for p in rows],
        [p_female[p.id] for p in rows],
        seed=config.seed,
        min_df=int(lex.get("min_df", 10)),
        max_df_share=float(lex.get("max_df_share", 0.85)),
        folds=int(lex.get("folds", 10)),
        n_lambdas=int(lex.get("n_lambdas", 20)),
    )
    external = read_external_lexicon(lex["external"]) if lex.get("external") else None
    scores = res.scores
    if external:
        scores = [s.__class__(s.term, s.score, s.coefficient, s.idf, external.get(s.term, (None,))[0]) for s in scores]
    write_attribution(scores, out / "attribution.csv")
    info = {
        "persona": persona.key,
        "vocabulary_size": len(res.vocabulary),
        "lambda_grid": res.lasso.lambda_grid,
        "chosen_lambda": res.lasso.chosen_lambda,
        "cv_r2": res.lasso.cv_r2,
        "test_r2": res.lasso.test_r2,
        "n_selected": len(res.lasso.support),
    }
    if external:
        merged = merge_external_lexicon(scores, external)
        info.update(match_share=merged.match_share, rank_correlation=merged.correlation, sign_agreement=merged.sign_agreement)
    _json_dump(info, out / "lexicon.json")


# --- manifest and reports ---------------------------------------------------------------


def write_manifest(root: Path, config_hash: str) -> dict:
    files = {}
    for path in sorted(root.rglob("*")):
        rel = path.relative_to(root).as_posix()
        if path.is_file() and rel not in UNTRACKED and not rel.startswith("report/"):
            files[rel] = _sha256(path)
    manifest = {"config_hash": config_hash, "files": files}
    _json_dump(manifest, root / "manifest.json")
    return manifest


def load_bundle(root: str | Path) -> ReportBundle:
    """Open a bundle and verify every manifest entry exists with a matching digest."""
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise BundleError(f"missing artifacts: manifest.json in {root}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    missing = [f for f in manifest["files"] if not (root / f).exists()]
    if "summary.json" not in manifest["files"]:
        missing.append("summary.json")
    if missing:
        raise BundleError(f"missing artifacts: {', '.join(sorted(missing))}")
    changed = [f for f, digest in manifest["files"].items() if _sha256(root / f) != digest]
    if changed:
        raise BundleError(f"artifacts modified since the run: {', '.join(changed)}")
    summary = json.loads((root / "summary.json").read_text(encoding="utf-8"))
    for key, entry in summary["runs"].items():
        if "parity" in entry and f"sweeps/{key}.csv" not in manifest["files"]:
            raise BundleError(f"missing artifacts: sweeps/{key}.csv")
    return ReportBundle(root, manifest, summary)


def _table1(bundle: ReportBundle) -> list[dict]:
    def pct(v):
        return None if v is None else 100.0 * v

    rows = []
    for key, e in sorted(bundle.summary["runs"].items()):
        rows.append(
            {
                "run": key,
                "fcr_pct": pct(e["fcr"]),
                "dissimilarity_pct": pct(e["dissimilarity_6digit"]),
                "wage_gap_logpoints": e["wage_gap_logpoints"],
                "refusal_pct": pct(e["refusal_rate"]),
                "compliance_pct": pct(e["compliance_rate"]),
                "kappa": e["kappa"],
            }
        )
    return rows


def _regression_results(bundle: ReportBundle) -> dict[str, RegressionResult]:
    out = {}
    for rel in bundle.files:
        if rel.startswith("regressions/") and rel.endswith(".json"):
            d = json.loads((bundle.root / rel).read_text(encoding="utf-8"))
            # restore the regressor order (the JSON keys are sorted)
            order = ["Intercept", *(d["spec"] or {}).get("regressors", [])]
            terms = [t for t in order if t in d["coefficients"]]
            terms += sorted(set(d["coefficients"]) - set(terms))
            out[rel[len("regressions/") : -5]] = RegressionResult(
                coefficients={t: d["coefficients"][t] for t in terms},
                standard_errors={t: d["standard_errors"][t] for t in terms},
                n_effective=d["n_effective"],
                r_squared=d["r_squared"],
                outcome_mean=d["outcome_mean"],
                omitted=tuple(d.get("omitted", ())),
                n_clusters=d.get("n_clusters"),
                df_resid=d.get("df_resid", 0),
                fe_dof=d.get("fe_dof", 0),
            )
    return out


def _fmt(v, digits: int = 10) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def render_report(bundle: ReportBundle | str | Path, format: str = "text", out: str | Path | None = None) -> Path:
    """Render a bundle as ``json`` (one file), ``text`` (tables) or ``csv_dir`` (plot-ready CSVs)."""
    if not isinstance(bundle, ReportBundle):
        bundle = load_bundle(bundle)
    if format not in ("json", "text", "csv_dir"):
        raise ConfigError(f"unknown report format {format!r}")
    out = Path(out) if out else bundle.root / "report" / {"json": "report.json", "text": "report.txt", "csv_dir": "csv"}[format]
    table1 = _table1(bundle)
    regs = _regression_results(bundle)

    if format == "json":
        _json_dump({"table1": table1, "regressions": {k: r.to_dict() for k, r in regs.items()}}, out)
        return out
    if format == "text":
        cols = ("run", "fcr_pct", "dissimilarity_pct", "wage_gap_logpoints", "refusal_pct", "compliance_pct", "kappa")
        lines = ["Summary (percentages; wage gap in log points)", "\t".join(cols)]
        for row in table1:
            lines.append("\t".join([row["run"]] + [_fmt(row[c]) for c in cols[1:]]))
        wage = {}
        for name, res in regs.items():
            if "__wage_gap__" in name:
                run, variant = name.split("__wage_gap__")
                wage.setdefault(run, []).append((variant, res))
        for run, cols_ in sorted(wage.items()):
            cols_.sort(key=lambda t: WAGE_VARIANTS.index(t[0]))
            lines += ["", f"Wage gap regressions: {run}", render_table(cols_, keep=["female"])]
        for name, res in sorted(regs.items()):
            if "wage_gap__" not in name:
                lines += ["", f"Regression: {name}", render_table([(name, res)])]
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return out

    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(table1).to_csv(out / "table1.csv", index=False, float_format="%.12g")
    for rel in bundle.files:
        if rel.startswith("sweeps/"):
            pts = read_sweep(bundle.root / rel)
            pd.DataFrame(
                {"rho": [p.rho for p in pts], "fcr": [p.fcr for p in pts], "dissimilarity": [p.dissimilarity for p in pts],
                 "wage_gap": [p.wage_gap_logpoints for p in pts], "in_range": [int(p.in_range) for p in pts]}
            ).to_csv(out / f"plot_{Path(rel).stem}.csv", index=False, float_format="%.12g")
    with (out / "regressions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["regression", "term", "coefficient", "standard_error", "n", "r_squared"])
        for name, res in sorted(regs.items()):
            for term, b in res.coefficients.items():
                w.writerow([name, term, repr(b), repr(res.standard_errors[term]), res.n_effective, repr(res.r_squared)])
    return out


def read_run_records(root: str | Path) -> dict[str, list[CallbackRecord]]:
    root = Path(root)
    return {p.stem: _load_log(p) for p in sorted((root / "records").glob("*.jsonl"))}


def read_bundle_assignments(root: str | Path) -> dict[str, str]:
    return {a.posting_id: a.soc_code for a in read_assignments(Path(root) / "assignments.csv")}
