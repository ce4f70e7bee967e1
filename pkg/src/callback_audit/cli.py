"""Command-line entry point: ``callback-audit <group> <command>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from .audit import (
    BundleError,
    ConfigError,
    load_config,
    make_backend,
    render_report,
    run_audit,
)
from .corpus import CorpusError, corpus_stats, load_corpus, write_corpus
from .econometrics import WAGE_VARIANTS, RegressionError, render_table, wage_gap_regression
from .elicitation import ElicitationError, elicit_tipi, read_records
from .lexicon import LexiconError, fit_lexicon, read_external_lexicon, merge_external_lexicon, write_attribution
from .llm_gateway import GatewayError
from .metrics import DEFAULT_GRID, MetricError, parity_point, threshold_sweep, write_sweep
from .occupations import OccupationError, assign_postings, load_profiles, make_embedder, read_assignments, write_assignments, write_profile_rows
from .synth import SynthConfig, occupation_profile_rows, synthesize_corpus

logger = logging.getLogger("callback_audit")

EXIT_OK, EXIT_CONFIG, EXIT_TRANSPORT, EXIT_ANALYSIS = 0, 2, 3, 4


def _cmd_corpus_synth(args) -> int:
    cfg = SynthConfig(n=args.n, explicit_request_rate=args.explicit_request_rate, wage_share=args.wage_share)
    postings = synthesize_corpus(cfg, args.seed)
    write_corpus(postings, args.out)
    if args.profiles_out:
        write_profile_rows(occupation_profile_rows(cfg.occupations), args.profiles_out)
    print(f"wrote {len(postings)} postings to {args.out}")
    return EXIT_OK


def _cmd_corpus_stats(args) -> int:
    print(json.dumps(asdict(corpus_stats(load_corpus(args.corpus))), indent=2))
    return EXIT_OK


def _cmd_audit_run(args) -> int:
    config = load_config(args.config)
    bundle = run_audit(config)
    print(f"bundle written to {bundle.root} ({len(bundle.files)} files)")
    return EXIT_OK


def _cmd_audit_sweep(args) -> int:
    records = [r for r in read_records(args.records)]
    assignments = {a.posting_id: a.soc_code for a in read_assignments(args.assignments)}
    gap = None
    if args.corpus:
        from .audit import _GapCalculator

        gap = _GapCalculator(load_corpus(args.corpus))
    points = threshold_sweep(records, assignments, gap, DEFAULT_GRID)
    write_sweep(points, args.out)
    par = parity_point(points)
    print(f"parity at rho={par.rho:.2f}: fcr={par.fcr:.4f} dissimilarity={par.dissimilarity:.4f}")
    return EXIT_OK


def _cmd_occupations_map(args) -> int:
    embedder = make_embedder({"kind": args.embedder, "dimension": args.dimension})
    postings = load_corpus(args.corpus)
    assigned = assign_postings(postings, load_profiles(args.profiles, embedder), embedder)
    write_assignments(assigned, args.out)
    print(f"assigned {len(assigned)} postings")
    return EXIT_OK


def _cmd_lexicon_fit(args) -> int:
    postings = {p.id: p for p in load_corpus(args.corpus)}
    recs = [r for r in read_records(args.records) if r.p_female is not None and r.posting_id in postings]
    res = fit_lexicon([postings[r.posting_id].job_text for r in recs], [r.p_female for r in recs],
                      seed=args.seed, min_df=args.min_df)
    write_attribution(res.scores, args.out)
    print(f"vocabulary {len(res.vocabulary)}, selected {len(res.lasso.support)}, test R2 {res.lasso.test_r2:.4f}")
    if args.external:
        merged = merge_external_lexicon(res.scores, read_external_lexicon(args.external))
        print(f"external match share {merged.match_share:.4f}, rank correlation {merged.correlation}")
    return EXIT_OK


def _cmd_econ_wage_gap(args) -> int:
    postings = load_corpus(args.corpus)
    callbacks = {r.posting_id: r.outcome == "female" for r in read_records(args.records) if r.outcome != "refusal"}
    assignments = {a.posting_id: a.soc_code for a in read_assignments(args.assignments)} if args.assignments else None
    variants = WAGE_VARIANTS if args.variant == "all" else (args.variant,)
    if assignments is None and any(v != "none" for v in variants):
        raise ConfigError("fixed-effect variants need --assignments")
    cols = [(v, wage_gap_regression(postings, callbacks, v, assignments=assignments, se_kind=args.se,
                                    cluster="job_id" if args.se == "cluster_cr1" else None)) for v in variants]
    if args.json:
        print(json.dumps({v: r.to_dict() for v, r in cols}, indent=2, sort_keys=True))
    else:
        print(render_table(cols, keep=["female"], digits=args.digits))
    return EXIT_OK


def _cmd_persona_tipi(args) -> int:
    backend = make_backend(load_config(args.config))
    ratings = elicit_tipi(backend, args.figure, runs=args.runs)
    print(json.dumps({t: r.final_score for t, r in ratings.items()}, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_report_render(args) -> int:
    path = render_report(args.bundle, args.format, args.out)
    print(f"report written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="callback-audit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    groups = parser.add_subparsers(dest="group", required=True)

    corpus = groups.add_parser("corpus", help="create or inspect job-posting corpora").add_subparsers(dest="command", required=True)
    p = corpus.add_parser("synth", help="write a synthetic corpus with planted structure")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--explicit-request-rate", type=float, default=0.02)
    p.add_argument("--wage-share", type=float, default=0.36)
    p.add_argument("--out", required=True)
    p.add_argument("--profiles-out", help="also write matching occupation profiles (CSV)")
    p.set_defaults(func=_cmd_corpus_synth)
    p = corpus.add_parser("stats", help="summary counts for a corpus")
    p.add_argument("corpus")
    p.set_defaults(func=_cmd_corpus_stats)

    audit = groups.add_parser("audit", help="run audits").add_subparsers(dest="command", required=True)
    p = audit.add_parser("run", help="full audit from a YAML config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_audit_run)
    p = audit.add_parser("sweep", help="threshold sweep over persisted records")
    p.add_argument("--records", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--corpus", help="corpus with wages, for the wage-gap column")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_audit_sweep)

    occ = groups.add_parser("occupations", help="occupation mapping").add_subparsers(dest="command", required=True)
    p = occ.add_parser("map", help="assign each posting its nearest SOC occupation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--embedder", default="hashed", choices=["hashed"])
    p.add_argument("--dimension", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_occupations_map)

    lex = groups.add_parser("lexicon", help="word attribution").add_subparsers(dest="command", required=True)
    p = lex.add_parser("fit", help="TF-IDF Lasso and post-Lasso attribution scores")
    p.add_argument("--corpus", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-df", type=int, default=10)
    p.add_argument("--external", help="CSV with term,category,human_score")
    p.set_defaults(func=_cmd_lexicon_fit)

    econ = groups.add_parser("econ", help="regressions").add_subparsers(dest="command", required=True)
    p = econ.add_parser("wage-gap", help="log wage on the female-callback indicator")
    p.add_argument("--corpus", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--assignments")
    p.add_argument("--variant", default="all", choices=["all", *WAGE_VARIANTS])
    p.add_argument("--se", default="hc1", choices=["hc1", "cluster_cr1"])
    p.add_argument("--digits", type=int, default=4)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_econ_wage_gap)

    persona = groups.add_parser("persona", help="persona utilities").add_subparsers(dest="command", required=True)
    p = persona.add_parser("tipi", help="perceived Big Five profile of a figure")
    p.add_argument("--config", required=True, help="run config whose backend is queried")
    p.add_argument("--figure", required=True)
    p.add_argument("--runs", type=int, default=10)
    p.set_defaults(func=_cmd_persona_tipi)

    report = groups.add_parser("report", help="render bundles").add_subparsers(dest="command", required=True)
    p = report.add_parser("render", help="render a finished bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--format", default="text", choices=["json", "csv_dir", "text"])
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CorpusError, ElicitationError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except GatewayError as exc:
        logger.error("endpoint failure: %s", exc)
        return EXIT_TRANSPORT
    except (MetricError, RegressionError, LexiconError, OccupationError, BundleError) as exc:
        logger.error("analysis failed: %s", exc)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
