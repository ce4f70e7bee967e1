import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from callback_audit.lexicon import (
    AttributionScore,
    CategoryDictionary,
    LexiconError,
    Vocabulary,
    attribution_scores,
    build_vocabulary,
    category_frame,
    category_proportions,
    fit_lexicon,
    lambda_grid,
    lambda_max,
    lasso_cv_fit,
    lasso_path,
    merge_external_lexicon,
    post_lasso_ols,
    preprocess,
    read_external_lexicon,
    split_rows,
    tfidf_transform,
    write_attribution,
)
from oracles import planted_lexicon_corpus, tfidf as tfidf_oracle


def test_preprocess_examples():
    assert preprocess("Visit http://x.co NOW!!") == ["visit", "now"]
    assert preprocess("R&amp;D a b") == []
    assert preprocess("R&D team") == ["team"]
    assert preprocess("") == []
    assert preprocess("  Nurses   caring,\tfor www.example.org/jobs 24x7  ") == ["nurses", "caring", "for"]


def test_idf_and_tfidf_examples():
    v = Vocabulary(("alpha", "beta"), (1, 3), 3)
    assert v.idf_of("beta") == 1.0
    assert v.idf_of("alpha") == pytest.approx(1.6931, abs=1e-4)
    docs = [["alpha", "alpha", "beta"], ["beta"], ["beta", "gamma"]]
    m = tfidf_transform(docs, Vocabulary(("alpha",), (1,), 3)).toarray()
    assert m[0, 0] == pytest.approx(2 / 3 * (math.log(2) + 1), abs=1e-12)
    assert m[0, 0] == pytest.approx(1.1288, abs=1e-4)
    assert m[1, 0] == 0.0


def test_tfidf_matches_oracle_and_empty_rows():
    rng = np.random.default_rng(0)
    words = ["aa", "bb", "cc", "dd", "ee"]
    docs = [list(rng.choice(words, size=int(rng.integers(0, 6)))) for _ in range(30)]
    vocab = build_vocabulary(docs, min_df=1, max_df_share=1.0)
    got = tfidf_transform(docs, vocab).toarray()
    expect = np.array(tfidf_oracle(docs, list(vocab.terms)))
    assert np.max(np.abs(got - expect)) < 1e-12
    assert all(not got[i].any() for i, d in enumerate(docs) if not d)


def test_vocabulary_filter():
    docs = [["common", f"w{i % 20}"] for i in range(100)] + [["rare"]] * 9
    vocab = build_vocabulary(docs, min_df=10, max_df_share=0.85)
    assert "rare" not in vocab.index and "common" not in vocab.index
    assert all(10 <= d <= 0.85 * 109 for d in vocab.document_frequency)
    assert list(vocab.terms) == sorted(vocab.terms)


def test_lambda_max_gives_all_zero():
    rng = np.random.default_rng(1)
    X = rng.random((100, 8))
    y = X[:, 2] * 0.3 + rng.normal(0, 0.05, 100)
    lmax = lambda_max(X, y)
    path = lasso_path(X, y, [lmax, lmax * 2])
    assert not path.coefs.any()
    assert path.intercepts[0] == pytest.approx(y.mean())
    g = lambda_grid(lmax)
    assert len(g) == 20 and g[0] == lmax and g[-1] == pytest.approx(lmax * 1e-3)
    assert np.all(np.diff(g) < 0)
    with pytest.raises(LexiconError):
        lambda_grid(0.0)


def test_objective_monotone_per_sweep():
    rng = np.random.default_rng(2)
    X = rng.random((200, 30))
    y = X[:, :3] @ [0.5, -0.4, 0.3] + rng.normal(0, 0.1, 200)
    hist = []
    lasso_path(X, y, [0.3 * lambda_max(X, y)], history=hist)
    assert len(hist) >= 2
    assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))


@pytest.mark.parametrize("sparse", [False, True])
def test_lasso_solution_satisfies_kkt(sparse):
    rng = np.random.default_rng(3)
    X = rng.random((150, 20)) * (rng.random((150, 20)) < 0.4)
    y = X[:, :4] @ [1.0, -1.0, 0.5, 0.2] + rng.normal(0, 0.1, 150)
    lam = 0.05 * lambda_max(X, y)
    path = lasso_path(sp.csr_matrix(X) if sparse else X, y, [lam], tol=1e-12)
    beta = path.coefs[0]
    Xc = X - X.mean(axis=0)
    grad = Xc.T @ (y - y.mean() - Xc @ beta) / len(y)
    on = beta != 0
    assert np.allclose(grad[on], lam * np.sign(beta[on]), atol=1e-8)
    assert np.all(np.abs(grad[~on]) <= lam + 1e-8)


def test_sparse_and_dense_paths_agree():
    rng = np.random.default_rng(4)
    X = rng.random((120, 15)) * (rng.random((120, 15)) < 0.3)
    y = X[:, 0] - X[:, 5] + rng.normal(0, 0.1, 120)
    grid = lambda_grid(lambda_max(X, y), 10)
    a = lasso_path(X, y, grid)
    b = lasso_path(sp.csc_matrix(X), y, grid)
    assert np.allclose(a.coefs, b.coefs, atol=1e-9)


def test_split_rows_deterministic_and_disjoint():
    test, train, folds = split_rows(100, 10, 0.1, seed=5)
    t2, tr2, f2 = split_rows(100, 10, 0.1, seed=5)
    assert np.array_equal(test, t2) and np.array_equal(train, tr2) and np.array_equal(folds, f2)
    assert len(test) == 10 and not set(test) & set(train) and len(set(test) | set(train)) == 100
    assert np.bincount(folds).tolist() == [9] * 10


def test_perfect_predictor():
    rng = np.random.default_rng(6)
    X = rng.random((400, 12))
    y = X[:, 7]
    fit = lasso_cv_fit(X, y, seed=1)
    top = max(fit.coefficients, key=lambda j: abs(fit.coefficients[j]))
    assert top == 7 and fit.test_r2 > 0.99
    assert fit.chosen_lambda == fit.lambda_grid[int(np.argmax(fit.cv_r2))]


def test_pure_noise_is_null():
    rng = np.random.default_rng(7)
    X = sp.csr_matrix(rng.random((1000, 50)) * (rng.random((1000, 50)) < 0.2))
    y = rng.uniform(0, 1, 1000)
    fit = lasso_cv_fit(X, y, seed=2)
    assert fit.test_r2 <= 0.02
    assert len(fit.support) <= 5


def test_all_zero_column_dropped(caplog):
    rng = np.random.default_rng(8)
    X = rng.random((200, 5))
    X[:, 3] = 0.0
    fit = lasso_cv_fit(X, np.clip(X[:, 0], 0, 1), seed=0)
    assert fit.dropped_columns == (3,) and 3 not in fit.coefficients


def test_outcome_range_checked():
    with pytest.raises(LexiconError):
        lasso_cv_fit(np.ones((20, 2)), np.full(20, 1.5))


def test_post_lasso_examples():
    rng = np.random.default_rng(9)
    x = rng.random((50, 3))
    res = post_lasso_ols(x, 3 * x[:, 1], [1])
    assert res.coefficients == {1: pytest.approx(3.0)} and res.intercept == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(LexiconError):
        post_lasso_ols(x, x[:, 0], [])
    x[:, 2] = x[:, 1] * 2
    res = post_lasso_ols(x, x[:, 0], [0, 1, 2])
    assert set(res.coefficients) == {0, 1}


def test_attribution_scores():
    vocab = Vocabulary(("aa", "bb", "cc"), (5, 10, 2), 14)
    coefs = {0: 0.4, 1: 0.0, 2: -0.1}
    out = attribution_scores(coefs, vocab, {"aa": "warmth"})
    assert [s.term for s in out] == ["aa", "cc"]
    assert out[0].score == pytest.approx(0.4 * vocab.idf_of("aa")) and out[0].category == "warmth"
    assert all(np.sign(s.score) == np.sign(s.coefficient) for s in out)
    one = attribution_scores({0: 0.4}, Vocabulary(("aa",), (1,), 2))
    assert one[0].idf == pytest.approx(math.log(3 / 2) + 1)


def test_external_merge(tmp_path):
    scores = [AttributionScore(t, s, s, 1.0) for t, s in [("nurse", 0.5), ("caring", 0.2), ("driver", -0.3), ("lift", -0.1)]]
    same = {s.term: ("c", s.score) for s in scores}
    m = merge_external_lexicon(scores, same)
    assert m.match_share == 1.0 and m.correlation == pytest.approx(1.0)
    signs = {s.term: ("c", math.copysign(1.0, s.score)) for s in scores}
    assert merge_external_lexicon(scores, signs).sign_agreement == 1.0
    disjoint = merge_external_lexicon(scores, {"zebra": ("c", 1.0)})
    assert disjoint.match_share == 0.0 and disjoint.correlation is None
    (tmp_path / "ext.csv").write_text("term,category,human_score\nNurse,care,0.9\nlift,physical,-0.5\n")
    ext = read_external_lexicon(tmp_path / "ext.csv")
    m = merge_external_lexicon(scores, ext)
    assert m.match_share == 0.5 and list(m.table["term"]) == ["nurse", "lift"]


def test_external_random_signs_uncorrelated():
    rng = np.random.default_rng(10)
    scores = [AttributionScore(f"t{i}", float(s), float(s), 1.0) for i, s in enumerate(rng.normal(size=400))]
    ext = {s.term: ("c", float(rng.choice([-1.0, 1.0]))) for s in scores}
    m = merge_external_lexicon(scores, ext)
    assert abs(m.correlation) < 3 / math.sqrt(400)


def test_category_examples():
    d = CategoryDictionary.parse("money: salary, pay*\n# comment\nvisit: visit\n")
    assert category_proportions("pay payment salary visit".split(), d).values["money"] == pytest.approx(0.75)
    assert category_proportions(["hello"], d).values == {"money": 0.0, "visit": 0.0}
    assert category_proportions(["visit", "visit"], d).values["visit"] == 1.0
    empty = category_proportions([], d)
    assert empty.empty and empty.values["money"] == 0.0
    with pytest.raises(LexiconError):
        CategoryDictionary.parse("broken line")
    with pytest.raises(LexiconError):
        CategoryDictionary({"x": ()})
    frame = category_frame(["Salary and pay", ""], d, index=["a", "b"])
    assert frame.loc["a", "money"] == pytest.approx(2 / 3) and frame.loc["b", "money"] == 0.0


@given(st.lists(st.sampled_from(["pay", "payment", "salary", "visit", "home", "paid"]), max_size=20), st.randoms())
def test_category_order_invariant(tokens, rnd):
    d = CategoryDictionary({"money": ("salary", "pay*"), "other": ("home",)})
    shuffled = list(tokens)
    rnd.shuffle(shuffled)
    assert category_proportions(tokens, d).values == category_proportions(shuffled, d).values


def test_fit_lexicon_planted(tmp_path):
    docs, y, true_terms, signs, _ = planted_lexicon_corpus(seed=3, n=800, vocab_size=80, n_true=4, doc_len=30)
    res = fit_lexicon([" ".join(d) for d in docs], y, seed=0, folds=5)
    found = {s.term: s for s in res.scores}
    for t in true_terms:
        assert t in found and np.sign(found[t].score) == signs[t]
    write_attribution(res.scores, tmp_path / "out" / "attr.csv")
    assert (tmp_path / "out" / "attr.csv").read_text().startswith("term,score,category\n")
