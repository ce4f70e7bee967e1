"""Word-level attribution: TF-IDF, cross-validated Lasso, post-Lasso OLS and dictionary profiling."""

from __future__ import annotations

import csv
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.stats import spearmanr

from .econometrics import RegressionSpec, ols_fit

logger = logging.getLogger(__name__)

_URL = re.compile(r"(?:https?://|ftp://|www\.)\S+", re.IGNORECASE)
_ENTITY = re.compile(r"&(?:[a-zA-Z]+|#\d+|#x[0-9a-fA-F]+);")
_NON_ALPHA = re.compile(r"[^a-z]+")


class LexiconError(ValueError):
    pass


def preprocess(text: str) -> list[str]:
    """Lowercase alphabetic tokens of two or more letters, without URLs or HTML entities."""
    if not text:
        return []
    text = _ENTITY.sub(" ", _URL.sub(" ", text)).lower()
    return [t for t in _NON_ALPHA.sub(" ", text).split() if len(t) > 1]


# --- vocabulary and TF-IDF --------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    document_frequency: tuple[int, ...]
    n_documents: int
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.terms) != len(self.document_frequency):
            raise LexiconError("terms and document frequencies differ in length")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.terms)})
        if len(self.index) != len(self.terms):
            raise LexiconError("duplicate vocabulary terms")

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def idf(self) -> np.ndarray:
        df = np.asarray(self.document_frequency, dtype=float)
        return np.log((1.0 + self.n_documents) / (1.0 + df)) + 1.0

    def idf_of(self, term: str) -> float:
        return float(self.idf[self.index[term]])


def build_vocabulary(docs: Sequence[Sequence[str]], min_df: int = 10, max_df_share: float = 0.85) -> Vocabulary:
    """Unigrams with ``min_df <= DF <= max_df_share * n``, sorted alphabetically."""
    n = len(docs)
    if n == 0:
        raise LexiconError("cannot build a vocabulary from zero documents")
    df = Counter()
    for toks in docs:
        df.update(set(toks))
    cap = max_df_share * n
    terms = sorted(t for t, c in df.items() if min_df <= c <= cap)
    if not terms:
        logger.warning("vocabulary is empty (min_df=%d, max_df_share=%.2f, n=%d)", min_df, max_df_share, n)
    return Vocabulary(tuple(terms), tuple(df[t] for t in terms), n)


def tfidf_transform(docs: Sequence[Sequence[str]], vocab: Vocabulary) -> sp.csr_matrix:
    """Rows are documents: ``count/len(doc) * idf``; the length counts out-of-vocabulary tokens too."""
    idf = vocab.idf
    indptr, indices, data = [0], [], []
    for toks in docs:
        if toks:
            counts = Counter(vocab.index[t] for t in toks if t in vocab.index)
            cols = sorted(counts)
            indices.extend(cols)
            data.extend(counts[c] / len(toks) * idf[c] for c in cols)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(docs), len(vocab)),
    )


# --- Lasso ----------------------------------------------------------------------


class _CenteredGram:
    """Lazily computed columns of the centered Gram matrix ``Xc'Xc``."""

    def __init__(self, X, mu: np.ndarray):
        self.X = X.tocsc() if sp.issparse(X) else np.asarray(X, dtype=float)
        self.mu = mu
        self.n = X.shape[0]
        self._cols: dict[int, np.ndarray] = {}
        if sp.issparse(X):
            sq = np.asarray(self.X.multiply(self.X).sum(axis=0)).ravel()
        else:
            sq = np.einsum("ij,ij->j", self.X, self.X)
        self.diag = sq - self.n * mu**2

    def col(self, j: int) -> np.ndarray:
        c = self._cols.get(j)
        if c is None:
            xj = self.X[:, [j]].toarray().ravel() if sp.issparse(self.X) else self.X[:, j]
            c = np.asarray(self.X.T @ xj).ravel() - self.n * self.mu * self.mu[j]
            self._cols[j] = c
        return c


def _soft(z: float, t: float) -> float:
    return math.copysign(max(abs(z) - t, 0.0), z) if abs(z) > t else 0.0


@dataclass
class _CDState:
    beta: np.ndarray
    grad: np.ndarray  # Xc'yc - G beta


def _cd_solve(gram: _CenteredGram, xty: np.ndarray, lam: float, state: _CDState, usable: np.ndarray,
              tol: float = 1e-7, max_sweeps: int = 10_000, history: list | None = None, yty: float = 0.0,
              anderson: int = 5) -> int:
    """Covariance-update coordinate descent with an active-set strategy; returns sweeps used."""
    n = gram.n
    beta, grad = state.beta, state.grad
    thresh = lam * n
    sweeps = 0

    def sweep(coords) -> float:
        biggest = 0.0
        for j in coords:
            d = gram.diag[j]
            old = beta[j]
            z = grad[j] + d * old
            new = _soft(z, thresh) / d
            if new != old:
                delta = new - old
                np.subtract(grad, gram.col(j) * delta, out=grad)
                beta[j] = new
                biggest = max(biggest, abs(delta))
        return biggest

    def record():
        if history is not None:
            history.append(objective())

    def objective(b=None, g=None) -> float:
        b = beta if b is None else b
        g = grad if g is None else g
        return (yty - b @ xty - b @ g) / (2 * n) + lam * np.abs(b).sum()

    def extrapolate(active, iterates) -> None:
        # Anderson step over recent active-set iterates, kept only if it lowers the objective
        hist = np.asarray(iterates)
        diffs = np.diff(hist, axis=0)
        m = diffs @ diffs.T
        m += 1e-12 * np.trace(m) * np.eye(len(m))
        try:
            z = np.linalg.solve(m, np.ones(len(m)))
        except np.linalg.LinAlgError:
            return
        if not np.isfinite(z).all() or z.sum() == 0:
            return
        cand = (z / z.sum()) @ hist[1:]
        delta = cand - beta[active]
        new_grad = grad - np.column_stack([gram.col(j) for j in active]) @ delta
        trial = beta.copy()
        trial[active] = cand
        if objective(trial, new_grad) < objective():
            beta[active] = cand
            grad[:] = new_grad

    all_coords = np.flatnonzero(usable)
    while sweeps < max_sweeps:
        change = sweep(all_coords)
        sweeps += 1
        record()
        if change < tol:
            return sweeps
        active = np.flatnonzero(beta)
        iterates = [beta[active].copy()]
        while sweeps < max_sweeps:
            change = sweep(active)
            sweeps += 1
            if change >= tol and len(active):
                iterates.append(beta[active].copy())
                if len(iterates) == anderson + 1:
                    extrapolate(active, iterates)
                    iterates = [beta[active].copy()]
            record()
            if change < tol:
                break
    raise LexiconError(f"coordinate descent did not converge in {max_sweeps} sweeps (lambda={lam:g})")


def lambda_max(X, y) -> float:
    yc = np.asarray(y, dtype=float) - np.mean(y)
    return float(np.max(np.abs(np.asarray(X.T @ yc).ravel())) / X.shape[0]) if X.shape[1] else 0.0


def lambda_grid(lmax: float, n_lambdas: int = 20, ratio: float = 1e-3) -> np.ndarray:
    if lmax <= 0:
        raise LexiconError("lambda_max is zero: the outcome is constant or X has no signal")
    return np.geomspace(lmax, lmax * ratio, n_lambdas)


@dataclass(frozen=True)
class LassoPath:
    lambdas: np.ndarray
    coefs: np.ndarray  # (n_lambdas, p)
    intercepts: np.ndarray

    def predict(self, X, k: int) -> np.ndarray:
        return np.asarray(X @ self.coefs[k]).ravel() + self.intercepts[k]


def lasso_path(X, y, lambdas: Sequence[float], *, tol: float = 1e-7, history: list | None = None) -> LassoPath:
    """Lasso with unpenalized intercept, ``(1/2n)||y - b0 - Xb||^2 + lam * |b|_1``, warm-started along ``lambdas``."""
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n != y.shape[0]:
        raise LexiconError(f"X has {n} rows but y has {y.shape[0]} entries")
    mu = np.asarray(X.mean(axis=0)).ravel()
    ybar = y.mean()
    yc = y - ybar
    gram = _CenteredGram(X, mu)
    xty = np.asarray(X.T @ yc).ravel()
    usable = gram.diag > 1e-12 * max(1.0, float(np.max(gram.diag, initial=0.0)))
    state = _CDState(np.zeros(p), xty.copy())
    coefs = np.zeros((len(lambdas), p))
    for k, lam in enumerate(lambdas):
        _cd_solve(gram, xty, float(lam), state, usable, tol=tol, history=history, yty=float(yc @ yc))
        coefs[k] = state.beta
    return LassoPath(np.asarray(lambdas, dtype=float), coefs, ybar - coefs @ mu)


def r2_score(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    sst = float(np.sum((y - y.mean()) ** 2))
    sse = float(np.sum((y - np.asarray(pred)) ** 2))
    return 1.0 - sse / sst if sst > 0 else 0.0


@dataclass(frozen=True)
class LassoFit:
    lambda_grid: np.ndarray
    chosen_lambda: float | None  # None means the intercept-only model was chosen
    coefficients: dict[int, float]
    intercept: float
    cv_r2: np.ndarray
    test_r2: float
    train_rows: np.ndarray = field(repr=False)
    test_rows: np.ndarray = field(repr=False)
    dropped_columns: tuple[int, ...] = ()

    @property
    def support(self) -> list[int]:
        return sorted(self.coefficients)

    def predict(self, X) -> np.ndarray:
        beta = np.zeros(X.shape[1])
        for j, b in self.coefficients.items():
            beta[j] = b
        return np.asarray(X @ beta).ravel() + self.intercept


def split_rows(n: int, folds: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Held-out test rows, training rows and a fold label per training row."""
    if not 0 < test_fraction < 1:
        raise LexiconError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    test, train = np.sort(perm[:n_test]), perm[n_test:]
    if len(train) < folds:
        raise LexiconError(f"{len(train)} training rows cannot form {folds} folds")
    fold_of = np.empty(len(train), dtype=int)
    fold_of[rng.permutation(len(train))] = np.arange(len(train)) % folds
    order = np.argsort(train)
    return test, train[order], fold_of[order]


def lasso_cv_fit(X, y, folds: int = 10, n_lambdas: int = 20, test_fraction: float = 0.10, seed: int = 0,
                 tol: float = 1e-7) -> LassoFit:
    """Pick lambda by ``folds``-fold CV R^2 on the training split, refit there, score on the test split."""
    y = np.asarray(y, dtype=float)
    X = X.tocsr() if sp.issparse(X) else np.asarray(X, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise LexiconError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if np.any((y < 0) | (y > 1)):
        raise LexiconError("outcome must lie in [0, 1]")
    test, train, fold_of = split_rows(len(y), folds, test_fraction, seed)
    Xtr, ytr = X[train], y[train]
    nnz = np.asarray((abs(Xtr) > 0).sum(axis=0)).ravel()
    dropped = tuple(int(j) for j in np.flatnonzero(nnz == 0))
    if dropped:
        logger.warning("dropping %d all-zero columns", len(dropped))

    grid = lambda_grid(lambda_max(Xtr, ytr), n_lambdas)
    scores = np.zeros((folds, n_lambdas))
    for f in range(folds):
        inner, outer = fold_of != f, fold_of == f
        path = lasso_path(Xtr[inner], ytr[inner], grid, tol=tol)
        for k in range(n_lambdas):
            scores[f, k] = r2_score(ytr[outer], path.predict(Xtr[outer], k))
    cv_r2 = scores.mean(axis=0)
    best = int(np.argmax(cv_r2))

    if cv_r2[best] <= 0.0:
        logger.warning("no lambda improves on the intercept-only model (best CV R2 %.4f)", cv_r2[best])
        chosen, coefs, intercept = None, {}, float(ytr.mean())
    else:
        path = lasso_path(Xtr, ytr, grid[: best + 1], tol=tol)
        beta = path.coefs[best]
        chosen = float(grid[best])
        coefs = {int(j): float(beta[j]) for j in np.flatnonzero(beta)}
        intercept = float(path.intercepts[best])
    fit = LassoFit(grid, chosen, coefs, intercept, cv_r2, float("nan"), train, test, dropped)
    test_r2 = r2_score(y[test], fit.predict(X[test])) if len(test) else float("nan")
    return LassoFit(grid, chosen, coefs, intercept, cv_r2, test_r2, train, test, dropped)


# --- post-Lasso and attribution -------------------------------------------------


@dataclass(frozen=True)
class PostLasso:
    coefficients: dict[int, float]
    standard_errors: dict[int, float]
    intercept: float
    n: int


def post_lasso_ols(X, y, selected: Sequence[int]) -> PostLasso:
    """Unpenalized OLS (with intercept, HC1 errors) of ``y`` on the selected columns."""
    selected = [int(j) for j in selected]
    if not selected:
        raise LexiconError("post-Lasso OLS needs at least one selected term")
    y = np.asarray(y, dtype=float)
    sub = X[:, selected]
    sub = sub.toarray() if sp.issparse(sub) else np.asarray(sub, dtype=float)
    if len(y) <= len(selected) + 1:
        raise LexiconError(f"{len(y)} rows cannot identify {len(selected)} terms and an intercept")
    names = [f"c{j}" for j in selected]
    df = pd.DataFrame(sub, columns=names)
    df["_y"] = y
    res = ols_fit(df, RegressionSpec("_y", tuple(names)), droppable=names)
    return PostLasso(
        coefficients={int(nm[1:]): b for nm, b in res.coefficients.items() if nm != "Intercept"},
        standard_errors={int(nm[1:]): s for nm, s in res.standard_errors.items() if nm != "Intercept"},
        intercept=res.coefficients["Intercept"],
        n=res.n_effective,
    )


@dataclass(frozen=True)
class AttributionScore:
    term: str
    score: float
    coefficient: float
    idf: float
    category: str | None = None


def attribution_scores(coefficients: Mapping[int, float], vocab: Vocabulary,
                       categories: Mapping[str, str] | None = None) -> list[AttributionScore]:
    """IDF times post-Lasso coefficient per selected term, most female-associated first."""
    idf = vocab.idf
    out = []
    for j, b in coefficients.items():
        if b == 0:
            continue
        term = vocab.terms[j]
        out.append(AttributionScore(term, float(idf[j] * b), float(b), float(idf[j]), (categories or {}).get(term)))
    return sorted(out, key=lambda s: (-s.score, s.term))


def write_attribution(scores: Iterable[AttributionScore], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "score", "category"])
        for s in scores:
            w.writerow([s.term, repr(s.score), s.category or ""])


def read_external_lexicon(path: str | Path) -> dict[str, tuple[str, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"term", "category", "human_score"} - set(reader.fieldnames or ())
        if missing:
            raise LexiconError(f"external lexicon lacks columns {sorted(missing)}")
        return {r["term"].strip().lower(): (r["category"].strip(), float(r["human_score"])) for r in reader}


@dataclass(frozen=True)
class LexiconMerge:
    table: pd.DataFrame
    match_share: float
    correlation: float | None  # Spearman rank correlation
    sign_agreement: float | None


def merge_external_lexicon(scores: Sequence[AttributionScore], external: Mapping[str, tuple[str, float]]) -> LexiconMerge:
    """Inner join of model scores with human-association scores on the term."""
    rows = [
        {"term": s.term, "score": s.score, "category": external[s.term][0], "human_score": float(external[s.term][1])}
        for s in scores
        if s.term in external
    ]
    table = pd.DataFrame(rows, columns=["term", "score", "category", "human_score"])
    share = len(rows) / len(scores) if scores else 0.0
    if not rows:
        logger.warning("no overlap between model terms and the external lexicon")
        return LexiconMerge(table, share, None, None)
    agree = float(np.mean(np.sign(table["score"]) == np.sign(table["human_score"])))
    corr = None
    if len(rows) >= 2 and table["score"].nunique() > 1 and table["human_score"].nunique() > 1:
        corr = float(spearmanr(table["score"], table["human_score"]).statistic)
    else:
        logger.warning("rank correlation undefined for %d matched terms", len(rows))
    return LexiconMerge(table, share, corr, agree)


# --- dictionary categories --------------------------------------------------------


@dataclass(frozen=True)
class CategoryDictionary:
    categories: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        if not self.categories:
            raise LexiconError("dictionary has no categories")
        for cat, pats in self.categories.items():
            if not pats:
                raise LexiconError(f"category {cat!r} is empty")
            for p in pats:
                if p != p.lower() or not p.rstrip("*") or "*" in p[:-1]:
                    raise LexiconError(f"bad pattern {p!r} in category {cat!r}")
        exact, prefix = {}, {}
        for cat, pats in self.categories.items():
            exact[cat] = frozenset(p for p in pats if not p.endswith("*"))
            prefix[cat] = tuple(p[:-1] for p in pats if p.endswith("*"))
        object.__setattr__(self, "_exact", exact)
        object.__setattr__(self, "_prefix", prefix)

    @property
    def names(self) -> list[str]:
        return list(self.categories)

    def matches(self, token: str, category: str) -> bool:
        return token in self._exact[category] or token.startswith(self._prefix[category])

    @classmethod
    def parse(cls, text: str) -> "CategoryDictionary":
        cats: dict[str, tuple[str, ...]] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, sep, rest = line.partition(":")
            if not sep:
                raise LexiconError(f"line {lineno}: expected 'category: word, word*'")
            words = tuple(w.strip().lower() for w in rest.split(",") if w.strip())
            cats[name.strip()] = cats.get(name.strip(), ()) + words
        return cls(cats)

    @classmethod
    def load(cls, path: str | Path) -> "CategoryDictionary":
        return cls.parse(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class CategoryProportions:
    values: dict[str, float]
    n_tokens: int

    @property
    def empty(self) -> bool:
        return self.n_tokens == 0


def category_proportions(tokens: Sequence[str], dictionary: CategoryDictionary) -> CategoryProportions:
    """Share of tokens matching each category; a token counts once per category."""
    n = len(tokens)
    if n == 0:
        return CategoryProportions({c: 0.0 for c in dictionary.names}, 0)
    counts = Counter(tokens)
    out = {}
    for cat in dictionary.names:
        hits = sum(k for tok, k in counts.items() if dictionary.matches(tok, cat))
        out[cat] = hits / n
    return CategoryProportions(out, n)


def category_frame(texts: Sequence[str], dictionary: CategoryDictionary, index: Sequence | None = None) -> pd.DataFrame:
    rows = [category_proportions(preprocess(t), dictionary).values for t in texts]
    return pd.DataFrame(rows, columns=dictionary.names, index=index)


# --- pipeline --------------------------------------------------------------------


@dataclass(frozen=True)
class LexiconResult:
    vocabulary: Vocabulary
    lasso: LassoFit
    post: PostLasso | None
    scores: list[AttributionScore]


def fit_lexicon(texts: Sequence[str], p_female: Sequence[float], *, seed: int = 0, min_df: int = 10,
                max_df_share: float = 0.85, folds: int = 10, n_lambdas: int = 20,
                categories: Mapping[str, str] | None = None) -> LexiconResult:
    """Vocabulary, TF-IDF, CV Lasso and post-Lasso OLS on the training split, then attribution scores."""
    docs = [preprocess(t) for t in texts]
    vocab = build_vocabulary(docs, min_df, max_df_share)
    if not len(vocab):
        raise LexiconError("no term passes the document-frequency filter")
    X = tfidf_transform(docs, vocab)
    y = np.asarray(p_female, dtype=float)
    fit = lasso_cv_fit(X, y, folds=folds, n_lambdas=n_lambdas, seed=seed)
    if not fit.support:
        return LexiconResult(vocab, fit, None, [])
    post = post_lasso_ols(X[fit.train_rows], y[fit.train_rows], fit.support)
    return LexiconResult(vocab, fit, post, attribution_scores(post.coefficients, vocab, categories))
