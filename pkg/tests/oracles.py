"""Independent brute-force reference implementations used as test oracles.

They favour loops and textbook formulas over speed and share no code with
the package.
"""

import math

import numpy as np
import scipy.linalg


def dissimilarity(occupations, female):
    n_f = sum(1 for f in female if f)
    n_m = len(female) - n_f
    total = 0.0
    for o in set(occupations):
        fo = sum(1 for oc, f in zip(occupations, female) if oc == o and f)
        mo = sum(1 for oc, f in zip(occupations, female) if oc == o and not f)
        total += abs(fo / n_f - mo / n_m)
    return 0.5 * total


def kappa(requests, outcomes):
    n = len(requests)
    agree = 0
    for r, o in zip(requests, outcomes):
        if r == o:
            agree += 1
    p_o = agree / n
    p_e = 0.0
    for g in ("male", "female"):
        p_e += (sum(1 for r in requests if r == g) / n) * (sum(1 for o in outcomes if o == g) / n)
    return (p_o - p_e) / (1 - p_e)


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)


def tfidf(docs, vocab):
    """Dense TF-IDF rows; documents are token lists."""
    n = len(docs)
    rows = []
    for d in docs:
        row = []
        for term in vocab:
            df = sum(1 for other in docs if term in other)
            idf = math.log((1 + n) / (1 + df)) + 1
            tf = d.count(term) / len(d) if d else 0.0
            row.append(tf * idf)
        rows.append(row)
    return rows


def tipi(runs):
    """Mean over runs of the average of the positive item and the reversed negative item."""
    return sum((pos + (8 - neg)) / 2 for pos, neg in runs) / len(runs)


def _dummies(codes):
    levels = sorted(set(codes))
    return np.array([[1.0 if c == lv else 0.0 for lv in levels] for c in codes])


def full_rank_columns(mat, tol=1e-9):
    """Greedy left-to-right selection of linearly independent columns."""
    keep = []
    for j in range(mat.shape[1]):
        trial = mat[:, keep + [j]]
        if np.linalg.matrix_rank(trial, tol=tol) == len(keep) + 1:
            keep.append(j)
    return keep


def dummy_ols(y, X, fe_codes, weights=None, clusters=None):
    """OLS with every fixed effect expanded to explicit dummies.

    Returns (beta on X, HC1 SEs, CR1 SEs or None, n, k). Solved with the
    normal equations on a full-rank design.
    """
    n = len(y)
    parts = [X]
    if fe_codes:
        parts += [_dummies(c) for c in fe_codes]
    else:
        parts.append(np.ones((n, 1)))
    D = np.column_stack(parts)
    cols = full_rank_columns(D)
    if cols[: X.shape[1]] != list(range(X.shape[1])):
        raise ValueError("regressors are collinear with the dummies")
    D = D[:, cols]
    k = D.shape[1]
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    W = np.diag(w)
    xtx_inv = np.linalg.inv(D.T @ W @ D)
    beta = xtx_inv @ (D.T @ W @ y)
    e = y - D @ beta
    meat = D.T @ np.diag((w * e) ** 2) @ D
    hc1 = np.sqrt(np.diag(xtx_inv @ meat @ xtx_inv) * n / (n - k))
    cr1 = None
    if clusters is not None:
        groups = sorted(set(clusters))
        G = len(groups)
        meat = np.zeros((k, k))
        for g in groups:
            idx = [i for i, c in enumerate(clusters) if c == g]
            s = D[idx].T @ (w[idx] * e[idx])
            meat += np.outer(s, s)
        cr1 = np.sqrt(np.diag(xtx_inv @ meat @ xtx_inv) * (G / (G - 1)) * ((n - 1) / (n - k)))
        cr1 = cr1[: X.shape[1]]
    return beta[: X.shape[1]], hc1[: X.shape[1]], cr1, n, k


def lstsq_r2(X, y):
    A = np.column_stack([np.ones(len(y)), X])
    beta = scipy.linalg.lstsq(A, y)[0]
    resid = y - A @ beta
    return 1 - resid @ resid / np.sum((y - y.mean()) ** 2)


def _levels_without_singletons(rng, n, g):
    base = np.repeat(np.arange(g), 2)
    rest = rng.integers(0, g, size=n - len(base))
    return rng.permutation(np.concatenate([base, rest]))


def random_fe_instance(rng, n=None, weighted=False):
    """Random table with 2 fixed-effect dimensions, no singleton groups and a cluster column."""
    import pandas as pd

    n = n or int(rng.integers(40, 201))
    g1 = int(rng.integers(2, max(3, n // 8)))
    g2 = int(rng.integers(2, max(3, n // 10)))
    p = int(rng.integers(1, 4))
    f1 = _levels_without_singletons(rng, n, g1)
    f2 = _levels_without_singletons(rng, n, g2)
    X = rng.normal(size=(n, p)) + 0.3 * f1[:, None] / g1
    y = X @ rng.normal(size=p) + 0.5 * f1 - 0.2 * f2 + rng.normal(size=n) * (1 + 0.5 * np.abs(X[:, 0]))
    df = pd.DataFrame(X, columns=[f"x{j}" for j in range(p)])
    df["y"] = y
    df["fa"] = [f"a{v}" for v in f1]
    df["fb"] = [f"b{v}" for v in f2]
    df["cl"] = rng.integers(0, max(2, n // 15), size=n)
    df["w"] = rng.uniform(0.5, 2.0, size=n) if weighted else 1.0
    return df


def planted_lexicon_corpus(seed, n=2000, vocab_size=500, n_true=10, snr=2.0, doc_len=50, signal_sd=0.08):
    """Token documents plus an outcome linear in the TF-IDF of ``n_true`` planted terms.

    Terms are made-up alphabetic strings drawn uniformly; the outcome is
    ``0.5 + signal + noise`` with ``var(signal)/var(noise) = snr`` and
    uniform noise so that it stays inside [0, 1]. Returns
    (docs, y, true_terms, true_signs, signal).
    """
    rng = np.random.default_rng(seed)
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    terms = []
    seen = set()
    while len(terms) < vocab_size:
        t = "".join(rng.choice(letters, size=int(rng.integers(4, 9))))
        if t not in seen:
            seen.add(t)
            terms.append(t)
    docs = [list(rng.choice(terms, size=doc_len)) for _ in range(n)]
    true_idx = rng.choice(vocab_size, size=n_true, replace=False)
    true_terms = [terms[i] for i in true_idx]
    signs = np.where(np.arange(n_true) % 2 == 0, 1.0, -1.0)
    # idf for uniform draws is close to constant; the signal uses raw shares
    share = np.array([[d.count(t) / doc_len for t in true_terms] for d in docs])
    raw = share @ signs
    signal = signal_sd * (raw - raw.mean()) / raw.std()
    half_width = math.sqrt(3.0) * signal_sd / math.sqrt(snr)
    y = 0.5 + signal + rng.uniform(-half_width, half_width, size=n)
    return docs, y, true_terms, dict(zip(true_terms, signs)), signal
