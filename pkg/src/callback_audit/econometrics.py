"""Least squares with absorbed fixed effects and robust / clustered errors."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.stats import t as student_t

from .corpus import CorpusError, JobPosting, WagePoint, trim_wage_outliers

logger = logging.getLogger(__name__)

SE_KINDS = ("hc1", "cluster_cr1")
WAGE_VARIANTS = ("none", "state_occ_fe", "+month", "+controls", "occXstate_fe")
TRAIT_COLUMNS = ("openness", "conscientiousness", "extraversion", "agreeableness", "emotional_stability")
CATEGORICAL_CONTROLS = ("education", "job_type", "sector", "org_type")

FixedEffect = str | tuple[str, ...]


class RegressionError(ValueError):
    pass


class CollinearityError(RegressionError):
    def __init__(self, column: str, reason: str = "is collinear with earlier regressors"):
        super().__init__(f"column {column!r} {reason}")
        self.column = column


class ConvergenceError(RegressionError):
    pass


@dataclass(frozen=True)
class RegressionSpec:
    outcome: str
    regressors: tuple[str, ...]
    fixed_effects: tuple[FixedEffect, ...] = ()
    weights: str | None = None
    cluster: str | None = None
    se_kind: str = "hc1"
    intercept: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(
            self, "fixed_effects", tuple(tuple(fe) if isinstance(fe, (list, tuple)) else fe for fe in self.fixed_effects)
        )
        if self.outcome in self.regressors:
            raise RegressionError(f"outcome {self.outcome!r} is also a regressor")
        if len(set(self.regressors)) != len(self.regressors):
            raise RegressionError("duplicate regressor names")
        if self.se_kind not in SE_KINDS:
            raise RegressionError(f"se_kind must be one of {SE_KINDS}")
        if self.se_kind == "cluster_cr1" and not self.cluster:
            raise RegressionError("clustered errors need a cluster column")

    @property
    def fe_names(self) -> list[str]:
        return ["x".join(fe) if isinstance(fe, tuple) else fe for fe in self.fixed_effects]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fixed_effects"] = [list(fe) if isinstance(fe, tuple) else fe for fe in self.fixed_effects]
        d["regressors"] = list(self.regressors)
        return d


@dataclass(frozen=True)
class RegressionResult:
    coefficients: dict[str, float]
    standard_errors: dict[str, float]
    n_effective: int
    r_squared: float  # within R2 once fixed effects are absorbed
    outcome_mean: float
    spec: RegressionSpec | None = None
    omitted: tuple[str, ...] = ()
    n_clusters: int | None = None
    df_resid: int = 0
    fe_dof: int = 0
    singletons_dropped: int = 0

    def t_stat(self, name: str) -> float:
        se = self.standard_errors[name]
        return self.coefficients[name] / se if se > 0 else math.copysign(math.inf, self.coefficients[name]) if self.coefficients[name] else 0.0

    def p_value(self, name: str) -> float:
        df = (self.n_clusters - 1) if self.n_clusters else max(self.df_resid, 1)
        return float(2 * student_t.sf(abs(self.t_stat(name)), df))

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict() if self.spec else None,
            "coefficients": self.coefficients,
            "standard_errors": self.standard_errors,
            "n_effective": self.n_effective,
            "r_squared": self.r_squared,
            "outcome_mean": self.outcome_mean,
            "omitted": list(self.omitted),
            "n_clusters": self.n_clusters,
            "df_resid": self.df_resid,
            "fe_dof": self.fe_dof,
            "singletons_dropped": self.singletons_dropped,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# --- fixed-effect machinery ------------------------------------------------


def _fe_codes(df: pd.DataFrame, fe: FixedEffect) -> np.ndarray:
    if isinstance(fe, tuple):
        return df.groupby(list(fe), sort=True, observed=True).ngroup().to_numpy()
    return pd.factorize(df[fe], sort=True)[0]


def _drop_singletons(codes: list[np.ndarray]) -> np.ndarray:
    keep = np.ones(codes[0].shape[0], dtype=bool)
    while True:
        changed = False
        for g in codes:
            counts = np.bincount(g[keep], minlength=g.max() + 1 if g.size else 0)
            bad = keep & (counts[g] < 2)
            if bad.any():
                keep &= ~bad
                changed = True
        if not changed or not keep.any():
            return keep


def _recode(codes: list[np.ndarray]) -> list[np.ndarray]:
    return [np.unique(g, return_inverse=True)[1].astype(np.int64) for g in codes]


def fe_degrees_of_freedom(codes: Sequence[np.ndarray]) -> int:
    """Rank of the dummy matrix of the fixed effects.

    Exact for one or two dimensions (two-way rank is ``G1 + G2 - components``);
    every further dimension adds ``G - 1``.
    """
    if not codes:
        return 0
    sizes = [int(g.max()) + 1 for g in codes]
    if len(codes) == 1:
        return sizes[0]
    g1, g2 = codes[0], codes[1]
    n1, n2 = sizes[0], sizes[1]
    adj = sp.coo_matrix((np.ones(g1.size), (g1, n1 + g2)), shape=(n1 + n2, n1 + n2))
    n_comp, _ = connected_components(adj, directed=False)
    return n1 + n2 - n_comp + sum(s - 1 for s in sizes[2:])


def demean(
    mat: np.ndarray,
    codes: Sequence[np.ndarray],
    weights: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Project ``mat`` off the span of the fixed-effect dummies.

    Alternates within-group (weighted) demeaning over the dimensions until
    every group mean is below ``tol`` in absolute value.
    """
    out = np.array(mat, dtype=float, copy=True)
    if not codes:
        return out
    w = np.ones(out.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    sums_w = [np.bincount(g, weights=w) for g in codes]

    def group_means(g, sw):
        return np.vstack([np.bincount(g, weights=w * out[:, j], minlength=sw.size) for j in range(out.shape[1])]).T / sw[:, None]

    for it in range(max_iter):
        for g, sw in zip(codes, sums_w):
            out -= group_means(g, sw)[g]
        if len(codes) == 1:
            return out
        worst = max(np.abs(group_means(g, sw)).max() for g, sw in zip(codes, sums_w))
        if worst < tol:
            return out
    raise ConvergenceError(f"fixed-effect demeaning did not converge in {max_iter} iterations")


# --- solver ---------------------------------------------------------------


def _check_columns(X: np.ndarray, names: Sequence[str], raw_norms: np.ndarray, droppable: frozenset[str]) -> list[int]:
    """Indices of usable columns, dropping or rejecting degenerate ones in order."""
    keep: list[int] = []
    for j, name in enumerate(names):
        col = X[:, j]
        norm = np.linalg.norm(col)
        if norm <= 1e-10 * max(raw_norms[j], 1.0):
            reason = "has no variation after fixed-effect absorption"
        elif keep:
            basis = X[:, keep]
            coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
            resid = np.linalg.norm(col - basis @ coef)
            reason = "is collinear with earlier regressors" if resid <= 1e-9 * norm else ""
        else:
            reason = ""
        if not reason:
            keep.append(j)
        elif name in droppable:
            logger.warning("dropping %s: %s", name, reason)
        else:
            raise CollinearityError(name, reason)
    return keep


def ols_fit(
    data: pd.DataFrame,
    spec: RegressionSpec,
    *,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    droppable: Iterable[str] = (),
) -> RegressionResult:
    """Weighted least squares with fixed effects absorbed by alternating projections.

    Rows with missing values in any used column are dropped, as are
    singleton fixed-effect groups. Without fixed effects an ``Intercept``
    is estimated. Covariance is HC1 or CR1; both count absorbed fixed
    effects in ``k``.
    """
    droppable = frozenset(droppable)
    fe_cols = [c for fe in spec.fixed_effects for c in (fe if isinstance(fe, tuple) else (fe,))]
    used = [spec.outcome, *spec.regressors, *fe_cols]
    for extra in (spec.weights, spec.cluster):
        if extra:
            used.append(extra)
    missing = [c for c in dict.fromkeys(used) if c not in data.columns]
    if missing:
        raise RegressionError(f"columns not found: {missing}")
    df = data[list(dict.fromkeys(used))].dropna()
    n_raw = len(df)

    codes = [_fe_codes(df, fe) for fe in spec.fixed_effects]
    singletons = 0
    if codes:
        keep = _drop_singletons(codes)
        singletons = int((~keep).sum())
        if singletons:
            logger.info("dropping %d singleton fixed-effect observations", singletons)
            df = df.loc[keep]
            codes = _recode([g[keep] for g in codes])
    n = len(df)
    if n == 0:
        raise RegressionError(f"no observations left ({n_raw} before dropping missing values and singletons)")

    y = df[spec.outcome].to_numpy(dtype=float)
    names = list(spec.regressors)
    X = df[names].to_numpy(dtype=float) if names else np.zeros((n, 0))
    w = None
    if spec.weights:
        w = df[spec.weights].to_numpy(dtype=float)
        if np.any(w <= 0):
            raise RegressionError("weights must be positive")
    sw = np.ones(n) if w is None else w
    use_intercept = spec.intercept and not codes

    fe_dof = fe_degrees_of_freedom(codes)
    if codes:
        Z = demean(np.column_stack([y, X]), codes, w, tol=tol, max_iter=max_iter)
        y_t, X_t = Z[:, 0], Z[:, 1:]
    else:
        y_t, X_t = y, X
    raw_norms = np.linalg.norm(X - np.average(X, axis=0, weights=sw), axis=0) if names else np.zeros(0)
    if use_intercept:
        X_t = np.column_stack([np.ones(n), X_t])
        names = ["Intercept", *names]
        raw_norms = np.concatenate([[math.sqrt(n)], raw_norms])

    root_w = np.sqrt(sw)
    keep_cols = _check_columns(X_t * root_w[:, None], names, raw_norms, droppable)
    omitted = tuple(nm for j, nm in enumerate(names) if j not in keep_cols)
    X_t = X_t[:, keep_cols]
    names = [names[j] for j in keep_cols]
    p = len(names)
    k = p + fe_dof
    if n <= k:
        raise RegressionError(f"{n} observations cannot identify {k} parameters")

    Xw = X_t * root_w[:, None]
    yw = y_t * root_w
    if p:
        Q, R = scipy.linalg.qr(Xw, mode="economic")
        beta = scipy.linalg.solve_triangular(R, Q.T @ yw)
        r_inv = scipy.linalg.solve_triangular(R, np.eye(p))
        bread = r_inv @ r_inv.T
    else:
        beta = np.zeros(0)
        bread = np.zeros((0, 0))
    resid = y_t - X_t @ beta

    scores = X_t * (sw * resid)[:, None]
    n_clusters = None
    if spec.se_kind == "cluster_cr1":
        cl = pd.factorize(df[spec.cluster])[0]
        G = int(cl.max()) + 1
        if G < 2:
            raise RegressionError("clustered standard errors need at least 2 clusters")
        summed = np.zeros((G, p))
        np.add.at(summed, cl, scores)
        meat = summed.T @ summed
        factor = (G / (G - 1)) * ((n - 1) / (n - k))
        n_clusters = G
    else:
        meat = scores.T @ scores
        factor = n / (n - k)
    vcov = bread @ meat @ bread * factor
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))

    ybar = np.average(y_t, weights=sw)
    sst = float(np.sum(sw * (y_t - ybar) ** 2))
    ssr = float(np.sum(sw * resid**2))
    r2 = 1.0 - ssr / sst if sst > 1e-14 * max(1.0, float(np.sum(sw * y**2))) else 0.0

    return RegressionResult(
        coefficients={nm: float(b) for nm, b in zip(names, beta)},
        standard_errors={nm: float(s) for nm, s in zip(names, se)},
        n_effective=n,
        r_squared=float(r2),
        outcome_mean=float(np.average(y, weights=sw)),
        spec=spec,
        omitted=omitted,
        n_clusters=n_clusters,
        df_resid=n - k,
        fe_dof=fe_dof,
        singletons_dropped=singletons,
    )


# --- model-level wrappers ----------------------------------------------------


def _control_frame(postings: Sequence[JobPosting]) -> pd.DataFrame:
    rows = []
    for p in postings:
        exp = p.experience_years
        rows.append(
            {
                "posting_id": p.id,
                "state": p.state,
                "month_year": p.month_year,
                "education": p.education,
                "experience": exp,
                "experience_sq": None if exp is None else exp * exp,
                "job_type": p.job_type,
                "sector": p.sector,
                "org_type": p.org_type,
            }
        )
    df = pd.DataFrame(rows)
    return df.set_index("posting_id") if len(df) else df


def _add_control_dummies(df: pd.DataFrame) -> tuple[pd.DataFrame, list[str]]:
    names = ["experience", "experience_sq"]
    parts = [df]
    for col in CATEGORICAL_CONTROLS:
        levels = sorted(v for v in df[col].dropna().unique())
        for lvl in levels[1:]:
            nm = f"{col}[{lvl}]"
            parts.append(pd.Series(np.where(df[col].isna(), np.nan, (df[col] == lvl).astype(float)), index=df.index, name=nm))
            names.append(nm)
    return pd.concat(parts, axis=1), names


def _wage_variant_spec(variant: str, controls: list[str], se_kind: str, cluster: str | None) -> RegressionSpec:
    if variant not in WAGE_VARIANTS:
        raise RegressionError(f"variant must be one of {WAGE_VARIANTS}")
    fe: list[FixedEffect] = []
    regs = ["female"]
    if variant in ("state_occ_fe", "+month", "+controls"):
        fe += ["state", "soc"]
    if variant in ("+month", "+controls"):
        fe.append("month_year")
    if variant == "occXstate_fe":
        fe += [("soc", "state"), "month_year"]
    if variant in ("+controls", "occXstate_fe"):
        regs += controls
    return RegressionSpec("log_wage", tuple(regs), tuple(fe), cluster=cluster, se_kind=se_kind)


def wage_table(
    postings: Sequence[JobPosting],
    callbacks: Mapping[str, bool],
    assignments: Mapping[str, str] | None = None,
    wages: Sequence[WagePoint] | None = None,
) -> tuple[pd.DataFrame, list[str]]:
    """Posting-level frame for the wage regressions (refusals excluded)."""
    if wages is None:
        try:
            wages = trim_wage_outliers(postings)
        except CorpusError as exc:
            raise RegressionError(f"no usable wages: {exc}") from None
    if not wages:
        raise RegressionError("no posting has a usable wage")
    by_id = {p.id: p for p in postings}
    ids = [w.posting_id for w in wages if w.posting_id in callbacks and w.posting_id in by_id]
    if not ids:
        raise RegressionError("no wage observations with a gendered recommendation")
    df = _control_frame([by_id[i] for i in ids])
    lw = {w.posting_id: w.log_wage for w in wages}
    df["log_wage"] = [lw[i] for i in ids]
    df["female"] = [1.0 if callbacks[i] else 0.0 for i in ids]
    df["soc"] = [None if assignments is None else assignments.get(i) for i in ids]
    df["job_id"] = ids
    return _add_control_dummies(df)


def wage_gap_regression(
    postings: Sequence[JobPosting],
    callbacks: Mapping[str, bool],
    variant: str = "none",
    *,
    assignments: Mapping[str, str] | None = None,
    wages: Sequence[WagePoint] | None = None,
    common_sample: bool = True,
    se_kind: str = "hc1",
    cluster: str | None = None,
) -> RegressionResult:
    """Log wage on the female-callback indicator.

    ``callbacks`` maps posting id to ``True`` (woman recommended) or
    ``False`` (man); refusals are simply absent. The coefficient is in log
    units; :func:`log_points` converts it. With ``common_sample`` every
    variant is fitted on the rows usable by the most stringent one.
    """
    df, controls = wage_table(postings, callbacks, assignments, wages)
    spec = _wage_variant_spec(variant, controls, se_kind, cluster)
    if common_sample and assignments is not None:
        strict = _wage_variant_spec("occXstate_fe", controls, se_kind, cluster)
        cols = [strict.outcome, *strict.regressors, "soc", "state", "month_year"]
        sub = df.dropna(subset=cols)
        codes = [_fe_codes(sub, fe) for fe in strict.fixed_effects]
        if len(sub):
            sub = sub.loc[_drop_singletons(codes)]
        if len(sub) == 0:
            raise RegressionError("no rows survive the most stringent wage specification")
        df = sub
    return ols_fit(df, spec, droppable=controls)


def log_points(result: RegressionResult, name: str = "female") -> float:
    return 100.0 * result.coefficients[name]


def skill_association(
    postings: Sequence[JobPosting],
    p_female: Mapping[str, float],
    categories: Sequence[str] | None = None,
    *,
    se_kind: str = "hc1",
    cluster: str | None = None,
) -> RegressionResult:
    """Female-callback probability on skill-category indicators, job controls and state/month FE."""
    rows = [p for p in postings if p.id in p_female]
    if not rows:
        raise RegressionError("no postings with a female-callback probability")
    if categories is None:
        categories = sorted({t for p in rows for t in p.skill_tags})
    present = {t for p in rows for t in p.skill_tags}
    absent = [c for c in categories if c not in present]
    used = [c for c in categories if c in present]
    df = _control_frame(rows)
    df["p_female"] = [p_female[p.id] for p in rows]
    df["job_id"] = [p.id for p in rows]
    skill_cols = [f"skill[{c}]" for c in used]
    skills = pd.DataFrame(
        {nm: [1.0 if c in p.skill_tags else 0.0 for p in rows] for nm, c in zip(skill_cols, used)}, index=df.index
    )
    df, controls = _add_control_dummies(pd.concat([df, skills], axis=1))
    spec = RegressionSpec("p_female", tuple(skill_cols + controls), ("state", "month_year"), cluster=cluster, se_kind=se_kind)
    res = ols_fit(df, spec, droppable=set(controls) | set(skill_cols))
    if absent:
        res = _with_omitted(res, [f"skill[{c}]" for c in absent])
    return res


def _with_omitted(res: RegressionResult, extra: Sequence[str]) -> RegressionResult:
    d = {**res.__dict__, "omitted": tuple(res.omitted) + tuple(extra)}
    return RegressionResult(**d)


def standardize(features: pd.DataFrame) -> tuple[pd.DataFrame, list[str]]:
    """Z-score each column (sample SD); zero-variance columns are returned separately."""
    sd = features.std(ddof=1)
    scale = features.abs().max().clip(lower=1.0)
    constant = [c for c in features.columns if not (sd[c] > 1e-12 * scale[c])]
    for c in constant:
        logger.warning("excluding category %s: zero variance", c)
    keep = [c for c in features.columns if c not in constant]
    z = (features[keep] - features[keep].mean()) / sd[keep]
    return z, constant


def liwc_association(category_features: pd.DataFrame, p_female: Sequence[float] | pd.Series) -> RegressionResult:
    """Female-callback probability on standardized category proportions (no controls)."""
    y = np.asarray(p_female, dtype=float)
    if len(y) != len(category_features):
        raise RegressionError("features and outcome have different lengths")
    feats = category_features.reset_index(drop=True).astype(float)
    z, constant = standardize(feats)
    z = z.rename(columns=str)
    z["p_female"] = y
    spec = RegressionSpec("p_female", tuple(str(c) for c in feats.columns if c not in constant))
    res = ols_fit(z, spec)
    return _with_omitted(res, [str(c) for c in constant]) if constant else res


def _trait_frame(points: pd.DataFrame, tipi: Mapping[str, Mapping[str, float]], outcome: str) -> pd.DataFrame:
    need = {"figure", "fcr", outcome}
    if need - set(points.columns):
        raise RegressionError(f"points need columns {sorted(need)}")
    df = points.dropna(subset=[outcome, "fcr"])
    df = df[(df["fcr"] >= 0.10) & (df["fcr"] <= 0.90)].copy()
    for fig in sorted(set(points["figure"]) - set(df["figure"])):
        logger.warning("dropping figure %s: no in-range threshold points", fig)
    unknown = sorted(set(df["figure"]) - set(tipi))
    if unknown:
        raise RegressionError(f"no TIPI scores for figures {unknown}")
    for t in TRAIT_COLUMNS:
        vals = [float(tipi[f][t]) for f in df["figure"]]
        if any(not 1.0 <= v <= 7.0 for v in vals):
            raise RegressionError(f"TIPI {t} scores must lie in [1, 7]")
        df[t] = vals
    if df["figure"].nunique() < 2:
        raise RegressionError("trait regressions need at least 2 figures (clusters)")
    df["weight"] = 1.0 / df.groupby("figure")["figure"].transform("size")
    return df


def trait_segregation_regression(points: pd.DataFrame, tipi: Mapping[str, Mapping[str, float]]) -> RegressionResult:
    """Dissimilarity per (figure, threshold) on Big Five scores and the callback rate.

    Only points with callback rate in [0.10, 0.90] enter; each figure gets
    total weight one and errors are clustered by figure.
    """
    df = _trait_frame(points, tipi, "dissimilarity")
    spec = RegressionSpec("dissimilarity", (*TRAIT_COLUMNS, "fcr"), weights="weight", cluster="figure", se_kind="cluster_cr1")
    return ols_fit(df, spec)


def trait_wage_regression(points: pd.DataFrame, tipi: Mapping[str, Mapping[str, float]]) -> RegressionResult:
    """Absolute wage disparity per (figure, threshold) on Big Five scores and the callback rate."""
    df = _trait_frame(points, tipi, "wage_gap")
    df["abs_wage_gap"] = df["wage_gap"].abs()
    spec = RegressionSpec("abs_wage_gap", (*TRAIT_COLUMNS, "fcr"), weights="weight", cluster="figure", se_kind="cluster_cr1")
    return ols_fit(df, spec)


# --- rendering ----------------------------------------------------------------


def stars(p: float) -> str:
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def render_table(columns: Sequence[tuple[str, RegressionResult]], keep: Sequence[str] | None = None, digits: int = 10) -> str:
    """Plain-text regression table: coefficients with stars, SEs in parentheses, N and mean of Y."""
    if keep is None:
        keep = list(dict.fromkeys(nm for _, r in columns for nm in r.coefficients))
    label_w = max([len(k) for k in keep] + [10]) + 2
    heads = [f"({i + 1}) {lab}" for i, (lab, _) in enumerate(columns)]
    col_w = max([digits + 10] + [len(h) + 2 for h in heads])
    head = " " * label_w + "".join(h.rjust(col_w) for h in heads)
    lines = [head, "-" * len(head)]
    fmt = f"{{:.{digits}f}}"
    for name in keep:
        row, se_row = name.ljust(label_w), " " * label_w
        for _, r in columns:
            if name in r.coefficients:
                row += (fmt.format(r.coefficients[name]) + stars(r.p_value(name)).ljust(3)).rjust(col_w)
                se_row += ("(" + fmt.format(r.standard_errors[name]) + ")   ").rjust(col_w)
            else:
                row += " " * col_w
                se_row += " " * col_w
        lines += [row, se_row]
    lines.append("-" * len(head))
    lines.append("N".ljust(label_w) + "".join(str(r.n_effective).rjust(col_w) for _, r in columns))
    lines.append("Mean Y".ljust(label_w) + "".join(fmt.format(r.outcome_mean).rjust(col_w) for _, r in columns))
    lines.append("R2 within".ljust(label_w) + "".join(fmt.format(r.r_squared).rjust(col_w) for _, r in columns))
    lines.append("*** p<0.01, ** p<0.05, * p<0.1")
    return "\n".join(lines)
