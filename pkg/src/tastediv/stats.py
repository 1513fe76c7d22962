"""Feature preparation, OLS regression and agreement statistics.

Everything here works on plain numpy arrays; p values go through
:func:`reg_incomplete_beta` so no statistics package is required at runtime.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

CONTINUOUS = "continuous"
FACTOR = "factor"
LIKERT_LEVELS = 6
RANK_RTOL = 1e-10


# --- special functions ------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 10001):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def reg_incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return float(x)
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    return reg_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def f_upper_p(f: float, df1: float, df2: float) -> float:
    if math.isnan(f):
        return math.nan
    if math.isinf(f):
        return 0.0
    if f <= 0:
        return 1.0
    return reg_incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


def stars(p: float) -> str:
    if math.isnan(p):
        return ""
    for cut, mark in ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, ".")):
        if p < cut:
            return mark
    return ""


# --- feature tables ---------------------------------------------------------


@dataclass
class FeatureTable:
    """Users x variables, NaN marks a missing cell."""

    users: list[str]
    columns: list[str]
    kinds: dict[str, str]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.users), len(self.columns))
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        for name in self.columns:
            kind = self.kinds.get(name)
            if kind not in (CONTINUOUS, FACTOR):
                raise ValueError(f"column {name!r}: kind must be continuous or factor")
            if kind == FACTOR:
                col = self.column(name)
                present = col[~np.isnan(col)]
                if not np.isin(present, (0.0, 1.0)).all():
                    raise ValueError(f"factor column {name!r} has values other than 0/1")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def missing_fraction(self) -> dict[str, float]:
        n = max(len(self.users), 1)
        return {c: float(np.isnan(self.column(c)).sum()) / n for c in self.columns}

    def select(self, names: Sequence[str]) -> "FeatureTable":
        idx = [self.columns.index(n) for n in names]
        return FeatureTable(
            list(self.users), list(names), {n: self.kinds[n] for n in names}, self.values[:, idx]
        )


def standardize(table: FeatureTable) -> FeatureTable:
    """Center every column and scale to unit sample standard deviation."""
    x = table.values
    if np.isnan(x).any():
        raise ValueError("table has missing cells; impute before standardizing")
    if len(table.users) < 2:
        raise ValueError("need at least two rows to standardize")
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    for name, s, m in zip(table.columns, sd, mean):
        if s <= 1e-12 * max(1.0, abs(m)):
            raise ValueError(f"column {name!r} has zero variance")
    # scaled factors are no longer 0/1, so every column becomes continuous
    kinds = {c: CONTINUOUS for c in table.columns}
    return replace(table, kinds=kinds, values=(x - mean) / sd)


def _lstsq_with_intercept(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    design = np.column_stack([np.ones(len(x)), x])
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    return beta


def _lda_predict(x_train, labels, x_new) -> np.ndarray:
    """Two-class linear discriminant with pooled covariance."""
    classes = (0.0, 1.0)
    means = [x_train[labels == c].mean(axis=0) for c in classes]
    centered = np.vstack([x_train[labels == c] - means[i] for i, c in enumerate(classes)])
    dof = max(len(x_train) - 2, 1)
    cov_inv = np.linalg.pinv(centered.T @ centered / dof)
    priors = [np.mean(labels == c) for c in classes]
    scores = np.column_stack(
        [
            x_new @ cov_inv @ means[i] - 0.5 * means[i] @ cov_inv @ means[i] + math.log(priors[i])
            for i in range(2)
        ]
    )
    return np.where(scores[:, 1] > scores[:, 0], 1.0, 0.0)


def impute_missing(
    table: FeatureTable,
    max_missing_frac: float = 0.10,
    noise: bool = False,
    seed: Optional[int] = None,
) -> FeatureTable:
    """Fill missing cells from the fully observed columns.

    Continuous columns get least-squares predictions, binary factors a
    linear discriminant. Any column whose missing fraction reaches
    ``max_missing_frac`` is rejected. With ``noise`` the continuous
    predictions get gaussian residual noise drawn from ``seed``.
    """
    for name, frac in table.missing_fraction().items():
        if frac >= max_missing_frac and frac > 0:
            raise ValueError(
                f"column {name!r} is {frac:.1%} missing (limit {max_missing_frac:.0%})"
            )
    x = table.values
    missing = np.isnan(x)
    if not missing.any():
        return replace(table, values=x.copy())

    rng = np.random.default_rng(seed) if noise else None
    complete = [j for j in range(x.shape[1]) if not missing[:, j].any()]
    out = x.copy()
    for j, name in enumerate(table.columns):
        rows = missing[:, j]
        if not rows.any():
            continue
        obs = ~rows
        y = x[obs, j]
        preds = x[:, complete]
        if table.kinds[name] == FACTOR:
            if not complete or len(np.unique(y)) < 2:
                out[rows, j] = float(np.mean(y) >= 0.5)
            else:
                out[rows, j] = _lda_predict(preds[obs], y, preds[rows])
            continue
        beta = _lstsq_with_intercept(preds[obs], y)
        design = np.column_stack([np.ones(len(x)), preds])
        fill = design[rows] @ beta
        if rng is not None:
            resid = y - design[obs] @ beta
            dof = max(len(y) - len(beta), 1)
            fill = fill + rng.normal(0.0, math.sqrt(resid @ resid / dof), size=fill.size)
        out[rows, j] = fill
    return replace(table, values=out)


# --- regression ---------------------------------------------------------------


class RankDeficiencyError(ValueError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"design matrix is rank deficient; column {column!r} is linearly dependent")


@dataclass
class PredictorStats:
    name: str
    coef: float
    se: float
    t: float
    p: float
    stars: str
    vif: float


@dataclass
class RegressionReport:
    predictors: list[PredictorStats]
    intercept: float
    r2: float
    adj_r2: float
    rse: float
    f: float
    df1: int
    df2: int
    n: int
    f_p: float = math.nan
    degenerate: bool = False

    def coefficient(self, name: str) -> PredictorStats:
        for p in self.predictors:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "predictors": [
                {k: _jsonable(v) for k, v in vars(p).items()} for p in self.predictors
            ],
            "model": {
                "r2": _jsonable(self.r2),
                "adj_r2": _jsonable(self.adj_r2),
                "rse": _jsonable(self.rse),
                "f": _jsonable(self.f),
                "df1": self.df1,
                "df2": self.df2,
                "n": self.n,
                "f_p": _jsonable(self.f_p),
                "intercept": _jsonable(self.intercept),
                "degenerate": self.degenerate,
            },
        }


def _jsonable(v):
    if isinstance(v, float):
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    return v


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def ols_regress(y, x, names: Optional[Sequence[str]] = None) -> RegressionReport:
    """Least squares with an intercept, via QR of the design matrix."""
    y = np.asarray(y, dtype=float)
    x = _as_2d(x)
    n, k = x.shape
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(k)]
    if len(names) != k or len(y) != n:
        raise ValueError("shape mismatch between y, X and names")
    if n <= k + 1:
        raise ValueError(f"need more than {k + 1} observations, got {n}")
    design = np.column_stack([np.ones(n), x])
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    scale = diag.max()
    for j in range(1, k + 1):
        if diag[j] <= RANK_RTOL * scale:
            raise RankDeficiencyError(names[j - 1])
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - design @ beta
    df2 = n - k - 1
    sse = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum())
    sigma2 = sse / df2
    rinv = np.linalg.solve(r, np.eye(k + 1))
    se = np.sqrt(np.maximum(np.sum(rinv**2, axis=1) * sigma2, 0.0))

    degenerate = sst <= 1e-24 * max(1.0, float(y @ y))
    if degenerate:
        r2 = adj = 0.0
        f = f_p = math.nan
    else:
        r2 = max(0.0, 1.0 - sse / sst)
        adj = 1.0 - (1.0 - r2) * (n - 1) / df2
        with np.errstate(divide="ignore", invalid="ignore"):
            f = float(np.divide((sst - sse) / k, sigma2))
        f_p = f_upper_p(f, k, df2)

    vifs = vif(x)
    preds = []
    for j in range(k):
        b, s = float(beta[j + 1]), float(se[j + 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            t = float(np.divide(b, s))
        if degenerate:
            t = math.nan
        p = t_two_sided_p(t, df2)
        preds.append(PredictorStats(names[j], b, s, t, p, stars(p), float(vifs[j])))
    return RegressionReport(
        preds, float(beta[0]), r2, adj, math.sqrt(sigma2), f, k, df2, n, f_p, degenerate
    )


def vif(x) -> np.ndarray:
    """Variance inflation factor of each column against all the others."""
    x = _as_2d(x)
    n, k = x.shape
    out = np.ones(k)
    if k < 2:
        return out
    for j in range(k):
        target = x[:, j]
        others = np.delete(x, j, axis=1)
        beta = _lstsq_with_intercept(others, target)
        resid = target - np.column_stack([np.ones(n), others]) @ beta
        sst = float(((target - target.mean()) ** 2).sum())
        if sst == 0:
            out[j] = math.inf
            continue
        unexplained = float(resid @ resid) / sst
        out[j] = math.inf if unexplained < 1e-10 else 1.0 / min(unexplained, 1.0)
    return out


class Correlation(NamedTuple):
    r: float
    t: float
    p: float


def pearson(x, y) -> Correlation:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n != len(y):
        raise ValueError("x and y differ in length")
    if n < 3:
        raise ValueError("need at least 3 observations")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("constant input has no correlation")
    r = float(np.clip(dx @ dy / math.sqrt(sxx * syy), -1.0, 1.0))
    df = n - 2
    if abs(r) == 1.0:
        t = math.copysign(math.inf, r)
    else:
        t = r * math.sqrt(df / (1.0 - r * r))
    return Correlation(r, t, t_two_sided_p(t, df))


# --- agreement --------------------------------------------------------------


@dataclass
class RatingSet:
    subjects: list[str]
    raters: list[str]
    ratings: np.ndarray = field(repr=False)

    def __post_init__(self):
        r = np.asarray(self.ratings)
        if r.shape != (len(self.subjects), len(self.raters)):
            raise ValueError(f"ratings shape {r.shape} does not match subjects x raters")
        if not np.issubdtype(r.dtype, np.integer):
            if not np.all(np.equal(np.mod(r, 1), 0)):
                raise ValueError("ratings must be integers")
            r = r.astype(int)
        if ((r < 0) | (r >= LIKERT_LEVELS)).any():
            raise ValueError(f"ratings must lie in 0..{LIKERT_LEVELS - 1}")
        self.ratings = r

    def _check(self):
        if len(self.raters) < 2 or len(self.subjects) < 2:
            raise ValueError("need at least 2 raters and 2 subjects")

    def mean_scores(self) -> np.ndarray:
        return self.ratings.mean(axis=1)


class Kappa(NamedTuple):
    value: float
    degenerate: bool = False


def fleiss_kappa(ratings: RatingSet) -> Kappa:
    ratings._check()
    n_sub, n_rat = ratings.ratings.shape
    counts = np.zeros((n_sub, LIKERT_LEVELS))
    for c in range(LIKERT_LEVELS):
        counts[:, c] = (ratings.ratings == c).sum(axis=1)
    per_subject = ((counts * counts).sum(axis=1) - n_rat) / (n_rat * (n_rat - 1))
    observed = per_subject.mean()
    shares = counts.sum(axis=0) / (n_sub * n_rat)
    expected = float(shares @ shares)
    if expected >= 1.0 - 1e-15:
        return Kappa(1.0, True)
    return Kappa(float((observed - expected) / (1.0 - expected)))


def cohen_kappa(a, b) -> Kappa:
    a = np.asarray(a)
    b = np.asarray(b)
    observed = float(np.mean(a == b))
    pa = np.bincount(a, minlength=LIKERT_LEVELS) / len(a)
    pb = np.bincount(b, minlength=LIKERT_LEVELS) / len(b)
    expected = float(pa @ pb)
    if expected >= 1.0 - 1e-15:
        return Kappa(1.0, True)
    return Kappa((observed - expected) / (1.0 - expected))


def cohen_kappa_avg(ratings: RatingSet) -> Kappa:
    """Mean unweighted Cohen kappa over all rater pairs."""
    ratings._check()
    pairs = [
        cohen_kappa(ratings.ratings[:, i], ratings.ratings[:, j])
        for i, j in itertools.combinations(range(len(ratings.raters)), 2)
    ]
    return Kappa(float(np.mean([k.value for k in pairs])), any(k.degenerate for k in pairs))


class Anova(NamedTuple):
    f: float
    df_between: int
    df_within: int
    p: float
    degenerate: bool = False


def one_way_anova(groups: Sequence[Sequence[float]]) -> Anova:
    groups = [np.asarray(g, dtype=float) for g in groups]
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(len(g) < 2 for g in groups):
        raise ValueError("each group needs at least two observations")
    allv = np.concatenate(groups)
    grand = allv.mean()
    ss_between = float(sum(len(g) * (g.mean() - grand) ** 2 for g in groups))
    ss_within = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    df_b, df_w = len(groups) - 1, len(allv) - len(groups)
    if ss_within == 0:
        if ss_between == 0:
            return Anova(math.nan, df_b, df_w, math.nan, True)
        return Anova(math.inf, df_b, df_w, 0.0)
    f = (ss_between / df_b) / (ss_within / df_w)
    return Anova(f, df_b, df_w, f_upper_p(f, df_b, df_w))


# --- file formats -----------------------------------------------------------


def read_features(path, schema_path) -> FeatureTable:
    kinds = json.loads(Path(schema_path).read_text(encoding="utf-8"))
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "user_id":
            raise ValueError(f"{path}: first column must be user_id")
        columns = header[1:]
        users, rows = [], []
        for row in reader:
            if not row:
                continue
            users.append(row[0])
            rows.append([float(v) if v.strip() else math.nan for v in row[1:]])
    missing = [c for c in columns if c not in kinds]
    if missing:
        raise ValueError(f"{schema_path}: no kind declared for {missing}")
    return FeatureTable(users, columns, {c: kinds[c] for c in columns}, np.array(rows).reshape(len(users), len(columns)))


def _cell(v: float) -> str:
    if math.isnan(v):
        return ""
    return repr(float(v))


def write_features(path, schema_path, table: FeatureTable) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", *table.columns])
        for user, row in zip(table.users, table.values):
            w.writerow([user, *(_cell(v) for v in row)])
    Path(schema_path).write_text(
        json.dumps({c: table.kinds[c] for c in table.columns}, indent=2) + "\n", encoding="utf-8"
    )


def read_ratings(path) -> RatingSet:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "subject_id" or len(header) < 3:
            raise ValueError(f"{path}: expected header subject_id,<rater1>,<rater2>,...")
        subjects, rows = [], []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{reader.line_num}: expected {len(header)} fields")
            subjects.append(row[0])
            try:
                rows.append([int(v) for v in row[1:]])
            except ValueError:
                raise ValueError(f"{path}:{reader.line_num}: ratings must be integers") from None
    return RatingSet(subjects, header[1:], np.array(rows, dtype=int).reshape(len(subjects), len(header) - 1))
