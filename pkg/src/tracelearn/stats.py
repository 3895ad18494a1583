"""Brunner-Munzel tests of stochastic equality and effect sizes.

The analytic mode uses midranks with the Satterthwaite-approximated degrees
of freedom and a two-sided p from the t reference.  The permutation mode
recomputes the studentized statistic under label shuffles, enumerating all
assignments when feasible and falling back to seeded Monte-Carlo sampling
otherwise.  The effect size is the stochastic superiority estimate
P(X < Y) + 0.5 * P(X = Y), with ties split evenly via midranks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.stats import rankdata, t as t_dist

from .errors import ValidationError


@dataclass(frozen=True)
class BMTestResult:
    statistic: float | None      # studentized statistic (None when degenerate)
    df: float | None             # Satterthwaite df (analytic mode)
    p_value: float
    p_hat: float                 # stochastic superiority P(X<Y) + 0.5 P(X=Y)
    mode: str                    # "analytic" | "permutation"
    resamples: int | None = None
    fallback_from_analytic: bool = False


def stochastic_superiority(x: Sequence[float], y: Sequence[float]) -> float:
    """Estimate P(X < Y) + 0.5 P(X = Y) from pooled midranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    ranks = rankdata(np.concatenate([x, y]), method="average")
    mean_rank_y = ranks[n:].mean()
    return float((mean_rank_y - (m + 1) / 2.0) / n)


def _bm_statistic(pooled: np.ndarray, n: int) -> tuple[float, float | None]:
    """Studentized statistic and df for the first-n/rest split of ``pooled``."""
    m = len(pooled) - n
    ranks = rankdata(pooled, method="average")
    rx = rankdata(pooled[:n], method="average")
    ry = rankdata(pooled[n:], method="average")
    mean_x = ranks[:n].mean()
    mean_y = ranks[n:].mean()
    v1 = np.square(ranks[:n] - rx - mean_x + (n + 1) / 2.0).sum() / (n - 1)
    v2 = np.square(ranks[n:] - ry - mean_y + (m + 1) / 2.0).sum() / (m - 1)
    pooled_var = n * v1 + m * v2
    if pooled_var <= 0:
        if mean_y == mean_x:
            return 0.0, None
        return math.copysign(math.inf, mean_y - mean_x), None
    statistic = n * m * (mean_y - mean_x) / ((n + m) * math.sqrt(pooled_var))
    df = pooled_var ** 2 / ((n * v1) ** 2 / (n - 1) + (m * v2) ** 2 / (m - 1))
    return float(statistic), float(df)


def brunner_munzel(
    x: Sequence[float],
    y: Sequence[float],
    mode: str = "analytic",
    resamples: int = 10_000,
    seed: int = 0,
    enumerate_all: bool | None = None,
) -> BMTestResult:
    """Two-sided test of H0: P(X < Y) = P(X > Y).

    ``mode="analytic"`` needs at least two observations per sample and
    non-degenerate rank variances; degenerate variances fall back to the
    permutation mode automatically (flagged in the result).  In permutation
    mode all label assignments are enumerated when their number is at most
    ``resamples`` (or when forced via ``enumerate_all``); otherwise the
    permutation distribution is sampled with the given seed.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mode not in ("analytic", "permutation"):
        raise ValidationError(f"unknown mode {mode!r}")
    if len(x) < 2 or len(y) < 2:
        raise ValidationError("both samples need at least two observations")
    p_hat = stochastic_superiority(x, y)
    pooled = np.concatenate([x, y])
    n = len(x)
    statistic, df = _bm_statistic(pooled, n)

    if mode == "analytic":
        if df is not None and math.isfinite(statistic):
            p = min(1.0, 2.0 * float(t_dist.sf(abs(statistic), df)))
            return BMTestResult(statistic, df, p, p_hat, "analytic")
        return _permutation_test(pooled, n, statistic, p_hat, resamples, seed,
                                 enumerate_all, fallback=True)
    return _permutation_test(pooled, n, statistic, p_hat, resamples, seed,
                             enumerate_all, fallback=False)


def _abs_ge(a: float, b: float, tol: float = 1e-12) -> bool:
    """abs(a) >= abs(b) with a tolerance for rank-arithmetic rounding."""
    if math.isinf(b):
        return math.isinf(a)
    if math.isinf(a):
        return True
    return abs(a) >= abs(b) - tol


def _permutation_test(
    pooled: np.ndarray,
    n: int,
    observed: float,
    p_hat: float,
    resamples: int,
    seed: int,
    enumerate_all: bool | None,
    fallback: bool,
) -> BMTestResult:
    total = len(pooled)
    n_splits = math.comb(total, n)
    do_enumerate = n_splits <= resamples if enumerate_all is None else enumerate_all

    if do_enumerate:
        hits = 0
        for idx in combinations(range(total), n):
            mask = np.zeros(total, dtype=bool)
            mask[list(idx)] = True
            perm = np.concatenate([pooled[mask], pooled[~mask]])
            stat, _ = _bm_statistic(perm, n)
            if _abs_ge(stat, observed):
                hits += 1
        p = hits / n_splits
        count = n_splits
    else:
        rng = np.random.default_rng(seed)
        hits = 0
        for _ in range(resamples):
            perm = pooled[rng.permutation(total)]
            stat, _ = _bm_statistic(perm, n)
            if _abs_ge(stat, observed):
                hits += 1
        p = (hits + 1) / (resamples + 1)
        count = resamples
    return BMTestResult(
        statistic=observed if math.isfinite(observed) else None,
        df=None,
        p_value=float(p),
        p_hat=p_hat,
        mode="permutation",
        resamples=count,
        fallback_from_analytic=fallback,
    )


OPINION_LEVELS = ("negative", "neutral", "positive")


def encode_opinion(opinion: str) -> int | None:
    """Ordinal coding negative=0, neutral=1, positive=2; absent -> None."""
    if opinion == "absent" or opinion == "":
        return None
    try:
        return OPINION_LEVELS.index(opinion)
    except ValueError:
        raise ValidationError(f"unknown opinion {opinion!r}") from None


def format_bm(result: BMTestResult, permuted_label: bool = False) -> str:
    """Render a result in the reporting style used for these tests.

    Examples: ``p̂*(434.690) = -3.351, p < .001, p̂″ = 0.589`` or, for
    permutation results, ``permuted Brunner-Munzel, p = .713``.
    """
    p = result.p_value
    p_text = "p < .001" if p < 0.001 else f"p = {p:.3f}".replace("0.", ".", 1)
    if result.mode == "permutation" or permuted_label:
        return f"permuted Brunner-Munzel, {p_text}, p̂″ = {result.p_hat:.3f}"
    df = result.df
    df_text = f"{df:.0f}" if abs(df - round(df)) < 5e-4 else f"{df:.3f}"
    return (f"p̂*({df_text}) = {result.statistic:.3f}, {p_text}, "
            f"p̂″ = {result.p_hat:.3f}")


@dataclass(frozen=True)
class ClusterComparison:
    cluster_index: int
    variable: str
    result: BMTestResult | None
    reason: str | None = None  # set when the comparison is not computable

    @property
    def computable(self) -> bool:
        return self.result is not None


def compare_cluster(
    member_values: Sequence[float],
    rest_values: Sequence[float],
    cluster_index: int,
    variable: str,
    mode: str = "analytic",
    resamples: int = 10_000,
    seed: int = 0,
) -> ClusterComparison:
    """Brunner-Munzel comparison of one cluster against all other students.

    Too-small samples are reported as not computable rather than skipped.
    """
    members = [v for v in member_values if v is not None]
    rest = [v for v in rest_values if v is not None]
    if len(members) < 2 or len(rest) < 2:
        return ClusterComparison(
            cluster_index, variable, None,
            reason=f"needs >= 2 values per side, got {len(members)} vs {len(rest)}",
        )
    result = brunner_munzel(members, rest, mode=mode, resamples=resamples, seed=seed)
    return ClusterComparison(cluster_index, variable, result)


def comparisons_to_csv(comparisons: Sequence[ClusterComparison]) -> str:
    lines = ["cluster,variable,mode,statistic,df,p_value,p_hat,resamples,note"]
    for c in comparisons:
        if c.result is None:
            lines.append(f"{c.cluster_index},{c.variable},,,,,,,not computable: {c.reason}")
            continue
        r = c.result
        stat = "" if r.statistic is None else repr(r.statistic)
        df = "" if r.df is None else repr(r.df)
        res = "" if r.resamples is None else str(r.resamples)
        note = "fallback" if r.fallback_from_analytic else ""
        lines.append(
            f"{c.cluster_index},{c.variable},{r.mode},{stat},{df},"
            f"{repr(r.p_value)},{repr(r.p_hat)},{res},{note}"
        )
    return "\n".join(lines) + "\n"
