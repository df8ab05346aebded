"""Small-sample hypothesis tests, implemented from scratch.

Covers the comparison procedure used to judge per-seed F1 vectors of two
experiment arms: Levene's variance-homogeneity test, the Shapiro-Wilk
normality test (Royston's approximation for 3 <= n <= 5000), the
Mann-Whitney U test with exact small-sample p-values by enumeration, and
the two-sample t-test fallbacks. ``compare_arms`` chains them and records
every intermediate result in a DecisionTrace.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
import numpy as np

from ctcbench.stats.special import f_sf, normal_cdf, normal_ppf, normal_sf, student_t_sf

# Pooled size at or below which Mann-Whitney p-values are computed by full
# enumeration of rank assignments.
EXACT_ENUMERATION_LIMIT = 12


class StatsError(ValueError):
    pass


class DegenerateDataError(StatsError):
    """The requested statistic is undefined for this data (e.g. zero spread)."""


class PValueMethod(str, Enum):
    EXACT = "EXACT"
    APPROXIMATE = "APPROXIMATE"


class Center(str, Enum):
    MEAN = "MEAN"
    MEDIAN = "MEDIAN"


class Alternative(str, Enum):
    TWO_SIDED = "TWO_SIDED"
    LESS = "LESS"
    GREATER = "GREATER"


@dataclass(frozen=True)
class Sample:
    values: tuple[float, ...]
    group_label: str = ""

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise StatsError(f"sample {self.group_label!r} contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)


def _as_sample(x, label: str = "") -> Sample:
    if isinstance(x, Sample):
        return x
    return Sample(values=tuple(float(v) for v in x), group_label=label)


@dataclass(frozen=True)
class StatTestResult:
    test_name: str
    statistic: float
    p_value: float
    method: PValueMethod
    alpha: float = 0.05
    reject_null: bool = False
    df: tuple[float, ...] | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise StatsError(f"p-value {self.p_value} outside [0,1]")
        object.__setattr__(self, "reject_null", bool(self.p_value < self.alpha))

    def to_dict(self) -> dict:
        return {
            "test_name": self.test_name,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "method": self.method.value,
            "alpha": self.alpha,
            "reject_null": self.reject_null,
            "df": list(self.df) if self.df is not None else None,
            "notes": list(self.notes),
        }


# --------------------------------------------------------------------------
# Levene
# --------------------------------------------------------------------------

def levene_test(a, b, center: Center = Center.MEAN, alpha: float = 0.05) -> StatTestResult:
    """Levene's test for equal variances of two groups.

    The statistic is the one-way ANOVA F on absolute deviations from the
    group center (mean for classic Levene, median for the Brown-Forsythe
    variant), with (1, n1+n2-2) degrees of freedom.
    """
    a, b = _as_sample(a, "a"), _as_sample(b, "b")
    if len(a) < 2 or len(b) < 2:
        raise StatsError(f"levene requires >= 2 values per group, got {len(a)} and {len(b)}")
    groups = [np.asarray(a.values, dtype=float), np.asarray(b.values, dtype=float)]
    if center is Center.MEAN:
        devs = [np.abs(g - g.mean()) for g in groups]
    else:
        devs = [np.abs(g - np.median(g)) for g in groups]

    n1, n2 = len(a), len(b)
    n_total = n1 + n2
    zbar = np.concatenate(devs).mean()
    group_means = [d.mean() for d in devs]
    ss_between = sum(len(d) * (gm - zbar) ** 2 for d, gm in zip(devs, group_means))
    ss_within = sum(((d - gm) ** 2).sum() for d, gm in zip(devs, group_means))

    notes = (f"center={center.value}",)
    if ss_within == 0.0 and ss_between == 0.0:
        raise DegenerateDataError("levene statistic undefined: all deviations are zero in both groups")
    if ss_within == 0.0:
        return StatTestResult(
            "levene", float("inf"), 0.0, PValueMethod.APPROXIMATE, alpha,
            df=(1.0, float(n_total - 2)), notes=notes + ("zero within-group deviation spread",),
        )
    stat = (n_total - 2) * ss_between / ss_within
    p = f_sf(stat, 1.0, float(n_total - 2))
    return StatTestResult("levene", float(stat), float(p), PValueMethod.APPROXIMATE, alpha,
                          df=(1.0, float(n_total - 2)), notes=notes)


# --------------------------------------------------------------------------
# Shapiro-Wilk (Royston's algorithm)
# --------------------------------------------------------------------------

# Polynomial coefficients in ascending powers.
_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_SW_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_SW_C6 = (-0.4803, -0.082676, 0.0030302)
_SW_G = (-2.273, 0.459)


def _poly(coeffs: tuple[float, ...], x: float) -> float:
    result = 0.0
    for c in reversed(coeffs):
        result = result * x + c
    return result


def _sw_coefficients(n: int) -> np.ndarray:
    """Antisymmetric weight vector for the W statistic of a size-n sample."""
    if n == 3:
        return np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    n2 = n // 2
    lower = np.array([normal_ppf((i - 0.375) / (n + 0.25)) for i in range(1, n2 + 1)])
    if n % 2:
        m = np.concatenate([lower, [0.0], -lower[::-1]])
    else:
        m = np.concatenate([lower, -lower[::-1]])
    mss = 2.0 * float(lower @ lower)
    u = 1.0 / math.sqrt(n)
    a_last = _poly(_SW_C1, u) + m[-1] / math.sqrt(mss)
    if n > 5:
        a_last2 = _poly(_SW_C2, u) + m[-2] / math.sqrt(mss)
        phi = (mss - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (1.0 - 2.0 * a_last**2 - 2.0 * a_last2**2)
        a = m / math.sqrt(phi)
        a[-1], a[0] = a_last, -a_last
        a[-2], a[1] = a_last2, -a_last2
    else:
        phi = (mss - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_last**2)
        a = m / math.sqrt(phi)
        a[-1], a[0] = a_last, -a_last
    return a


def shapiro_wilk(x, alpha: float = 0.05) -> StatTestResult:
    """Shapiro-Wilk normality test for 3 <= n <= 5000.

    W is the squared correlation between the ordered sample and the expected
    normal order-statistic weights; the p-value uses Royston's normalizing
    transformation (exact for n == 3).
    """
    sample = _as_sample(x, "x")
    n = len(sample)
    if n < 3 or n > 5000:
        raise StatsError(f"shapiro-wilk requires 3 <= n <= 5000, got {n}")
    xs = np.sort(np.asarray(sample.values, dtype=float))
    span = xs[-1] - xs[0]
    if span == 0.0:
        raise DegenerateDataError("shapiro-wilk W undefined: all values identical")

    a = _sw_coefficients(n)
    xc = xs - xs.mean()
    w = float((a @ xc) ** 2 / (xc @ xc))
    w = min(w, 1.0)

    if n == 3:
        # Exact for n == 3.
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        p = min(max(p, 0.0), 1.0)
        return StatTestResult("shapiro-wilk", w, p, PValueMethod.EXACT, alpha)

    w1 = 1.0 - w
    if w1 <= 0.0:
        return StatTestResult("shapiro-wilk", w, 1.0, PValueMethod.APPROXIMATE, alpha,
                              notes=("W numerically 1",))
    y = math.log(w1)
    if n <= 11:
        gamma = _poly(_SW_G, float(n))
        if y >= gamma:
            return StatTestResult("shapiro-wilk", w, 1e-19, PValueMethod.APPROXIMATE, alpha,
                                  notes=("far tail",))
        y = -math.log(gamma - y)
        mu = _poly(_SW_C3, float(n))
        sigma = math.exp(_poly(_SW_C4, float(n)))
    else:
        ln_n = math.log(float(n))
        mu = _poly(_SW_C5, ln_n)
        sigma = math.exp(_poly(_SW_C6, ln_n))
    p = normal_sf((y - mu) / sigma)
    return StatTestResult("shapiro-wilk", w, float(p), PValueMethod.APPROXIMATE, alpha)


# --------------------------------------------------------------------------
# Mann-Whitney U
# --------------------------------------------------------------------------

def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def mann_whitney_u(a, b, alternative: Alternative = Alternative.TWO_SIDED,
                   alpha: float = 0.05) -> StatTestResult:
    """Mann-Whitney U test.

    The statistic is U(a, b) = #{a_i > b_j} counting ties as 1/2 (computed
    from midrank sums). One-sided alternatives describe the second sample:
    GREATER tests whether ``b`` is stochastically greater than ``a`` (small
    U is evidence), LESS the reverse. With a pooled size of at most
    EXACT_ENUMERATION_LIMIT the p-value is exact, by enumerating all
    assignments of the pooled values to the two groups; the two-sided exact
    p is P(|U - n1*n2/2| >= |u_obs - n1*n2/2|). Larger samples use the
    normal approximation with tie-corrected variance and continuity
    correction.
    """
    a, b = _as_sample(a, "a"), _as_sample(b, "b")
    n1, n2 = len(a), len(b)
    if n1 < 1 or n2 < 1:
        raise StatsError("mann-whitney requires at least one value per group")
    pooled = np.concatenate([np.asarray(a.values, float), np.asarray(b.values, float)])
    ranks = _midranks(pooled)
    u_obs = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    mu = n1 * n2 / 2.0

    tie_note = "midranks for ties" if len(np.unique(pooled)) < len(pooled) else "no ties"

    if n1 + n2 <= EXACT_ENUMERATION_LIMIT:
        u_all = _enumerate_u(ranks, n1)
        if alternative is Alternative.TWO_SIDED:
            p = float(np.mean(np.abs(u_all - mu) >= abs(u_obs - mu)))
        elif alternative is Alternative.GREATER:
            p = float(np.mean(u_all <= u_obs))
        else:
            p = float(np.mean(u_all >= u_obs))
        return StatTestResult("mann-whitney", u_obs, p, PValueMethod.EXACT, alpha,
                              notes=(tie_note, f"enumeration over C({n1 + n2},{n1}) assignments"))

    # Normal approximation with tie correction and continuity correction.
    n = n1 + n2
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts).sum()) / (n * (n - 1)))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0.0:
        return StatTestResult("mann-whitney", u_obs, 1.0, PValueMethod.APPROXIMATE, alpha,
                              notes=(tie_note, "zero variance: all pooled values identical"))
    sd = math.sqrt(var)
    if alternative is Alternative.TWO_SIDED:
        z = (abs(u_obs - mu) - 0.5) / sd
        p = min(1.0, 2.0 * normal_sf(z))
    elif alternative is Alternative.GREATER:
        p = normal_cdf((u_obs - mu + 0.5) / sd)
    else:
        p = normal_sf((u_obs - mu - 0.5) / sd)
    return StatTestResult("mann-whitney", u_obs, float(p), PValueMethod.APPROXIMATE, alpha,
                          notes=(tie_note, "normal approximation with continuity correction"))


def _enumerate_u(ranks: np.ndarray, n1: int) -> np.ndarray:
    """U statistic of every way to assign n1 of the pooled values to group a."""
    idx = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(len(ranks)), n1)),
        dtype=np.intp,
    ).reshape(-1, n1)
    return ranks[idx].sum(axis=1) - n1 * (n1 + 1) / 2.0


# --------------------------------------------------------------------------
# Two-sample t-test
# --------------------------------------------------------------------------

def two_sample_t_test(a, b, pooled: bool = True, alpha: float = 0.05) -> StatTestResult:
    """Two-sided two-sample t-test (pooled variance, or Welch when not)."""
    a, b = _as_sample(a, "a"), _as_sample(b, "b")
    if len(a) < 2 or len(b) < 2:
        raise StatsError(f"t-test requires >= 2 values per group, got {len(a)} and {len(b)}")
    xa, xb = np.asarray(a.values, float), np.asarray(b.values, float)
    n1, n2 = len(xa), len(xb)
    va, vb = xa.var(ddof=1), xb.var(ddof=1)
    diff = xa.mean() - xb.mean()
    name = "t-test (pooled)" if pooled else "t-test (welch)"
    if pooled:
        sp2 = ((n1 - 1) * va + (n2 - 1) * vb) / (n1 + n2 - 2)
        se2 = sp2 * (1.0 / n1 + 1.0 / n2)
        df = float(n1 + n2 - 2)
    else:
        se2 = va / n1 + vb / n2
        if se2 > 0.0:
            df = se2**2 / ((va / n1) ** 2 / (n1 - 1) + (vb / n2) ** 2 / (n2 - 1))
        else:
            df = float(n1 + n2 - 2)
    if se2 == 0.0:
        if diff == 0.0:
            return StatTestResult(name, 0.0, 1.0, PValueMethod.APPROXIMATE, alpha, df=(df,),
                                  notes=("zero variance, equal means",))
        return StatTestResult(name, math.copysign(math.inf, diff), 0.0, PValueMethod.APPROXIMATE,
                              alpha, df=(df,), notes=("zero variance, unequal means",))
    t = diff / math.sqrt(se2)
    p = 2.0 * student_t_sf(abs(t), df)
    return StatTestResult(name, float(t), min(float(p), 1.0), PValueMethod.APPROXIMATE, alpha, df=(df,))


# --------------------------------------------------------------------------
# Arm comparison decision procedure
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DecisionTrace:
    """Every intermediate result of the arm-comparison procedure.

    Branching: Levene first (variance homogeneity), then Shapiro-Wilk on
    each group and on the pooled values. If any normality test rejects (or
    cannot be computed), the final test is Mann-Whitney; otherwise the
    two-sample t-test, pooled when Levene did not reject and Welch when it
    did.
    """

    levene: StatTestResult | None
    shapiro_a: StatTestResult | None
    shapiro_b: StatTestResult | None
    shapiro_pooled: StatTestResult | None
    normality_rejected: bool
    selected_test: str
    final: StatTestResult
    alpha: float
    notes: tuple[str, ...] = ()

    @property
    def reject_null(self) -> bool:
        return self.final.reject_null

    def to_dict(self) -> dict:
        as_dict = lambda r: r.to_dict() if r is not None else None
        return {
            "levene": as_dict(self.levene),
            "shapiro_a": as_dict(self.shapiro_a),
            "shapiro_b": as_dict(self.shapiro_b),
            "shapiro_pooled": as_dict(self.shapiro_pooled),
            "normality_rejected": self.normality_rejected,
            "selected_test": self.selected_test,
            "final": self.final.to_dict(),
            "alpha": self.alpha,
            "notes": list(self.notes),
        }

    def summary_text(self) -> str:
        lines = [f"{'test':<24}{'statistic':>12}{'df':>12}{'p-value':>12}"]

        def fmt(result: StatTestResult | None, name: str) -> str:
            if result is None:
                return f"{name:<24}{'-':>12}{'-':>12}{'-':>12}  (degenerate)"
            df = ",".join(f"{v:g}" for v in result.df) if result.df else "-"
            return f"{name:<24}{result.statistic:>12.4f}{df:>12}{result.p_value:>12.4f}"

        lines.append(fmt(self.levene, "levene"))
        lines.append(fmt(self.shapiro_a, "shapiro-wilk (a)"))
        lines.append(fmt(self.shapiro_b, "shapiro-wilk (b)"))
        lines.append(fmt(self.shapiro_pooled, "shapiro-wilk (pooled)"))
        lines.append(fmt(self.final, self.selected_test))
        verdict = "reject H0" if self.final.reject_null else "fail to reject H0"
        lines.append(f"decision: {self.selected_test}, p={self.final.p_value:.4f} -> {verdict} at alpha={self.alpha}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def compare_arms(f1_a, f1_b, alpha: float = 0.05) -> DecisionTrace:
    """Compare two arms' per-seed F1 vectors, choosing the test adaptively.

    Degenerate sub-tests (zero spread) are recorded as missing entries and
    push the procedure to the nonparametric branch rather than failing, so a
    complete trace is always produced for valid inputs.
    """
    a, b = _as_sample(f1_a, "a"), _as_sample(f1_b, "b")
    notes: list[str] = []

    levene = None
    try:
        levene = levene_test(a, b, Center.MEAN, alpha)
    except DegenerateDataError as exc:
        notes.append(f"levene degenerate: {exc}")

    shapiros: dict[str, StatTestResult | None] = {}
    degenerate_normality = False
    for key, sample in (("a", a), ("b", b), ("pooled", Sample(a.values + b.values, "pooled"))):
        try:
            shapiros[key] = shapiro_wilk(sample, alpha)
        except DegenerateDataError as exc:
            shapiros[key] = None
            degenerate_normality = True
            notes.append(f"shapiro-wilk ({key}) degenerate: {exc}")

    rejected = any(r is not None and r.reject_null for r in shapiros.values())
    use_nonparametric = rejected or degenerate_normality
    if degenerate_normality:
        notes.append("normality not assessable; falling back to Mann-Whitney")

    if use_nonparametric:
        selected = "mann-whitney"
        final = mann_whitney_u(a, b, Alternative.TWO_SIDED, alpha)
    else:
        pooled_variances = levene is None or not levene.reject_null
        selected = "t-test (pooled)" if pooled_variances else "t-test (welch)"
        final = two_sample_t_test(a, b, pooled=pooled_variances, alpha=alpha)

    return DecisionTrace(
        levene=levene,
        shapiro_a=shapiros["a"],
        shapiro_b=shapiros["b"],
        shapiro_pooled=shapiros["pooled"],
        normality_rejected=rejected,
        selected_test=selected,
        final=final,
        alpha=alpha,
        notes=tuple(notes),
    )
