from ctcbench.stats.special import (
    f_sf,
    normal_cdf,
    normal_ppf,
    normal_sf,
    regularized_incomplete_beta,
    student_t_sf,
)
from ctcbench.stats.tests import (
    Alternative,
    Center,
    DecisionTrace,
    DegenerateDataError,
    Sample,
    StatTestResult,
    StatsError,
    PValueMethod,
    compare_arms,
    levene_test,
    mann_whitney_u,
    shapiro_wilk,
    two_sample_t_test,
)

__all__ = [
    "Alternative",
    "Center",
    "DecisionTrace",
    "DegenerateDataError",
    "Sample",
    "StatTestResult",
    "StatsError",
    "PValueMethod",
    "compare_arms",
    "levene_test",
    "mann_whitney_u",
    "shapiro_wilk",
    "two_sample_t_test",
    "f_sf",
    "normal_cdf",
    "normal_ppf",
    "normal_sf",
    "regularized_incomplete_beta",
    "student_t_sf",
]
