"""Area-level auxiliary variable construction.

Three builders feed the area-level model: the adjusted-headcount poverty
aggregation over a household deprivation matrix, the log-reciprocal
transform of a poverty incidence vector, and least-squares residualization
of one area index on another.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InputError

WEIGHT_SUM_TOL = 1e-12


@dataclass
class AreaCovariateTable:
    """D-row table of named numeric columns keyed by domain."""

    domain_ids: list[str]
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.domain_ids = [str(d) for d in self.domain_ids]
        if len(set(self.domain_ids)) != len(self.domain_ids):
            raise InputError("duplicate domain_id in area table")
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        for name, col in self.columns.items():
            if col.shape != (len(self.domain_ids),):
                raise InputError(
                    f"column '{name}' has length {col.shape}, expected {len(self.domain_ids)}"
                )

    @property
    def n_domains(self) -> int:
        return len(self.domain_ids)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise InputError(
                f"area table has no column '{name}' (have: {', '.join(sorted(self.columns))})"
            )
        return self.columns[name]

    def add_column(self, name: str, values) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_domains,):
            raise InputError(f"column '{name}' has wrong length")
        self.columns[name] = values


@dataclass
class DeprivationMatrix:
    """Household-by-indicator deprivation data for poverty aggregation.

    Indicator weights must be non-negative and sum to 1 (tolerance 1e-12);
    the cutoff is the weighted-score threshold above which a household
    counts as poor.
    """

    household_weights: np.ndarray
    indicators: np.ndarray
    indicator_weights: np.ndarray
    cutoff: float = 0.30

    def __post_init__(self):
        self.household_weights = np.asarray(self.household_weights, dtype=float)
        self.indicators = np.asarray(self.indicators, dtype=float)
        self.indicator_weights = np.asarray(self.indicator_weights, dtype=float)
        n = self.household_weights.shape[0]
        if n == 0:
            raise ValueError("empty household set")
        if self.indicators.ndim != 2 or self.indicators.shape[0] != n:
            raise ValueError("indicators must be a households x indicators matrix")
        if not np.isin(self.indicators, (0.0, 1.0)).all():
            raise ValueError("indicator entries must be 0 or 1")
        if (self.household_weights <= 0).any():
            raise ValueError("household weights must be positive")
        if self.indicator_weights.shape != (self.indicators.shape[1],):
            raise ValueError("one weight per indicator required")
        if (self.indicator_weights < 0).any():
            raise ValueError("indicator weights must be non-negative")
        if abs(self.indicator_weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("indicator weights must sum to 1")
        if not 0.0 < self.cutoff <= 1.0:
            raise ValueError("cutoff must lie in (0, 1]")


class AlkireFosterResult(NamedTuple):
    incidence: float
    intensity: float
    ipm: float


def alkire_foster(dep: DeprivationMatrix) -> AlkireFosterResult:
    """Adjusted headcount aggregation of a deprivation matrix.

    Household score ``c_i`` is the indicator-weighted deprivation sum; a
    household is poor when ``c_i >= cutoff``.  Incidence H is the
    household-weighted share of poor households, intensity A the weighted
    mean score among the poor (0 when nobody is poor), and the index is
    ``H * A``.
    """
    scores = dep.indicators @ dep.indicator_weights
    poor = scores >= dep.cutoff
    hw = dep.household_weights
    total_w = hw.sum()
    poor_w = hw[poor].sum()
    incidence = poor_w / total_w
    intensity = float((hw[poor] * scores[poor]).sum() / poor_w) if poor_w > 0 else 0.0
    return AlkireFosterResult(
        incidence=float(incidence), intensity=intensity, ipm=float(incidence * intensity)
    )


def log_reciprocal(incidence: Sequence[float] | np.ndarray) -> np.ndarray:
    """ln(1/incidence) elementwise; every entry must lie in (0, 1]."""
    inc = np.asarray(incidence, dtype=float)
    if (inc <= 0.0).any() or (inc > 1.0).any():
        bad = inc[(inc <= 0.0) | (inc > 1.0)]
        raise ValueError(f"incidence entries must lie in (0, 1], got {bad[:5]}")
    return -np.log(inc)


def ols_residualize(
    y: Sequence[float] | np.ndarray, x: Sequence[float] | np.ndarray
) -> np.ndarray:
    """Residuals of the least-squares fit of y on an intercept and x.

    With a 1-D ``x`` this is the simple regression ``y = a + b*x``; a 2-D
    ``x`` (D rows, k regressors) is also accepted.  Residuals are
    orthogonal to the intercept and every regressor.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.ndim != 1:
        raise ValueError("y must be a vector")
    n = y.shape[0]
    if n < 3:
        raise ValueError("need at least 3 observations")
    if x.ndim == 1:
        if x.shape[0] != n:
            raise ValueError("x and y must have equal length")
        if np.ptp(x) == 0.0:
            raise ValueError("x is constant; regression is rank deficient")
        xbar = x.mean()
        ybar = y.mean()
        sxx = ((x - xbar) ** 2).sum()
        slope = ((x - xbar) * (y - ybar)).sum() / sxx
        intercept = ybar - slope * xbar
        return y - intercept - slope * x
    if x.ndim == 2:
        if x.shape[0] != n:
            raise ValueError("x and y must have matching rows")
        design = np.column_stack([np.ones(n), x])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise ValueError("regressors are rank deficient")
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        return y - design @ coef
    raise ValueError("x must be 1-D or 2-D")


def add_log_reciprocal(
    table: AreaCovariateTable, source: str = "incidence", name: str = "log_ri"
) -> None:
    """Append the log-reciprocal of an incidence column to the table."""
    table.add_column(name, log_reciprocal(table.column(source)))


def add_reciprocal(
    table: AreaCovariateTable, source: str = "incidence", name: str = "ri"
) -> None:
    """Append the raw reciprocal of an incidence column (untransformed form)."""
    inc = table.column(source)
    if (inc <= 0.0).any():
        raise ValueError("incidence entries must be positive")
    table.add_column(name, 1.0 / inc)


def add_residualized(
    table: AreaCovariateTable,
    y_col: str = "valorization",
    x_col: str = "population_projection",
    name: str = "zeta",
    standardize: bool = False,
) -> None:
    """Append residuals of one column regressed on another.

    ``standardize`` divides the residuals by their sample standard
    deviation; the default keeps them on the original scale.
    """
    resid = ols_residualize(table.column(y_col), table.column(x_col))
    if standardize:
        sd = resid.std(ddof=1)
        if sd == 0.0:
            raise ValueError("residuals are identically zero; cannot standardize")
        resid = resid / sd
    table.add_column(name, resid)
