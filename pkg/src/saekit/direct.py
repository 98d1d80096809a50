"""Design-based direct estimation of domain means.

Implements the weighted ratio (Hajek) mean with its design variance and
relative standard error, plus the planning-stage sample-size formula for a
clustered design.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .errors import DegenerateDesignWarning, SingleUnitDomainWarning


@dataclass(frozen=True)
class DomainDirectEstimate:
    """Direct estimate of a single domain's mean.

    ``var_hat`` is NaN when the domain had a single sampled unit and the
    variance estimator is undefined; such domains must not feed the
    area-level model.
    """

    domain_id: str
    y_bar_hat: float
    n_hat: float
    var_hat: float
    eer: float
    n_sample: int

    @property
    def has_variance(self) -> bool:
        return not math.isnan(self.var_hat)


def hajek_mean(
    weights: Sequence[float], values: Sequence[float], domain_id: str = ""
) -> DomainDirectEstimate:
    """Weighted ratio mean of one domain with its design variance.

    The mean is ``sum(w_j * y_j) / N_hat`` with ``N_hat = sum(w_j)``; the
    variance is ``(1/N_hat^2) * sum(w_j * (w_j - 1) * (y_j - mean)^2)`` and
    the relative standard error is ``sqrt(var) / mean``.

    Sums are accumulated with ``math.fsum`` (correctly rounded), so any
    re-implementation of the same expressions reproduces the results
    bit-for-bit, independent of summation order.

    Raises ``ValueError`` with fewer than 2 units (variance undefined) or
    on non-positive weights.  Warns when every weight equals 1: the
    variance collapses to 0, which usually signals an unweighted file.
    """
    w = [float(x) for x in weights]
    y = [float(x) for x in values]
    if len(w) != len(y):
        raise ValueError("weights and values must have equal length")
    if len(w) < 2:
        raise ValueError(
            f"domain {domain_id!r}: need at least 2 units for a variance estimate, got {len(w)}"
        )
    if any(wj <= 0 for wj in w):
        raise ValueError(f"domain {domain_id!r}: all weights must be > 0")

    if all(wj == 1.0 for wj in w):
        warnings.warn(
            f"domain {domain_id!r}: all weights equal 1, variance estimate is 0 "
            "(degenerate design)",
            DegenerateDesignWarning,
            stacklevel=2,
        )

    n_hat = math.fsum(w)
    y_bar = math.fsum(wj * yj for wj, yj in zip(w, y)) / n_hat
    var = math.fsum(wj * (wj - 1.0) * (yj - y_bar) ** 2 for wj, yj in zip(w, y)) / n_hat**2
    if var < 0.0:
        # Only possible with weights below 1, where w*(w-1) goes negative.
        warnings.warn(
            f"domain {domain_id!r}: weights below 1 produced a negative variance "
            "estimate; clamping to 0",
            DegenerateDesignWarning,
            stacklevel=2,
        )
        var = 0.0
    eer = math.sqrt(var) / y_bar if y_bar > 0 else float("nan")
    return DomainDirectEstimate(
        domain_id=domain_id,
        y_bar_hat=y_bar,
        n_hat=n_hat,
        var_hat=var,
        eer=eer,
        n_sample=len(w),
    )


def direct_estimates(
    units: Iterable[tuple[str, float, float]]
) -> list[DomainDirectEstimate]:
    """Group (domain_id, weight, value) analysis units and estimate each domain.

    Domains with a single unit get a point estimate with ``var_hat = NaN``
    and a warning; callers drop them before model fitting.  Output follows
    first-appearance domain order.
    """
    grouped: dict[str, tuple[list[float], list[float]]] = {}
    for domain_id, weight, value in units:
        bucket = grouped.setdefault(str(domain_id), ([], []))
        bucket[0].append(float(weight))
        bucket[1].append(float(value))

    out = []
    for domain_id, (w, y) in grouped.items():
        if len(w) == 1:
            warnings.warn(
                f"domain {domain_id!r}: single sampled unit, variance unavailable",
                SingleUnitDomainWarning,
                stacklevel=2,
            )
            out.append(
                DomainDirectEstimate(
                    domain_id=domain_id,
                    y_bar_hat=y[0],
                    n_hat=w[0],
                    var_hat=float("nan"),
                    eer=float("nan"),
                    n_sample=1,
                )
            )
        else:
            out.append(hajek_mean(w, y, domain_id=domain_id))
    return out


@dataclass(frozen=True)
class SampleSizeSpec:
    """Inputs of the planning sample-size formula for one domain.

    ``n_population``: units in the domain; ``p``: anticipated prevalence of
    the key indicator; ``q`` must equal ``1 - p`` exactly; ``deff``: design
    effect of the clustered design; ``esrel``: target relative standard
    error.
    """

    n_population: int
    p: float
    q: float
    deff: float
    esrel: float

    def __post_init__(self):
        if self.n_population <= 0:
            raise ValueError("n_population must be positive")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.q != 1.0 - self.p:
            raise ValueError("q must equal 1 - p exactly")
        if self.deff <= 0.0:
            raise ValueError("deff must be positive")
        if not 0.0 < self.esrel < 1.0:
            raise ValueError("esrel must lie in (0, 1)")

    @classmethod
    def from_prevalence(
        cls, n_population: int, p: float, deff: float, esrel: float
    ) -> "SampleSizeSpec":
        return cls(n_population=n_population, p=p, q=1.0 - p, deff=deff, esrel=esrel)


class SampleSizeResult(NamedTuple):
    n_exact: float
    n_planning: int


def sample_size(spec: SampleSizeSpec) -> SampleSizeResult:
    """Required domain sample size under the clustered design.

    ``n = N*P*Q*deff / (N*(esrel*P)^2 + P*Q*deff)``, where ``esrel*P`` is
    the absolute standard-error target.  Returns the unrounded value and
    its ceiling for planning.
    """
    big_n = float(spec.n_population)
    numer = big_n * spec.p * spec.q * spec.deff
    denom = big_n * (spec.esrel * spec.p) ** 2 + spec.p * spec.q * spec.deff
    n_exact = numer / denom
    return SampleSizeResult(n_exact=n_exact, n_planning=math.ceil(n_exact))


def deff_ratio(var_cluster: float, var_srs: float) -> float:
    """Design effect: clustered-design variance over SRS variance."""
    if var_cluster < 0.0:
        raise ValueError("var_cluster must be non-negative")
    if var_srs <= 0.0:
        raise ValueError("var_srs must be positive")
    return var_cluster / var_srs


DIRECT_TABLE_COLUMNS = ["domain_id", "y_bar_hat", "var_hat", "eer", "n_hat", "n_sample"]


def direct_table_rows(estimates: Sequence[DomainDirectEstimate]) -> list[list]:
    return [
        [e.domain_id, e.y_bar_hat, e.var_hat, e.eer, e.n_hat, e.n_sample]
        for e in estimates
    ]
