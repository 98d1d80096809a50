"""Monte Carlo harness: synthetic model data, a survey-style sampler, and
empirical validation of the analytic variance and MSE formulas.

All randomness flows through the counter-based Philox generator with
explicit seeding; every replicate gets its own substream derived from the
scenario seed and the replicate index, so results do not depend on
execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .covariates import AreaCovariateTable
from .direct import hajek_mean
from .errors import ConvergenceError
from .fayherriot import (
    AreaLevelDataset,
    dataset_from_table,
    fit_fh,
    fit_model_suite,
    prasad_rao_mse,
)

# Substream tags of the root seed: design draws, replicate noise, populations.
_STREAM_DESIGN = 0
_STREAM_REPLICATE = 1
_STREAM_POPULATION = 2

_design_cache: dict["SimScenario", tuple[np.ndarray, np.ndarray]] = {}


def substream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator on an independent substream of the root seed."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class SimScenario:
    """Generative setup for the area-level model.

    ``sigma2_d`` is either an explicit length-D profile or a ``(low,
    high)`` range sampled once per scenario.  The design matrix (intercept
    plus ``len(beta_true) - 1`` covariate columns) is likewise drawn once
    per scenario; only the area effects and sampling errors are redrawn
    each replicate.
    """

    n_domains: int
    beta_true: tuple[float, ...]
    sigma2_u_true: float
    sigma2_d: tuple[float, ...] | tuple[float, float]
    replicates: int = 1000
    seed: int = 0
    x_names: tuple[str, ...] = ()
    x_dist: str = "normal"
    x_params: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.n_domains < 2:
            raise ValueError("need at least 2 domains")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.sigma2_u_true < 0.0:
            raise ValueError("sigma2_u_true must be non-negative")
        if len(self.beta_true) < 1:
            raise ValueError("beta_true must include the intercept coefficient")
        if self.x_names and len(self.x_names) != len(self.beta_true) - 1:
            raise ValueError("one x_name per non-intercept coefficient")
        if self.x_dist not in ("normal", "uniform"):
            raise ValueError("x_dist must be 'normal' or 'uniform'")

    @property
    def covariate_names(self) -> list[str]:
        if self.x_names:
            return list(self.x_names)
        return [f"x{j}" for j in range(1, len(self.beta_true))]

    def domain_ids(self) -> list[str]:
        return [f"d{i + 1:02d}" for i in range(self.n_domains)]


def scenario_design(scenario: SimScenario) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix and sampling-variance profile, fixed across replicates."""
    cached = _design_cache.get(scenario)
    if cached is not None:
        X, sigma2_d = cached
        return X.copy(), sigma2_d.copy()
    rng = substream(scenario.seed, _STREAM_DESIGN)
    d = scenario.n_domains
    p = len(scenario.beta_true)
    a, b = scenario.x_params
    if scenario.x_dist == "normal":
        covs = rng.normal(a, b, size=(d, p - 1))
    else:
        covs = rng.uniform(a, b, size=(d, p - 1))
    X = np.column_stack([np.ones(d), covs]) if p > 1 else np.ones((d, 1))

    profile = np.asarray(scenario.sigma2_d, dtype=float)
    if profile.shape == (2,) and d != 2:
        low, high = profile
        sigma2_d = rng.uniform(low, high, size=d)
    elif profile.shape == (d,):
        sigma2_d = profile.copy()
    else:
        raise ValueError(
            "sigma2_d must be a (low, high) range or a length-D profile"
        )
    if len(_design_cache) > 64:
        _design_cache.clear()
    _design_cache[scenario] = (X, sigma2_d)
    return X.copy(), sigma2_d.copy()


def draw_fh_replicate(
    scenario: SimScenario, replicate: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One replicate draw: returns (y, theta, X, sigma2_d).

    ``theta = X beta + u`` is the realized target; ``y = theta + e`` adds
    the sampling error.  Zero variances are allowed here and produce
    exactly deterministic draws.
    """
    X, sigma2_d = scenario_design(scenario)
    rng = substream(scenario.seed, _STREAM_REPLICATE, replicate)
    u = rng.normal(0.0, math.sqrt(scenario.sigma2_u_true), size=scenario.n_domains)
    e = rng.normal(0.0, np.sqrt(sigma2_d))
    theta = X @ np.asarray(scenario.beta_true, dtype=float) + u
    return theta + e, theta, X, sigma2_d


def generate_fh_data(
    scenario: SimScenario, replicate: int = 0
) -> tuple[AreaLevelDataset, np.ndarray]:
    """One replicate as a model-ready dataset plus the true domain means."""
    y, theta, X, sigma2_d = draw_fh_replicate(scenario, replicate)
    data = AreaLevelDataset(
        domain_ids=scenario.domain_ids(),
        y=y,
        sigma2_d=sigma2_d,
        X=X,
        column_names=["intercept"] + scenario.covariate_names,
    )
    return data, theta


def scenario_table(scenario: SimScenario, replicate: int = 0) -> AreaCovariateTable:
    """Replicate draw as an area table (y, sigma2_d, named covariates)."""
    y, _, X, sigma2_d = draw_fh_replicate(scenario, replicate)
    table = AreaCovariateTable(domain_ids=scenario.domain_ids())
    table.add_column("y", y)
    table.add_column("sigma2_d", sigma2_d)
    for j, name in enumerate(scenario.covariate_names, start=1):
        table.add_column(name, X[:, j])
    return table


# ---------------------------------------------------------------------------
# Stratified cluster population and sampler
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StratumSpec:
    """One socioeconomic stratum of a domain.

    Cluster sizes are 1 + Poisson(mean - 1) households, so the requested
    mean is exact and no cluster is empty.  Household per-capita income is
    log-normal with a shared cluster effect, which makes clusters
    internally correlated (design effect above one).
    """

    clusters: int
    mean_households_per_cluster: float = 8.0
    log_income_mean: float = 0.0
    log_income_cluster_sd: float = 0.35
    log_income_within_sd: float = 0.5

    def __post_init__(self):
        if self.clusters <= 0:
            raise ValueError("clusters must be positive")
        if self.mean_households_per_cluster < 1.0:
            raise ValueError("mean household count per cluster must be >= 1")


@dataclass(frozen=True)
class DomainPopulationSpec:
    domain_id: str
    strata: tuple[StratumSpec, ...]

    def __post_init__(self):
        if not self.strata:
            raise ValueError(f"domain {self.domain_id}: needs at least one stratum")


@dataclass(frozen=True)
class PopulationSpec:
    domains: tuple[DomainPopulationSpec, ...]

    def __post_init__(self):
        if not self.domains:
            raise ValueError("population needs at least one domain")


@dataclass
class StratumFrame:
    """Realized households of one (domain, stratum) cell, grouped by cluster."""

    domain_id: str
    stratum: int
    cluster_of_household: np.ndarray  # cluster index per household
    income: np.ndarray
    n_clusters: int

    @property
    def n_households(self) -> int:
        return self.income.shape[0]


@dataclass
class Population:
    frames: list[StratumFrame]

    def domain_ids(self) -> list[str]:
        seen: list[str] = []
        for frame in self.frames:
            if frame.domain_id not in seen:
                seen.append(frame.domain_id)
        return seen

    def true_mean(self, domain_id: str) -> float:
        values = np.concatenate(
            [f.income for f in self.frames if f.domain_id == domain_id]
        )
        return float(values.mean())

    def household_count(self, domain_id: str) -> int:
        return sum(f.n_households for f in self.frames if f.domain_id == domain_id)


def generate_population(spec: PopulationSpec, seed: int = 0) -> Population:
    """Materialize household frames for every (domain, stratum) cell."""
    frames = []
    for i, domain in enumerate(spec.domains):
        for j, stratum in enumerate(domain.strata):
            rng = substream(seed, _STREAM_POPULATION, i, j)
            sizes = 1 + rng.poisson(
                stratum.mean_households_per_cluster - 1.0, size=stratum.clusters
            )
            cluster_ids = np.repeat(np.arange(stratum.clusters), sizes)
            cluster_effect = rng.normal(
                0.0, stratum.log_income_cluster_sd, size=stratum.clusters
            )
            log_income = (
                stratum.log_income_mean
                + cluster_effect[cluster_ids]
                + rng.normal(0.0, stratum.log_income_within_sd, size=cluster_ids.size)
            )
            frames.append(
                StratumFrame(
                    domain_id=domain.domain_id,
                    stratum=j,
                    cluster_of_household=cluster_ids,
                    income=np.exp(log_income),
                    n_clusters=stratum.clusters,
                )
            )
    return Population(frames=frames)


def _segments_for(frame: StratumFrame, segments_per_stratum) -> int:
    if isinstance(segments_per_stratum, Mapping):
        return int(segments_per_stratum[(frame.domain_id, frame.stratum)])
    return int(segments_per_stratum)


def cluster_inclusion_probabilities(
    population: Population, segments_per_stratum
) -> dict[tuple[str, int], list[Fraction]]:
    """Exact per-cluster inclusion probabilities of the systematic design.

    Every cluster of a stratum with N clusters and n selected segments has
    probability n/N; the probabilities of a stratum therefore sum to n
    exactly (computed in rational arithmetic).
    """
    out = {}
    for frame in population.frames:
        n_seg = _segments_for(frame, segments_per_stratum)
        if not 1 <= n_seg <= frame.n_clusters:
            raise ValueError(
                f"stratum ({frame.domain_id}, {frame.stratum}): cannot select "
                f"{n_seg} of {frame.n_clusters} clusters"
            )
        out[(frame.domain_id, frame.stratum)] = [
            Fraction(n_seg, frame.n_clusters)
        ] * frame.n_clusters
    return out


@dataclass
class SampleDraw:
    """Sampled households with their design weights."""

    domain_id: list[str]
    weight: np.ndarray
    income: np.ndarray

    def units(self) -> list[tuple[str, float, float]]:
        return list(zip(self.domain_id, self.weight, self.income))


def draw_stratified_cluster_sample(
    population: Population,
    segments_per_stratum,
    rng: np.random.Generator,
) -> SampleDraw:
    """Systematic equal-probability selection of segments within each stratum.

    Clusters are kept in frame order, a uniform random start determines a
    fractional-interval systematic draw of ``n`` clusters, and every
    household of a selected cluster enters the sample with weight
    ``N_clusters / n`` (the inverse inclusion probability).
    """
    domains: list[str] = []
    weights: list[np.ndarray] = []
    incomes: list[np.ndarray] = []
    for frame in population.frames:
        n_seg = _segments_for(frame, segments_per_stratum)
        n_clusters = frame.n_clusters
        if not 1 <= n_seg <= n_clusters:
            raise ValueError(
                f"stratum ({frame.domain_id}, {frame.stratum}): cannot select "
                f"{n_seg} of {n_clusters} clusters"
            )
        step = n_clusters / n_seg
        start = rng.uniform(0.0, step)
        chosen = np.minimum(
            np.floor(start + step * np.arange(n_seg)).astype(int), n_clusters - 1
        )
        mask = np.isin(frame.cluster_of_household, chosen)
        k = int(mask.sum())
        domains.extend([frame.domain_id] * k)
        weights.append(np.full(k, n_clusters / n_seg))
        incomes.append(frame.income[mask])
    return SampleDraw(
        domain_id=domains,
        weight=np.concatenate(weights) if weights else np.empty(0),
        income=np.concatenate(incomes) if incomes else np.empty(0),
    )


@dataclass
class DesignMetrics:
    """Replicate-level design-based results per domain."""

    domain_ids: list[str]
    true_mean: np.ndarray
    true_count: np.ndarray
    hajek: np.ndarray  # replicates x domains
    count_hat: np.ndarray  # replicates x domains

    def relative_bias(self) -> np.ndarray:
        return (self.hajek.mean(axis=0) - self.true_mean) / self.true_mean

    def count_relative_bias(self) -> np.ndarray:
        return (self.count_hat.mean(axis=0) - self.true_count) / self.true_count


def design_monte_carlo(
    population: Population,
    segments_per_stratum,
    replicates: int,
    seed: int = 0,
) -> DesignMetrics:
    """Repeatedly sample the population and collect weighted estimates."""
    ids = population.domain_ids()
    truth = np.array([population.true_mean(d) for d in ids])
    counts = np.array([float(population.household_count(d)) for d in ids])
    hajek = np.empty((replicates, len(ids)))
    count_hat = np.empty((replicates, len(ids)))
    for r in range(replicates):
        rng = substream(seed, _STREAM_REPLICATE, r)
        draw = draw_stratified_cluster_sample(population, segments_per_stratum, rng)
        for k, domain in enumerate(ids):
            mask = np.fromiter(
                (d == domain for d in draw.domain_id), dtype=bool, count=len(draw.domain_id)
            )
            w = draw.weight[mask]
            yv = draw.income[mask]
            count_hat[r, k] = w.sum()
            est = hajek_mean(w, yv, domain_id=domain)
            hajek[r, k] = est.y_bar_hat
    return DesignMetrics(
        domain_ids=ids, true_mean=truth, true_count=counts, hajek=hajek, count_hat=count_hat
    )


# ---------------------------------------------------------------------------
# Model-based Monte Carlo evaluation
# ---------------------------------------------------------------------------

METRICS_COLUMNS = [
    "estimator",
    "domain_id",
    "empirical_mse",
    "mean_analytic_mse",
    "rel_diff",
    "empirical_eer",
    "analytic_eer",
    "mc_se_empirical_mse",
    "replicates_used",
    "failures",
]


@dataclass
class MetricsTable:
    """Per-(estimator, domain) empirical vs analytic performance summary."""

    rows: list[dict] = field(default_factory=list)

    def to_rows(self) -> list[list]:
        return [[row[c] for c in METRICS_COLUMNS] for row in self.rows]

    def select(self, estimator: str) -> list[dict]:
        return [row for row in self.rows if row["estimator"] == estimator]


def _summarize(
    label: str,
    domain_ids: Sequence[str],
    sq_err: np.ndarray,
    analytic: np.ndarray,
    estimates: np.ndarray,
    failures: int,
) -> list[dict]:
    reps = sq_err.shape[0]
    emp_mse = sq_err.mean(axis=0)
    mean_analytic = analytic.mean(axis=0)
    mc_se = sq_err.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros_like(emp_mse)
    mean_est = estimates.mean(axis=0)
    rows = []
    for k, domain in enumerate(domain_ids):
        emp_eer = (
            math.sqrt(emp_mse[k]) / mean_est[k] if mean_est[k] > 0 else float("nan")
        )
        ana_eer = (
            math.sqrt(mean_analytic[k]) / mean_est[k] if mean_est[k] > 0 else float("nan")
        )
        rows.append(
            {
                "estimator": label,
                "domain_id": domain,
                "empirical_mse": float(emp_mse[k]),
                "mean_analytic_mse": float(mean_analytic[k]),
                "rel_diff": float((mean_analytic[k] - emp_mse[k]) / emp_mse[k]),
                "empirical_eer": float(emp_eer),
                "analytic_eer": float(ana_eer),
                "mc_se_empirical_mse": float(mc_se[k]),
                "replicates_used": reps,
                "failures": failures,
            }
        )
    return rows


def monte_carlo_evaluate(
    scenario: SimScenario,
    method: str = "reml",
    formulas: Mapping[str, str] | None = None,
) -> MetricsTable:
    """Empirical MSE of the direct and shrinkage estimators vs the analytic values.

    With ``formulas`` given (requires named scenario covariates), one
    shrinkage estimator per model formula is evaluated; otherwise a single
    one using the scenario's full design matrix.  Replicates whose fit
    fails to converge are excluded and counted.
    """
    d = scenario.n_domains
    ids = scenario.domain_ids()
    reps = scenario.replicates

    direct_sq = np.empty((reps, d))
    direct_var = np.empty((reps, d))
    direct_est = np.empty((reps, d))

    labels = list(formulas) if formulas is not None else ["eblup"]
    acc_sq = {lab: [] for lab in labels}
    acc_mse = {lab: [] for lab in labels}
    acc_est = {lab: [] for lab in labels}
    failures = {lab: 0 for lab in labels}

    for r in range(reps):
        if formulas is None:
            data, theta = generate_fh_data(scenario, r)
            jobs = [("eblup", data)]
        else:
            table = scenario_table(scenario, r)
            _, theta, _, _ = draw_fh_replicate(scenario, r)
            jobs = [
                (lab, dataset_from_table(table, text, sigma2_col="sigma2_d"))
                for lab, text in formulas.items()
            ]
        direct_sq[r] = (jobs[0][1].y - theta) ** 2
        direct_var[r] = jobs[0][1].sigma2_d
        direct_est[r] = jobs[0][1].y
        for lab, data in jobs:
            try:
                fit = fit_fh(data, method=method)
            except ConvergenceError:
                failures[lab] += 1
                continue
            res = prasad_rao_mse(fit, data)
            acc_sq[lab].append((res.eblup - theta) ** 2)
            acc_mse[lab].append(res.mse)
            acc_est[lab].append(res.eblup)

    table = MetricsTable()
    table.rows.extend(
        _summarize("direct", ids, direct_sq, direct_var, direct_est, failures=0)
    )
    for lab in labels:
        if not acc_sq[lab]:
            continue
        table.rows.extend(
            _summarize(
                lab,
                ids,
                np.vstack(acc_sq[lab]),
                np.vstack(acc_mse[lab]),
                np.vstack(acc_est[lab]),
                failures=failures[lab],
            )
        )
    return table


def model_selection_counts(
    scenario: SimScenario,
    formulas: Mapping[str, str],
    method: str = "ml",
) -> dict[str, int]:
    """How often each candidate model wins the information-criterion ranking."""
    counts = {label: 0 for label in formulas}
    for r in range(scenario.replicates):
        table = scenario_table(scenario, r)
        suite = fit_model_suite(table, formulas=formulas, method=method)
        counts[suite[0].label] += 1
    return counts
