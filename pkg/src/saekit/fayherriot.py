"""Area-level linear mixed model: fitting, shrinkage prediction, MSE.

The model for D domains is ``y_d = x_d beta + u_d + e_d`` with i.i.d. area
effects ``u_d ~ N(0, sigma2_u)`` and independent sampling errors
``e_d ~ N(0, sigma2_d)`` whose heteroskedastic variances are known from
the design-based stage.  The single unknown variance component is
estimated by restricted maximum likelihood (default), maximum likelihood,
or the classical method-of-moments estimator; the fixed effects follow by
generalized least squares.

Shrinkage predictions combine the direct estimate and the regression
synthetic estimate with weight ``gamma_d = sigma2_u / (sigma2_u +
sigma2_d)``; their estimated MSE uses the standard second-order
approximation ``g1 + g2 + 2*g3``, where ``g3`` relies on the asymptotic
variance ``avar = 2 / sum_d (sigma2_u + sigma2_d)^-2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .covariates import AreaCovariateTable
from .errors import ConvergenceError, InputError, ModelComparisonWarning
from .formula import Formula, build_design, parse_formula

LOG_2PI = math.log(2.0 * math.pi)

#: Relative convergence tolerance on the variance component.
RELTOL = 1e-8
#: Iteration budget for the one-dimensional search.
MAX_ITER = 200

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class AreaLevelDataset:
    """The D-row table feeding the area-level model.

    ``y`` holds the direct estimates, ``sigma2_d`` their (known, positive)
    sampling variances, and ``X`` the design matrix with a leading
    intercept column.  Requires full column rank and more domains than
    regression parameters.
    """

    domain_ids: list[str]
    y: np.ndarray
    sigma2_d: np.ndarray
    X: np.ndarray
    column_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.domain_ids = [str(d) for d in self.domain_ids]
        self.y = np.asarray(self.y, dtype=float)
        self.sigma2_d = np.asarray(self.sigma2_d, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        d = len(self.domain_ids)
        if self.y.shape != (d,) or self.sigma2_d.shape != (d,):
            raise InputError("y and sigma2_d must have one entry per domain")
        if self.X.shape[0] != d:
            raise InputError("X must have one row per domain")
        if not np.isfinite(self.y).all() or not np.isfinite(self.X).all():
            raise InputError("y and X must be finite")
        if (self.sigma2_d <= 0.0).any():
            raise InputError("all sampling variances must be positive")
        p = self.X.shape[1]
        if d <= p:
            raise InputError(f"need more domains than parameters (D={d}, p={p})")
        if np.linalg.matrix_rank(self.X) < p:
            raise InputError("design matrix is rank deficient")
        if not self.column_names:
            self.column_names = [f"x{j}" for j in range(p)]

    @property
    def n_domains(self) -> int:
        return len(self.domain_ids)

    @property
    def n_params(self) -> int:
        return self.X.shape[1]


@dataclass
class FHFit:
    """Fitted area-level model.

    ``loglik`` is the objective of the chosen method at its optimum (the
    profile likelihood for ``ml``, the restricted likelihood for ``reml``,
    and the profile likelihood evaluated at the moment estimate for
    ``fh_moment``).  ``aic = -2*loglik + 2*(p+1)``, counting the variance
    component as a parameter; it is only a comparison criterion across
    different fixed-effects structures under ``ml``.
    """

    beta_hat: np.ndarray
    sigma2_u_hat: float
    gamma: np.ndarray
    loglik: float
    aic: float
    avar_sigma2_u: float
    method: str
    n_iter: int
    converged: bool
    boundary: bool  # variance component pinned at zero


@dataclass
class EblupResult:
    """Per-domain shrinkage predictions and, once computed, their MSE parts."""

    domain_ids: list[str]
    eblup: np.ndarray
    synthetic: np.ndarray
    mse: np.ndarray | None = None
    eer_eblup: np.ndarray | None = None
    g1: np.ndarray | None = None
    g2: np.ndarray | None = None
    g3: np.ndarray | None = None


def _gls(X: np.ndarray, y: np.ndarray, v: np.ndarray):
    """Weighted least squares at covariance diag(v): beta, residuals, X'V^-1 X."""
    w = 1.0 / v
    Xw = X * w[:, None]
    xtwx = X.T @ Xw
    beta = np.linalg.solve(xtwx, Xw.T @ y)
    resid = y - X @ beta
    return beta, resid, xtwx


def profile_loglik(sigma2_u: float, data: AreaLevelDataset, method: str = "reml") -> float:
    """Log-likelihood in the variance component, fixed effects profiled out.

    ``ml`` gives the Gaussian profile log-likelihood; ``reml`` the
    restricted log-likelihood (which adds ``-0.5*logdet(X'V^-1 X)`` and
    drops p constant terms).
    """
    if sigma2_u < 0.0:
        raise ValueError("sigma2_u must be non-negative")
    v = sigma2_u + data.sigma2_d
    _, resid, xtwx = _gls(data.X, data.y, v)
    quad = float(np.sum(resid**2 / v))
    logdet_v = float(np.sum(np.log(v)))
    d, p = data.X.shape
    if method == "ml":
        return -0.5 * (d * LOG_2PI + logdet_v + quad)
    if method == "reml":
        sign, logdet_a = np.linalg.slogdet(xtwx)
        if sign <= 0:
            raise InputError("X'V^-1 X is not positive definite")
        return -0.5 * ((d - p) * LOG_2PI + logdet_v + logdet_a + quad)
    raise ValueError(f"unknown likelihood method '{method}'")


def profile_loglik_grad(
    sigma2_u: float, data: AreaLevelDataset, method: str = "reml"
) -> float:
    """Analytic derivative of :func:`profile_loglik` in the variance component."""
    if sigma2_u < 0.0:
        raise ValueError("sigma2_u must be non-negative")
    v = sigma2_u + data.sigma2_d
    w = 1.0 / v
    _, resid, xtwx = _gls(data.X, data.y, v)
    quad2 = float(np.sum(resid**2 * w**2))
    if method == "ml":
        return 0.5 * (quad2 - float(np.sum(w)))
    if method == "reml":
        xtw2x = (data.X * (w**2)[:, None]).T @ data.X
        tr_p = float(np.sum(w)) - float(np.trace(np.linalg.solve(xtwx, xtw2x)))
        return 0.5 * (quad2 - tr_p)
    raise ValueError(f"unknown likelihood method '{method}'")


def _golden_max(f, lo: float, hi: float, reltol: float, budget: int):
    """Golden-section maximization on [lo, hi]; returns (x, evals_used)."""
    a, b = lo, hi
    evals = 0
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    evals += 2
    while (b - a) > reltol * (abs(a + b) / 2.0 + 1.0) and evals < budget:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        evals += 1
    return (c if fc > fd else d), evals


def _maximize_profile(data: AreaLevelDataset, method: str, reltol: float, max_iter: int):
    """Bracket, golden-section, then Newton-polish the profile likelihood.

    Returns (sigma2_u_hat, iterations, converged).  The search interval
    starts at [0, 10 * var(y)] and doubles while the gradient at the upper
    end stays positive.
    """
    loglik = lambda s: profile_loglik(s, data, method)
    grad = lambda s: profile_loglik_grad(s, data, method)

    var_y = float(np.var(data.y, ddof=1))
    upper = 10.0 * var_y if var_y > 0.0 else float(np.max(data.sigma2_d))
    n_expand = 0
    while grad(upper) > 0.0:
        upper *= 2.0
        n_expand += 1
        if n_expand > 60:
            raise ConvergenceError(
                "variance-component search interval keeps expanding",
                last_iterate=upper,
                grad_norm=abs(grad(upper)),
            )

    # Coarse geometric grid guards against a poor unimodality bracket.
    grid = np.concatenate(([0.0], np.geomspace(upper * 1e-10, upper, 24)))
    ll_grid = np.array([loglik(s) for s in grid])
    best = int(np.argmax(ll_grid))
    iters = grid.size + n_expand

    if best == 0 and grad(0.0) <= 0.0:
        return 0.0, iters + 1, True

    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    x, used = _golden_max(loglik, lo, hi, reltol, budget=max_iter - iters)
    iters += used

    # Newton steps on the gradient sharpen the golden-section result.
    for _ in range(20):
        if iters >= max_iter:
            break
        g = grad(x)
        h_step = 1e-5 * (x + 1.0)
        hi_g = grad(min(x + h_step, upper))
        lo_g = grad(max(x - h_step, 0.0))
        curv = (hi_g - lo_g) / (min(x + h_step, upper) - max(x - h_step, 0.0))
        iters += 3
        if not math.isfinite(curv) or curv >= 0.0:
            break
        x_new = min(max(x - g / curv, 0.0), upper)
        if abs(x_new - x) <= reltol * max(abs(x_new), 1.0):
            x = x_new
            break
        if loglik(x_new) < loglik(x):
            break
        x = x_new

    if loglik(0.0) >= loglik(x):
        return 0.0, iters, True
    return float(x), iters, True


def _moment_estimate(data: AreaLevelDataset, reltol: float, max_iter: int):
    """Method-of-moments variance component: solve sum(r^2/v) = D - p."""
    d, p = data.X.shape

    def excess(s: float) -> float:
        v = s + data.sigma2_d
        _, resid, _ = _gls(data.X, data.y, v)
        return float(np.sum(resid**2 / v)) - (d - p)

    if excess(0.0) <= 0.0:
        return 0.0, 1, True
    hi = 10.0 * float(np.var(data.y, ddof=1)) + float(np.max(data.sigma2_d))
    n_expand = 0
    while excess(hi) > 0.0:
        hi *= 2.0
        n_expand += 1
        if n_expand > 60:
            raise ConvergenceError(
                "moment equation has no root in the search interval",
                last_iterate=hi,
                grad_norm=abs(excess(hi)),
            )
    root = brentq(excess, 0.0, hi, xtol=reltol * (1.0 + hi), maxiter=max_iter)
    return float(root), n_expand + 2, True


def fit_fh(
    data: AreaLevelDataset,
    method: str = "reml",
    reltol: float = RELTOL,
    max_iter: int = MAX_ITER,
) -> FHFit:
    """Fit the area-level model.

    Parameters
    ----------
    data : AreaLevelDataset
        Direct estimates, known sampling variances, design matrix.
    method : {"reml", "ml", "fh_moment"}
        Variance-component estimator.  REML is the default; the moment
        method solves the classical estimating equation instead of
        maximizing a likelihood.
    reltol, max_iter
        Relative convergence tolerance on the variance component and the
        iteration budget of the one-dimensional search.

    Raises
    ------
    ConvergenceError
        When the search does not settle within the budget (the exception
        carries the last iterate and gradient norm).
    """
    if method not in ("reml", "ml", "fh_moment"):
        raise ValueError(f"unknown method '{method}'")

    if method == "fh_moment":
        sigma2_u, iters, converged = _moment_estimate(data, reltol, max_iter)
        loglik = profile_loglik(sigma2_u, data, "ml")
    else:
        sigma2_u, iters, converged = _maximize_profile(data, method, reltol, max_iter)
        loglik = profile_loglik(sigma2_u, data, method)

    v = sigma2_u + data.sigma2_d
    beta, _, _ = _gls(data.X, data.y, v)
    gamma = sigma2_u / v
    avar = 2.0 / float(np.sum(1.0 / v**2))
    p = data.n_params
    return FHFit(
        beta_hat=beta,
        sigma2_u_hat=float(sigma2_u),
        gamma=gamma,
        loglik=float(loglik),
        aic=-2.0 * float(loglik) + 2.0 * (p + 1),
        avar_sigma2_u=avar,
        method=method,
        n_iter=iters,
        converged=converged,
        boundary=(sigma2_u == 0.0),
    )


def eblup(fit: FHFit, data: AreaLevelDataset) -> EblupResult:
    """Shrinkage predictions: ``gamma*direct + (1-gamma)*synthetic``.

    The prediction is clipped into the interval spanned by the direct and
    synthetic estimates, so the convex-combination bound holds exactly
    even under floating-point rounding.
    """
    synthetic = data.X @ fit.beta_hat
    raw = synthetic + fit.gamma * (data.y - synthetic)
    lo = np.minimum(data.y, synthetic)
    hi = np.maximum(data.y, synthetic)
    return EblupResult(
        domain_ids=list(data.domain_ids),
        eblup=np.clip(raw, lo, hi),
        synthetic=synthetic,
    )


def prasad_rao_mse(fit: FHFit, data: AreaLevelDataset) -> EblupResult:
    """Second-order MSE approximation for every domain's prediction.

    ``g1 = gamma*sigma2_d`` is the shrinkage floor, ``g2`` the fixed-effect
    estimation spread ``(1-gamma)^2 x (X'V^-1 X)^-1 x'``, and ``g3 =
    sigma2_d^2/(sigma2_u+sigma2_d)^3 * avar`` the price of estimating the
    variance component; the total is ``g1 + g2 + 2*g3``.  The relative
    standard error divides ``sqrt(mse)`` by the prediction (NaN for
    non-positive predictions).
    """
    result = eblup(fit, data)
    v = fit.sigma2_u_hat + data.sigma2_d
    g1 = fit.sigma2_u_hat * data.sigma2_d / v
    w = 1.0 / v
    xtwx = (data.X * w[:, None]).T @ data.X
    xtwx_inv = np.linalg.inv(xtwx)
    quad = np.einsum("ij,jk,ik->i", data.X, xtwx_inv, data.X)
    g2 = (1.0 - fit.gamma) ** 2 * quad
    g3 = data.sigma2_d**2 / v**3 * fit.avar_sigma2_u
    mse = g1 + g2 + 2.0 * g3
    with np.errstate(invalid="ignore", divide="ignore"):
        eer = np.where(result.eblup > 0.0, np.sqrt(mse) / result.eblup, np.nan)
    result.mse = mse
    result.eer_eblup = eer
    result.g1 = g1
    result.g2 = g2
    result.g3 = g3
    return result


def aic(fit: FHFit) -> float:
    """Information criterion of a fit; comparable across models only under ML."""
    return fit.aic


DEFAULT_MODEL_FORMULAS: dict[str, str] = {
    "model1": "y ~ log_ri",
    "model2": "y ~ zeta",
    "model3": "y ~ log_ri + zeta",
    "model4": "y ~ log_ri * zeta",
}


@dataclass
class SuiteModel:
    label: str
    formula: str
    dataset: AreaLevelDataset
    fit: FHFit
    result: EblupResult


def dataset_from_table(
    table: AreaCovariateTable,
    formula: Formula | str,
    sigma2_col: str = "sigma2_d",
) -> AreaLevelDataset:
    """Build the model dataset for one formula from an area table."""
    if isinstance(formula, str):
        formula = parse_formula(formula)
    y = table.column(formula.response)
    sigma2 = table.column(sigma2_col)
    X, names = build_design(table.columns, formula)
    return AreaLevelDataset(
        domain_ids=list(table.domain_ids),
        y=y,
        sigma2_d=sigma2,
        X=X,
        column_names=names,
    )


def fit_model_suite(
    table: AreaCovariateTable,
    formulas: Mapping[str, str] | None = None,
    sigma2_col: str = "sigma2_d",
    method: str = "reml",
) -> list[SuiteModel]:
    """Fit a family of candidate models and rank them by AIC (best first).

    Warns when ranking REML (or moment) fits, whose criterion values are
    not strictly comparable across different fixed-effects structures.
    """
    if formulas is None:
        formulas = DEFAULT_MODEL_FORMULAS
    if len(formulas) > 1 and method != "ml":
        warnings.warn(
            "ranking models by AIC from non-ML fits; refit with method='ml' "
            "for a comparison that is valid across fixed-effects structures",
            ModelComparisonWarning,
            stacklevel=2,
        )
    models = []
    for label, text in formulas.items():
        dataset = dataset_from_table(table, text, sigma2_col=sigma2_col)
        fit = fit_fh(dataset, method=method)
        models.append(
            SuiteModel(
                label=label,
                formula=text,
                dataset=dataset,
                fit=fit,
                result=prasad_rao_mse(fit, dataset),
            )
        )
    return sorted(models, key=lambda m: m.fit.aic)
