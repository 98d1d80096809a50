"""End-to-end pipeline: microdata -> direct estimates -> covariates ->
model suite -> comparison artifacts.

A config file (JSON or YAML) declares the input paths, the candidate
model formulas, the variance-component method, and the output directory.
Relative paths are resolved against the config file's location.  Every
stage failure is re-raised tagged with the stage name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import tableio
from .covariates import AreaCovariateTable, add_log_reciprocal, add_residualized
from .direct import DIRECT_TABLE_COLUMNS, DomainDirectEstimate, direct_estimates, direct_table_rows
from .errors import InputError, PipelineStageError
from .fayherriot import DEFAULT_MODEL_FORMULAS, SuiteModel, fit_model_suite
from .microdata import analysis_units, households_from_records, load_item_map, load_microdata
from .report import ComparisonRow, compare, render_report


@dataclass
class PipelineConfig:
    microdata: Path
    areas: Path
    output_dir: Path
    item_map: Path | None = None
    unit: str = "household"
    models: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_MODEL_FORMULAS))
    method: str = "reml"
    annualization_divisor: float = 12.0
    incidence_column: str = "incidence"
    valorization_column: str = "valorization"
    population_column: str = "population_projection"
    standardize_zeta: bool = False
    seed: int | None = None


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        raw = yaml.safe_load(text)
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise InputError(f"config {path}: expected a mapping of settings")

    required = ("microdata", "areas", "output_dir")
    missing = [k for k in required if k not in raw]
    if missing:
        raise InputError(f"config {path}: missing keys: {', '.join(missing)}")

    base = path.parent

    def respath(key) -> Path:
        p = Path(raw[key])
        return p if p.is_absolute() else base / p

    models = raw.get("models")
    if models is None:
        models = dict(DEFAULT_MODEL_FORMULAS)
    elif isinstance(models, list):
        models = {f"model{i + 1}": text for i, text in enumerate(models)}
    elif not isinstance(models, dict):
        raise InputError(f"config {path}: 'models' must be a list or mapping of formulas")

    known = {
        "microdata", "areas", "output_dir", "item_map", "unit", "models", "method",
        "annualization_divisor", "incidence_column", "valorization_column",
        "population_column", "standardize_zeta", "seed",
    }
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InputError(f"config {path}: unknown keys: {', '.join(unknown)}")

    return PipelineConfig(
        microdata=respath("microdata"),
        areas=respath("areas"),
        output_dir=respath("output_dir"),
        item_map=respath("item_map") if "item_map" in raw else None,
        unit=raw.get("unit", "household"),
        models=models,
        method=raw.get("method", "reml"),
        annualization_divisor=float(raw.get("annualization_divisor", 12.0)),
        incidence_column=raw.get("incidence_column", "incidence"),
        valorization_column=raw.get("valorization_column", "valorization"),
        population_column=raw.get("population_column", "population_projection"),
        standardize_zeta=bool(raw.get("standardize_zeta", False)),
        seed=raw.get("seed"),
    )


def read_area_table(path: str | Path) -> AreaCovariateTable:
    """Load a delimited area file: domain_id column plus numeric columns."""
    header, rows = tableio.read_table(path)
    if "domain_id" not in header:
        raise InputError(f"{path}: area table needs a domain_id column")
    table = AreaCovariateTable(domain_ids=[r["domain_id"] for r in rows])
    for name in header:
        if name == "domain_id":
            continue
        table.add_column(
            name,
            [tableio.parse_float(r[name], context=f"{path}: column {name}") for r in rows],
        )
    return table


def write_area_table(path: str | Path, table: AreaCovariateTable) -> None:
    header = ["domain_id"] + list(table.columns)
    rows = [
        [d] + [table.columns[c][i] for c in table.columns]
        for i, d in enumerate(table.domain_ids)
    ]
    tableio.write_table(path, header, rows)


@dataclass
class PipelineResult:
    config: PipelineConfig
    direct: list[DomainDirectEstimate]
    table: AreaCovariateTable
    suite: list[SuiteModel]  # ranked by AIC, best first
    comparison: list[ComparisonRow]
    outputs: dict[str, Path]

    @property
    def best(self) -> SuiteModel:
        return self.suite[0]


def _stage(name: str):
    class _StageGuard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineStageError):
                raise PipelineStageError(name, exc) from exc
            return False

    return _StageGuard()


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Run every stage and write the comparison artifacts.

    Outputs in ``config.output_dir``: the direct-estimate table, the
    merged model table, a per-model EER table, the best-model comparison
    (csv and markdown), the EER-reduction plot data, and a JSON fit
    report.  Reruns on identical inputs produce byte-identical files.
    """
    with _stage("microdata"):
        item_map = load_item_map(config.item_map) if config.item_map else None
        records = load_microdata(config.microdata, item_map)
        households = households_from_records(
            records, item_map, config.annualization_divisor
        )

    with _stage("direct"):
        estimates = direct_estimates(analysis_units(households, config.unit))

    with _stage("covariates"):
        table = read_area_table(config.areas)
        add_log_reciprocal(table, source=config.incidence_column, name="log_ri")
        add_residualized(
            table,
            y_col=config.valorization_column,
            x_col=config.population_column,
            name="zeta",
            standardize=config.standardize_zeta,
        )
        usable = {e.domain_id: e for e in estimates if e.has_variance}
        missing = [d for d in table.domain_ids if d not in usable]
        extra = [d for d in usable if d not in set(table.domain_ids)]
        if missing or extra:
            raise InputError(
                "domain mismatch between microdata and area table "
                f"(no usable direct estimate: {missing}, not in area file: {extra})"
            )
        table.add_column("y", [usable[d].y_bar_hat for d in table.domain_ids])
        table.add_column("sigma2_d", [usable[d].var_hat for d in table.domain_ids])

    with _stage("fit"):
        suite = fit_model_suite(
            table, formulas=config.models, sigma2_col="sigma2_d", method=config.method
        )

    with _stage("compare"):
        ordered = [usable[d] for d in table.domain_ids]
        comparison = compare(ordered, suite[0].result)

    with _stage("write"):
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        outputs: dict[str, Path] = {}

        outputs["direct"] = out / "direct_estimates.csv"
        tableio.write_table(
            outputs["direct"], DIRECT_TABLE_COLUMNS, direct_table_rows(estimates)
        )

        outputs["model_table"] = out / "model_table.csv"
        write_area_table(outputs["model_table"], table)

        by_label = {m.label: m for m in suite}
        labels = [lab for lab in config.models if lab in by_label]
        outputs["model_eer"] = out / "model_eer.csv"
        header = ["domain_id"] + [f"eer_{lab}" for lab in labels]
        rows = []
        for i, d in enumerate(table.domain_ids):
            row = [d]
            for lab in labels:
                row.append(f"{100.0 * float(by_label[lab].result.eer_eblup[i]):.2f}")
            rows.append(row)
        tableio.write_table(outputs["model_eer"], header, rows)

        outputs["comparison"] = out / "comparison.csv"
        outputs["comparison"].write_text(render_report(comparison, "csv"), encoding="utf-8")
        outputs["comparison_md"] = out / "comparison.md"
        outputs["comparison_md"].write_text(
            render_report(comparison, "markdown"), encoding="utf-8"
        )

        outputs["delta"] = out / "delta.csv"
        tableio.write_table(
            outputs["delta"],
            ["domain_id", "delta"],
            [[r.domain_id, f"{r.delta:.2f}"] for r in comparison],
        )

        outputs["fits"] = out / "fits.json"
        payload = []
        for m in suite:
            payload.append(
                {
                    "label": m.label,
                    "formula": m.formula,
                    "method": m.fit.method,
                    "coefficients": {
                        name: float(v)
                        for name, v in zip(m.dataset.column_names, m.fit.beta_hat)
                    },
                    "sigma2_u": m.fit.sigma2_u_hat,
                    "avar_sigma2_u": m.fit.avar_sigma2_u,
                    "loglik": m.fit.loglik,
                    "aic": m.fit.aic,
                    "converged": m.fit.converged,
                    "boundary": m.fit.boundary,
                }
            )
        outputs["fits"].write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    return PipelineResult(
        config=config,
        direct=estimates,
        table=table,
        suite=suite,
        comparison=comparison,
        outputs=outputs,
    )
