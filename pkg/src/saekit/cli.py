"""Command-line interface.

Subcommands mirror the pipeline stages (``direct``, ``covariates``,
``fit``, ``compare``), plus ``pipeline`` for the config-driven end-to-end
run, ``samplesize`` for design planning, and ``simulate`` for the Monte
Carlo harness.  Exit codes: 0 success, 1 input error, 2 convergence
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import tableio
from .covariates import add_log_reciprocal, add_reciprocal, add_residualized
from .direct import (
    DIRECT_TABLE_COLUMNS,
    DomainDirectEstimate,
    SampleSizeSpec,
    direct_estimates,
    direct_table_rows,
    sample_size,
)
from .errors import ConvergenceError, InputError, PipelineStageError, SaekitError
from .fayherriot import dataset_from_table, fit_fh, prasad_rao_mse
from .microdata import analysis_units, households_from_records, load_item_map, load_microdata
from .pipeline import load_config, read_area_table, run_pipeline, write_area_table
from .report import ComparisonRow, emit_report, render_report
from .simulate import (
    METRICS_COLUMNS,
    DomainPopulationSpec,
    PopulationSpec,
    SimScenario,
    StratumSpec,
    design_monte_carlo,
    generate_population,
    monte_carlo_evaluate,
)

EBLUP_TABLE_COLUMNS = [
    "domain_id", "eblup", "synthetic", "mse", "eer_eblup", "g1", "g2", "g3",
]


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def _cmd_direct(args) -> int:
    item_map = load_item_map(args.item_map) if args.item_map else None
    records = load_microdata(args.microdata, item_map)
    households = households_from_records(records, item_map, args.divisor)
    estimates = direct_estimates(analysis_units(households, args.unit))
    _emit(
        tableio.render_table(DIRECT_TABLE_COLUMNS, direct_table_rows(estimates)),
        args.output,
    )
    return 0


def _cmd_covariates(args) -> int:
    table = read_area_table(args.areas)
    emit = [name.strip() for name in args.emit.split(",") if name.strip()]
    for name in emit:
        if name == "log_ri":
            add_log_reciprocal(table, source=args.incidence_column, name="log_ri")
        elif name == "ri":
            add_reciprocal(table, source=args.incidence_column, name="ri")
        elif name == "zeta":
            add_residualized(
                table,
                y_col=args.valorization_column,
                x_col=args.population_column,
                name="zeta",
                standardize=args.standardize_zeta,
            )
        else:
            raise InputError(f"unknown derived column '{name}' (use log_ri, ri, zeta)")
    header = ["domain_id"] + list(table.columns)
    rows = [
        [d] + [table.columns[c][i] for c in table.columns]
        for i, d in enumerate(table.domain_ids)
    ]
    _emit(tableio.render_table(header, rows), args.output)
    return 0


def _method(name: str) -> str:
    return "fh_moment" if name == "moment" else name


def _cmd_fit(args) -> int:
    table = read_area_table(args.areas)
    dataset = dataset_from_table(table, args.model, sigma2_col=args.sigma2_col)
    fit = fit_fh(dataset, method=_method(args.method))
    result = prasad_rao_mse(fit, dataset)
    payload = {
        "formula": args.model,
        "method": fit.method,
        "coefficients": {
            name: float(v) for name, v in zip(dataset.column_names, fit.beta_hat)
        },
        "sigma2_u": fit.sigma2_u_hat,
        "avar_sigma2_u": fit.avar_sigma2_u,
        "gamma": [float(g) for g in fit.gamma],
        "loglik": fit.loglik,
        "aic": fit.aic,
        "converged": fit.converged,
        "boundary": fit.boundary,
        "domains": [
            {
                "domain_id": result.domain_ids[i],
                "eblup": float(result.eblup[i]),
                "synthetic": float(result.synthetic[i]),
                "mse": float(result.mse[i]),
                "eer_eblup": float(result.eer_eblup[i]),
            }
            for i in range(len(result.domain_ids))
        ],
    }
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.output)
    if args.eblup_out:
        rows = [
            [
                result.domain_ids[i],
                result.eblup[i],
                result.synthetic[i],
                result.mse[i],
                result.eer_eblup[i],
                result.g1[i],
                result.g2[i],
                result.g3[i],
            ]
            for i in range(len(result.domain_ids))
        ]
        tableio.write_table(args.eblup_out, EBLUP_TABLE_COLUMNS, rows)
    return 0


def _read_direct_table(path: str) -> list[DomainDirectEstimate]:
    header, rows = tableio.read_table(path)
    needed = set(DIRECT_TABLE_COLUMNS)
    if not needed.issubset(header):
        raise InputError(f"{path}: expected columns {sorted(needed)}")
    out = []
    for r in rows:
        out.append(
            DomainDirectEstimate(
                domain_id=r["domain_id"],
                y_bar_hat=tableio.parse_float(r["y_bar_hat"], context=path),
                n_hat=tableio.parse_float(r["n_hat"], context=path),
                var_hat=tableio.parse_float(r["var_hat"], context=path),
                eer=tableio.parse_float(r["eer"], context=path),
                n_sample=int(float(r["n_sample"])),
            )
        )
    return out


def _cmd_compare(args) -> int:
    from .fayherriot import EblupResult

    direct = _read_direct_table(args.direct)
    header, rows = tableio.read_table(args.eblup)
    for col in ("domain_id", "eblup", "mse", "eer_eblup"):
        if col not in header:
            raise InputError(f"{args.eblup}: missing column {col}")
    result = EblupResult(
        domain_ids=[r["domain_id"] for r in rows],
        eblup=np.array([tableio.parse_float(r["eblup"], context=args.eblup) for r in rows]),
        synthetic=np.array(
            [tableio.parse_float(r.get("synthetic", r["eblup"]), context=args.eblup) for r in rows]
        ),
        mse=np.array([tableio.parse_float(r["mse"], context=args.eblup) for r in rows]),
        eer_eblup=np.array(
            [tableio.parse_float(r["eer_eblup"], context=args.eblup) for r in rows]
        ),
    )
    from .report import compare as compare_rows

    rows_out = compare_rows([d for d in direct if d.has_variance], result)
    if args.sort:
        from .report import sort_by_delta

        rows_out = sort_by_delta(rows_out)
    _emit(render_report(rows_out, args.format), args.output)
    return 0


def _cmd_pipeline(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    result = run_pipeline(config)
    best = result.best
    sys.stderr.write(
        f"pipeline complete: best model '{best.label}' ({best.formula}), "
        f"aic={best.fit.aic:.2f}; outputs in {config.output_dir}\n"
    )
    return 0


def _cmd_samplesize(args) -> int:
    spec = SampleSizeSpec.from_prevalence(
        n_population=args.population, p=args.prevalence, deff=args.deff, esrel=args.esrel
    )
    n = sample_size(spec)
    _emit(
        f"n_exact={n.n_exact!r}\nn_planning={n.n_planning}\n",
        args.output,
    )
    return 0


def _scenario_from_config(raw: dict, args) -> SimScenario:
    fields = dict(raw)
    fields.pop("kind", None)
    if args.replicates is not None:
        fields["replicates"] = args.replicates
    if args.seed is not None:
        fields["seed"] = args.seed
    try:
        return SimScenario(
            n_domains=int(fields["n_domains"]),
            beta_true=tuple(float(b) for b in fields["beta_true"]),
            sigma2_u_true=float(fields["sigma2_u_true"]),
            sigma2_d=tuple(float(s) for s in fields["sigma2_d"]),
            replicates=int(fields.get("replicates", 1000)),
            seed=int(fields.get("seed", 0)),
            x_names=tuple(fields.get("x_names", ())),
            x_dist=fields.get("x_dist", "normal"),
            x_params=tuple(fields.get("x_params", (0.0, 1.0))),
        )
    except KeyError as exc:
        raise InputError(f"scenario config missing key: {exc}") from None


def _cmd_simulate(args) -> int:
    path = Path(args.scenario)
    if not path.exists():
        raise InputError(f"scenario file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        raw = yaml.safe_load(text)
    else:
        raw = json.loads(text)
    if not isinstance(raw, dict):
        raise InputError(f"scenario {path}: expected a mapping")

    kind = raw.get("kind", "fh")
    if kind == "fh":
        formulas = raw.pop("models", None)
        scenario = _scenario_from_config(raw, args)
        metrics = monte_carlo_evaluate(scenario, method=args.method, formulas=formulas)
        _emit(tableio.render_table(METRICS_COLUMNS, metrics.to_rows()), args.output)
        return 0
    if kind == "design":
        try:
            spec = PopulationSpec(
                domains=tuple(
                    DomainPopulationSpec(
                        domain_id=str(d["domain_id"]),
                        strata=tuple(StratumSpec(**s) for s in d["strata"]),
                    )
                    for d in raw["domains"]
                )
            )
            segments = raw["segments_per_stratum"]
        except (KeyError, TypeError) as exc:
            raise InputError(f"scenario {path}: bad design spec ({exc})") from None
        seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
        replicates = (
            args.replicates if args.replicates is not None else int(raw.get("replicates", 1000))
        )
        population = generate_population(spec, seed=seed)
        metrics = design_monte_carlo(population, segments, replicates, seed=seed + 1)
        header = ["domain_id", "true_mean", "mean_hajek", "rel_bias", "count_rel_bias"]
        rel = metrics.relative_bias()
        crel = metrics.count_relative_bias()
        rows = [
            [d, metrics.true_mean[i], metrics.hajek[:, i].mean(), rel[i], crel[i]]
            for i, d in enumerate(metrics.domain_ids)
        ]
        _emit(tableio.render_table(header, rows), args.output)
        return 0
    raise InputError(f"scenario {path}: unknown kind '{kind}' (use 'fh' or 'design')")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saekit",
        description="Small-area estimation: direct estimates, area-level model smoothing, reporting, simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("direct", help="design-based direct estimates per domain")
    p.add_argument("--microdata", required=True)
    p.add_argument("--item-map", default=None)
    p.add_argument("--unit", choices=("household", "person"), default="household")
    p.add_argument("--divisor", type=float, default=12.0,
                   help="annualization divisor for last-12-months items")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_direct)

    p = sub.add_parser("covariates", help="append derived covariate columns to an area table")
    p.add_argument("--areas", required=True)
    p.add_argument("--emit", default="log_ri,zeta")
    p.add_argument("--incidence-column", default="incidence")
    p.add_argument("--valorization-column", default="valorization")
    p.add_argument("--population-column", default="population_projection")
    p.add_argument("--standardize-zeta", action="store_true")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_covariates)

    p = sub.add_parser("fit", help="fit one area-level model and report predictions")
    p.add_argument("--areas", required=True)
    p.add_argument("--model", default="y ~ log_ri * zeta")
    p.add_argument("--method", choices=("reml", "ml", "fh_moment"), default="reml")
    p.add_argument("--sigma2-col", default="sigma2_d")
    p.add_argument("--eblup-out", default=None,
                   help="also write the per-domain prediction table here")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("compare", help="compare direct and model-based estimates")
    p.add_argument("--direct", required=True, help="direct-estimate table (csv)")
    p.add_argument("--eblup", required=True, help="prediction table from 'fit --eblup-out'")
    p.add_argument("-f", "--format", choices=("csv", "json", "markdown"), default="csv")
    p.add_argument("--sort", action="store_true", help="sort by EER reduction")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("pipeline", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("samplesize", help="planning sample size for a clustered design")
    p.add_argument("--population", type=int, required=True)
    p.add_argument("--prevalence", type=float, required=True)
    p.add_argument("--deff", type=float, default=3.0)
    p.add_argument("--esrel", type=float, default=0.05)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_samplesize)

    p = sub.add_parser("simulate", help="Monte Carlo evaluation from a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--method", choices=("reml", "ml", "fh_moment"), default="reml")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineStageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2 if isinstance(exc.cause, ConvergenceError) else 1
    except ConvergenceError as exc:
        sys.stderr.write(
            f"error: {exc} (last iterate: {exc.last_iterate}, |grad|: {exc.grad_norm})\n"
        )
        return 2
    except (InputError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except SaekitError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
