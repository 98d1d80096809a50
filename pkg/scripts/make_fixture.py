#!/usr/bin/env python3
"""Regenerate the bundled 19-domain synthetic fixture.

Builds a stratified-cluster population per domain, draws one systematic
cluster sample with design weights, spreads each household's income over
survey item columns (monthly and last-12-months periods, with a sprinkle
of missing amounts), and writes an area file whose covariates are
informative for the domain means.  Deterministic: rerunning produces
byte-identical files.

Usage: python3 scripts/make_fixture.py [output_dir]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from saekit.simulate import (
    DomainPopulationSpec,
    PopulationSpec,
    StratumSpec,
    draw_stratified_cluster_sample,
    generate_population,
    substream,
)
from saekit.tableio import write_table

SEED = 20110407  # survey field-work start date
N_DOMAINS = 19
SEGMENTS = {0: 6, 1: 8}
CLUSTERS = {0: 18, 1: 24}

MICRO_HEADER = [
    "person_id", "household_id", "domain_id", "weight", "perceptor_category",
    "K30", "K39B", "K40", "K46", "K53",
]


def build_population() -> PopulationSpec:
    rng = substream(SEED, 100)
    domains = []
    for i in range(N_DOMAINS):
        # spread of domain-level per-capita income, roughly 1.1M to 4.5M
        mu = np.log(1.1e6) + 1.4 * (i / (N_DOMAINS - 1)) + rng.normal(0.0, 0.08)
        domains.append(
            DomainPopulationSpec(
                domain_id=f"loc{i + 1:02d}",
                strata=(
                    StratumSpec(
                        clusters=CLUSTERS[0],
                        mean_households_per_cluster=6.0,
                        log_income_mean=mu - 0.15,
                        log_income_cluster_sd=0.30,
                        log_income_within_sd=0.45,
                    ),
                    StratumSpec(
                        clusters=CLUSTERS[1],
                        mean_households_per_cluster=6.0,
                        log_income_mean=mu + 0.15,
                        log_income_cluster_sd=0.30,
                        log_income_within_sd=0.45,
                    ),
                ),
            )
        )
    return PopulationSpec(domains=tuple(domains))


def microdata_rows(population, spec, rng):
    """One sampled survey: person rows with item amounts per household."""
    draw = draw_stratified_cluster_sample(
        population,
        {(d.domain_id, s): SEGMENTS[s] for d in spec.domains for s in (0, 1)},
        rng,
    )
    rows = []
    person = 1
    for h, (domain_id, weight, income) in enumerate(draw.units(), start=1):
        members = 1 + int(rng.poisson(1.6))
        total = income * members
        # head: salary plus an annual bonus reported for the last 12 months
        k30 = 0.6 * total
        k39b = 12.0 * (0.1 * total)
        if members > 1:
            k40_holder, k40 = 2, 0.3 * total
        else:
            k40_holder, k40 = 1, 0.3 * total
        for m in range(1, members + 1):
            cells = {"K30": "", "K39B": "", "K40": "", "K46": "", "K53": ""}
            if m == 1:
                cells["K30"] = repr(float(k30))
                cells["K39B"] = repr(float(k39b))
                category = "salaried"
            else:
                category = "unemployed_or_inactive"
            if m == k40_holder:
                cells["K40"] = repr(float(k40))
                if m != 1:
                    category = "independent"
            rows.append(
                [
                    f"p{person:06d}",
                    f"h{h:05d}",
                    domain_id,
                    weight,
                    category,
                    cells["K30"],
                    cells["K39B"],
                    cells["K40"],
                    cells["K46"],
                    cells["K53"],
                ]
            )
            person += 1
    return rows


def area_rows(population, rng):
    ids = population.domain_ids()
    truth = np.array([population.true_mean(d) for d in ids])
    # poverty incidence tied to the domain mean: richer domain, lower incidence
    log_ri_target = truth / 1.5e6 + rng.normal(0.0, 0.12, len(ids))
    incidence = np.exp(-np.maximum(log_ri_target, 0.05))
    population_projection = rng.uniform(1.0e5, 1.2e6, len(ids))
    valorization = (
        40.0
        + 6.0e-5 * population_projection
        + 2.0e-5 * (truth - truth.mean())
        + rng.normal(0.0, 4.0, len(ids))
    )
    header = ["domain_id", "incidence", "valorization", "population_projection", "n_population"]
    rows = [
        [
            ids[i],
            float(incidence[i]),
            float(valorization[i]),
            float(population_projection[i]),
            population.household_count(ids[i]),
        ]
        for i in range(len(ids))
    ]
    return header, rows


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent.parent / "tests" / "fixtures"
    out.mkdir(parents=True, exist_ok=True)

    population_spec = build_population()
    population = generate_population(population_spec, seed=SEED)

    rng = substream(SEED, 200)
    write_table(
        out / "microdata.csv", MICRO_HEADER, microdata_rows(population, population_spec, rng)
    )

    header, rows = area_rows(population, substream(SEED, 300))
    write_table(out / "areas.csv", header, rows)

    config = {
        "microdata": "microdata.csv",
        "areas": "areas.csv",
        "output_dir": "out",
        "unit": "household",
        "method": "reml",
        "models": {
            "model1": "y ~ log_ri",
            "model2": "y ~ zeta",
            "model3": "y ~ log_ri + zeta",
            "model4": "y ~ log_ri * zeta",
        },
    }
    (out / "pipeline.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    scenario_fh = {
        "kind": "fh",
        "n_domains": 12,
        "beta_true": [0.0, 1.0, 1.0],
        "sigma2_u_true": 1.0,
        "sigma2_d": [0.5, 2.0],
        "replicates": 200,
        "seed": 42,
        "x_names": ["log_ri", "zeta"],
    }
    (out / "scenario_fh.json").write_text(
        json.dumps(scenario_fh, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    scenario_design = {
        "kind": "design",
        "domains": [
            {
                "domain_id": "dom1",
                "strata": [
                    {
                        "clusters": 40,
                        "mean_households_per_cluster": 6.0,
                        "log_income_mean": 13.5,
                        "log_income_cluster_sd": 0.4,
                        "log_income_within_sd": 0.5,
                    }
                ],
            }
        ],
        "segments_per_stratum": 10,
        "replicates": 300,
        "seed": 7,
    }
    (out / "scenario_design.json").write_text(
        json.dumps(scenario_design, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"fixture written to {out}")
