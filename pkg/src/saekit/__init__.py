"""saekit: small-area estimation of domain means from survey microdata.

Pipeline: ingest household microdata and build per-capita income
(:mod:`saekit.microdata`), compute design-based direct estimates
(:mod:`saekit.direct`), derive area-level covariates
(:mod:`saekit.covariates`), fit the area-level mixed model and produce
shrinkage predictions with analytic MSE (:mod:`saekit.fayherriot`),
compare and report (:mod:`saekit.report`, :mod:`saekit.pipeline`), and
validate everything empirically (:mod:`saekit.simulate`).
"""

from .covariates import (
    AlkireFosterResult,
    AreaCovariateTable,
    DeprivationMatrix,
    alkire_foster,
    log_reciprocal,
    ols_residualize,
)
from .direct import (
    DomainDirectEstimate,
    SampleSizeResult,
    SampleSizeSpec,
    deff_ratio,
    direct_estimates,
    hajek_mean,
    sample_size,
)
from .errors import (
    ConvergenceError,
    InputError,
    MicrodataError,
    PipelineStageError,
    SaekitError,
)
from .fayherriot import (
    DEFAULT_MODEL_FORMULAS,
    AreaLevelDataset,
    EblupResult,
    FHFit,
    aic,
    dataset_from_table,
    eblup,
    fit_fh,
    fit_model_suite,
    prasad_rao_mse,
    profile_loglik,
    profile_loglik_grad,
)
from .microdata import (
    HouseholdIncome,
    IncomeComponents,
    PersonIncomeRecord,
    aggregate_household,
    analysis_units,
    build_income,
    default_item_map,
    households_from_records,
    load_item_map,
    load_microdata,
)
from .pipeline import PipelineConfig, load_config, run_pipeline
from .report import ComparisonRow, compare, eer_reduction, emit_report, render_report
from .simulate import (
    DomainPopulationSpec,
    Population,
    PopulationSpec,
    SimScenario,
    StratumSpec,
    design_monte_carlo,
    draw_stratified_cluster_sample,
    generate_fh_data,
    generate_population,
    model_selection_counts,
    monte_carlo_evaluate,
)

__version__ = "0.1.0"
