"""Joint renewal-equation modeling of incidence and hospitalization counts.

Forward simulation of coupled daily infection/admission series, exact
composite-likelihood kernels, Monte Carlo EM estimation with an
acceptance-rejection E step, and inference utilities (block-bootstrap
intervals, a sliding-window baseline, model selection, and a replication
harness).
"""

from .inference import (
    BootstrapResult,
    ReplicationReport,
    SelectionResult,
    block_bootstrap,
    cori_baseline,
    format_summary_table,
    run_replication_study,
    select_model,
    study_scenario,
)
from .likelihood import (
    EnumerationTooLarge,
    LikelihoodContext,
    composite_loglik,
    joint_pmf_with_missing,
    marginal_pair_pmf,
    nb_joint_pmf_with_missing,
    reduced_objective,
)
from .mcem import (
    EstimationError,
    MCEMConfig,
    MCEMResult,
    MCEMTrace,
    OptimizerStalled,
    PriorCandidate,
    RejectionBudgetExhausted,
    default_initial_params,
    e_step_sample,
    m_step,
    q_function,
    run_mcem,
    run_mcem_weighted,
    stirling_adjusted_acceptance,
)
from .model import (
    EpidemicSeries,
    HospitalizationPropensity,
    InfectiousnessFunction,
    LatentAdmissions,
    ModelParams,
    RegressionParams,
    RegressionSpec,
    discretize_gamma,
    infection_potential,
    params_from_unconstrained,
    params_to_unconstrained,
    rt_trajectory,
)
from .simulate import (
    ScenarioConfig,
    SyntheticCovariates,
    UnderreportSpec,
    corrupt_underreport,
    simulate,
    synth_covariates,
)

__version__ = "0.1.0"
