"""fairpanel: sortition panel selection that neutralizes self-selection bias.

Pipeline: learn participation probabilities from a pool plus a weighted
background sample (`learning`), assign inverse-probability selection
marginals and check the good-pool conditions (`marginals`), round the
marginals into an explicit lottery over quota-satisfying panels
(`rounding`), and verify end-to-end fairness in simulation against a
greedy baseline (`simulator`, `baseline`).
"""

from .errors import FairpanelError
from .kernels import NUMBA_ENABLED
from .learning import ParticipationModel, build_design, estimate_qbar, fit_mle, predict_q
from .marginals import (
    Instance,
    MarginalAssignment,
    QuotaSet,
    assign_marginals,
    compute_alpha,
    compute_marginals,
    compute_quotas,
    rescale_and_cap,
)
from .numerics import LinearProgram, LpSolution, RandomStream, nullspace_direction, solve_lp, split_stream
from .rounding import Panel, PanelDistribution, beck_fiala_round, build_panel_distribution, sample_panel
from .schema import Agent, Dataset, FeatureSchema, PopulationStats, load_dataset, population_stats_from_background
from .simulator import SyntheticPopulation, estimate_end_to_end, hamilton_apportion, simulate_pool, synthesize_population

__version__ = "0.1.0"
