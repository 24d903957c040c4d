"""Root cause discovery for a single interventional sample of a linear SEM."""
from .evaluation import ExperimentConfig, RankResult, rank_cdf, root_cause_rank, run_experiment
from .highdim import HighdimConfig, rc_scores_highdim
from .lasso import LassoFit, cv_lasso, lasso_cd
from .numerics import CovMode, cholesky_lower, covariance, forward_solve
from .scoring import (
    GapScore,
    Permutation,
    ScoreReport,
    gap_score,
    generate_permutations,
    is_sufficient,
    population_xi,
    rc_scores,
    rc_scores_all_perms,
    squared_zscores,
    xi_hat,
)
from .sem import Dataset, Intervention, Sem, WeightedDag, sample_interventional, sample_observational

__version__ = "0.1.0"
