"""Latent spatial potential estimation from concurrent, mutually absorbing
point measurements: EM fitting, information/bootstrap uncertainty, kriged
potential surfaces, and greedy total-potential network search."""

__version__ = "0.1.0"

from .core import (GridSpec, IndexPartition, ParamVector, SiteSet, Surface,
                   cross_distances, distance_matrix, partition)
from .errors import (AllMissing, AlphaNotOne, CovariateCoverageGap,
                     DimensionMismatch, EmptyFeasibleSet, NonPositiveTheta,
                     NoUncertaintySource, ParseError, PotentialModelError,
                     RankDeficientX, SingularCovariance, SingularInformation)
from .kernels import (CorrelationSpec, InteractionSpec, absorption_weights,
                      correlation_matrix, g_phi_gradient, g_tilde_matrix,
                      g_vector, g_weight, interaction_f)
from .model import CovarianceBundle, assemble, log_likelihood, simulate
from .estimation import (EMOptions, EStepResult, FitResult, default_init,
                         e_step, expected_complete_loglik, fit_em,
                         m_step_closed, m_step_numeric)
from .inference import (BootstrapSample, InfoMatrix, WaldIntervals, bootstrap,
                        epsilon_and_derivatives, fisher_information,
                        wald_intervals)
from .prediction import (PredictionTargets, TotalPotentialResult,
                         conditional_surface, default_grid, krige_latent,
                         potential_surface, total_potential,
                         uncertainty_surfaces)
