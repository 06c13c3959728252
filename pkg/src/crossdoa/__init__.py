"""Multi-target angle estimation in multipath MIMO radar.

Sparse Bayesian estimation of direct-path angles that treats inter-target
bounce paths as structure rather than interference: a cross-shaped Ising
support prior ties each bounce cell to the two direct-path cells it implies,
inference alternates between variational updates and message passing on that
graph, and a fast inner loop learns continuous off-grid angle corrections.
"""

from .scenario import (RadarConfig, Target, Scenario, Observation,
                       steering_vector, gain_direct, gain_first_order,
                       synthesize, generate_observation)
from .grid import (GridModel, Dictionaries, build_grid, measurement_matrix,
                   column_derivative, nearest_grid_assignment,
                   GridCollisionError)
from .prior import SparsityHyper, CrossIsing, edges, log_unnormalized, \
    bruteforce_marginals
from .inference import (PosteriorState, TurboPrior, update_qx, update_qrho,
                        update_qs, update_qgamma, extrinsic_out, elbo,
                        cavi_sweeps, FactorizationError)
from . import crossmp
from .crossmp import MessageState, TurboInbound
from .mstep import (ActiveSet, MStepConfig, ArmijoConfig, select_grids,
                    objective, grad_offsets, ascend_offsets, update_omega)
from .driver import AlgorithmConfig, Estimate, sf_tvbi, turbo_vbi, omp, \
    extract_angles
from .harness import ExperimentConfig, TrialRecord, run_trial, rmse, \
    detection_probability

__version__ = "0.1.0"
