"""First-passage (ruin) probabilities of Markov random walks.

Exact spectral quantities for finite-state modulated walks, closed-form
approximations for crossing probabilities, and Monte Carlo machinery to
verify them, with deterministic replication-parallel sampling.
"""

from .laws import (Gaussian, Law, PointMass, ShiftedExponential,
                   TransformDomainError, TwoPoint, law_mean, law_variance)
from .chain import (FirstPassageRecord, LadderSample, RenewalEstimate,
                    Trajectory, WalkModel, estimate_renewal_measure,
                    run_first_passage, sample_ladder_epoch, simulate_path)
from .spectral import (ConjugatePair, CumulantSet, EigenConvergenceError,
                       FiniteModel, PoissonSolution, SpectralDecomposition,
                       StructureError, conjugate_root, cumulants,
                       lambda_derivatives, perron_eigen, solve_poisson,
                       spectral_decomposition, stationary_distribution,
                       tail_root, tilt_model, tilted_operator_matrix,
                       time_reverse)
from .approx import (CorrectedParams, WaldResidual, ZeroDriftParams,
                     bridge_crossing_approx, corrected_joint_approx,
                     edgeworth_cdf, edgeworth_density, inverse_gaussian_cdf,
                     joint_ruin_approx, ladder_excess_cdf, lorden_bound,
                     wald_residual)
from .montecarlo import (DpResult, LadderStats, McEstimate, TailCurve,
                         dp_exact_oracle, enumerate_is_identity,
                         estimate_r_factor, mc_bridge_conditional,
                         mc_first_passage, mc_importance_sampled,
                         mc_ladder_moments, mc_max_tail, mc_overshoot)
from .models import (FixedListSampler, GaussianEnsembleSampler,
                     MatrixProductModel, RcaModel, RcaTestSpec,
                     RotationScalingSampler, build_rca, iid_model,
                     matproduct_first_passage, matproduct_walk,
                     modulated_model, rca_fixed_accuracy, rca_truncated_test)

__version__ = "0.1.0"
