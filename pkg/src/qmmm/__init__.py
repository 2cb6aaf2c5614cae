"""q-optimal, minimal-entropy and variance-minimal martingale measures for exponential Lévy models."""

__version__ = "0.1.0"

from .errors import (DomainError, InfeasibleError, InsufficientPathsError, InsufficientRowsError,
                     MaxIterError, NoSignChangeError, NonFiniteError, NonIntegrableError,
                     ParseError, QmmmError, QuadratureError, SingularSigmaError)
from .levy_model import (Atoms, Density1D, LambdaDomain, LevyTriplet, drift_b0, exp_to_se,
                         integrate_k, lambda_domain, load_model, model_from_dict, model_to_dict,
                         parse_model, tabulated_density, truncated_double_exponential_density,
                         uniform_density, validate)
from .tilts import (EsscherTilt, FunctionTilt, Identity, PowerTilt, Tilt, check_2_6,
                    entropy_gap, fq_divergence, g_q, k_q, tilt_eval)
from .solvers import (MeasureSolution, SolverOptions, local_optimality_check, phi, phi_dlambda,
                      phi_e, sc_lambda, solve_memm, solve_qmmm, vmmm_crosscheck, vmmm_solution)
from .convergence import SweepReport, convergence_diagnostics, q_sweep
from .mc_verify import (MCReport, PathBatch, check_divergence_mc, check_martingale_mc,
                        density_zT, q_triplet, simulate_paths)
from .oracle import oracle_pq_atoms
