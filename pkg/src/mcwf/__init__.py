"""Monte Carlo wave-function simulator for open quantum systems.

Stochastic quantum-jump trajectories driven by an adaptive implicit
multistep integrator, averaged over a master-worker farm.
"""

from .linalg import (Complex128, CsrMatrix, dagger, expm, inner, norm_sq,
                     spmv, tensor, to_csr)
from .ode import ADAMS, BDF, OdeConfig, OdeFailure, OdeSolver
from .operators import (EffectiveGenerator, OperatorSet, coherent, destroy,
                        effective_generator, eye, fock, lindblad_rhs,
                        sigma_minus, sigma_x, sigma_z)
from .rng import DEFAULT_SEED, Lfsr113State, derive_stream, next_u01, seed
from .trajectory import (QuantumProblem, RunOptions, TrajectoryResult,
                         apply_collapse, average_trajectories,
                         locate_jump_time, record_expectation,
                         run_single_trajectory, solve_master_equation)
from .cluster import (ClusterError, NodeId, partition_trajectories,
                      problem_digest, run_inline, run_local_farm, run_master,
                      run_worker)
from .problems import build_jcm, build_photon, build_trilinear, build_unitary

__version__ = "0.1.0"
