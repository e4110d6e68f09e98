"""Data-driven two-grid solvers for parametrized sparse SPD systems.

The package provides CG/PCG and Ruge-Stueben AMG baselines, a two-grid
method whose coarse space is a POD basis of earlier solutions (POD-2G), a
surrogate warm start, dense convergence analysis and benchmark drivers.
"""

from .amg import DofMap, MultigridHierarchy, amg_solve, build_hierarchy, v_cycle
from .analysis import ErrorBoundEstimate, spectral_radius, two_grid_operator, verify_error_bound
from .krylov import AmgPreconditioner, IChol0, ILU0, Jacobi, Preconditioner, cg_solve, pcg_solve
from .pod import Pod2G, Pod2GPreconditioner, PodBasis, compute_pod, pod2g_solve, reduced_solve
from .problems import ParametricProblem, SnapshotSet, generate_snapshots, latin_hypercube_lognormal
from .report import SolveReport
from .smoothers import SmootherConfig
from .sparse import CsrMatrix
from .surrogate import SurrogateModel, TrainConfig, train_mlp

__version__ = "0.1.0"

__all__ = [
    "AmgPreconditioner",
    "CsrMatrix",
    "DofMap",
    "ErrorBoundEstimate",
    "IChol0",
    "ILU0",
    "Jacobi",
    "MultigridHierarchy",
    "ParametricProblem",
    "Pod2G",
    "Pod2GPreconditioner",
    "PodBasis",
    "Preconditioner",
    "SmootherConfig",
    "SnapshotSet",
    "SolveReport",
    "SurrogateModel",
    "TrainConfig",
    "amg_solve",
    "build_hierarchy",
    "cg_solve",
    "compute_pod",
    "generate_snapshots",
    "latin_hypercube_lognormal",
    "pcg_solve",
    "pod2g_solve",
    "reduced_solve",
    "spectral_radius",
    "train_mlp",
    "two_grid_operator",
    "v_cycle",
    "verify_error_bound",
]
