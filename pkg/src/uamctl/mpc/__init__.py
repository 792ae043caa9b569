from .problem import EeTarget, InfeasibleStateError, MpcConfig, MpcControl, \
    MpcProblem, MpcState, MpcWeights, build_problem, stage_cost
from .solver import LinearQuadraticProblem, MpcSolution, SolverDivergence, \
    solve
from .controller import EeMpcController

__all__ = [
    "EeTarget", "InfeasibleStateError", "MpcConfig", "MpcControl",
    "MpcProblem", "MpcState", "MpcWeights", "build_problem", "stage_cost",
    "LinearQuadraticProblem", "MpcSolution", "SolverDivergence", "solve",
    "EeMpcController",
]
