"""Semi-proximal generalized ADMM with convergence certificates."""

from .blockspace import BlockVector, LinearMap, apply, gram_norm, spectral_max, spectral_min
from .errors import (
    ConfigurationError,
    DecompositionError,
    DimensionError,
    DomainError,
    InsufficientDataError,
    ParseError,
    PSDViolationError,
    SpgadmmError,
    ValidationError,
)
from .functions import BoxIndicator, ConvexFunctionOracle, L1Norm, ZeroPart
from .problem import (
    InstanceDims,
    IterateTriple,
    KnownSolution,
    ProblemInstance,
    generate_with_known_kkt,
    kkt_residual,
    load_instance,
    save_instance,
)
from .solver import (
    ProximalTermPair,
    SolverConfig,
    SolveTrace,
    build_proximal_terms,
    sgs_operator,
    solve,
    x_update,
    y_update,
    z_update,
)

__version__ = "0.1.0"
