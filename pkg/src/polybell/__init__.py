"""Local, non-signaling, quantum and outcome-restricted bounds on bipartite Bell expressions."""

__version__ = "0.1.0"

from .core import (BellExpression, CorrelationTable, JointTerm, MarginalTerm, Relabeling, Scenario,
                   build_cglmp_iprime, build_named, build_vb, check_nonsignaling, evaluate,
                   merge_outcomes, relabel)
from .errors import (InsufficientData, InvalidArgument, InvalidModel, NoViolationPossible,
                     PolybellError, SearchFailed, SolverError)
from .polytope import (DeterministicStrategy, OutcomeRestriction, enumerate_restrictions,
                       local_bound, nonsignaling_bound)
from .ncalg import build_moment_sdp, canonicalize, generate_monomials, npa_bound, restricted_bound
from .sdp import SdpProblem, SolveResult, solve
from .models import QuantumModel, correlations_of, random_model, seesaw
from .analysis import (CountData, evaluate_counts, visibility_threshold,
                       white_noise_correlations)
