"""Best partitioning policy search for parametric MDPs."""
from partopt.errors import (
    AllCandidatesFailed,
    ConfigInvalid,
    EmptyCandidateSet,
    EmptyPartition,
    InitialStateEliminated,
    InvalidDistribution,
    ModelError,
    PartoptError,
    UnboundParameter,
    UnknownState,
)
from partopt.fmt import ParseError, parse_model, parse_policy, parse_valuation, serialize_model
from partopt.metrics import affected_components, balancing, score, variation
from partopt.model import (
    AvailabilityMask,
    LinExpr,
    ParamGroup,
    Pmdp,
    Policy,
    Valuation,
    enabled_actions,
    eval_expr,
    substitute,
    validate_model,
)
from partopt.prune import apply_policy, eliminate_unavailable, induced_submodel, reachable_states
from partopt.scc import component_params, decompose, size_histogram
from partopt.search import best_policy, build_report, enumerate_candidates, evaluate_candidate

__version__ = "0.1.0"
