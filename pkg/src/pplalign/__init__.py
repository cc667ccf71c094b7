"""A small universal PPL with static weight alignment and SMC inference.

Pipeline: parse -> desugar -> label -> analyze (0-CFA + dynamic marking)
-> align weights -> CPS -> run aligned/unaligned SMC or likelihood
weighting.
"""

from .cfa import (
    STOCH, AnalysisResult, Direct, Flow, ImplFlow, Solution, analyze,
    format_constraints, generate_constraints, mark_dynamic, solve_constraints,
)
from .errors import (
    AlignmentError, AnalysisError, DesugarError, InferenceError, PplError,
    RuntimeErrorPpl, SyntaxErrorPpl,
)
from .inference import (
    Particle, SmcResult, log_normalizer, lw_log_normalizer,
    run_aligned_smc, run_likelihood_weighting, run_unaligned_smc,
    systematic_resample,
)
from .label import (
    LambdaInfo, assign_labels, collect_lambdas, dump_labels,
    postorder_label_map,
)
from .runtime import (
    Evaluator, Final, Paused, RngStream, evaluate, prepare, untaint,
)
from .syntax import desugar, parse_and_desugar, parse_program
from .terms import UNIT, alpha_equal, pretty
from .transform import align_weights, cps_transform

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
