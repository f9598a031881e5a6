"""Analytical Lyapunov function discovery for nonlinear dynamical systems.

The pipeline: a symbolic transformer proposes candidate expressions
conditioned on the tokenized dynamics, genetic programming refines each
batch, a global-optimization falsifier hunts for states that violate the
Lyapunov conditions and feeds them back into training, risk-seeking policy
gradients sharpen the generator on its best candidates, and an interval
branch-and-bound certifier provides the final soundness check (with SMT-LIB2
export for external solvers).
"""

__version__ = "0.1.0"

from . import certifier, dynamics, expr, falsifier, gp, policy, reward, trainer
from .certifier import Certificate, certify, export_smtlib, interval_eval
from .dynamics import (
    Domain,
    DynamicalSystem,
    benchmark,
    benchmark_names,
    encode_number,
    parse_infix,
    sample_domain,
    tokenize_system,
)
from .expr import (
    Expr,
    complexity,
    diff,
    eval_batch,
    free_vars,
    lie_derivative,
    parse_prefix,
    simplify,
    subtract_origin,
    to_infix,
    to_prefix,
)
from .falsifier import FalsifyReport, shgo_minimize, verify_batch, verify_candidate
from .gp import GPConfig, crossover, elite_set, evolve, mutate, tournament_select
from .policy import ArchConfig, Candidate, PolicyNet, Vocab, sample_candidates
from .reward import (
    CounterexampleStore,
    PGDSettings,
    lyapunov_risk,
    pgd_minimize,
    reward,
    score_batch,
)
from .trainer import (
    EpochRecord,
    TrainOutcome,
    TrainRunConfig,
    risk_quantile,
    risk_seeking_grad,
    train,
)
