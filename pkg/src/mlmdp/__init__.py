"""Multi-level compression, solving, and skill transfer for tabular MDPs."""

from .compression import compress_level, compress_policy, rollout_oracle
from .curriculum import Curriculum, CurriculumItem, DecompSpec, GeneratorSpec, Hint, learn_curriculum, learn_mdp
from .errors import MlmdpError
from .mdp import END, ActionSet, Policy, StateSpace, TabularMdp, TransitionTable, build_mdp
from .mmdp import MmdpPlan, MmdpResult, solve_mmdp
from .policies import GeneratorSet, convolve, enumerate_policies
from .solver import SolveConfig, SolveResult, bound_trace, iteration_bound, reference_values, value_iterate
from .transfer import Embedding, EmbeddingGenerator, Skill, SkillsRegistry, compose_policy, decompose

__version__ = "0.1.0"

__all__ = [
    "END", "ActionSet", "Curriculum", "CurriculumItem", "DecompSpec", "Embedding", "EmbeddingGenerator",
    "GeneratorSet", "GeneratorSpec", "Hint", "MlmdpError", "MmdpPlan", "MmdpResult", "Policy", "Skill",
    "SkillsRegistry", "SolveConfig", "SolveResult", "StateSpace", "TabularMdp", "TransitionTable", "bound_trace",
    "build_mdp", "compose_policy", "compress_level", "compress_policy", "convolve", "decompose",
    "enumerate_policies", "iteration_bound", "learn_curriculum", "learn_mdp", "reference_values", "rollout_oracle",
    "solve_mmdp", "value_iterate",
]
