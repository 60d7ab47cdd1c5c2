"""Quantum Markov states on Cayley trees.

Build a state from an initial density and per-vertex transition
expectations, evaluate it on Pauli-string observables, and certify Markov,
translation-invariance and potential properties numerically. The Ising
model with competing interactions is provided ready-made.
"""

__version__ = "0.1.0"

from .engine import (FiniteVolumeValue, QmsHandle, evaluate, evaluate_localized, evaluate_nested,
                     marginal_density, restrict_to_subtree)
from .errors import (BudgetExceededError, ConfigError, IdentityPreservationError, InvalidSubtreeError,
                     NotPositiveError, RegionError, SolverError, TreeError, TreeQMSError, UnsupportedModelError)
from .ising import (ModelSpec, build_amplitude, build_couplings, build_qms, closed_form_alpha,
                    evaluate_explicit_ising, solve_fixed_point)
from .kernels import TransitionExpectation, check_cp, conditional_trace, from_amplitude, level_map, lift
from .operators import PauliString, RegionOperator, pauli_basis
from .specs import parse_model_spec, parse_observable_spec
from .verify import (PotentialDecomposition, VerificationReport, check_commutation, check_level_markov,
                     check_localized_markov, check_sub_qms, check_translation_invariance, extract_potential)

__all__ = [
    "BudgetExceededError", "ConfigError", "FiniteVolumeValue", "IdentityPreservationError", "InvalidSubtreeError",
    "ModelSpec", "NotPositiveError", "PauliString", "PotentialDecomposition", "QmsHandle", "RegionError",
    "RegionOperator", "SolverError", "TransitionExpectation", "TreeError", "TreeQMSError", "UnsupportedModelError",
    "VerificationReport", "build_amplitude", "build_couplings", "build_qms", "check_commutation", "check_cp",
    "check_level_markov", "check_localized_markov", "check_sub_qms", "check_translation_invariance",
    "closed_form_alpha", "conditional_trace", "evaluate", "evaluate_explicit_ising", "evaluate_localized",
    "evaluate_nested", "extract_potential", "from_amplitude", "level_map", "lift", "marginal_density",
    "parse_model_spec", "parse_observable_spec", "pauli_basis", "restrict_to_subtree", "solve_fixed_point",
]
