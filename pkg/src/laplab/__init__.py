"""Desk-scale laboratory for positive-commutator resolvent estimates of ``-Delta + V``."""
from .errors import ConfigError, LaplabError, NumericalFailure, RefusedError
from .hypotheses import HypothesisReport, check_conditions, evaluate, min_eig_sym, select_c1
from .lattice import Grid, OperatorSet, assemble_operators, build_grid
from .normspace import NormContext, e_surrogate_norm, s_norm, s_star_norm, smoothness_weight
from .potentials import from_id, gaussian_well, inverse_power, resonant_well, zero
from .resolvent import (LapSweepResult, RegularizedTrace, fit_exponent, gaussian_test_vectors,
                        kato_smoothness_probe, lap_sweep, regularized_trace, shifted_solve)

__version__ = "0.1.0"
