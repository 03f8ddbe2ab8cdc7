"""Two-step optimal transport with an intermediate kick potential."""

from .catalog import PotentialCatalogEntry, get_kernel, get_potential
from .conditions import (ConditionReport, MtwEvaluation, check_H1, check_H2, check_H2c,
                         coulomb_mtw_lhs, meanfield_domain_conditions, mtw_tensor, q_convexity)
from .errors import TwostepError, ValidationError
from .legendre import DiscreteConjugate, LegendreDual, legendre_transform
from .measures import DiscreteMeasure, Domain, Grid, binned_density, pushforward, wasserstein2
from .meanfield import (FixedPointTrace, MeanFieldProblem, convolve_potential, fixed_point_solve,
                        interaction_energy, kernel_condition_screen)
from .ot_core import CostMatrix, TransportPlan, plan_to_map, solve_entropic, solve_exact
from .parallel import set_threads
from .potentials import Polynomial, RadialPower, ScalarField, modified_potential
from .solver import (TwoStepProblem, TwoStepSolution, inner_minimizer, ma_residual,
                     problem3_functional, reduced_cost, solve)

__version__ = "0.1.0"
