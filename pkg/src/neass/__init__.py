"""Finite-lattice laboratory for super-adiabatic dressing of gapped fermion systems."""

__version__ = "0.1.0"

from .caralg import (FockOperator, FockSpace, LatticeGeometry, build_fock, conditional_expectation,
                     gauge_transform, localization_norm, tracial_state)
from .interaction import (Interaction, LipschitzPotential, center, commutator_interaction, interaction_norm,
                          l_localization_profile, liouvillian_apply, zero_chain)
from .spectral import (FilterFunction, GapError, GroundStateFunctional, SpectralData, diagonalize, filter_hat,
                       gap_condition_check, inverse_liouvillian, inverse_liouvillian_interaction,
                       off_diagonal_part, spectral_flow_check)
from .schedule import Ramp, Schedule, default_observables, ssh_neass_schedule, ssh_ramp_schedule
from .expansion import (BigradedSeries, DressingGenerator, assemble, cancellation_residual, collect_orders,
                        solve_order, time_derivative_K)
from .dynamics import (Propagator, StiffnessError, SuperAdiabaticState, drift, evolve, lieb_robinson_probe,
                       neass_drift, neass_state)
from .fitting import FitError, fit_slope

__all__ = [name for name in dir() if not name.startswith("_")]
