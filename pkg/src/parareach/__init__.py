"""Reachable sets of LTI systems under integral quadratic constraints.

The reachable set of ``xdot = A x + B w + B_u u``, with the disturbance w
limited by a running energy budget, is bounded by time-varying paraboloids in
the augmented (state, remaining-budget) space.  Their parameters solve an
initial value problem built around a matrix Riccati equation; intersecting a
family of scaled propagations tightens the bound, down to the reachable set
itself in the limit under boundedness and falling-budget hypotheses.
"""

from .errors import (AsymmetricMatrix, ConfigError, DimensionMismatch,
                     NonPositiveScale, NotNegativeDefinite, NotOnBoundary,
                     OutOfDomain, ParareachError, RejectionStarvation,
                     SingularMw, StepSizeUnderflow, UnboundedSlab)
from .family import (AssumptionReport, ParaboloidFamily, ReachSlice,
                     build_family, check_assumptions, find_nonconvex_witness,
                     gamma_bar, intersection_membership, membership_margins,
                     reach_slice, rising_energy_violations, sample_slab_states,
                     xq_max_at)
from .model import (AugmentedState, IqcSystem, Paraboloid, make_system,
                    scale_paraboloid, system_from_json, value_function)
from .oracle import (CoverageReport, OracleConfig, coverage, endpoints_to_csv,
                     sample_admissible)
from .riccati import (IntegratorConfig, TimeVaryingParaboloid, eval_paraboloid,
                      f_rhs, g_quadrature_matrix, propagate, riccati_rhs)
from .signals import SampledSignal, ZeroSignal, signal_from_json
from .touching import (AugmentedTrajectory, ParaboloidRate,
                       optimal_disturbance, paraboloid_rate,
                       touching_trajectory, trace_back_to_seed,
                       value_derivative, xq_rate_at_zero)

__version__ = "0.1.0"
