"""Finite-element simulation of the Bloch-Torrey equation for diffusion MRI.

Internal unit system: um, us, Tesla. Diffusivities in mm^2/s, b-values in
s/mm^2 and permeabilities in m/s carry over numerically unchanged.
"""

from .assembly import DofLayout, FemSystem, build_system
from .mesh import (Mesh, build_structured_mesh, find_periodic_pairs, geometry_tables,
                   interface_facets, phase_from_marker)
from .msh import load_native, parse_msh, read_msh, read_native, save_native, \
    to_mesh, write_native
from .oracle import FdConfig, analytic_free_signal, analytic_t2_factor, \
    fd_reference_signal
from .periodic import build_strong_constraint, build_weak_periodic, compute_kappa_e, \
    prolong_vector, reduce_matrix, reduce_vector, weak_periodic_step_terms
from .sequences import (GAMMA, GradientSpec, TemporalProfile, b_from_g, cos_ogse,
                        double_pgse, double_trapezoidal_pgse, g_from_b, pgse,
                        sin_ogse, trapezoidal_pgse)
from .signals import SignalRecord, compute_signal, write_csv
from .stepper import (MagState, Problem, StepperConfig, build_problem, fem_system_for,
                      form_step_system, nodal_initial_values, run_simulation,
                      signal_trace, solve_linear, time_grid)

__version__ = "0.1.0"
