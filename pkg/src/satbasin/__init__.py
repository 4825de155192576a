"""Equilibria, topological indices and attraction basins of linear systems
under saturated state feedback."""

from .basin import (
    Membership,
    boundary_ray_scan,
    basin_point_cloud,
    convexity_probe,
    in_basin,
    symmetry_check,
)
from .degree import index_sum_check, piecewise_affine_degree, safe_radius, winding_number_2d
from .dynamics import (
    FateClassifier,
    Verdict,
    classify_fate,
    convergence_certificate,
    escape_certificate,
    integrate_adaptive,
    solve_lyapunov,
)
from .equilibria import Stability, enumerate_equilibria, equilibrium_index, parity_check
from .model import (
    SystemSpec,
    closed_loop_field,
    load_system,
    counterexample_system,
    place_poles_single_input,
    random_antistable_system,
    region_signature,
    saturate,
    validate_spec,
)

__version__ = "0.1.0"
