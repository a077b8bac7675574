"""Convex bodies as sublinear log-sum-exp networks.

The same network is read as a gauge or a support function; closed-form maps
from the unit ball give exact convex shapes whose geometric, curvature and
PDE-dependent quantities are all differentiable in the parameters.
"""
from . import autodiff  # noqa: F401  (enables 64-bit mode before anything else)

from .autodiff import (Dual, GradientCheck, central_difference, check_gradient,
                       directional_third, dual_derivative, dual_gradient,
                       gradient, hessian, jacobian)
from .errors import (CheckFailedError, ConfigError, ConvergenceError,
                     DegenerateMapError, DomainError, InitializationError,
                     InvalidBodyError, SolverError, SublinetError)
from .geometry import (GAUGE, SUPPORT, BoundaryFrame, ConvexBody,
                       body_from_function, body_from_net, boundary_frame,
                       export_csv, export_obj, export_svg, gaussian_curvature,
                       hausdorff_estimate, inverse_gauge, map_point, map_points,
                       mean_curvature, polar_body, surface_area,
                       surface_integral, volume, volume_integral, weingarten)
from .net import (SublinearNet, SymmetrizedNet, SymmetryGroup,
                  from_polytope_gauge, from_polytope_support, load_net,
                  normalize_scale, random_net, rotation_group, save_net,
                  validate_positive)
from .optimize import (LbfgsConfig, RunLog, RunLogWriter, adam_minimize,
                       lbfgs_minimize, minimize)
from .pde import (GalerkinSystem, MfsConfig, MfsModel, PdeSolution, RbfBasis,
                  assemble_galerkin, build_rbf_basis, galerkin_precompute,
                  solve_galerkin, solve_torsion_mfs, torsion_eval,
                  torsion_normal_derivative, torsional_rigidity)
from .problems import (FitDataset, FitRunSpec, MetricsReport, StatsRow,
                       TorsionGradientObjective, accuracy_l2, fit_loss,
                       generate_noisy_samples, isoperimetric_deficit,
                       mahler_volume, make_fit_loss, make_mahler_loss,
                       make_minkowski_loss, make_poisson_loss,
                       make_target_body, minkowski_loss,
                       minkowski_relative_error, poisson_objective,
                       run_statistics, torsion_gradient_objectives,
                       uat_harness)
from .quadrature import (BallRule, SphereRule, ball_rule, ball_volume,
                         integrate, sphere_area, sphere_rule)

__version__ = "0.1.0"
