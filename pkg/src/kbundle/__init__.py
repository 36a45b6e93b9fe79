"""k-bundle Newton method for local nonsmooth optimization.

A bundle of ``k`` reference points near a nonsmooth minimizer, sampled with
a second-order oracle, yields a Newton step for the whole bundle at once;
near a minimizer satisfying strong second-order conditions the bundle
contracts k-step quadratically.
"""

from .bundle import (Bundle, bundle_theta, diameter, optimality_certificate,
                     replace_reference, sigma_check, theta)
from .errors import KBundleError
from .newton import (ConvergenceTrace, NewtonConfig, Termination, run_convex,
                     run_newton, run_sum, run_weakly_convex)
from .oracle import FunctionOracle, Oracle, OracleSample, identity_hessian_wrapper
from .phase1 import (estimate_bundle_size, run_bundle_method, run_nonsmooth_bfgs,
                     select_initial_bundle)
from .pipeline import PipelineConfig, run_pipeline
from .problems import (full_bundle_points, generate_euc_sum, generate_max_eig,
                       generate_max_quart)

__version__ = "0.1.0"

__all__ = [
    "Bundle", "bundle_theta", "diameter", "optimality_certificate",
    "replace_reference", "sigma_check", "theta", "KBundleError",
    "ConvergenceTrace", "NewtonConfig", "Termination", "run_convex", "run_newton",
    "run_sum", "run_weakly_convex", "FunctionOracle", "Oracle", "OracleSample",
    "identity_hessian_wrapper", "estimate_bundle_size", "run_bundle_method",
    "run_nonsmooth_bfgs", "select_initial_bundle", "PipelineConfig", "run_pipeline",
    "full_bundle_points", "generate_euc_sum", "generate_max_eig", "generate_max_quart",
]
