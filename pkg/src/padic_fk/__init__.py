"""p-adic heat kernels, jump processes and Feynman-Kac propagators."""
from .errors import ConfigError, NumericRangeError
from .padic import (BallSpec, Character, PadicNumber, ball_measure, character_ball_integral,
                    character_eval, dual_lattice, padic_arith, padic_norm_frac)
from .geometry import (NormProfile, QuaternionElement, division_algebra_check, quaternion_mul,
                       reduced_norm_trace, standard_profile, trace_zero_profile)
from .heatkernel import (HeatKernelParams, RadialDensity, density_at_zero, density_value, moment,
                         radial_law, semigroup_check)
from .rng import RngSpec
from .process import (PathBatch, PathSample, TimeGrid, product_moment_check, sample_increment,
                      sample_path, sample_paths)
from .feynman_kac import KernelEstimate, Potential, estimate_kernel, potential_integral
from .finite_model import (FiniteGroupModel, OperatorMatrix, build_model, exact_bridge_sampler,
                           jump_bridge_sampler, propagator_kernel, vladimirov_matrix)

__version__ = "0.1.0"
