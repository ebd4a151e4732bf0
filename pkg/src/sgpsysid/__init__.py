"""Kernel-based impulse-response identification with scaled gradient projection."""

from .bounds import Bounds, project_box
from .errors import (AllFailedRow, CacheMissing, ConfigError, DegenerateTruth,
                     DerivativeUndefined, DimensionMismatch, FactorizationFailure,
                     InsufficientData, NonFiniteValue, ParamOutOfDomain, SysIdError,
                     UnknownPreset, UnstableSystem)
from .kernels import (Family, KernelSpec, eval_kernel, is_zero_kernel, kernel_gradient,
                      kernel_hessian, make_preset)
from .likelihood import (HyperPoint, LikelihoodObjective, ProblemData, evaluate,
                         evaluate_dense_oracle, hessian, map_estimate, precompute)
from .optimizer import (SolverConfig, SolverResult, Termination, ascbb_solve, scaling_matrix,
                        sgp_solve, split_gradient)
from .sysid import (Dataset, SystemSpec, fit_score, identify, load_dataset, preset_dataset,
                    save_dataset, simulate_dataset)
from .bench import BenchConfig, PerformanceProfile, performance_profile, run_benchmark

__version__ = "0.1.0"
