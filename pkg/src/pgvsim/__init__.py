"""Spectral Galerkin simulator for a stochastically forced planetary geostrophic model.

Temperature is the only prognostic variable; horizontal velocity, vertical
velocity and surface pressure are recovered diagnostically from the momentum
balance each step. The package provides the spectral discretization
(Fourier x Sturm-Liouville bases on a periodic box times a unit vertical
interval), the stochastic forcing and time steppers, and a set of ensemble
experiments probing long-time behavior: pullback attraction, tangent-volume
contraction (attractor dimension), and coupling-based mixing.
"""

__version__ = "0.1.0"

import os as _os

# Single-threaded BLAS unless the user already chose: reductions stay
# bit-reproducible across machines and across --jobs fan-out, and the
# ensemble batches are too small for threaded GEMM to win anyway.
for _var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    _os.environ.setdefault(_var, "1")
del _os, _var

from .basis import (
    ModeTable,
    VerticalBasisT,
    VerticalBasisV,
    VerticalBasisW,
    build_mode_table,
    robin_eigenvalues,
    vertical_quadrature,
)
from .fields import (
    CouplingMatrices,
    SpectralSpace,
    build_space,
    from_grid,
    norm_da,
    norm_h,
    norm_v,
    project_low,
    read_snapshot,
    to_grid,
    write_snapshot,
)
from .diagnostics import (
    DiagnosticState,
    dense_momentum_solve,
    momentum_residual,
    surface_pressure,
    velocity_from_temperature,
    vertical_velocity,
)
from .forcing import (
    H0DegenerateError,
    NoiseOperator,
    OUState,
    WienerPath,
    build_noise,
    h0_inverse,
    ou_step,
    stationary_ou_sample,
    wiener_shift,
)
from .stepping import (
    BlowUpError,
    Stepper,
    nonlinear_term,
    step_coupled,
    step_h,
    step_t_direct,
    tangent_step,
)

__all__ = [
    "BlowUpError",
    "CouplingMatrices",
    "DiagnosticState",
    "H0DegenerateError",
    "ModeTable",
    "NoiseOperator",
    "OUState",
    "SpectralSpace",
    "Stepper",
    "VerticalBasisT",
    "VerticalBasisV",
    "VerticalBasisW",
    "WienerPath",
    "build_mode_table",
    "build_noise",
    "build_space",
    "dense_momentum_solve",
    "from_grid",
    "h0_inverse",
    "momentum_residual",
    "nonlinear_term",
    "norm_da",
    "norm_h",
    "norm_v",
    "ou_step",
    "project_low",
    "read_snapshot",
    "robin_eigenvalues",
    "stationary_ou_sample",
    "step_coupled",
    "step_h",
    "step_t_direct",
    "surface_pressure",
    "tangent_step",
    "to_grid",
    "velocity_from_temperature",
    "vertical_quadrature",
    "vertical_velocity",
    "wiener_shift",
    "write_snapshot",
]
