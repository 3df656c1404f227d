"""Pseudospectral ground states of -Delta u + (-Delta)^s u + u = u^{p+1}.

Matrix-free solvers, variational diagnostics, linearized spectra, kernel
probes, and a reproducible CLI for the mixed local/nonlocal Schrodinger
operator on periodic tensor grids.
"""

from mxgs.spectral import (
    GridSpec,
    RealField,
    SymbolParams,
    apply_multiplier,
    build_grid,
    compute_cns,
    eval_symbol,
    weighted_inner,
)
from mxgs.energies import (
    EnergyBreakdown,
    endpoint_lambda,
    eval_F,
    eval_J,
    lambda_from_state,
    nehari_residual,
    rescale_minimizer,
)
from mxgs.groundstate import (
    ContinuationTrace,
    GroundStateResult,
    SolverConfig,
    continuation_step,
    recenter_symmetrize,
    solve_ground_state,
    sweep_s,
)
from mxgs.linearized import (
    SpectrumReport,
    apply_L,
    eigen_lowest,
    morse_and_kernel_report,
    radial_gap,
    sector_project,
)
from mxgs.kernels import (
    KernelSample,
    TailFit,
    free_space_tail,
    heat_bound_check,
    heat_kernel_eval,
    kato_norm,
    resolvent_kernel_eval,
    semigroup_apply,
    tail_exponent,
)

__version__ = "0.1.0"
