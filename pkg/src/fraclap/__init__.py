"""Low-rank tensor methods for control problems with fractional operators.

The pieces fit together like this: `spectral` diagonalizes the discrete
operators, `tensor` and `decomp` provide the canonical/Tucker formats and
the truncation machinery, `fracop` turns spectra plus a scalar function
into low-rank operator cores, and `solver` runs the rank-truncated PCG
that ties everything into control/state solves.  `cli` wraps the lot.
"""

from .decomp import (
    TruncationSpec,
    c2t,
    hosvd,
    multigrid_tucker,
    rhosvd,
    svd_truncate,
    t2c,
    trunc,
    tucker_als,
)
from .fracop import (
    CoreFunctionKind,
    DiagOpFunction,
    LowRankOperator,
    apply,
    build_core,
    core_entry,
    load_operator,
    reciprocal_core,
    save_operator,
    sinc_inverse_power,
    sum_core_exact,
)
from .rhs import DESIGN_TAGS, DesignFunction, random_smooth
from .solver import (
    PcgBreakdownError,
    PcgReport,
    REPORT_COLUMNS,
    SolverConfig,
    build_preconditioner,
    kkt_residual,
    pcg,
    report_row,
    solve_control,
    solve_state,
)
from .spectral import (
    EigenSpectrum,
    Mode1D,
    dense_laplacian_1d,
    dst_apply,
    generalized_mode,
    laplacian_mode,
    laplacian_spectrum,
)
from .tensor import (
    DENSE_CAP,
    CpTensor,
    ResourceLimitError,
    TuckerTensor,
    cp_add,
    cp_hadamard_rank1,
    cp_inner,
    cp_norm,
    cp_normalize,
    cp_scale,
    cp_to_dense,
    load_tensor,
    save_tensor,
    storage_size,
    tucker_to_dense,
)

__version__ = "0.1.0"

__all__ = [
    "CoreFunctionKind",
    "CpTensor",
    "DENSE_CAP",
    "DESIGN_TAGS",
    "DesignFunction",
    "DiagOpFunction",
    "EigenSpectrum",
    "LowRankOperator",
    "Mode1D",
    "PcgBreakdownError",
    "PcgReport",
    "REPORT_COLUMNS",
    "ResourceLimitError",
    "SolverConfig",
    "TruncationSpec",
    "TuckerTensor",
    "apply",
    "build_core",
    "build_preconditioner",
    "c2t",
    "core_entry",
    "cp_add",
    "cp_hadamard_rank1",
    "cp_inner",
    "cp_norm",
    "cp_normalize",
    "cp_scale",
    "cp_to_dense",
    "dense_laplacian_1d",
    "dst_apply",
    "generalized_mode",
    "hosvd",
    "kkt_residual",
    "laplacian_mode",
    "laplacian_spectrum",
    "load_operator",
    "load_tensor",
    "multigrid_tucker",
    "pcg",
    "random_smooth",
    "reciprocal_core",
    "report_row",
    "rhosvd",
    "save_operator",
    "save_tensor",
    "sinc_inverse_power",
    "solve_control",
    "solve_state",
    "storage_size",
    "sum_core_exact",
    "svd_truncate",
    "t2c",
    "trunc",
    "tucker_als",
    "__version__",
]
