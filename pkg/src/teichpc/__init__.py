"""Conformal and landmark-matching extremal mappings of disk-type point
clouds, and the shape metric they induce.

The pipeline flattens a 3D disk-type cloud onto a rectangle whose height is
its conformal module, computes landmark-matching extremal self-maps between
rectangle images, and turns the extremal map's uniform distortion into a
distance usable for registration and classification.
"""

__version__ = "0.1.0"

from .beltrami import (
    alpha_coeffs,
    compose_beltrami,
    diffuse_pcbc,
    dilation,
    feasibility_clamp,
    inverse_coefficient,
    load_complex_field,
    pcbc_from_values,
    save_complex_field,
    teich_distance,
)
from .cloud import (
    ChartSet,
    LocalChart,
    Neighborhood,
    PointCloud,
    UniformityReport,
    build_charts,
    build_knn,
    detect_boundary,
    pca_chart,
    uniformity_report,
)
from .errors import (
    BoundaryError,
    DegenerateJacobianError,
    DegenerateNeighborhoodError,
    DuplicatePointError,
    InfeasibleCoefficientError,
    ParseError,
    RegistrationError,
    SingularStencilError,
    SingularSystemError,
    TeichpcError,
)
from .io import load_cloud, load_landmarks, save_cloud
from .kernels import BACKEND
from .metrics import (
    DistanceMatrix,
    Registration,
    classical_mds,
    distance_matrix,
    loocv_nn,
    register,
    triangle_violations,
)
from .mls import (
    MlsStencil,
    StencilSet,
    WeightSpec,
    build_stencil,
    build_stencils,
    derivative_row,
    weight,
)
from .operators import (
    SparseOperator,
    assemble_M1,
    assemble_M3,
    assemble_hybrid,
    build_rings,
    solve_constrained,
)
from .parameterize import (
    Mapping,
    RectDomain,
    conformal_parameterize,
    disk_to_square_qc,
    harmonic_to_disk,
    optimize_height,
    pct_certificate,
    teichmuller_parameterize,
)
from .synth import (
    BENCH_SCHEMES,
    BenchRecord,
    add_noise,
    bench_operators,
    bump_family,
    log_arcsin_derivatives,
    map_log_arcsin,
    map_stereographic,
    sample_bump_surface,
    sample_quasi_uniform,
    save_bench_records,
)

__all__ = [name for name in dir() if not name.startswith("_")]
