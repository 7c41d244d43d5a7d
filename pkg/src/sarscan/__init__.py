"""Spatial scan statistics for continuous data with SAR-based filtering.

Detects statistically significant spatial clusters of high or low values in
continuous outcomes.  Provides the Gaussian likelihood-ratio scan and a
distribution-free scan, plus variants of both that first remove smooth
spatial autocorrelation by filtering the outcome through an estimated
simultaneous autoregressive (SAR) model, which restores test calibration on
correlated data.  Includes spatial weights utilities, Moran's I, Monte Carlo
permutation significance, a simulation harness for method comparison, and a
command-line interface (``sarscan``).
"""

__version__ = "0.1.0"

from .core import (
    CandidateCluster,
    SpatialDataset,
    enumerate_candidates,
    load_dataset_csv,
    load_dataset_geojson,
    membership_matrix,
    pairwise_distances,
)
from .errors import InputDataError, NumericalError, SarScanError, SarScanWarning
from .sar import (
    LogDetEngine,
    RhoSelection,
    SarFit,
    concentrated_loglik,
    estimate_rho,
    fit_sar,
    make_logdet_engine,
    select_rho,
    spatial_filter,
)
from .scan import (
    ClusterReport,
    DetectionResult,
    ScanMethod,
    detect,
    df_index,
    gaussian_llr,
    mc_pvalue,
    mle_h0,
    mle_h1,
    reports_to_csv,
    reports_to_json,
    scan,
)
from .simulate import (
    CellResult,
    ReplicateRecord,
    SimConfig,
    SimResult,
    default_config,
    french94_layout,
    generate_dataset,
    lattice_layout,
    result_to_json,
    results_to_csv,
    run_grid,
    tp_fp_rates,
)
from .weights import (
    WeightsMatrix,
    build_contiguity,
    build_inverse_distance,
    build_knn,
    knn_family,
    load_contiguity_csv,
    load_weights_csv,
    morans_i,
    row_standardize,
    save_weights_csv,
    select_weights,
)

__all__ = [
    "__version__",
    "CandidateCluster",
    "CellResult",
    "ClusterReport",
    "DetectionResult",
    "InputDataError",
    "LogDetEngine",
    "NumericalError",
    "ReplicateRecord",
    "RhoSelection",
    "SarFit",
    "SarScanError",
    "SarScanWarning",
    "ScanMethod",
    "SimConfig",
    "SimResult",
    "SpatialDataset",
    "WeightsMatrix",
    "build_contiguity",
    "build_inverse_distance",
    "build_knn",
    "concentrated_loglik",
    "default_config",
    "detect",
    "df_index",
    "enumerate_candidates",
    "estimate_rho",
    "fit_sar",
    "french94_layout",
    "gaussian_llr",
    "generate_dataset",
    "knn_family",
    "lattice_layout",
    "load_contiguity_csv",
    "load_dataset_csv",
    "load_dataset_geojson",
    "load_weights_csv",
    "make_logdet_engine",
    "mc_pvalue",
    "membership_matrix",
    "mle_h0",
    "mle_h1",
    "morans_i",
    "pairwise_distances",
    "reports_to_csv",
    "reports_to_json",
    "result_to_json",
    "results_to_csv",
    "row_standardize",
    "run_grid",
    "save_weights_csv",
    "scan",
    "select_rho",
    "select_weights",
    "spatial_filter",
    "tp_fp_rates",
]
