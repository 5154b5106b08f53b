"""Scan tests for a rectangle of elevated mean in a Gaussian grid field."""
__version__ = "0.1.0"

from .field import (
    FieldError,
    GridField,
    PrefixSumTable,
    Rect,
    SignalSpec,
    inject_signal,
    load_field,
    prefix_sums,
    rect_sum,
    save_field,
    white_noise,
    zscore,
    zscore_field,
)
from .thresholds import (
    CriticalParams,
    Kind,
    ScanFamily,
    alpha_from_tau,
    centering,
    critical_value,
    max_scale,
    oracle_centering,
    pvalue,
    tau_from_alpha,
    tau_hat,
)
from .scanners import (
    RegimeWarning,
    ScanOutcome,
    ShapeRange,
    adaptive_scan,
    modified_adaptive_stat,
    multiscale_scan,
    oracle_scan,
)
from .epsscan import (
    CoveringParams,
    DyadPyramid,
    build_pyramid,
    covering_verify,
    delta_metric,
    enumerate_covering,
    epsilon_adaptive_scan,
)

