"""
Discharge-trace anomaly marking against an expected voltage pattern.
"""

import logging
import math
import numpy as np

from scipy.ndimage import median_filter

from .basemodels import (
    AnomalyReport,
    DischargeTrace,
)
from .errors import (
    AllFlagged,
    ArgumentError,
    DegenerateScale,
)


GAUSSIAN_SCALE_FACTOR = 1.4826
SELF_BASELINE_WINDOW  = 11
MIN_TRACE_SAMPLES     = 10


def median_absolute_deviation( x : np.ndarray) -> float :
    """ Median absolute deviation from the median """
    return float( np.median( np.abs( x - np.median(x))) )


def reference_baseline( traces : list[DischargeTrace]) -> DischargeTrace :
    """
    Earliest-cycle trace, used as the healthy reference
    """
    if not traces :
        raise ArgumentError("In reference_baseline: No traces given")
    
    return min( traces, key = lambda t : t.cycle_index)


def expected_voltages( trace    : DischargeTrace,
                       baseline : DischargeTrace | None) -> np.ndarray :
    """
    Expected voltage per sample \\
    Args:
        trace    : Trace under test
        baseline : Reference trace resampled onto the trace's capacity grid,
                   or None for a centered median filter of the trace itself
    """
    if baseline is None :
        return median_filter( trace.voltages, size = SELF_BASELINE_WINDOW, mode = "nearest")
    
    return np.interp( trace.capacities, baseline.capacities, baseline.voltages)


def robust_zscores( residuals : np.ndarray) -> tuple[ np.ndarray, float] :
    """
    ( z-scores, scale) with z = (r - median) / (1.4826 MAD); scale 0 yields NaN z
    """
    scale = GAUSSIAN_SCALE_FACTOR * median_absolute_deviation(residuals)
    if scale == 0.0 :
        return np.full_like( residuals, np.nan), 0.0
    
    return ( residuals - np.median(residuals) ) / scale, scale


def detect_anomalies( trace       : DischargeTrace,
                      baseline    : DischargeTrace | None = None,
                      threshold_z : float = 3.0,
                      strict      : bool  = False) -> AnomalyReport :
    """
    Flag samples deviating from the expected voltage pattern \\
    Args:
        trace       : Trace with at least 10 samples
        baseline    : Reference trace, or None for the smoothed-self baseline
        threshold_z : Flag samples with |z| >= threshold_z
        strict      : Raise DegenerateScale instead of falling back when MAD is zero
    Returns:
        AnomalyReport with flagged ( index, residual, z) sorted by index
    NOTE:
        * With MAD = 0 every nonzero residual is flagged
          with z = +/-inf (unless the threshold itself is infinite).
    """
    if len(trace) < MIN_TRACE_SAMPLES :
        raise ArgumentError(
            f"In detect_anomalies: Trace has {len(trace)} samples, "
            f"at least {MIN_TRACE_SAMPLES} are required"
        )
    if not threshold_z > 0 :
        raise ArgumentError(f"In detect_anomalies: threshold_z must be positive, got {threshold_z}")
    
    residuals = trace.voltages - expected_voltages( trace, baseline)
    z, scale  = robust_zscores(residuals)
    fallback  = False
    
    if scale == 0.0 :
        nonzero = residuals != 0.0
        
        if nonzero.any() :
            if strict :
                raise DegenerateScale(
                    f"In detect_anomalies: MAD is zero but {int(nonzero.sum())} residuals deviate"
                )
            logging.warning( "Zero robust scale on trace %s/%d; flagging %d nonzero residuals",
                             trace.cell_id, trace.cycle_index, int(nonzero.sum()))
            fallback = True
        
        z = np.where( nonzero, np.copysign( np.inf, residuals), 0.0)
        if math.isinf(threshold_z) :
            z = np.zeros_like(z)
    
    hits    = np.flatnonzero( np.abs(z) >= threshold_z )
    flagged = tuple( ( int(i), float(residuals[i]), float(z[i])) for i in hits )
    
    return AnomalyReport( cell_id        = trace.cell_id,
                          cycle_index    = trace.cycle_index,
                          flagged        = flagged,
                          threshold_z    = threshold_z,
                          baseline_kind  = "smoothed-self" if baseline is None else "reference-trace",
                          scale_fallback = fallback )


def feedback_refine( report : AnomalyReport, trace : DischargeTrace) -> DischargeTrace :
    """
    Copy of `trace` with flagged voltages re-interpolated from unflagged neighbours \\
    Interpolation runs over capacity; leading/trailing flagged samples take the
    nearest unflagged value. \\
    Args:
        report : Anomaly report of `trace`
        trace  : Trace to clean
    Returns:
        Cleaned DischargeTrace
    """
    if ( report.cell_id, report.cycle_index) != ( trace.cell_id, trace.cycle_index) :
        raise ArgumentError("In feedback_refine: Report does not refer to this trace")
    
    if not report.flagged :
        return trace.model_copy()
    
    v    = trace.voltages
    q    = trace.capacities
    mask = np.zeros( len(v), dtype = bool)
    mask[report.indices] = True
    
    if mask.all() :
        raise AllFlagged(
            f"In feedback_refine: Every sample of trace {trace.cell_id}/{trace.cycle_index} is flagged"
        )
    
    v[mask] = np.interp( q[mask], q[~mask], v[~mask])
    
    return DischargeTrace( cell_id     = trace.cell_id,
                           cycle_index = trace.cycle_index,
                           samples     = tuple( zip( v.tolist(), q.tolist()) ) )
