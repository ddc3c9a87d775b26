"""
Differential voltage analysis (dQ/dV) and window-capacity tracking.
"""

import logging
import numpy as np

from typing import Any

from .basemodels import (
    DischargeTrace,
    DVACurve,
)
from .errors import (
    ArgumentError,
    DegenerateTrace,
)


DEFAULT_WINDOW = ( 2.25, 2.30)


def _collapse_equal_voltages( v : np.ndarray, q : np.ndarray) -> tuple[ np.ndarray, np.ndarray] :
    """
    Merge runs of consecutive identical voltages, averaging their capacities
    """
    starts = np.flatnonzero( np.r_[ True, v[1:] != v[:-1] ] )
    counts = np.diff( np.r_[ starts, len(v)] )
    sums   = np.add.reduceat( q, starts)
    
    return v[starts], sums / counts


def _keep_direction( v : np.ndarray, q : np.ndarray, trace : DischargeTrace) -> tuple[ np.ndarray, np.ndarray] :
    """
    Drop samples that do not strictly continue the trace's voltage direction
    """
    steps     = np.diff(v)
    direction = np.sign( v[-1] - v[0] )
    if direction == 0 :
        nonzero   = steps[ steps != 0 ]
        direction = np.sign(nonzero[0]) if len(nonzero) else 0.0
    
    if direction == 0 :
        return v[:1], q[:1]
    
    keep    = [ 0 ]
    extreme = v[0]
    for i in range( 1, len(v)) :
        if ( v[i] - extreme ) * direction > 0 :
            keep.append(i)
            extreme = v[i]
    
    n_dropped = len(v) - len(keep)
    if n_dropped :
        logging.warning( "Dropped %d direction-reversing samples of trace %s/%d",
                         n_dropped, trace.cell_id, trace.cycle_index)
    
    return v[keep], q[keep]


def moving_average( values : np.ndarray, window : int) -> np.ndarray :
    """
    Centered moving average; edge points average over the truncated window
    """
    if window < 1 or window % 2 == 0 :
        raise ArgumentError(f"In moving_average: window must be odd and positive, got {window}")
    
    values = np.asarray( values, dtype = float)
    if window == 1 :
        return values.copy()
    
    half = window // 2
    n    = len(values)
    idx  = np.arange(n)
    lo   = np.maximum( idx - half, 0)
    hi   = np.minimum( idx + half + 1, n)
    csum = np.r_[ 0.0, np.cumsum(values)]
    
    return ( csum[hi] - csum[lo] ) / ( hi - lo )


def compute_dva( trace : DischargeTrace, smoothing_window : int = 5) -> DVACurve :
    """
    Differential curve dQ/dV over adjacent sample pairs \\
    Args:
        trace            : Discharge trace
        smoothing_window : Odd centered moving-average window (1 disables smoothing)
    Returns:
        DVACurve of ( voltage midpoint, signed dQ/dV) points
    """
    if smoothing_window < 1 or smoothing_window % 2 == 0 :
        raise ArgumentError(
            f"In compute_dva: smoothing_window must be odd and positive, got {smoothing_window}"
        )
    
    v, q = _collapse_equal_voltages( trace.voltages, trace.capacities)
    if len(v) >= 2 :
        v, q = _keep_direction( v, q, trace)
    
    if len(v) < 2 :
        raise DegenerateTrace(
            f"In compute_dva: Trace {trace.cell_id}/{trace.cycle_index} collapses to one voltage"
        )
    
    v_mid = 0.5 * ( v[:-1] + v[1:] )
    dq_dv = np.diff(q) / np.diff(v)
    dq_dv = moving_average( dq_dv, smoothing_window)
    
    return DVACurve( points           = tuple( zip( v_mid.tolist(), dq_dv.tolist()) ),
                     cell_id          = trace.cell_id,
                     cycle_index      = trace.cycle_index,
                     smoothing_window = smoothing_window )


def find_peak( curve : DVACurve) -> tuple[ float, float] :
    """
    Point of largest |dQ/dV| \\
    Returns:
        ( v_mid, signed dq_dv)
    """
    i = int( np.argmax( np.abs(curve.dq_dv) ) )
    
    return curve.points[i]


def window_capacity( trace : DischargeTrace, v_lo : float, v_hi : float) -> float :
    """
    Charge delivered while the voltage lies in [v_lo, v_hi] \\
    Each sample pair contributes |dQ| times the fraction of its voltage span
    inside the window; pairs at constant voltage count fully when inside. \\
    Args:
        trace : Discharge trace
        v_lo  : Window lower bound (V)
        v_hi  : Window upper bound (V)
    Returns:
        Window capacity (mAh), 0 for an empty intersection
    """
    if not v_lo < v_hi :
        raise ArgumentError(f"In window_capacity: Need v_lo < v_hi, got [{v_lo}, {v_hi}]")
    
    v  = trace.voltages
    dq = np.abs(np.diff(trace.capacities))
    if len(v) < 2 :
        return 0.0
    
    lo   = np.minimum( v[:-1], v[1:])
    hi   = np.maximum( v[:-1], v[1:])
    span = hi - lo
    
    overlap = np.clip( np.minimum( hi, v_hi) - np.maximum( lo, v_lo), 0.0, None)
    flat    = span == 0
    frac    = np.where( flat,
                        ( ( lo >= v_lo ) & ( lo <= v_hi ) ).astype(float),
                        overlap / np.where( flat, 1.0, span) )
    
    return float( np.sum( dq * frac) )


def fade_series( traces : list[DischargeTrace],
                 v_lo   : float = DEFAULT_WINDOW[0],
                 v_hi   : float = DEFAULT_WINDOW[1]) -> list[ tuple[ int, float]] :
    """
    Window capacity per trace, sorted by cycle index
    """
    if not traces :
        raise ArgumentError("In fade_series: No traces given")
    
    return [ ( t.cycle_index, window_capacity( t, v_lo, v_hi))
             for t in sorted( traces, key = lambda t : t.cycle_index) ]


def dva_summary( trace            : DischargeTrace,
                 windows          : list[ tuple[ float, float]] | None = None,
                 smoothing_window : int = 5) -> dict[ str, Any] :
    """
    JSON-ready summary of one trace \\
    Returns:
        { "cell", "cycle", "peak_v", "peak_dqdv", "window_capacities" }
    """
    curve          = compute_dva( trace, smoothing_window)
    peak_v, peak_d = find_peak(curve)
    windows        = windows or [ DEFAULT_WINDOW ]
    
    return {
        "cell"              : trace.cell_id,
        "cycle"             : trace.cycle_index,
        "peak_v"            : peak_v,
        "peak_dqdv"         : peak_d,
        "window_capacities" : [ { "v_lo" : lo, "v_hi" : hi,
                                  "mAh"  : window_capacity( trace, lo, hi) }
                                for lo, hi in windows ],
    }
