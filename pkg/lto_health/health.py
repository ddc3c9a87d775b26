"""
State of Health, quadratic degradation fits and end-of-life solving.
"""

import logging
import math
import numpy as np

from .basemodels import (
    CycleRecord,
    QuadraticFit,
    RULEstimate,
    SoHSeries,
)
from .errors import (
    ArgumentError,
    InsufficientData,
    RankError,
)


HEURISTIC_CYCLES = 5


# =========================================================================================
# STATE OF HEALTH
# =========================================================================================

def nominal_from_records( records : list[CycleRecord], n_first : int = HEURISTIC_CYCLES) -> float :
    """
    Heuristic nominal capacity: max cap_chg over the first `n_first` cycles
    """
    if not records :
        raise InsufficientData("In nominal_from_records: No records given")
    
    head    = sorted( records, key = lambda r : r.cycle_index)[ : n_first]
    nominal = max( r.cap_chg_mAh for r in head )
    
    if not nominal > 0 :
        raise ArgumentError("In nominal_from_records: Early cycles hold no charge capacity")
    
    logging.info( "Heuristic nominal capacity %.4f mAh from %d cycles", nominal, len(head))
    
    return nominal


def compute_soh( records              : list[CycleRecord],
                 nominal_capacity_mAh : float | None = None) -> SoHSeries :
    """
    SoH = 100 * cap_chg / nominal per cycle \\
    Args:
        records              : Cycle records of one cell
        nominal_capacity_mAh : Rated capacity (None uses the early-cycle heuristic)
    Returns:
        SoHSeries sorted by cycle index, with the overshoot flag set when any SoH > 100
    """
    if not records :
        raise InsufficientData("In compute_soh: No records given")
    
    heuristic = nominal_capacity_mAh is None
    if heuristic :
        nominal_capacity_mAh = nominal_from_records(records)
    
    if not ( math.isfinite(nominal_capacity_mAh) and nominal_capacity_mAh > 0 ) :
        raise ArgumentError(
            f"In compute_soh: Nominal capacity must be positive, got {nominal_capacity_mAh}"
        )
    
    ordered = sorted( records, key = lambda r : r.cycle_index)
    points  = tuple( ( r.cycle_index, 100.0 * r.cap_chg_mAh / nominal_capacity_mAh)
                     for r in ordered )
    
    return SoHSeries( cell_id              = ordered[0].cell_id,
                      nominal_capacity_mAh = nominal_capacity_mAh,
                      points               = points,
                      overshoot            = any( s > 100.0 for _, s in points ),
                      nominal_is_heuristic = heuristic )

# =========================================================================================
# QUADRATIC FIT
# =========================================================================================

def fit_quadratic( series : SoHSeries) -> QuadraticFit :
    """
    Least-squares SoH(C) = a C^2 + b C + c \\
    The solve runs on t = (C - mean) / scale and maps back to the cycle basis. \\
    Args:
        series : SoH series with at least 3 distinct cycles
    Returns:
        QuadraticFit with the RMS residual over the input points
    """
    C = series.cycles
    y = series.soh
    
    if len(np.unique(C)) < 3 :
        raise RankError(
            f"In fit_quadratic: {len(np.unique(C))} distinct cycles cannot determine a quadratic"
        )
    
    center = C.mean()
    scale  = max( float(np.abs( C - center).max()), 1.0)
    t      = ( C - center ) / scale
    
    A = np.vander( t, 3)
    coeffs, _, rank, _ = np.linalg.lstsq( A, y, rcond = None)
    if rank < 3 :
        raise RankError("In fit_quadratic: Design matrix is rank-deficient")
    
    # y = p2 t^2 + p1 t + p0 with t = (C - m) / s
    p2, p1, p0 = coeffs
    m, s = center, scale
    a = p2 / s**2
    b = p1 / s - 2.0 * p2 * m / s**2
    c = p0 - p1 * m / s + p2 * m**2 / s**2
    
    residuals = y - A @ coeffs
    rmse      = float(np.sqrt(np.mean( residuals**2)))
    
    return QuadraticFit( a = float(a), b = float(b), c = float(c),
                         rmse_pct = rmse,
                         n_points = len(C) )


def predict_soh( fit : QuadraticFit, cycle : float) -> float :
    """
    Evaluate a C^2 + b C + c
    """
    return ( fit.a * cycle + fit.b ) * cycle + fit.c

# =========================================================================================
# END OF LIFE
# =========================================================================================

def quadratic_roots( a : float, b : float, c : float) -> list[float] :
    """
    Real roots of a x^2 + b x + c by the cancellation-free formula \\
    Returns:
        Sorted roots (a == 0 falls back to the linear root, or none)
    """
    if a == 0.0 :
        if b == 0.0 :
            return []
        return [ -c / b ]
    
    disc = b * b - 4.0 * a * c
    if disc < 0.0 :
        return []
    
    q  = -0.5 * ( b + math.copysign( math.sqrt(disc), b) )
    r1 = q / a
    r2 = c / q if q != 0.0 else r1
    
    return sorted( ( r1, r2) )


def first_crossing( a : float, b : float, c : float, after : float) -> float | None :
    """
    Smallest real root of a x^2 + b x + c strictly greater than `after`
    """
    future = [ r for r in quadratic_roots( a, b, c) if r > after ]
    
    return future[0] if future else None


def solve_end_of_life( fit           : QuadraticFit,
                       current_cycle : int,
                       threshold_pct : float = 80.0) -> RULEstimate :
    """
    First future cycle where the fitted SoH reaches the threshold \\
    Args:
        fit           : Quadratic SoH fit
        current_cycle : Cycle the estimate is made at
        threshold_pct : End-of-life SoH
    Returns:
        RULEstimate (end of life and RUL are None when never reached)
    """
    eol = first_crossing( fit.a, fit.b, fit.c - threshold_pct, current_cycle)
    
    if eol is None :
        logging.info( "SoH never reaches %.2f%% after cycle %d", threshold_pct, current_cycle)
        return RULEstimate( fit           = fit,
                            current_cycle = current_cycle,
                            threshold_pct = threshold_pct )
    
    return RULEstimate( fit               = fit,
                        current_cycle     = current_cycle,
                        threshold_pct     = threshold_pct,
                        end_of_life_cycle = eol,
                        rul_cycles        = eol - current_cycle )


def estimate_rul( records       : list[CycleRecord],
                  nominal       : float | None = None,
                  threshold_pct : float = 80.0) -> tuple[ SoHSeries, RULEstimate] :
    """
    compute_soh, fit_quadratic and solve_end_of_life at the last observed cycle \\
    Returns:
        ( SoH series, RUL estimate)
    """
    series = compute_soh( records, nominal)
    fit    = fit_quadratic(series)
    last   = int(series.cycles[-1])
    
    return series, solve_end_of_life( fit, last, threshold_pct)
