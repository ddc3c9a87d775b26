"""
Evaluation metrics, timing and comparison tables.
"""

import time
import numpy as np

from typing import (
    Any,
    Callable,
    Sequence,
)

from .basemodels import (
    ComparisonRow,
    EvalResult,
)
from .errors import ArgumentError


PUBLISHED_LABEL = "published"

# Full-scale figures of the published encoder; reference only, not targets
PUBLISHED_REFERENCE : dict[ str, float | int] = {
    "train_mse"          : 655290.2594,
    "test_mse"           : 654172.7254,
    "batches_evaluated"  : 122,
    "batches_per_second" : 13.30,
    "parameter_count"    : 109483009,
    "mae_pct_table"      : 0.81,
    "mae_pct_abstract"   : 0.87,
}

PUBLISHED_TABLE : tuple[ ComparisonRow, ...] = tuple(
    ComparisonRow( method_name = name, mae_pct = mae, time_seconds = secs, source = PUBLISHED_LABEL)
    for name, mae, secs in ( ( "GPR", 21.00, 34.50),
                             ( "RD",   8.74, 27.50),
                             ( "SVR",  4.27, 22.00),
                             ( "CNN", 10.31, 30.00),
                             ( "LLM",  0.81, 61.17) )
)

MAE_PCT_NOTE = "MAE(%) = MAE / nominal capacity * 100; Time in seconds"


def timeit( action : Callable[ [], Any]) -> tuple[ Any, float] :
    """
    Run `action` under the monotonic performance clock \\
    Returns:
        ( action result, wall seconds)
    """
    start  = time.perf_counter()
    result = action()
    
    return result, time.perf_counter() - start


def evaluate( y_true          : Sequence[float],
              y_pred          : Sequence[float],
              timing          : tuple[ float, int] = ( 0.0, 0),
              parameter_count : int = 0,
              nominal         : float | None = None) -> EvalResult :
    """
    Error, fit and throughput metrics \\
    Args:
        y_true          : Targets
        y_pred          : Predictions
        timing          : ( inference seconds, batches evaluated)
        parameter_count : Trainable scalars of the model
        nominal         : Nominal capacity for MAE(%) (None leaves it unset)
    Returns:
        EvalResult (constant targets or zero timing set the degenerate flags)
    """
    y     = np.asarray( y_true, dtype = float)
    y_hat = np.asarray( y_pred, dtype = float)
    
    if y.ndim != 1 or y.shape != y_hat.shape :
        raise ArgumentError(
            f"In evaluate: Length mismatch ( {len(y)} targets, {len(y_hat)} predictions)"
        )
    if len(y) == 0 :
        raise ArgumentError("In evaluate: Empty input")
    
    seconds, n_batches = timing
    if seconds < 0 :
        raise ArgumentError(f"In evaluate: Negative timing {seconds}")
    
    residual = y - y_hat
    mse      = float(np.mean( residual**2 ))
    mae      = float(np.mean( np.abs(residual) ))
    
    ss_res = float(np.sum( residual**2 ))
    ss_tot = float(np.sum( ( y - y.mean() )**2 ))
    if ss_tot > 0 :
        r2, r2_degenerate = 1.0 - ss_res / ss_tot, False
    else :
        r2, r2_degenerate = ( 1.0 if ss_res == 0 else -np.inf ), True
    
    if seconds > 0 :
        bps, throughput_degenerate = n_batches / seconds, False
    else :
        bps, throughput_degenerate = 0.0, True
    
    return EvalResult( mse                   = mse,
                       mae                   = mae,
                       mae_pct               = None if nominal is None else 100.0 * mae / nominal,
                       r2                    = r2,
                       r2_degenerate         = r2_degenerate,
                       n                     = len(y),
                       inference_seconds     = seconds,
                       batches_per_second    = bps,
                       throughput_degenerate = throughput_degenerate,
                       parameter_count       = parameter_count )


def comparison_table( rows              : Sequence[ComparisonRow],
                      include_reference : bool = True) -> tuple[ str, list[ dict[ str, Any]] ] :
    """
    Rows sorted by MAE(%) ascending \\
    Args:
        rows              : Measured rows
        include_reference : Prepend the published comparison rows
    Returns:
        ( aligned plain-text table, JSON-ready list of rows)
    """
    all_rows = list( PUBLISHED_TABLE if include_reference else () ) + list(rows)
    if not all_rows :
        raise ArgumentError("In comparison_table: No rows to tabulate")
    
    ordered = sorted( all_rows, key = lambda r : r.mae_pct)
    
    return format_table(ordered), [ r.model_dump( mode = "json") for r in ordered ]


def format_table( rows : Sequence[ComparisonRow]) -> str :
    """
    Plain-text table with columns Method, MAE(%), Time(s), Source
    """
    header = ( "Method", "MAE(%)", "Time(s)", "Source")
    body   = [ ( r.method_name, f"{r.mae_pct:.2f}", f"{r.time_seconds:.2f}", r.source)
               for r in rows ]
    
    widths = [ max( len(cells[j]) for cells in [ header, *body ] ) for j in range(4) ]
    
    def line( cells : tuple[ str, ...]) -> str :
        return "  ".join( [ cells[0].ljust(widths[0]) ]
                          + [ c.rjust(w) for c, w in zip( cells[1:3], widths[1:3]) ]
                          + [ cells[3].ljust(widths[3]) ] ).rstrip()
    
    sep = "  ".join( "-" * w for w in widths )
    
    return "\n".join( [ line(header), sep, *( line(b) for b in body ) ] )
