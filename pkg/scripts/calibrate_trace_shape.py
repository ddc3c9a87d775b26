#!/usr/bin/env python3
"""
Solve the plateau sharpness that puts a target capacity inside a voltage window.
"""

from __future__ import annotations

import argparse
import sys

from scipy.optimize import bisect

from lto_health.basemodels import TraceShape
from lto_health.dva import (
    DEFAULT_WINDOW,
    window_capacity,
)
from lto_health.synth import (
    DEFAULT_PROFILE,
    DEFAULT_SHAPE,
    generate_trace,
)


def capacity_for( sharpness : float, cycle : int, v_lo : float, v_hi : float) -> float :
    
    shape = TraceShape.model_validate( DEFAULT_SHAPE.model_dump() | { "plateau_sharpness" : sharpness })
    trace = generate_trace( DEFAULT_PROFILE, shape, cycle)
    
    return window_capacity( trace, v_lo, v_hi)


def main() -> int :
    
    parser = argparse.ArgumentParser(
        description = "Calibrate the synthetic trace sharpness against a window capacity.",
    )
    parser.add_argument( "--target", type = float, default = 40.0, help = "Target capacity (mAh)")
    parser.add_argument( "--cycle",  type = int,   default = 50)
    parser.add_argument( "--lo",     type = float, default = 5.0,   help = "Lower sharpness bracket")
    parser.add_argument( "--hi",     type = float, default = 100.0, help = "Upper sharpness bracket")
    args = parser.parse_args()
    
    v_lo, v_hi = DEFAULT_WINDOW
    
    def gap( k : float) -> float :
        return capacity_for( k, args.cycle, v_lo, v_hi) - args.target
    
    if gap(args.lo) * gap(args.hi) > 0 :
        print( f"Target {args.target} mAh is not bracketed by sharpness "
               f"[{args.lo}, {args.hi}]", file = sys.stderr)
        return 1
    
    k = bisect( gap, args.lo, args.hi, xtol = 1e-6)
    
    print(f"Window {v_lo:.2f}-{v_hi:.2f} V, cycle {args.cycle}")
    print(f"plateau_sharpness = {k:.4f}")
    print(f"window capacity   = {capacity_for( k, args.cycle, v_lo, v_hi):.4f} mAh")
    for c in ( 1, 100, 250, 500) :
        print(f"  cycle {c:3d}: {capacity_for( k, c, v_lo, v_hi):.4f} mAh")
    
    return 0


if __name__ == "__main__" :
    raise SystemExit(main())
