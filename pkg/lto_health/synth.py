"""
Synthetic LTO cycle series and discharge traces.
"""

import logging
import numpy as np

from scipy.special import expit
from typing import (
    Any,
    Literal,
)

from .basemodels import (
    CycleRecord,
    DegradationProfile,
    DischargeTrace,
    TraceShape,
)
from .errors import (
    ArgumentError,
    ProfileError,
)
from .health import first_crossing


# Sharpness solved by scripts/calibrate_trace_shape.py so that the
# 2.25-2.30 V window holds 40 mAh at cycle 50 of DEFAULT_PROFILE
DEFAULT_SHAPE = TraceShape( v_max_V           = 2.80,
                            v_min_V           = 1.80,
                            plateau_center_V  = 2.40,
                            plateau_sharpness = 28.5 )

DEFAULT_PROFILE = DegradationProfile( nominal_capacity_mAh = 1000.0,
                                      fade_a               = -4.0e-5,
                                      fade_b               = -0.04,
                                      noise_sd_mAh         = 0.0,
                                      n_cycles             = 500,
                                      seed                 = 0 )

DEFAULT_TRACE_SAMPLES = 201
MIN_TRACE_SAMPLES     = 200

DCHG_RATIO    = 0.99
DCHG_RATIO_SD = 0.001
NOMINAL_CELL_VOLTAGE = 2.4

type AnomalyKind = Literal[ "spike", "sag", "step"]


# =========================================================================================
# PROFILE ALGEBRA
# =========================================================================================

def soh_at( profile : DegradationProfile, cycle : float | np.ndarray) -> float | np.ndarray :
    """
    Analytic SoH(C) = 100 + fade_b C + fade_a C^2
    """
    return 100.0 + ( profile.fade_b + profile.fade_a * cycle ) * cycle


def capacity_at( profile : DegradationProfile, cycle : float | np.ndarray) -> float | np.ndarray :
    """
    Noise-free charge capacity (mAh) at `cycle`
    """
    return profile.nominal_capacity_mAh * soh_at( profile, cycle) / 100.0


def analytic_end_of_life( profile : DegradationProfile, threshold_pct : float = 80.0) -> float | None :
    """
    First cycle after 0 where the profile's SoH reaches `threshold_pct` (None if never)
    """
    return first_crossing( profile.fade_a, profile.fade_b, 100.0 - threshold_pct, 0.0)


def check_profile( profile : DegradationProfile) -> None :
    """
    Raise ProfileError unless SoH stays in (0, 100] over cycles 1 .. n_cycles
    """
    n          = profile.n_cycles
    candidates = [ 1.0, float(n) ]
    if profile.fade_a != 0.0 :
        vertex = -profile.fade_b / ( 2.0 * profile.fade_a )
        if 1.0 < vertex < n :
            candidates.append(vertex)
    
    values = [ soh_at( profile, c) for c in candidates ]
    if max(values) > 100.0 or min(values) <= 0.0 :
        raise ProfileError(
            f"In check_profile: SoH spans [{min(values):.4f}, {max(values):.4f}] "
            f"over cycles 1..{n}, outside (0, 100]"
        )
    
    return


def cell_profiles( profile   : DegradationProfile,
                   n_cells   : int,
                   overrides : dict[ int, dict[ str, Any]] | None = None) -> list[DegradationProfile] :
    """
    Per-cell profiles: cell k gets seed + k and its optional field overrides
    """
    if n_cells < 1 :
        raise ArgumentError(f"In cell_profiles: n_cells must be positive, got {n_cells}")
    
    overrides = overrides or {}
    result    = []
    for k in range(n_cells) :
        fields = profile.model_dump() | overrides.get( k, {}) | { "seed" : profile.seed + k }
        cell   = DegradationProfile.model_validate(fields)
        check_profile(cell)
        result.append(cell)
    
    return result


def cell_name( k : int) -> str :
    return f"cell{k + 1}"

# =========================================================================================
# GENERATORS
# =========================================================================================

def generate_cells( profile   : DegradationProfile,
                    n_cells   : int,
                    overrides : dict[ int, dict[ str, Any]] | None = None) -> list[ list[CycleRecord]] :
    """
    Cycle series of `n_cells` cells \\
    Args:
        profile   : Base degradation profile (cell k uses seed + k)
        n_cells   : Number of cells
        overrides : { cell position : { profile field : value } }
    Returns:
        One list of CycleRecord per cell, cycles 1 .. n_cycles
    """
    cells = []
    for k, cell in enumerate( cell_profiles( profile, n_cells, overrides) ) :
        
        rng    = np.random.default_rng(cell.seed)
        cycles = np.arange( 1, cell.n_cycles + 1)
        chg    = capacity_at( cell, cycles.astype(float))
        
        if cell.noise_sd_mAh > 0 :
            chg = chg + rng.normal( 0.0, cell.noise_sd_mAh, size = len(cycles))
        chg   = np.maximum( chg, 0.0)
        ratio = DCHG_RATIO + rng.normal( 0.0, DCHG_RATIO_SD, size = len(cycles))
        dchg  = np.maximum( chg * ratio, 0.0)
        
        cells.append( [ CycleRecord( cell_id      = cell_name(k),
                                     cycle_index  = int(c),
                                     cap_chg_mAh  = float(q_c),
                                     cap_dchg_mAh = float(q_d),
                                     energy_mWh   = float( q_d * NOMINAL_CELL_VOLTAGE) )
                        for c, q_c, q_d in zip( cycles, chg, dchg) ] )
    
    logging.info( "Generated %d cells of %d cycles", n_cells, profile.n_cycles)
    
    return cells


def generate_trace( profile     : DegradationProfile,
                    shape       : TraceShape,
                    cycle_index : int,
                    n_samples   : int   = DEFAULT_TRACE_SAMPLES,
                    noise_sd_V  : float = 0.0,
                    cell_id     : str   = "cell1") -> DischargeTrace :
    """
    Logistic discharge trace of one cycle \\
    Q(V) = Q_tot (S(v_max) - S(V)) / (S(v_max) - S(v_min)) with S the logistic
    centered on the plateau, sampled on a uniform voltage grid from v_max to v_min. \\
    Args:
        profile     : Degradation profile (sets Q_tot = noise-free cycle capacity)
        shape       : Curve shape
        cycle_index : Cycle in 1 .. n_cycles
        n_samples   : Grid size (at least 200)
        noise_sd_V  : Gaussian voltage noise, seeded by profile seed + cycle
        cell_id     : Cell identifier
    Returns:
        DischargeTrace with capacity rising from 0 to Q_tot
    """
    check_profile(profile)
    
    if not 1 <= cycle_index <= profile.n_cycles :
        raise ArgumentError(
            f"In generate_trace: cycle {cycle_index} outside 1..{profile.n_cycles}"
        )
    if n_samples < MIN_TRACE_SAMPLES :
        raise ArgumentError(
            f"In generate_trace: n_samples must be at least {MIN_TRACE_SAMPLES}, got {n_samples}"
        )
    
    q_tot = capacity_at( profile, float(cycle_index))
    k     = shape.plateau_sharpness
    v     = np.linspace( shape.v_max_V, shape.v_min_V, n_samples)
    
    s      = expit( k * ( v - shape.plateau_center_V ) )
    s_hi   = expit( k * ( shape.v_max_V - shape.plateau_center_V ) )
    s_lo   = expit( k * ( shape.v_min_V - shape.plateau_center_V ) )
    q      = q_tot * ( s_hi - s ) / ( s_hi - s_lo )
    q      = np.maximum.accumulate( np.maximum( q, 0.0) )
    
    if noise_sd_V > 0 :
        rng = np.random.default_rng( profile.seed + cycle_index)
        v   = v + rng.normal( 0.0, noise_sd_V, size = n_samples)
    
    return DischargeTrace( cell_id     = cell_id,
                           cycle_index = cycle_index,
                           samples     = tuple( zip( v.tolist(), q.tolist()) ) )


def generate_traces( profile   : DegradationProfile,
                     shape     : TraceShape,
                     cycles    : list[int],
                     cell_id   : str = "cell1",
                     **kwargs  : Any) -> list[DischargeTrace] :
    """
    `generate_trace` over several cycles of one cell
    """
    return [ generate_trace( profile, shape, c, cell_id = cell_id, **kwargs) for c in cycles ]

# =========================================================================================
# ANOMALY INJECTION
# =========================================================================================

def inject_anomaly( trace       : DischargeTrace,
                    kind        : AnomalyKind,
                    magnitude_V : float,
                    location    : int,
                    width       : int = 5) -> DischargeTrace :
    """
    Copy of `trace` with a voltage perturbation \\
    Args:
        trace       : Source trace (left untouched)
        kind        : "spike" (one sample), "sag" (`width` samples) or "step" (to the end)
        magnitude_V : Voltage offset added to the perturbed samples
        location    : First perturbed sample
        width       : Sag length
    Returns:
        Perturbed copy whose `perturbed` field holds the half-open sample range
    """
    n = len(trace)
    if not 0 <= location < n :
        raise IndexError(f"In inject_anomaly: location {location} outside 0..{n - 1}")
    if not np.isfinite(magnitude_V) :
        raise ArgumentError("In inject_anomaly: magnitude_V must be finite")
    
    if magnitude_V == 0.0 :
        return trace.model_copy()
    
    match kind :
        case "spike" :
            stop = location + 1
        case "sag" :
            stop = min( location + max( width, 1), n)
        case "step" :
            stop = n
        case _ :
            raise ArgumentError(f"In inject_anomaly: Unknown anomaly kind '{kind}'")
    
    v = trace.voltages
    v[ location : stop ] += magnitude_V
    
    return DischargeTrace( cell_id      = trace.cell_id,
                           cycle_index  = trace.cycle_index,
                           samples      = tuple( zip( v.tolist(), trace.capacities.tolist()) ),
                           perturbed    = ( location, stop),
                           perturbation = kind )
