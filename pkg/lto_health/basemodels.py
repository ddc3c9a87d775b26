"""
BaseModel Classes
"""

import math
import numpy as np

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    model_validator,
)
from typing import (
    Annotated,
    Literal,
    Self,
)

from sofia_utils.io import JSON_INDENT
from sofia_utils.printing import print_ind

from .errors import ConfigError


# =========================================================================================
# COMMON TYPES
# =========================================================================================

type Real = Annotated[ float, Field( allow_inf_nan = False)]
""" Finite real """

type NN_float = Annotated[ float, Field( ge = 0, allow_inf_nan = False)]
""" Non-negative finite real """

type Pos_float = Annotated[ float, Field( gt = 0, allow_inf_nan = False)]
""" Positive finite real """

type NN_int = Annotated[ int, Field( ge = 0)]
""" Non-negative integer """

type Pos_int = Annotated[ int, Field( ge = 1)]
""" Positive integer (cycle indices start at 1) """

type NE_str = Annotated[ str, Field( min_length = 1)]
""" Non-empty string """

type ColIndex = Annotated[ int, Field( ge = 0)]
""" Zero-based column index """

type Sample = tuple[ Real, NN_float]
""" Discharge sample ( voltage_V, capacity_mAh) """

type Bounds = tuple[ Real, Real]
""" Min-max normalization bounds ( min, max) """


def _strictly_monotone( values : list[float]) -> bool :
    
    diffs = np.diff(np.asarray( values, dtype = float))
    
    return bool( np.all( diffs > 0) or np.all( diffs < 0) )

# =========================================================================================
# INGESTION BASEMODELS
# =========================================================================================

class ColumnSchema(BaseModel) :
    """
    Resolved column roles of a delimited battery log
        `charge_capacity_col`    : <index of Cap_Chg(mAh)>
        `discharge_capacity_col` : <index of Cap_DChg(mAh)>
        `voltage_col`            : <index of Voltage(V)> | null
        `cycle_col`              : <index of Cycle> | null
        `energy_col`             : <index of Energy(mWh)> | null
        `extras`                 : [ ( "<name>", <index>), ... ]
    NOTE:
        * `extras` carries temperature / current under those role names and
          passes every other unrecognized column through under its header text.
        * Cycle logs need both capacity roles (`ingest.detect_schema`); discharge
          traces need voltage plus one capacity role (`ingest.detect_trace_schema`).
    """
    model_config = ConfigDict( frozen = True)
    
    charge_capacity_col    : ColIndex | None = None
    discharge_capacity_col : ColIndex | None = None
    voltage_col            : ColIndex | None = None
    cycle_col              : ColIndex | None = None
    energy_col             : ColIndex | None = None
    extras                 : tuple[ tuple[ NE_str, ColIndex], ...] = ()
    
    @model_validator( mode = "after")
    def check_distinct(self) -> Self :
        
        indices = [ idx for idx in ( self.charge_capacity_col,
                                     self.discharge_capacity_col,
                                     self.voltage_col,
                                     self.cycle_col,
                                     self.energy_col ) if idx is not None ]
        indices.extend( idx for _, idx in self.extras )
        
        if len(indices) != len(set(indices)) :
            raise ValueError(f"Column indices must be distinct, got {indices}")
        
        return self
    
    def extra( self, name : str) -> int | None :
        """
        Index of the extra column with role `name`, if any
        """
        for extra_name, idx in self.extras :
            if extra_name == name :
                return idx
        
        return None
    
    @property
    def width(self) -> int :
        """ Minimum row width implied by the resolved indices """
        
        indices = [ idx for idx in ( self.charge_capacity_col,
                                     self.discharge_capacity_col,
                                     self.voltage_col,
                                     self.cycle_col,
                                     self.energy_col ) if idx is not None ]
        indices.extend( idx for _, idx in self.extras )
        
        return max(indices) + 1

class CycleRecord(BaseModel) :
    """
    One charge/discharge cycle of one cell
        `cell_id`       : "<cell identifier>"
        `cycle_index`   : <cycle number, from 1>
        `cap_chg_mAh`   : <charge capacity>
        `cap_dchg_mAh`  : <discharge capacity>
        `energy_mWh`    : <energy> | null
        `temperature_C` : <temperature> | null
    """
    model_config = ConfigDict( frozen = True)
    
    cell_id       : NE_str
    cycle_index   : Pos_int
    cap_chg_mAh   : NN_float
    cap_dchg_mAh  : NN_float
    energy_mWh    : NN_float | None = None
    temperature_C : Real     | None = None

class DischargeTrace(BaseModel) :
    """
    Instantaneous discharge samples within one cycle
        `cell_id`     : "<cell identifier>"
        `cycle_index` : <cycle number>
        `samples`     : [ ( <voltage_V>, <capacity_mAh>), ... ]
        `perturbed`   : ( <start>, <stop>) | null
        `perturbation`: "spike" | "sag" | "step" | null
    NOTE:
        * Capacity is cumulative within the discharge and never decreases.
        * `perturbed` is the half-open sample range touched by `synth.inject_anomaly`.
    """
    model_config = ConfigDict( frozen = True)
    
    cell_id      : NE_str
    cycle_index  : Pos_int
    samples      : Annotated[ tuple[ Sample, ...], Field( min_length = 1)]
    perturbed    : tuple[ NN_int, NN_int] | None = None
    perturbation : Literal[ "spike", "sag", "step"] | None = None
    
    @model_validator( mode = "after")
    def check_capacity_order(self) -> Self :
        
        capacities = [ q for _, q in self.samples ]
        if any( q1 < q0 for q0, q1 in zip( capacities[:-1], capacities[1:]) ) :
            raise ValueError("Trace capacity must be non-decreasing")
        
        return self
    
    @property
    def voltages(self) -> np.ndarray :
        return np.array( [ v for v, _ in self.samples ], dtype = float)
    
    @property
    def capacities(self) -> np.ndarray :
        return np.array( [ q for _, q in self.samples ], dtype = float)
    
    @property
    def total_capacity(self) -> float :
        return self.samples[-1][1] - self.samples[0][1]
    
    def __len__(self) -> int :
        return len(self.samples)

class FeatureMatrix(BaseModel) :
    """
    Windowed, min-max normalized model inputs
        `rows`          : [ ( <feature>, ...), ... ]  each of width window * step_width
        `labels`        : [ <next-cycle cap_chg (mAh)>, ... ]
        `normalization` : [ ( <min>, <max>), ... ]  one pair per step feature
        `feature_names` : [ "<step feature name>", ... ]
        `window`        : <cycles per row>
        `label_bounds`  : ( <min label>, <max label>)
        `anchors`       : [ <last observed cap_chg of the row (mAh)>, ... ]
        `cycle_indices` : [ <cycle index of each label>, ... ]
        `cell_ids`      : [ "<cell of each row>", ... ]
        `train_idx`     : [ <row index>, ... ]
        `test_idx`      : [ <row index>, ... ]
    """
    model_config = ConfigDict( frozen = True)
    
    rows          : tuple[ tuple[ Real, ...], ...]
    labels        : tuple[ Real, ...]
    normalization : tuple[ Bounds, ...]
    feature_names : tuple[ NE_str, ...]
    window        : Pos_int
    label_bounds  : Bounds
    anchors       : tuple[ Real, ...]
    cycle_indices : tuple[ Pos_int, ...]
    cell_ids      : tuple[ NE_str, ...]
    train_idx     : tuple[ NN_int, ...]
    test_idx      : tuple[ NN_int, ...]
    
    @model_validator( mode = "after")
    def check_shapes(self) -> Self :
        
        n     = len(self.rows)
        width = self.window * self.step_width
        
        if len(self.normalization) != len(self.feature_names) :
            raise ValueError("One normalization pair per step feature is required")
        if any( len(row) != width for row in self.rows ) :
            raise ValueError(f"Every row must have width {width}")
        for name, values in ( ( "labels",        self.labels),
                              ( "anchors",       self.anchors),
                              ( "cycle_indices", self.cycle_indices),
                              ( "cell_ids",      self.cell_ids) ) :
            if len(values) != n :
                raise ValueError(f"Field '{name}' must have one entry per row")
        if any( not ( 0.0 <= x <= 1.0 ) for row in self.rows for x in row ) :
            raise ValueError("Normalized features must lie in [0, 1]")
        
        split = sorted( self.train_idx + self.test_idx )
        if split != list(range(n)) :
            raise ValueError("Train and test indices must partition the rows")
        
        return self
    
    @property
    def step_width(self) -> int :
        return len(self.feature_names)
    
    @property
    def X(self) -> np.ndarray :
        return np.array( self.rows, dtype = float).reshape( len(self.rows), -1)
    
    @property
    def y(self) -> np.ndarray :
        return np.array( self.labels, dtype = float)
    
    def sequences( self, idx : list[int] | tuple[ int, ...] | None = None) -> np.ndarray :
        """
        Rows reshaped into sequences \\
        Args:
            idx : Row indices (defaults to all rows)
        Returns:
            Array of shape ( len(idx), window, step_width)
        """
        X = self.X
        if idx is not None :
            X = X[ list(idx) ]
        
        return X.reshape( len(X), self.window, self.step_width)

# =========================================================================================
# SYNTHESIS BASEMODELS
# =========================================================================================

class DegradationProfile(BaseModel) :
    """
    Quadratic SoH fade profile SoH(C) = 100 + fade_b * C + fade_a * C^2
        `nominal_capacity_mAh` : <fresh-cell capacity>
        `fade_a`               : <per-cycle^2 SoH coefficient>
        `fade_b`               : <per-cycle SoH coefficient>
        `noise_sd_mAh`         : <capacity noise standard deviation>
        `n_cycles`             : <cycles to generate>
        `seed`                 : <PRNG seed of cell 0>
    """
    model_config = ConfigDict( frozen = True)
    
    nominal_capacity_mAh : Pos_float = 1000.0
    fade_a               : Real      = -4.0e-5
    fade_b               : Real      = -0.04
    noise_sd_mAh         : NN_float  = 0.0
    n_cycles             : Pos_int   = 500
    seed                 : int       = 0

class TraceShape(BaseModel) :
    """
    Logistic discharge curve shape
        `v_max_V`           : <voltage at the start of discharge>
        `v_min_V`           : <cut-off voltage>
        `plateau_center_V`  : <voltage of the dominant dQ/dV peak>
        `plateau_sharpness` : <logistic slope (1/V)>
    """
    model_config = ConfigDict( frozen = True)
    
    v_max_V           : Real
    v_min_V           : Real
    plateau_center_V  : Real
    plateau_sharpness : Pos_float
    
    @model_validator( mode = "after")
    def check_voltages(self) -> Self :
        
        if not ( self.v_min_V < self.plateau_center_V < self.v_max_V ) :
            raise ValueError("Need v_min_V < plateau_center_V < v_max_V")
        
        return self

# =========================================================================================
# ANALYSIS BASEMODELS
# =========================================================================================

class DVACurve(BaseModel) :
    """
    Differential voltage curve of one trace
        `points`           : [ ( <v_mid_V>, <dq_dv_mAh_per_V>), ... ]
        `cell_id`          : "<cell identifier>"
        `cycle_index`      : <cycle number>
        `smoothing_window` : <odd moving-average window>
    """
    model_config = ConfigDict( frozen = True)
    
    points           : Annotated[ tuple[ tuple[ Real, Real], ...], Field( min_length = 1)]
    cell_id          : NE_str
    cycle_index      : Pos_int
    smoothing_window : Pos_int
    
    @model_validator( mode = "after")
    def check_curve(self) -> Self :
        
        if self.smoothing_window % 2 == 0 :
            raise ValueError("Smoothing window must be odd")
        if len(self.points) > 1 and not _strictly_monotone([ v for v, _ in self.points ]) :
            raise ValueError("Curve midpoints must be strictly monotone")
        
        return self
    
    @property
    def v_mid(self) -> np.ndarray :
        return np.array( [ v for v, _ in self.points ], dtype = float)
    
    @property
    def dq_dv(self) -> np.ndarray :
        return np.array( [ d for _, d in self.points ], dtype = float)

class SoHSeries(BaseModel) :
    """
    Per-cycle State of Health
        `cell_id`              : "<cell identifier>"
        `nominal_capacity_mAh` : <denominator of SoH>
        `points`               : [ ( <cycle_index>, <soh_pct>), ... ]
        `overshoot`            : true when any SoH exceeds 100
        `nominal_is_heuristic` : true when nominal came from the early-cycle heuristic
    """
    model_config = ConfigDict( frozen = True)
    
    cell_id              : NE_str
    nominal_capacity_mAh : Pos_float
    points               : Annotated[ tuple[ tuple[ Pos_int, Real], ...],
                                      Field( min_length = 1) ]
    overshoot            : bool = False
    nominal_is_heuristic : bool = False
    
    @model_validator( mode = "after")
    def check_order(self) -> Self :
        
        cycles = [ c for c, _ in self.points ]
        if any( c1 <= c0 for c0, c1 in zip( cycles[:-1], cycles[1:]) ) :
            raise ValueError("SoH points must be sorted by unique cycle index")
        
        return self
    
    @property
    def cycles(self) -> np.ndarray :
        return np.array( [ c for c, _ in self.points ], dtype = float)
    
    @property
    def soh(self) -> np.ndarray :
        return np.array( [ s for _, s in self.points ], dtype = float)

class QuadraticFit(BaseModel) :
    """
    Least-squares SoH(C) = a C^2 + b C + c
        `a`, `b`, `c` : <coefficients>
        `rmse_pct`    : <root-mean-square residual (SoH points)>
        `n_points`    : <number of fitted points>
    """
    model_config = ConfigDict( frozen = True)
    
    a        : Real
    b        : Real
    c        : Real
    rmse_pct : NN_float
    n_points : Annotated[ int, Field( ge = 3)]

class RULEstimate(BaseModel) :
    """
    End-of-life solution of the fitted quadratic
        `fit`               : QuadraticFit
        `current_cycle`     : <cycle the estimate is made at>
        `threshold_pct`     : <end-of-life SoH>
        `end_of_life_cycle` : <cycle where SoH crosses the threshold> | null (not reached)
        `rul_cycles`        : <end_of_life_cycle - current_cycle> | null (not reached)
    """
    model_config = ConfigDict( frozen = True)
    
    fit               : QuadraticFit
    current_cycle     : Pos_int
    threshold_pct     : Real = 80.0
    end_of_life_cycle : Pos_float | None = None
    rul_cycles        : NN_float  | None = None
    
    @model_validator( mode = "after")
    def check_solution(self) -> Self :
        
        if ( self.end_of_life_cycle is None ) != ( self.rul_cycles is None ) :
            raise ValueError("End of life and RUL must be both present or both absent")
        
        if self.end_of_life_cycle is not None :
            if not self.end_of_life_cycle > self.current_cycle :
                raise ValueError("End of life must lie after the current cycle")
            expected = self.end_of_life_cycle - self.current_cycle
            if not math.isclose( self.rul_cycles, expected, rel_tol = 1e-12, abs_tol = 1e-9) :
                raise ValueError("RUL must equal end of life minus current cycle")
        
        return self
    
    @property
    def reached(self) -> bool :
        return self.end_of_life_cycle is not None

class AnomalyReport(BaseModel) :
    """
    Deviations of a trace from its expected voltage pattern
        `cell_id`        : "<cell identifier>"
        `cycle_index`    : <cycle number>
        `flagged`        : [ ( <sample_index>, <residual_V>, <zscore>), ... ]
        `threshold_z`    : <flagging threshold>
        `baseline_kind`  : "reference-trace" | "smoothed-self"
        `scale_fallback` : true when the robust scale was zero
    """
    model_config = ConfigDict( frozen = True)
    
    cell_id        : NE_str
    cycle_index    : Pos_int
    flagged        : tuple[ tuple[ NN_int, float, float], ...] = ()
    threshold_z    : Annotated[ float, Field( gt = 0)] = 3.0
    baseline_kind  : Literal[ "reference-trace", "smoothed-self"]
    scale_fallback : bool = False
    
    @model_validator( mode = "after")
    def check_flags(self) -> Self :
        
        indices = [ i for i, _, _ in self.flagged ]
        if indices != sorted(set(indices)) :
            raise ValueError("Flagged samples must be sorted by unique index")
        if any( not ( abs(z) >= self.threshold_z ) for _, _, z in self.flagged ) :
            raise ValueError("Every flagged |z| must reach the threshold")
        
        return self
    
    @property
    def indices(self) -> list[int] :
        return [ i for i, _, _ in self.flagged ]

# =========================================================================================
# MODEL BASEMODELS
# =========================================================================================

class ModelConfig(BaseModel) :
    """
    Transformer regressor hyperparameters
        `d_model`     : <embedding width>
        `n_heads`     : <attention heads (divides d_model)>
        `n_layers`    : <encoder blocks>
        `d_ff`        : <feed-forward hidden width>
        `max_seq_len` : <longest accepted input sequence>
        `dropout_p`   : <residual-branch dropout probability>
        `input_dim`   : <per-step feature width>
    """
    model_config = ConfigDict( frozen = True)
    
    d_model     : Pos_int = 32
    n_heads     : Pos_int = 4
    n_layers    : Pos_int = 2
    d_ff        : Pos_int = 64
    max_seq_len : Pos_int = 128
    dropout_p   : Annotated[ float, Field( ge = 0, lt = 1)] = 0.0
    input_dim   : Pos_int
    
    @model_validator( mode = "after")
    def check_heads(self) -> Self :
        
        if self.d_model % self.n_heads :
            raise ConfigError(
                f"In ModelConfig: d_model = {self.d_model} is not divisible "
                f"by n_heads = {self.n_heads}"
            )
        
        return self
    
    @property
    def d_head(self) -> int :
        return self.d_model // self.n_heads

class TargetEncoding(BaseModel) :
    """
    Map from regression-head output to capacity (mAh)
        `anchored` : prediction = anchor + scale * head when true
        `offset`   : prediction = offset + scale * head otherwise
        `scale`    : head units in mAh
        `bounds`   : cap_chg normalization ( <min>, <max>) used to read the anchor
                     off the last input step when no anchor is given
    """
    model_config = ConfigDict( frozen = True)
    
    anchored : bool          = False
    offset   : Real          = 0.0
    scale    : Pos_float     = 1.0
    bounds   : Bounds | None = None

class TrainReport(BaseModel) :
    """
    Per-epoch training record
        `train_mse`         : [ <mean batch loss of the epoch (mAh^2)>, ... ]
        `test_mse`          : [ <held-out MSE after the epoch (mAh^2)>, ... ]
        `wall_seconds`      : [ <epoch wall time>, ... ]
        `batches_per_second`: [ <training throughput>, ... ]
        `n_epochs`          : <epochs run>
        `snapshot_sha256`   : "<hash of the final parameters>"
        `hyperparameters`   : { "<name>": <value>, ... }
    """
    model_config = ConfigDict( frozen = True)
    
    train_mse          : tuple[ NN_float, ...]
    test_mse           : tuple[ NN_float, ...]
    wall_seconds       : tuple[ NN_float, ...]
    batches_per_second : tuple[ NN_float, ...]
    n_epochs           : Pos_int
    snapshot_sha256    : NE_str
    hyperparameters    : dict[ str, float | int]
    
    @model_validator( mode = "after")
    def check_lengths(self) -> Self :
        
        for name in ( "train_mse", "test_mse", "wall_seconds", "batches_per_second") :
            if len(getattr( self, name)) != self.n_epochs :
                raise ValueError(f"Field '{name}' must have one entry per epoch")
        
        return self

# =========================================================================================
# METRICS BASEMODELS
# =========================================================================================

class EvalResult(BaseModel) :
    """
    Held-out evaluation
        `mse`                 : <mean squared error>
        `mae`                 : <mean absolute error>
        `mae_pct`             : <MAE as % of nominal capacity> | null
        `r2`                  : <coefficient of determination (may be -inf)>
        `r2_degenerate`       : true when the targets are constant
        `n`                   : <number of predictions>
        `inference_seconds`   : <wall time of the predictions>
        `batches_per_second`  : <throughput>
        `throughput_degenerate`: true when the timing was zero
        `parameter_count`     : <trainable scalars>
    """
    model_config = ConfigDict( frozen = True)
    
    mse                   : NN_float
    mae                   : NN_float
    mae_pct               : Real | None = None
    r2                    : float
    r2_degenerate         : bool = False
    n                     : Pos_int
    inference_seconds     : NN_float = 0.0
    batches_per_second    : NN_float = 0.0
    throughput_degenerate : bool = False
    parameter_count       : NN_int = 0
    
    @model_validator( mode = "after")
    def check_bounds(self) -> Self :
        
        if self.r2 > 1.0 :
            raise ValueError("R2 cannot exceed 1")
        if self.mae ** 2 > self.mse * ( 1.0 + 1e-12) + 1e-300 :
            raise ValueError("MAE^2 cannot exceed MSE")
        
        return self

class ComparisonRow(BaseModel) :
    """
    Comparison table row
        `method_name`  : "<method label>"
        `mae_pct`      : <MAE (%)>
        `time_seconds` : <time (s)>
        `source`       : "published" | "measured"
    """
    model_config = ConfigDict( frozen = True)
    
    method_name  : NE_str
    mae_pct      : Real
    time_seconds : Real
    source       : Literal[ "published", "measured"] = "measured"

# =========================================================================================
# RUN CONFIGURATION
# =========================================================================================

class RunConfig(BaseModel) :
    """
    Fully resolved CLI parameters of one run (written next to its outputs)
    """
    model_config = ConfigDict( frozen = True, extra = "forbid")
    
    subcommand       : NE_str
    in_path          : str | None = None
    out              : NE_str     = "out"
    seed             : int        = 0
    nominal          : Pos_float | None = None
    window_lo        : Real       = 2.25
    window_hi        : Real       = 2.30
    threshold_pct    : Real       = 80.0
    threshold_z      : Annotated[ float, Field( gt = 0)] = 3.0
    smoothing_window : Pos_int    = 5
    cells            : Pos_int    = 8
    cycles           : Pos_int    = 500
    noise_sd         : NN_float   = 0.0
    trace_every      : Pos_int    = 50
    window           : Pos_int    = 8
    epochs           : Pos_int    = 5
    batch_size       : Pos_int    = 16
    lr               : NN_float   = 1e-3
    weight_decay     : NN_float   = 0.01
    d_model          : Pos_int    = 32
    n_heads          : Pos_int    = 4
    n_layers         : Pos_int    = 2
    d_ff             : Pos_int    = 64
    model_path       : str | None = None
    baseline         : Literal[ "self", "reference"] = "self"
    
    @model_validator( mode = "after")
    def check_window(self) -> Self :
        
        if not self.window_lo < self.window_hi :
            raise ValueError("Need window_lo < window_hi")
        
        return self

# =========================================================================================
# UTILITY FUNCTIONS
# =========================================================================================

def print_validation_errors( validation_error : ValidationError,
                             indent           : int = JSON_INDENT) -> None :
    """
    Pretty-print pydantic validation errors with indentation \\
    Args:
        validation_error : ValidationError object raised by pydantic
        indent           : Indentation level when printing
    """
    
    for error in validation_error.errors() :
        
        location_raw = error.get( "loc", ())
        if location_raw :
            location = " -> ".join( str(part) for part in location_raw )
        else :
            location = "<root>"
        
        message = error.get( "msg", "Validation error")
        
        print_ind( f"Location : {location}", indent)
        print_ind( f"Message  : {message}",  indent)
    
    return
