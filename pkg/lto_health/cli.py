#!/usr/bin/env python3
"""
Command-line front end: `lto-health <subcommand> [flags]`.
"""

import argparse
import logging
import sys
import pandas as pd

from pathlib import Path
from typing import (
    Any,
    Callable,
)

from pydantic import ValidationError

from . import __version__
from .anomaly import (
    detect_anomalies,
    reference_baseline,
)
from .basemodels import (
    CycleRecord,
    DegradationProfile,
    DischargeTrace,
    ModelConfig,
    RunConfig,
    print_validation_errors,
)
from .config import (
    LOG_LEVELS,
    get_eol_threshold,
    get_log_level,
    get_smoothing_window,
    get_threshold_z,
    load_run_config,
    write_run_config,
)
from .dva import (
    compute_dva,
    dva_summary,
    fade_series,
)
from .errors import (
    ArgumentError,
    InsufficientData,
    LTOHealthError,
    NotFound,
)
from .health import (
    compute_soh,
    estimate_rul,
    nominal_from_records,
)
from .ingest import (
    TRACE_FILE_PATTERN,
    build_dataset,
    detect_schema,
    detect_trace_schema,
    load_cycles,
    load_directory,
    load_trace,
    read_header,
    trace_filename,
    write_cycles,
    write_trace,
)
from .metrics import (
    PUBLISHED_REFERENCE,
    MAE_PCT_NOTE,
    comparison_table,
    evaluate,
    timeit,
)
from .model import (
    count_parameters,
    init_model,
    load_model,
    predict,
    save_model,
    train,
)
from .report import (
    write_json,
    write_report,
)
from .synth import (
    DEFAULT_SHAPE,
    cell_name,
    cell_profiles,
    generate_cells,
    generate_traces,
)


type Inputs = tuple[ dict[ str, list[CycleRecord]], dict[ str, list[DischargeTrace]] ]

MODEL_FILE       = "model.json"
PREDICTIONS_FILE = "predictions.csv"


# =========================================================================================
# INPUTS
# =========================================================================================

def load_inputs( cfg : RunConfig) -> Inputs :
    """
    Cycle logs and traces from `--in` (a directory or a single CSV file)
    """
    if cfg.in_path is None :
        raise ArgumentError(f"In {cfg.subcommand}: --in is required")
    
    path = Path(cfg.in_path)
    if path.is_dir() :
        return load_directory(path)
    if not path.is_file() :
        raise NotFound(f"In load_inputs: '{path}' does not exist")
    
    m = TRACE_FILE_PATTERN.match(path.name)
    if m :
        trace = load_trace( path, detect_trace_schema(read_header(path)), m["cell"], int(m["cycle"]))
        return {}, { m["cell"] : [ trace ] }
    
    records = load_cycles( path, detect_schema(read_header(path)), path.stem)
    
    return { path.stem : records }, {}


def _require_cells( cells : dict[ str, list[CycleRecord]], what : str) -> None :
    
    if not cells :
        raise NotFound(f"In {what}: No cycle logs in the input")
    
    return


def _all_traces( traces : dict[ str, list[DischargeTrace]], what : str) -> list[DischargeTrace] :
    
    flat = [ t for cell in sorted(traces) for t in traces[cell] ]
    if not flat :
        raise NotFound(f"In {what}: No discharge traces in the input")
    
    return flat

# =========================================================================================
# SUBCOMMANDS
# =========================================================================================

def cmd_synth( cfg : RunConfig) -> list[Path] :
    
    out     = Path(cfg.out)
    profile = DegradationProfile( nominal_capacity_mAh = cfg.nominal or 1000.0,
                                  noise_sd_mAh         = cfg.noise_sd,
                                  n_cycles             = cfg.cycles,
                                  seed                 = cfg.seed )
    trace_cycles = sorted( { 1, *range( cfg.trace_every, cfg.cycles + 1, cfg.trace_every) } )
    
    out.mkdir( parents = True, exist_ok = True)
    written = []
    for k, ( records, cell) in enumerate( zip( generate_cells( profile, cfg.cells),
                                                cell_profiles( profile, cfg.cells) ) ) :
        path = out / f"{cell_name(k)}.csv"
        write_cycles( records, path)
        written.append(path)
        
        for trace in generate_traces( cell, DEFAULT_SHAPE, trace_cycles, cell_name(k)) :
            path = out / trace_filename(trace)
            write_trace( trace, path)
            written.append(path)
    
    logging.info( "Synthesized %d cells with %d traces each", cfg.cells, len(trace_cycles))
    
    return written


def cmd_ingest( cfg : RunConfig) -> list[Path] :
    
    cells, traces = load_inputs(cfg)
    
    summary : dict[ str, Any] = {
        "cells"  : { cell : { "n_records"   : len(records),
                              "first_cycle" : records[0].cycle_index if records else None,
                              "last_cycle"  : records[-1].cycle_index if records else None }
                     for cell, records in sorted( cells.items()) },
        "traces" : { cell : [ t.cycle_index for t in ts ] for cell, ts in sorted( traces.items()) },
    }
    try :
        features = build_dataset( cells, cfg.window) if cells else None
    except InsufficientData as e :
        logging.warning( "No feature matrix: %s", e)
        features = None
    
    if features is not None :
        summary["features"] = { "window"        : features.window,
                                "feature_names" : list(features.feature_names),
                                "normalization" : [ list(b) for b in features.normalization ],
                                "label_bounds"  : list(features.label_bounds),
                                "n_rows"        : len(features.rows),
                                "n_train"       : len(features.train_idx),
                                "n_test"        : len(features.test_idx) }
    
    return [ write_json( Path(cfg.out) / "ingest.json", summary) ]


def cmd_dva( cfg : RunConfig) -> list[Path] :
    
    _, traces = load_inputs(cfg)
    flat      = _all_traces( traces, "dva")
    window    = ( cfg.window_lo, cfg.window_hi)
    out       = Path(cfg.out)
    written   = []
    
    summaries, curves = [], []
    for trace in flat :
        curve = compute_dva( trace, cfg.smoothing_window)
        summaries.append( dva_summary( trace, [ window ], cfg.smoothing_window) )
        curves.append( { "cell"   : trace.cell_id,
                         "cycle"  : trace.cycle_index,
                         "points" : [ list(p) for p in curve.points ] } )
        
        path = out / "dva" / f"{trace.cell_id}_cycle{trace.cycle_index}_dva.csv"
        path.parent.mkdir( parents = True, exist_ok = True)
        pd.DataFrame( list(curve.points), columns = [ "v_mid", "dq_dv"]) \
          .to_csv( path, index = False, lineterminator = "\n")
        written.append(path)
    
    fade = { cell : [ list(p) for p in fade_series( traces[cell], *window) ]
             for cell in sorted(traces) if traces[cell] }
    
    written.append( write_json( out / "dva.json",
                                { "window"           : list(window),
                                  "smoothing_window" : cfg.smoothing_window,
                                  "summaries"        : summaries,
                                  "fade"             : fade,
                                  "curves"           : curves } ) )
    return written


def cmd_soh( cfg : RunConfig) -> list[Path] :
    
    cells, _ = load_inputs(cfg)
    _require_cells( cells, "soh")
    
    payload = { "cells" : {} }
    for cell, records in sorted( cells.items()) :
        series = compute_soh( records, cfg.nominal)
        payload["cells"][cell] = { "cell"                 : cell,
                                   "nominal"              : series.nominal_capacity_mAh,
                                   "nominal_is_heuristic" : series.nominal_is_heuristic,
                                   "overshoot"            : series.overshoot,
                                   "points"               : [ list(p) for p in series.points ] }
    
    return [ write_json( Path(cfg.out) / "soh.json", payload) ]


def cmd_rul( cfg : RunConfig) -> list[Path] :
    
    cells, _ = load_inputs(cfg)
    _require_cells( cells, "rul")
    
    payload = { "cells" : {} }
    for cell, records in sorted( cells.items()) :
        series, est = estimate_rul( records, cfg.nominal, cfg.threshold_pct)
        payload["cells"][cell] = {
            "cell"                 : cell,
            "nominal"              : series.nominal_capacity_mAh,
            "nominal_is_heuristic" : series.nominal_is_heuristic,
            "fit"                  : { "a"    : est.fit.a,
                                       "b"    : est.fit.b,
                                       "c"    : est.fit.c,
                                       "rmse" : est.fit.rmse_pct },
            "current_cycle"        : est.current_cycle,
            "eol_cycle"            : est.end_of_life_cycle,
            "rul"                  : est.rul_cycles,
            "threshold"            : est.threshold_pct,
        }
    
    return [ write_json( Path(cfg.out) / "rul.json", payload) ]


def cmd_anomaly( cfg : RunConfig) -> list[Path] :
    
    _, traces = load_inputs(cfg)
    _all_traces( traces, "anomaly")
    
    reports = []
    for cell in sorted(traces) :
        baseline = reference_baseline(traces[cell]) if cfg.baseline == "reference" else None
        for trace in traces[cell] :
            reports.append( detect_anomalies( trace, baseline, cfg.threshold_z) )
    
    payload = { "threshold_z" : cfg.threshold_z,
                "reports"     : [ r.model_dump( mode = "json") for r in reports ],
                "counts"      : { f"{r.cell_id}/{r.cycle_index}" : len(r.flagged) for r in reports } }
    
    return [ write_json( Path(cfg.out) / "anomaly.json", payload) ]


def _model_path( cfg : RunConfig) -> Path :
    return Path( cfg.model_path or Path(cfg.out) / MODEL_FILE )


def cmd_train( cfg : RunConfig) -> list[Path] :
    
    cells, _ = load_inputs(cfg)
    _require_cells( cells, "train")
    
    features = build_dataset( cells, cfg.window)
    mconf    = ModelConfig( d_model   = cfg.d_model,
                            n_heads   = cfg.n_heads,
                            n_layers  = cfg.n_layers,
                            d_ff      = cfg.d_ff,
                            input_dim = features.step_width )
    model    = init_model( mconf, cfg.seed)
    report   = train( model, features,
                      epochs       = cfg.epochs,
                      batch_size   = cfg.batch_size,
                      lr           = cfg.lr,
                      weight_decay = cfg.weight_decay )
    
    payload = report.model_dump( mode = "json")
    payload["parameter_count"] = count_parameters(model.config)
    payload["timing"] = { "wall_seconds"       : payload.pop("wall_seconds"),
                          "batches_per_second" : payload.pop("batches_per_second") }
    
    return [ save_model( model, _model_path(cfg)),
             write_json( Path(cfg.out) / "train_report.json", payload) ]


def cmd_predict( cfg : RunConfig) -> list[Path] :
    
    cells, _ = load_inputs(cfg)
    _require_cells( cells, "predict")
    
    model    = load_model(_model_path(cfg))
    features = build_dataset( cells, cfg.window, model.config.max_seq_len)
    preds    = predict( model, features)
    test     = set(features.test_idx)
    
    frame = pd.DataFrame( { "row"        : range(len(preds)),
                            "cell"       : features.cell_ids,
                            "cycle"      : features.cycle_indices,
                            "label"      : features.labels,
                            "prediction" : preds,
                            "split"      : [ "test" if i in test else "train"
                                             for i in range(len(preds)) ] } )
    path = Path(cfg.out) / PREDICTIONS_FILE
    path.parent.mkdir( parents = True, exist_ok = True)
    frame.to_csv( path, index = False, lineterminator = "\n")
    
    return [ path ]


def cmd_evaluate( cfg : RunConfig) -> list[Path] :
    
    cells, _ = load_inputs(cfg)
    _require_cells( cells, "evaluate")
    
    model    = load_model(_model_path(cfg))
    features = build_dataset( cells, cfg.window, model.config.max_seq_len)
    idx      = list(features.test_idx)
    nominal  = cfg.nominal or max( nominal_from_records(records) for records in cells.values() )
    
    chunks = [ idx[ i : i + cfg.batch_size ] for i in range( 0, len(idx), cfg.batch_size) ]
    
    preds, seconds = timeit( lambda : [ p for chunk in chunks for p in predict( model, features, chunk) ] )
    n_batches      = len(chunks)
    result         = evaluate( [ features.labels[i] for i in idx ], preds,
                               timing          = ( seconds, n_batches),
                               parameter_count = count_parameters(model.config),
                               nominal         = nominal )
    
    payload = result.model_dump( mode = "json")
    payload["timing"] = { "inference_seconds"     : payload.pop("inference_seconds"),
                          "batches_per_second"    : payload.pop("batches_per_second"),
                          "throughput_degenerate" : payload.pop("throughput_degenerate"),
                          "n_batches"             : n_batches }
    payload["nominal"]            = nominal
    payload["mae_pct_definition"] = MAE_PCT_NOTE
    payload["reference"]          = dict(PUBLISHED_REFERENCE)
    
    table, _ = comparison_table([])
    logging.info( "Reference comparison:\n%s", table)
    
    return [ write_json( Path(cfg.out) / "eval.json", payload) ]


def cmd_report( cfg : RunConfig) -> list[Path] :
    return [ write_report( cfg.out, echo = True) ]


COMMANDS : dict[ str, tuple[ Callable[ [RunConfig], list[Path]], str] ] = {
    "ingest"   : ( cmd_ingest,   "Parse cycle logs and traces, summarize the feature matrix"),
    "synth"    : ( cmd_synth,    "Generate synthetic cells and discharge traces"),
    "dva"      : ( cmd_dva,      "Differential voltage curves and window-capacity fade"),
    "soh"      : ( cmd_soh,      "State of Health per cycle"),
    "rul"      : ( cmd_rul,      "Quadratic fit and end-of-life estimate"),
    "anomaly"  : ( cmd_anomaly,  "Flag discharge-trace anomalies"),
    "train"    : ( cmd_train,    "Train the transformer regressor"),
    "predict"  : ( cmd_predict,  "Predict next-cycle capacity"),
    "evaluate" : ( cmd_evaluate, "Evaluate on the held-out split"),
    "report"   : ( cmd_report,   "Bundle every run output into one report"),
}

# =========================================================================================
# ARGUMENT PARSING
# =========================================================================================

def build_parser() -> argparse.ArgumentParser :
    
    common = argparse.ArgumentParser( add_help = False, argument_default = argparse.SUPPRESS)
    common.add_argument( "--in",           dest = "in_path", help = "Input CSV file or directory")
    common.add_argument( "--out",          help = "Output directory")
    common.add_argument( "--seed",         type = int)
    common.add_argument( "--config",       dest = "config_file", help = "Flat JSON config file")
    common.add_argument( "--log-level",    choices = LOG_LEVELS)
    common.add_argument( "--nominal",      type = float, help = "Nominal capacity (mAh)")
    common.add_argument( "--window-lo",    type = float)
    common.add_argument( "--window-hi",    type = float)
    common.add_argument( "--threshold-z",  type = float)
    common.add_argument( "--epochs",       type = int)
    common.add_argument( "--batch-size",   type = int)
    common.add_argument( "--lr",           type = float)
    
    window = ( "--window", { "type" : int, "help" : "Cycles per input sequence" })
    model  = ( "--model",  { "dest" : "model_path", "help" : "Checkpoint path" })
    extra  = {
        "synth"    : [ ( "--cells",       { "type" : int}),
                       ( "--cycles",      { "type" : int}),
                       ( "--noise-sd",    { "type" : float, "help" : "Capacity noise (mAh)"}),
                       ( "--trace-every", { "type" : int}) ],
        "ingest"   : [ window ],
        "dva"      : [ ( "--smoothing-window", { "type" : int}) ],
        "rul"      : [ ( "--threshold-pct",    { "type" : float}) ],
        "anomaly"  : [ ( "--baseline",         { "choices" : [ "self", "reference"]}) ],
        "train"    : [ window, model,
                       ( "--weight-decay", { "type" : float}),
                       ( "--d-model",      { "type" : int}),
                       ( "--n-heads",      { "type" : int}),
                       ( "--n-layers",     { "type" : int}),
                       ( "--d-ff",         { "type" : int}) ],
        "predict"  : [ window, model ],
        "evaluate" : [ window, model ],
    }
    
    parser = argparse.ArgumentParser( prog = "lto-health",
                                      description = "LTO battery health analytics.")
    parser.add_argument( "--version", action = "version", version = f"%(prog)s {__version__}")
    sub = parser.add_subparsers( dest = "command", required = True)
    
    for name, ( _, help_text) in COMMANDS.items() :
        p = sub.add_parser( name, parents = [ common ], help = help_text,
                            argument_default = argparse.SUPPRESS)
        for flag, kwargs in extra.get( name, []) :
            p.add_argument( flag, **kwargs)
    
    return parser


def _env_defaults() -> dict[ str, Any] :
    
    return { "threshold_z"      : get_threshold_z(),
             "threshold_pct"    : get_eol_threshold(),
             "smoothing_window" : get_smoothing_window() }


def _one_line( error : BaseException) -> str :
    
    text = str(error).strip()
    
    return text.splitlines()[0] if text else type(error).__name__


def run( argv : list[str] | None = None) -> int :
    """
    Parse `argv`, dispatch one subcommand and map failures to exit codes \\
    Returns:
        0 on success, 1 on domain errors, 2 on usage errors
    """
    parser = build_parser()
    try :
        args = parser.parse_args(argv)
    except SystemExit as e :
        return int( e.code or 0 )
    
    flags       = vars(args)
    command     = flags.pop("command")
    config_file = flags.pop( "config_file", None)
    log_level   = flags.pop( "log_level",   None)
    
    try :
        logging.basicConfig( level  = log_level or get_log_level(),
                             format = "%(levelname)s %(message)s",
                             force  = True )
        
        cfg = load_run_config( config_file, flags | { "subcommand" : command }, _env_defaults())
        logging.info( "Running %s into %s", command, cfg.out)
        
        handler, _ = COMMANDS[command]
        written    = handler(cfg)
        written.append( write_run_config( cfg, cfg.out) )
    
    except ( LTOHealthError, ValidationError, RuntimeError, OSError) as e :
        print( f"lto-health {command}: error: {_one_line(e)}", file = sys.stderr)
        cause = e if isinstance( e, ValidationError) else e.__cause__
        if isinstance( cause, ValidationError) and logging.getLogger().isEnabledFor(logging.DEBUG) :
            print_validation_errors(cause)
        return 1
    
    for path in written :
        logging.info( "Output: %s", path)
    
    return 0


def main() -> int :
    return run( sys.argv[1:] )


if __name__ == "__main__" :
    raise SystemExit(main())
