"""
Cycle-log and discharge-trace ingestion, schema detection and feature building.
"""

import io
import logging
import math
import re
import numpy as np
import pandas as pd

from pathlib import Path
from typing import (
    Iterable,
    TextIO,
)

from .basemodels import (
    Bounds,
    ColumnSchema,
    CycleRecord,
    DischargeTrace,
    FeatureMatrix,
)
from .errors import (
    AmbiguityError,
    ArgumentError,
    InsufficientData,
    NotFound,
    ParseError,
    SchemaError,
    ShapeError,
)


type Source = str | Path | TextIO
""" File path or open text stream """

CYCLE_HEADER = [ "Cycle", "Cap_Chg(mAh)", "Cap_DChg(mAh)", "Energy(mWh)", "Temperature(C)"]
TRACE_HEADER = [ "Voltage(V)", "Cap_DChg(mAh)"]

TRACE_FILE_PATTERN = re.compile(r"^(?P<cell>.+)_cycle(?P<cycle>\d+)_discharge\.csv$")

MAX_SKIP_FRACTION = 0.5
TRAIN_FRACTION    = 0.8


# =========================================================================================
# SCHEMA DETECTION
# =========================================================================================

def canonicalize( name : str) -> str :
    """
    Lowercase a header cell and strip every non-alphanumeric character
    """
    return re.sub( r"[^a-z0-9]", "", name.lower())


def _is_discharge( c : str) -> bool :
    return ( "cap" in c ) and ( "dchg" in c or "discharge" in c )


def _is_charge( c : str) -> bool :
    return ( "cap" in c ) and ( "chg" in c or "charge" in c ) and not _is_discharge(c)


# Roles in priority order: a column takes the first role it matches
ROLE_MATCHERS = {
    "discharge"   : _is_discharge,
    "charge"      : _is_charge,
    "voltage"     : lambda c : "voltage" in c or c == "v",
    "cycle"       : lambda c : "cycle" in c,
    "energy"      : lambda c : "energy" in c,
    "temperature" : lambda c : "temp" in c,
    "current"     : lambda c : "current" in c or c in ( "i", "a"),
}


def _resolve_roles( header : list[str]) -> tuple[ dict[ str, int], list[ tuple[ str, int]] ] :
    
    if not header :
        raise SchemaError("In detect_schema: Header is empty")
    
    resolved : dict[ str, int] = {}
    extras   : list[ tuple[ str, int]] = []
    
    for idx, cell in enumerate(header) :
        c    = canonicalize(cell)
        role = next( ( r for r, matches in ROLE_MATCHERS.items() if matches(c) ), None)
        
        if role is None :
            if cell.strip() :
                extras.append( ( cell.strip(), idx) )
            continue
        
        if role in resolved :
            if canonicalize(header[resolved[role]]) == c :
                raise AmbiguityError(
                    f"In detect_schema: Columns {resolved[role]} and {idx} "
                    f"both canonicalize to '{c}' for role '{role}'"
                )
            # First match wins; later candidates pass through untyped
            extras.append( ( cell.strip() or f"col{idx}", idx) )
            continue
        
        resolved[role] = idx
    
    return resolved, extras


def _build_schema( resolved : dict[ str, int],
                   extras   : list[ tuple[ str, int]]) -> ColumnSchema :
    
    typed_extras = [ ( role, resolved[role]) for role in ( "temperature", "current")
                     if role in resolved ]
    
    return ColumnSchema( charge_capacity_col    = resolved.get("charge"),
                         discharge_capacity_col = resolved.get("discharge"),
                         voltage_col            = resolved.get("voltage"),
                         cycle_col              = resolved.get("cycle"),
                         energy_col             = resolved.get("energy"),
                         extras                 = tuple( typed_extras + extras ) )


def detect_schema( header : list[str]) -> ColumnSchema :
    """
    Resolve the column roles of a cycle-log header \\
    Args:
        header : Column names in file order
    Returns:
        ColumnSchema with both capacity roles resolved
    """
    resolved, extras = _resolve_roles(header)
    
    for role, label in ( ( "charge", "Cap_Chg(mAh)"), ( "discharge", "Cap_DChg(mAh)") ) :
        if role not in resolved :
            raise SchemaError(
                f"In detect_schema: No {role}-capacity column (like '{label}') in {header}"
            )
    
    return _build_schema( resolved, extras)


def detect_trace_schema( header : list[str]) -> ColumnSchema :
    """
    Resolve the column roles of a discharge-trace header \\
    Args:
        header : Column names in file order
    Returns:
        ColumnSchema with voltage and at least one capacity role resolved
    """
    resolved, extras = _resolve_roles(header)
    
    if "voltage" not in resolved :
        raise SchemaError(f"In detect_trace_schema: No voltage column in {header}")
    if "charge" not in resolved and "discharge" not in resolved :
        raise SchemaError(f"In detect_trace_schema: No capacity column in {header}")
    
    return _build_schema( resolved, extras)

# =========================================================================================
# DELIMITED TEXT READING
# =========================================================================================

def _read_text( source : Source) -> str :
    
    if isinstance( source, ( str, Path)) :
        path = Path(source)
        if not path.is_file() :
            raise NotFound(f"In _read_text: File '{path}' does not exist")
        return path.read_text( encoding = "utf-8")
    
    return source.read()


def _first_line( text : str) -> str :
    
    for line in text.splitlines() :
        if line.strip() and not line.lstrip().startswith("#") :
            return line
    
    raise ParseError("In read_header: No header line found")


def _delimiter( header_line : str) -> str :
    return "\t" if "\t" in header_line else ","


def read_header( source : Source) -> list[str] :
    """
    First non-comment line split on the detected delimiter (tab or comma) \\
    Args:
        source : File path or text stream
    Returns:
        List of stripped column names
    """
    line = _first_line(_read_text(source))
    
    return [ cell.strip() for cell in line.split(_delimiter(line)) ]


def _read_frame( text : str) -> pd.DataFrame :
    
    sep = _delimiter(_first_line(text))
    
    return pd.read_csv( io.StringIO(text),
                        sep              = sep,
                        comment          = "#",
                        header           = 0,
                        dtype            = str,
                        skip_blank_lines = True )


def _as_float( cell : object) -> float :
    
    try :
        return float(cell)
    except ( TypeError, ValueError) :
        return math.nan


def _numeric( frame : pd.DataFrame, idx : int | None) -> np.ndarray :
    """
    Column `idx` as float64 with malformed cells as NaN (exact decimal round trip)
    """
    if idx is None or idx >= frame.shape[1] :
        return np.full( len(frame), np.nan)
    
    return frame.iloc[ :, idx].map(_as_float).to_numpy( dtype = float)


def _check_skips( n_rows : int, n_skipped : int, what : str) -> None :
    
    if n_skipped :
        logging.warning( "Skipped %d of %d rows in %s", n_skipped, n_rows, what)
    
    if n_rows and n_skipped / n_rows > MAX_SKIP_FRACTION :
        raise ParseError(
            f"In load_cycles: {n_skipped} of {n_rows} rows of {what} are malformed; "
            "the schema is probably wrong"
        )
    
    return

# =========================================================================================
# LOADERS
# =========================================================================================

def load_cycles( source : Source, schema : ColumnSchema, cell_id : str) -> list[CycleRecord] :
    """
    Parse one cell's cycle log \\
    Args:
        source  : File path or text stream
        schema  : Resolved column roles (both capacity roles required)
        cell_id : Identifier stamped on every record
    Returns:
        One CycleRecord per valid row, in file order
    """
    if schema.charge_capacity_col is None or schema.discharge_capacity_col is None :
        raise SchemaError("In load_cycles: Schema lacks a capacity role")
    
    frame = _read_frame(_read_text(source))
    if frame.empty :
        raise ParseError(f"In load_cycles: No data rows for cell '{cell_id}'")
    
    chg    = _numeric( frame, schema.charge_capacity_col)
    dchg   = _numeric( frame, schema.discharge_capacity_col)
    cycles = _numeric( frame, schema.cycle_col)
    energy = _numeric( frame, schema.energy_col)
    temp   = _numeric( frame, schema.extra("temperature"))
    
    records    : list[CycleRecord] = []
    last_cycle = 0
    for row in range(len(frame)) :
        
        if not ( np.isfinite(chg[row]) and np.isfinite(dchg[row])
                 and chg[row] >= 0 and dchg[row] >= 0 ) :
            continue
        
        if schema.cycle_col is None :
            cycle = last_cycle + 1
        else :
            c = cycles[row]
            if not np.isfinite(c) or c != math.floor(c) or c <= last_cycle :
                continue
            cycle = int(c)
        
        e = energy[row] if np.isfinite(energy[row]) and energy[row] >= 0 else None
        t = temp[row]   if np.isfinite(temp[row]) else None
        
        records.append( CycleRecord( cell_id       = cell_id,
                                     cycle_index   = cycle,
                                     cap_chg_mAh   = float(chg[row]),
                                     cap_dchg_mAh  = float(dchg[row]),
                                     energy_mWh    = None if e is None else float(e),
                                     temperature_C = None if t is None else float(t) ) )
        last_cycle = cycle
    
    _check_skips( len(frame), len(frame) - len(records), f"cell '{cell_id}'")
    
    return records


def load_trace( source      : Source,
                schema      : ColumnSchema,
                cell_id     : str,
                cycle_index : int) -> DischargeTrace :
    """
    Parse one discharge trace \\
    Args:
        source      : File path or text stream
        schema      : Resolved column roles (voltage and a capacity role)
        cell_id     : Cell identifier
        cycle_index : Cycle the trace belongs to
    Returns:
        DischargeTrace in file order with capacity-reversing samples dropped
    """
    q_col = schema.discharge_capacity_col
    if q_col is None :
        q_col = schema.charge_capacity_col
    if schema.voltage_col is None or q_col is None :
        raise SchemaError("In load_trace: Schema needs voltage and capacity roles")
    
    frame = _read_frame(_read_text(source))
    volts = _numeric( frame, schema.voltage_col)
    caps  = _numeric( frame, q_col)
    
    valid       = np.isfinite(volts) & np.isfinite(caps) & ( caps >= 0 )
    n_malformed = int( np.count_nonzero(~valid) )
    
    samples : list[ tuple[ float, float]] = []
    q_max     = -np.inf
    n_dropped = 0
    for v, q in zip( volts[valid], caps[valid]) :
        if q < q_max :
            n_dropped += 1
            continue
        samples.append( ( float(v), float(q)) )
        q_max = q
    
    if n_malformed :
        logging.warning( "Skipped %d malformed rows in trace %s/%d",
                         n_malformed, cell_id, cycle_index)
    if n_dropped :
        logging.warning( "Dropped %d capacity-reversing samples in trace %s/%d",
                         n_dropped, cell_id, cycle_index)
    
    if len(samples) < 2 :
        raise ParseError(
            f"In load_trace: Trace {cell_id}/{cycle_index} has {len(samples)} valid sample(s), "
            "at least 2 are required"
        )
    
    return DischargeTrace( cell_id     = cell_id,
                           cycle_index = cycle_index,
                           samples     = tuple(samples) )


def load_directory( path : str | Path) -> tuple[ dict[ str, list[CycleRecord]],
                                                  dict[ str, list[DischargeTrace]] ] :
    """
    Scan a directory of CSV files \\
    Files named `<cell>_cycle<N>_discharge.csv` are discharge traces, every other
    CSV whose header resolves a cycle-log schema is a cycle log named after its stem. \\
    Args:
        path : Directory to scan (non-recursive)
    Returns:
        ( { cell_id : records }, { cell_id : traces sorted by cycle } )
    """
    path = Path(path)
    if not path.is_dir() :
        raise NotFound(f"In load_directory: Directory '{path}' does not exist")
    
    cells  : dict[ str, list[CycleRecord]]    = {}
    traces : dict[ str, list[DischargeTrace]] = {}
    
    for csv_path in sorted( path.glob("*.csv") ) :
        
        m = TRACE_FILE_PATTERN.match(csv_path.name)
        if m :
            schema = detect_trace_schema(read_header(csv_path))
            trace  = load_trace( csv_path, schema, m["cell"], int(m["cycle"]))
            traces.setdefault( m["cell"], []).append(trace)
            continue
        
        try :
            schema = detect_schema(read_header(csv_path))
        except ( SchemaError, ParseError) as e :
            logging.warning( "Ignoring %s: %s", csv_path.name, e)
            continue
        
        cells[csv_path.stem] = load_cycles( csv_path, schema, csv_path.stem)
    
    for cell_traces in traces.values() :
        cell_traces.sort( key = lambda t : t.cycle_index)
    
    if not cells and not traces :
        raise NotFound(f"In load_directory: No cycle logs or traces in '{path}'")
    
    logging.info( "Loaded %d cycle logs and %d traces from %s",
                  len(cells), sum( len(v) for v in traces.values() ), path)
    
    return cells, traces

# =========================================================================================
# WRITERS
# =========================================================================================

def write_cycles( records : Iterable[CycleRecord], sink : str | Path | TextIO) -> None :
    """
    Write cycle records in the layout `load_cycles` reads \\
    Args:
        records : Cycle records of one cell
        sink    : File path or text stream
    """
    frame = pd.DataFrame(
        [ [ r.cycle_index, r.cap_chg_mAh, r.cap_dchg_mAh, r.energy_mWh, r.temperature_C ]
          for r in records ],
        columns = CYCLE_HEADER,
    )
    frame.to_csv( sink, index = False, lineterminator = "\n")
    
    return


def write_trace( trace : DischargeTrace, sink : str | Path | TextIO) -> None :
    """
    Write a discharge trace in the layout `load_trace` reads \\
    Args:
        trace : Discharge trace
        sink  : File path or text stream
    """
    frame = pd.DataFrame( list(trace.samples), columns = TRACE_HEADER)
    frame.to_csv( sink, index = False, lineterminator = "\n")
    
    return


def trace_filename( trace : DischargeTrace) -> str :
    return f"{trace.cell_id}_cycle{trace.cycle_index}_discharge.csv"

# =========================================================================================
# NORMALIZATION AND FEATURES
# =========================================================================================

def normalize( values : np.ndarray, bounds : Bounds) -> np.ndarray :
    """
    Min-max transform; a degenerate range maps every value to 0
    """
    lo, hi = bounds
    values = np.asarray( values, dtype = float)
    
    if hi == lo :
        return np.zeros_like(values)
    
    return ( values - lo ) / ( hi - lo )


def denormalize( values : np.ndarray, bounds : Bounds) -> np.ndarray :
    """
    Inverse of `normalize`; a degenerate range maps every value to the minimum
    """
    lo, hi = bounds
    values = np.asarray( values, dtype = float)
    
    if hi == lo :
        return np.full_like( values, lo)
    
    return lo + values * ( hi - lo )


def _step_table( records : list[CycleRecord], with_temperature : bool) -> np.ndarray :
    
    columns = [ [ r.cap_chg_mAh  for r in records ],
                [ r.cap_dchg_mAh for r in records ] ]
    if with_temperature :
        columns.append( [ r.temperature_C for r in records ] )
    columns.append( [ float(r.cycle_index) for r in records ] )
    
    return np.array( columns, dtype = float).T


def _feature_names( with_temperature : bool) -> tuple[ str, ...] :
    
    names = [ "cap_chg", "cap_dchg" ]
    if with_temperature :
        names.append("temperature")
    names.append("cycle")
    
    return tuple(names)


def _check_records( records : list[CycleRecord], window : int) -> None :
    
    if window < 1 :
        raise ArgumentError(f"In build_features: window must be positive, got {window}")
    if len(records) < window + 1 :
        raise InsufficientData(
            f"In build_features: {len(records)} records cannot fill a window of {window} "
            "plus one label cycle"
        )
    
    cycles = [ r.cycle_index for r in records ]
    if any( c1 <= c0 for c0, c1 in zip( cycles[:-1], cycles[1:]) ) :
        raise ArgumentError("In build_features: Records must be sorted by unique cycle index")
    
    return


def _cell_block( records : list[CycleRecord],
                 window  : int,
                 bounds  : list[Bounds],
                 with_temperature : bool) -> dict[ str, np.ndarray] :
    
    table = _step_table( records, with_temperature)
    norm  = np.column_stack( [ normalize( table[ :, j], bounds[j])
                               for j in range(table.shape[1]) ] )
    
    n_rows = len(records) - window
    rows   = np.stack( [ norm[ i : i + window ].ravel() for i in range(n_rows) ] )
    chg    = table[ :, 0]
    
    return { "rows"    : rows,
             "labels"  : chg[ window :],
             "anchors" : chg[ window - 1 : -1],
             "cycles"  : np.array( [ r.cycle_index for r in records[ window :] ]) }


def _bounds_of( table : np.ndarray) -> list[Bounds] :
    return [ ( float(table[ :, j].min()), float(table[ :, j].max()) )
             for j in range(table.shape[1]) ]


def build_dataset( cells       : dict[ str, list[CycleRecord]] | list[ list[CycleRecord]],
                   window      : int,
                   max_seq_len : int | None = None) -> FeatureMatrix :
    """
    Windowed features over several cells with shared normalization \\
    Args:
        cells       : Per-cell record lists (each sorted by cycle index)
        window      : Cycles per input sequence
        max_seq_len : Longest sequence the consuming model accepts
    Returns:
        FeatureMatrix whose train/test split is chronological within every cell
    """
    if isinstance( cells, dict) :
        cell_lists = [ cells[k] for k in sorted(cells) ]
    else :
        cell_lists = list(cells)
    
    if not cell_lists :
        raise InsufficientData("In build_dataset: No cells given")
    if max_seq_len is not None and window > max_seq_len :
        raise ShapeError(
            f"In build_features: window {window} exceeds max_seq_len {max_seq_len}"
        )
    
    for records in cell_lists :
        _check_records( records, window)
    
    with_temperature = all( r.temperature_C is not None
                            for records in cell_lists for r in records )
    bounds = _bounds_of( np.vstack( [ _step_table( records, with_temperature)
                                      for records in cell_lists ] ) )
    
    rows, labels, anchors, cycles, cell_ids = [], [], [], [], []
    train_idx : list[int] = []
    test_idx  : list[int] = []
    offset = 0
    for records in cell_lists :
        
        block  = _cell_block( records, window, bounds, with_temperature)
        n_rows = len(block["labels"])
        n_train = math.floor( TRAIN_FRACTION * n_rows)
        
        train_idx.extend( range( offset, offset + n_train) )
        test_idx.extend( range( offset + n_train, offset + n_rows) )
        offset += n_rows
        
        rows.append(block["rows"])
        labels.append(block["labels"])
        anchors.append(block["anchors"])
        cycles.append(block["cycles"])
        cell_ids.extend( [ records[0].cell_id ] * n_rows )
    
    all_labels = np.concatenate(labels)
    
    return FeatureMatrix(
        rows          = tuple( map( tuple, np.vstack(rows).tolist()) ),
        labels        = tuple(all_labels.tolist()),
        normalization = tuple(bounds),
        feature_names = _feature_names(with_temperature),
        window        = window,
        label_bounds  = ( float(all_labels.min()), float(all_labels.max()) ),
        anchors       = tuple(np.concatenate(anchors).tolist()),
        cycle_indices = tuple( int(c) for c in np.concatenate(cycles) ),
        cell_ids      = tuple(cell_ids),
        train_idx     = tuple(train_idx),
        test_idx      = tuple(test_idx),
    )


def build_features( records     : list[CycleRecord],
                    window      : int,
                    max_seq_len : int | None = None) -> FeatureMatrix :
    """
    Windowed features of one cell \\
    Row i covers cycles i .. i+window-1 (normalized cap_chg, cap_dchg, optional
    temperature and cycle index per step); its label is cap_chg of cycle i+window. \\
    Args:
        records     : Cycle records sorted by cycle index
        window      : Cycles per input sequence
        max_seq_len : Longest sequence the consuming model accepts
    Returns:
        FeatureMatrix with an 80/20 chronological split
    """
    return build_dataset( [ records ], window, max_seq_len)
