from __future__ import annotations

import io
import math

import numpy as np
import pytest

from lto_health.basemodels import CycleRecord
from lto_health.errors import (
    AmbiguityError,
    ArgumentError,
    InsufficientData,
    NotFound,
    ParseError,
    SchemaError,
    ShapeError,
)
from lto_health.ingest import (
    CYCLE_HEADER,
    build_dataset,
    build_features,
    canonicalize,
    denormalize,
    detect_schema,
    detect_trace_schema,
    load_cycles,
    load_directory,
    load_trace,
    normalize,
    read_header,
    trace_filename,
    write_cycles,
    write_trace,
)
from lto_health.synth import (
    DEFAULT_PROFILE,
    DEFAULT_SHAPE,
    generate_cells,
    generate_trace,
)


def _records( n : int, cell_id : str = "c1", start : float = 1000.0) -> list[CycleRecord] :
    
    return [ CycleRecord( cell_id      = cell_id,
                          cycle_index  = k + 1,
                          cap_chg_mAh  = start - k,
                          cap_dchg_mAh = start - k - 5.0 )
             for k in range(n) ]


def _csv( *lines : str) -> io.StringIO :
    return io.StringIO( "\n".join(lines) + "\n" )

# -----------------------------------------------------------------------------------------
# SCHEMA

def test_canonicalize_strips_case_and_punctuation() -> None :
    
    assert canonicalize("Cap_DChg(mAh)") == "capdchgmah"
    assert canonicalize(" Voltage (V) ") == "voltagev"


def test_detect_schema_on_the_standard_header() -> None :
    
    schema = detect_schema(CYCLE_HEADER)
    
    assert schema.cycle_col              == 0
    assert schema.charge_capacity_col    == 1
    assert schema.discharge_capacity_col == 2
    assert schema.energy_col             == 3
    assert schema.extra("temperature")   == 4


def test_detect_schema_is_order_and_case_insensitive() -> None :
    
    schema = detect_schema( [ "cap_dchg (mah)", "notes", "CAP_CHG(MAH)", "cycle"] )
    
    assert schema.charge_capacity_col    == 2
    assert schema.discharge_capacity_col == 0
    assert schema.cycle_col              == 3
    assert ( "notes", 1) in schema.extras


def test_detect_schema_requires_both_capacities() -> None :
    
    with pytest.raises(SchemaError) :
        detect_schema( [ "Cycle", "Cap_Chg(mAh)"] )
    
    with pytest.raises(SchemaError) :
        detect_schema([])


def test_detect_schema_rejects_identical_candidates() -> None :
    
    with pytest.raises(AmbiguityError) :
        detect_schema( [ "Cap_Chg(mAh)", "cap chg (mAh)", "Cap_DChg(mAh)"] )


def test_detect_trace_schema() -> None :
    
    schema = detect_trace_schema( [ "Voltage(V)", "Cap_DChg(mAh)"] )
    assert schema.voltage_col            == 0
    assert schema.discharge_capacity_col == 1
    
    with pytest.raises(SchemaError) :
        detect_trace_schema( [ "Cap_DChg(mAh)"] )


def test_read_header_detects_tabs() -> None :
    
    header = read_header( _csv( "# exported", "Cycle\tCap_Chg(mAh)\tCap_DChg(mAh)") )
    
    assert header == [ "Cycle", "Cap_Chg(mAh)", "Cap_DChg(mAh)"]

# -----------------------------------------------------------------------------------------
# LOADERS

def test_load_cycles_skips_bad_rows() -> None :
    
    source = _csv( "Cycle,Cap_Chg(mAh),Cap_DChg(mAh)",
                   "1,1000.5,990.25",
                   "2,oops,980",
                   "3,998.125,988",
                   "3,997,987",
                   "4,996,986" )
    schema  = detect_schema( [ "Cycle", "Cap_Chg(mAh)", "Cap_DChg(mAh)"] )
    records = load_cycles( source, schema, "cellA")
    
    assert [ r.cycle_index for r in records ] == [ 1, 3, 4]
    assert records[0].cap_chg_mAh  == 1000.5
    assert records[0].cap_dchg_mAh == 990.25
    assert records[1].cap_chg_mAh  == 998.125
    assert all( r.cell_id == "cellA" for r in records )
    assert records[0].energy_mWh is None


def test_load_cycles_without_cycle_column_numbers_rows() -> None :
    
    source = _csv( "Cap_Chg(mAh),Cap_DChg(mAh)", "10,9", "8,7", "6,5" )
    schema = detect_schema( [ "Cap_Chg(mAh)", "Cap_DChg(mAh)"] )
    
    assert [ r.cycle_index for r in load_cycles( source, schema, "x") ] == [ 1, 2, 3]


def test_load_cycles_rejects_mostly_malformed_files() -> None :
    
    source = _csv( "Cycle,Cap_Chg(mAh),Cap_DChg(mAh)", "1,a,b", "2,c,d", "3,10,9" )
    schema = detect_schema( [ "Cycle", "Cap_Chg(mAh)", "Cap_DChg(mAh)"] )
    
    with pytest.raises(ParseError) :
        load_cycles( source, schema, "x")


def test_load_cycles_rejects_empty_files() -> None :
    
    schema = detect_schema( [ "Cycle", "Cap_Chg(mAh)", "Cap_DChg(mAh)"] )
    
    with pytest.raises(ParseError) :
        load_cycles( _csv("Cycle,Cap_Chg(mAh),Cap_DChg(mAh)"), schema, "x")


def test_load_cycles_missing_file( tmp_path) -> None :
    
    schema = detect_schema(CYCLE_HEADER)
    
    with pytest.raises(NotFound) :
        load_cycles( tmp_path / "nope.csv", schema, "x")


def test_cycle_log_round_trip_is_exact() -> None :
    
    records = generate_cells( DEFAULT_PROFILE.model_copy( update = { "n_cycles" : 20 }), 1)[0]
    sink    = io.StringIO()
    write_cycles( records, sink)
    
    text   = sink.getvalue()
    loaded = load_cycles( io.StringIO(text), detect_schema(read_header(io.StringIO(text))), "cell1")
    
    assert loaded == records


def test_load_trace_drops_capacity_reversals() -> None :
    
    source = _csv( "Voltage(V),Cap_DChg(mAh)",
                   "2.8,0", "2.7,10", "2.6,9", "2.5,20", "bad,30" )
    trace  = load_trace( source, detect_trace_schema( [ "Voltage(V)", "Cap_DChg(mAh)"] ), "c", 5)
    
    assert trace.samples == ( ( 2.8, 0.0), ( 2.7, 10.0), ( 2.5, 20.0) )
    assert trace.cycle_index == 5


def test_load_trace_needs_two_samples() -> None :
    
    source = _csv( "Voltage(V),Cap_DChg(mAh)", "2.8,0" )
    
    with pytest.raises(ParseError) :
        load_trace( source, detect_trace_schema( [ "Voltage(V)", "Cap_DChg(mAh)"] ), "c", 1)


def test_load_directory_pairs_logs_and_traces( tmp_path) -> None :
    
    profile = DEFAULT_PROFILE.model_copy( update = { "n_cycles" : 60 })
    write_cycles( generate_cells( profile, 1)[0], tmp_path / "cell1.csv")
    for cycle in ( 50, 1) :
        trace = generate_trace( profile, DEFAULT_SHAPE, cycle)
        write_trace( trace, tmp_path / trace_filename(trace))
    ( tmp_path / "notes.csv").write_text("a,b\n1,2\n")
    
    cells, traces = load_directory(tmp_path)
    
    assert list(cells) == [ "cell1"]
    assert len(cells["cell1"]) == 60
    assert [ t.cycle_index for t in traces["cell1"] ] == [ 1, 50]


def test_load_directory_missing_or_empty( tmp_path) -> None :
    
    with pytest.raises(NotFound) :
        load_directory( tmp_path / "absent")
    
    with pytest.raises(NotFound) :
        load_directory(tmp_path)

# -----------------------------------------------------------------------------------------
# FEATURES

def test_normalize_degenerate_range() -> None :
    
    assert np.all( normalize( np.array( [ 3.0, 3.0]), ( 3.0, 3.0)) == 0.0 )
    assert np.all( denormalize( np.array( [ 0.0, 0.7]), ( 3.0, 3.0)) == 3.0 )
    
    x = np.array( [ 2.0, 5.0, 11.0])
    assert np.allclose( denormalize( normalize( x, ( 2.0, 11.0)), ( 2.0, 11.0)), x)


def test_build_features_shapes_labels_and_split() -> None :
    
    records  = _records(30)
    features = build_features( records, 8)
    
    assert len(features.rows) == 22
    assert features.feature_names == ( "cap_chg", "cap_dchg", "cycle")
    assert len(features.rows[0]) == 8 * 3
    assert features.labels[0]  == records[8].cap_chg_mAh
    assert features.anchors[0] == records[7].cap_chg_mAh
    assert features.cycle_indices[0] == 9
    assert features.train_idx == tuple(range(17))
    assert features.test_idx  == tuple( range( 17, 22) )
    assert features.sequences( [ 0, 1]).shape == ( 2, 8, 3)
    
    # First step of row 0 is cycle 1, the maximum capacity
    assert features.rows[0][0] == 1.0
    assert features.rows[0][2] == 0.0


def test_build_features_window_checks() -> None :
    
    with pytest.raises(InsufficientData) :
        build_features( _records(8), 8)
    
    with pytest.raises(ShapeError) :
        build_features( _records(300), 200, max_seq_len = 128)
    
    with pytest.raises(ArgumentError) :
        build_features( _records(10), 0)


def test_build_features_rejects_unsorted_records() -> None :
    
    records = _records(12)
    records[3], records[4] = records[4], records[3]
    
    with pytest.raises(ArgumentError) :
        build_features( records, 4)


def test_build_dataset_shares_bounds_and_splits_per_cell() -> None :
    
    cells = { "b" : _records( 20, "b", start = 900.0),
              "a" : _records( 30, "a", start = 1000.0) }
    features = build_dataset( cells, 5)
    
    assert features.cell_ids[0] == "a"
    assert len(features.rows) == 25 + 15
    assert features.normalization[0] == ( 881.0, 1000.0)
    assert len(features.train_idx) == math.floor( 0.8 * 25) + math.floor( 0.8 * 15)
    assert features.test_idx[0] == 20
