from __future__ import annotations

import pytest

from sofia_utils.io import load_json_file

from lto_health.cli import (
    PREDICTIONS_FILE,
    run,
)
from lto_health.config import RUN_CONFIG_FILENAME


@pytest.fixture( autouse = True)
def _clean_env( monkeypatch) -> None :
    
    for name in ( "LTO_HEALTH_THRESHOLD_Z", "LTO_HEALTH_EOL_THRESHOLD",
                  "LTO_HEALTH_SMOOTHING_WINDOW", "LTO_HEALTH_LOG_LEVEL") :
        monkeypatch.delenv( name, raising = False)
    
    return


def _synth( tmp_path) -> str :
    
    data = tmp_path / "data"
    assert run( [ "synth", "--out", str(data), "--cells", "2", "--cycles", "60",
                  "--trace-every", "30" ] ) == 0
    
    return str(data)


def test_synth_writes_cells_traces_and_config( tmp_path) -> None :
    
    data  = _synth(tmp_path)
    names = sorted( p.name for p in ( tmp_path / "data").iterdir() )
    
    assert "cell1.csv" in names and "cell2.csv" in names
    for cycle in ( 1, 30, 60) :
        assert f"cell2_cycle{cycle}_discharge.csv" in names
    
    cfg = load_json_file( tmp_path / "data" / RUN_CONFIG_FILENAME)
    assert cfg["subcommand"] == "synth" and cfg["cycles"] == 60 and data.endswith("data")


def test_analysis_pipeline( tmp_path) -> None :
    
    data = _synth(tmp_path)
    out  = tmp_path / "out"
    
    for command in ( "ingest", "soh", "rul", "dva", "anomaly") :
        assert run( [ command, "--in", data, "--out", str(out), "--nominal", "1000"]) == 0
    
    soh = load_json_file( out / "soh.json")
    assert set(soh["cells"]) == { "cell1", "cell2" }
    assert len( soh["cells"]["cell1"]["points"]) == 60
    assert not soh["cells"]["cell1"]["nominal_is_heuristic"]
    
    rul = load_json_file( out / "rul.json")
    assert rul["cells"]["cell1"]["current_cycle"] == 60
    assert rul["cells"]["cell1"]["threshold"] == 80.0
    
    dva = load_json_file( out / "dva.json")
    assert len( dva["summaries"]) == 6
    assert ( out / "dva" / "cell1_cycle30_dva.csv").is_file()
    
    anomaly = load_json_file( out / "anomaly.json")
    assert anomaly["threshold_z"] == 3.0
    assert len( anomaly["counts"]) == 6
    
    ingest = load_json_file( out / "ingest.json")
    assert ingest["traces"]["cell1"] == [ 1, 30, 60]
    assert ingest["features"]["window"] == 8
    
    assert run( [ "report", "--out", str(out)]) == 0
    report = load_json_file( out / "report.json")
    assert report["train"] == "absent"
    assert report["soh"]["cell2"]["last"][0] == 60


def test_model_pipeline( tmp_path) -> None :
    
    data  = _synth(tmp_path)
    out   = tmp_path / "out"
    small = [ "--window", "4", "--in", data, "--out", str(out)]
    
    assert run( [ "train", *small, "--d-model", "8", "--n-heads", "2", "--n-layers", "1",
                  "--d-ff", "16", "--epochs", "1", "--batch-size", "32"] ) == 0
    assert run( [ "predict",  *small ]) == 0
    assert run( [ "evaluate", *small ]) == 0
    
    trained = load_json_file( out / "train_report.json")
    assert trained["n_epochs"] == 1
    assert "wall_seconds" in trained["timing"]
    
    rows = ( out / PREDICTIONS_FILE).read_text().splitlines()
    assert rows[0] == "row,cell,cycle,label,prediction,split"
    assert len(rows) == 1 + 2 * ( 60 - 4 )
    
    evaluation = load_json_file( out / "eval.json")
    assert evaluation["parameter_count"] == trained["parameter_count"]
    assert evaluation["nominal"] > 900.0
    assert evaluation["timing"]["n_batches"] == 2
    assert evaluation["mae_pct"] is not None


def test_single_cycle_file_input( tmp_path) -> None :
    
    data = _synth(tmp_path)
    out  = tmp_path / "one"
    
    assert run( [ "soh", "--in", f"{data}/cell2.csv", "--out", str(out)]) == 0
    assert list( load_json_file( out / "soh.json")["cells"]) == [ "cell2"]


def test_environment_and_flag_precedence( tmp_path, monkeypatch) -> None :
    
    data = _synth(tmp_path)
    monkeypatch.setenv( "LTO_HEALTH_THRESHOLD_Z", "2.5")
    
    assert run( [ "anomaly", "--in", data, "--out", str( tmp_path / "env")]) == 0
    assert load_json_file( tmp_path / "env" / "anomaly.json")["threshold_z"] == 2.5
    
    assert run( [ "anomaly", "--in", data, "--out", str( tmp_path / "flag"),
                  "--threshold-z", "4"] ) == 0
    assert load_json_file( tmp_path / "flag" / "anomaly.json")["threshold_z"] == 4.0


def test_usage_errors_exit_with_two( capsys) -> None :
    
    assert run( [ "soh", "--bogus"]) == 2
    assert run([]) == 2
    assert run( [ "anomaly", "--baseline", "other"]) == 2
    capsys.readouterr()


def test_domain_errors_exit_with_one( tmp_path, capsys) -> None :
    
    assert run( [ "soh", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("lto-health soh: error:")
    assert err.count("\n") == 1
    
    assert run( [ "soh", "--in", str( tmp_path / "absent"), "--out", str(tmp_path)]) == 1
    assert run( [ "dva", "--in", str(tmp_path), "--window-lo", "2.4", "--window-hi", "2.3"]) == 1
    assert not ( tmp_path / RUN_CONFIG_FILENAME).exists()


def test_identical_runs_give_identical_reports( tmp_path) -> None :
    
    data    = _synth(tmp_path)
    reports = []
    for name in ( "a", "b") :
        out  = str( tmp_path / name)
        args = [ "--in", data, "--out", out, "--window", "4"]
        for command in ( "soh", "rul", "dva", "anomaly") :
            assert run( [ command, "--in", data, "--out", out]) == 0
        assert run( [ "train", *args, "--d-model", "8", "--n-heads", "2", "--n-layers", "1",
                      "--d-ff", "16", "--epochs", "1"] ) == 0
        assert run( [ "evaluate", *args ]) == 0
        assert run( [ "report", "--out", out]) == 0
        
        report = load_json_file( tmp_path / name / "report.json")
        report.pop("timing")
        reports.append(report)
    
    assert reports[0] == reports[1]
