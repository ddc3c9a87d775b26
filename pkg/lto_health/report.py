"""
Run-output files and the bundled report.
"""

import logging
import pandas as pd

from pathlib import Path
from typing import Any

from sofia_utils.io import (
    load_json_file,
    write_to_json_string,
)
from sofia_utils.printing import print_sep

from .basemodels import ComparisonRow
from .errors import NotFound
from .metrics import (
    MAE_PCT_NOTE,
    PUBLISHED_REFERENCE,
    comparison_table,
)


SECTION_FILES = {
    "soh"        : "soh.json",
    "dva"        : "dva.json",
    "rul"        : "rul.json",
    "anomaly"    : "anomaly.json",
    "train"      : "train_report.json",
    "evaluation" : "eval.json",
}

ABSENT = "absent"

REPORT_JSON = "report.json"
REPORT_TXT  = "report.txt"
SOH_CSV     = "report_soh.csv"
DVA_CSV     = "report_dva.csv"


# =========================================================================================
# JSON FILES
# =========================================================================================

def write_json( path : str | Path, payload : Any) -> Path :
    """
    Write `payload` as JSON (parent directories created)
    """
    path = Path(path)
    path.parent.mkdir( parents = True, exist_ok = True)
    path.write_text( write_to_json_string(payload) + "\n", encoding = "utf-8")
    logging.info( "Wrote %s", path)
    
    return path


def read_json( path : str | Path) -> Any :
    """
    Read a JSON file written by a previous run
    """
    path = Path(path)
    if not path.is_file() :
        raise NotFound(f"In read_json: '{path}' does not exist")
    
    return load_json_file(path)

# =========================================================================================
# REPORT ASSEMBLY
# =========================================================================================

def _soh_section( payload : dict) -> dict :
    
    return { cell : { "nominal"              : entry["nominal"],
                      "nominal_is_heuristic" : entry["nominal_is_heuristic"],
                      "overshoot"            : entry["overshoot"],
                      "first"                : entry["points"][0],
                      "last"                 : entry["points"][-1] }
             for cell, entry in payload["cells"].items() }


def _rul_section( payload : dict) -> dict :
    
    return { cell : { "eol_cycle" : entry["eol_cycle"],
                      "rul"       : entry["rul"],
                      "threshold" : entry["threshold"],
                      "fit"       : entry["fit"] }
             for cell, entry in payload["cells"].items() }


def _anomaly_section( payload : dict) -> dict :
    
    counts = payload["counts"]
    
    return { "counts" : counts, "total" : sum( counts.values() ) }


def build_report( out_dir : str | Path) -> dict[ str, Any] :
    """
    Aggregate whatever prior run outputs exist in `out_dir` \\
    Missing sections are marked "absent"; every timing-dependent value sits under
    the "timing" key. \\
    Args:
        out_dir : Run output directory
    Returns:
        Report dictionary
    """
    out_dir = Path(out_dir)
    found   = { name : read_json( out_dir / fname)
                for name, fname in SECTION_FILES.items() if ( out_dir / fname).is_file() }
    
    if not found :
        raise NotFound(f"In build_report: No run outputs in '{out_dir}'")
    
    report : dict[ str, Any] = { name : ABSENT for name in SECTION_FILES }
    timing : dict[ str, Any] = {}
    
    if "soh" in found :
        report["soh"] = _soh_section(found["soh"])
    if "dva" in found :
        report["dva"] = { "fade"  : found["dva"]["fade"],
                          "peaks" : [ { k : s[k] for k in ( "cell", "cycle", "peak_v", "peak_dqdv") }
                                      for s in found["dva"]["summaries"] ] }
    if "rul" in found :
        report["rul"] = _rul_section(found["rul"])
    if "anomaly" in found :
        report["anomaly"] = _anomaly_section(found["anomaly"])
    if "train" in found :
        train = dict(found["train"])
        timing["train"] = train.pop( "timing", {})
        report["train"] = train
    
    measured : list[ComparisonRow] = []
    if "evaluation" in found :
        evaluation = dict(found["evaluation"])
        timing["evaluation"] = evaluation.pop( "timing", {})
        report["evaluation"] = evaluation
        if evaluation.get("mae_pct") is not None :
            measured.append( ComparisonRow(
                method_name  = "toy-transformer",
                mae_pct      = evaluation["mae_pct"],
                time_seconds = timing["evaluation"].get( "inference_seconds", 0.0),
                source       = "measured",
            ) )
    
    table, rows = comparison_table(measured)
    report["comparison"] = { "rows" : [ { k : r[k] for k in ( "method_name", "mae_pct", "source") }
                                        for r in rows ],
                             "note" : MAE_PCT_NOTE }
    report["reference"]  = dict(PUBLISHED_REFERENCE)
    
    timing["comparison_time_seconds"] = { r["method_name"] : r["time_seconds"] for r in rows }
    report["timing"] = timing
    report["_table"] = table
    
    return report


def _plot_frames( out_dir : Path) -> tuple[ pd.DataFrame | None, pd.DataFrame | None] :
    
    soh = dva = None
    
    if ( out_dir / SECTION_FILES["soh"]).is_file() :
        payload = read_json( out_dir / SECTION_FILES["soh"])
        soh = pd.DataFrame(
            [ ( cell, c, s) for cell, entry in payload["cells"].items() for c, s in entry["points"] ],
            columns = [ "cell", "cycle", "soh_pct"],
        )
    
    if ( out_dir / SECTION_FILES["dva"]).is_file() :
        payload = read_json( out_dir / SECTION_FILES["dva"])
        dva = pd.DataFrame(
            [ ( curve["cell"], curve["cycle"], v, d)
              for curve in payload["curves"] for v, d in curve["points"] ],
            columns = [ "cell", "cycle", "v_mid", "dq_dv"],
        )
    
    return soh, dva


def format_summary( report : dict[ str, Any]) -> str :
    """
    Plain-text rendering of a report
    """
    lines = [ "lto-health report", "" ]
    
    if report["soh"] != ABSENT :
        lines.append("State of Health")
        for cell, entry in report["soh"].items() :
            lines.append( f"  {cell}: cycle {entry['first'][0]} {entry['first'][1]:.2f}% -> "
                          f"cycle {entry['last'][0]} {entry['last'][1]:.2f}%"
                          + ( " (heuristic nominal)" if entry["nominal_is_heuristic"] else "" ) )
    if report["rul"] != ABSENT :
        lines.append("End of life")
        for cell, entry in report["rul"].items() :
            eol = "not reached" if entry["eol_cycle"] is None else f"{entry['eol_cycle']:.2f}"
            lines.append(f"  {cell}: {eol} (threshold {entry['threshold']:.1f}%)")
    if report["dva"] != ABSENT :
        lines.append("Window capacity fade")
        for cell, series in report["dva"]["fade"].items() :
            trend = ", ".join( f"{c}: {q:.2f}" for c, q in series )
            lines.append(f"  {cell}: {trend}")
    if report["anomaly"] != ABSENT :
        lines.append(f"Anomalies flagged: {report['anomaly']['total']}")
    if report["evaluation"] != ABSENT :
        ev = report["evaluation"]
        lines.append( f"Evaluation: mse {ev['mse']:.4f}, mae {ev['mae']:.4f}, r2 {ev['r2']}" )
    
    lines += [ "", report["_table"], "", MAE_PCT_NOTE ]
    
    absent = [ name for name in SECTION_FILES if report[name] == ABSENT ]
    if absent :
        lines.append( "Absent sections: " + ", ".join(absent) )
    
    return "\n".join(lines) + "\n"


def write_report( out_dir : str | Path, echo : bool = False) -> Path :
    """
    Write report.json, report.txt and the plot-ready CSVs into `out_dir` \\
    Returns:
        Path of report.json
    """
    out_dir = Path(out_dir)
    report  = build_report(out_dir)
    text    = format_summary(report)
    report.pop("_table")
    
    path = write_json( out_dir / REPORT_JSON, report)
    ( out_dir / REPORT_TXT).write_text( text, encoding = "utf-8")
    
    soh, dva = _plot_frames(out_dir)
    if soh is not None :
        soh.to_csv( out_dir / SOH_CSV, index = False, lineterminator = "\n")
    if dva is not None :
        dva.to_csv( out_dir / DVA_CSV, index = False, lineterminator = "\n")
    
    if echo :
        print_sep()
        print( text, end = "")
        print_sep()
    
    return path
