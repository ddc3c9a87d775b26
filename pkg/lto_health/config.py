"""
Environment defaults and run-configuration files.
"""

import logging
import os

from pathlib import Path
from typing import Any

from pydantic import ValidationError
from sofia_utils.io import (
    load_json_file,
    write_to_json_string,
)

from .basemodels import RunConfig
from .errors import (
    ConfigError,
    NotFound,
)


LOG_LEVELS = ( "DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

RUN_CONFIG_FILENAME = "run_config.json"


def _env_float( name : str, default : float, positive : bool = True) -> float :
    
    raw = os.getenv( name, str(default))
    try :
        value = float(raw)
    except ValueError :
        raise RuntimeError(f"Invalid {name} '{raw}'. Expected a number.")
    
    if positive and not value > 0 :
        raise RuntimeError(f"Invalid {name} '{raw}'. Expected a positive number.")
    
    return value


def get_threshold_z() -> float :
    """
    Anomaly z-score threshold (`LTO_HEALTH_THRESHOLD_Z`, default 3.0)
    """
    return _env_float( "LTO_HEALTH_THRESHOLD_Z", 3.0)


def get_eol_threshold() -> float :
    """
    End-of-life SoH percentage (`LTO_HEALTH_EOL_THRESHOLD`, default 80.0)
    """
    value = _env_float( "LTO_HEALTH_EOL_THRESHOLD", 80.0)
    if value > 100.0 :
        raise RuntimeError(
            f"Invalid LTO_HEALTH_EOL_THRESHOLD '{value}'. Expected at most 100."
        )
    
    return value


def get_smoothing_window() -> int :
    """
    DVA moving-average window (`LTO_HEALTH_SMOOTHING_WINDOW`, default 5). \\
    Must be a positive odd integer.
    """
    raw = os.getenv( "LTO_HEALTH_SMOOTHING_WINDOW", "5")
    if not raw.isdigit() or int(raw) % 2 == 0 :
        raise RuntimeError(
            f"Invalid LTO_HEALTH_SMOOTHING_WINDOW '{raw}'. Expected a positive odd integer."
        )
    
    return int(raw)


def get_log_level() -> str :
    """
    CLI log level (`LTO_HEALTH_LOG_LEVEL`, default WARNING)
    """
    level = os.getenv( "LTO_HEALTH_LOG_LEVEL", "WARNING").upper()
    
    if level not in LOG_LEVELS :
        raise RuntimeError(
            f"Invalid LTO_HEALTH_LOG_LEVEL '{level}'. "
            f"Expected one of {', '.join(LOG_LEVELS)}."
        )
    
    return level

# -----------------------------------------------------------------------------------------
# RUN CONFIGURATION FILES

# Config-file keys spelled like their flags
FLAG_ALIASES = { "in" : "in_path", "model" : "model_path" }


def _field_names( loaded : dict[ str, Any], path : Path) -> dict[ str, Any] :
    """
    Config-file keys mapped to RunConfig field names \\
    Accepts field names (`window_lo`) as well as flag spellings (`window-lo`, `in`).
    """
    resolved : dict[ str, Any] = {}
    for key, value in loaded.items() :
        name = key.replace( "-", "_")
        name = FLAG_ALIASES.get( name, name)
        if name not in RunConfig.model_fields :
            raise ConfigError(f"In load_run_config: Unknown config key '{key}' in '{path}'")
        if name in resolved :
            raise ConfigError(f"In load_run_config: Key '{key}' repeats '{name}' in '{path}'")
        resolved[name] = value
    
    return resolved


def load_run_config( path      : str | Path | None,
                     overrides : dict[ str, Any],
                     defaults  : dict[ str, Any] | None = None) -> RunConfig :
    """
    Resolve a run configuration from defaults, an optional flat JSON file and flags \\
    Args:
        path      : Config file path (or None)
        overrides : Explicitly given flag values (None values are ignored)
        defaults  : Lowest-precedence values (environment defaults)
    Returns:
        Frozen RunConfig where flags take precedence over file values
    """
    values : dict[ str, Any] = dict( defaults or {})
    
    if path is not None :
        path = Path(path)
        if not path.is_file() :
            raise NotFound(f"In load_run_config: Config file '{path}' does not exist")
        
        loaded = load_json_file(path)
        if not isinstance( loaded, dict) :
            raise ConfigError(f"In load_run_config: '{path}' must hold a flat JSON object")
        
        values.update( _field_names( loaded, path) )
    
    values.update( { k : v for k, v in overrides.items() if v is not None } )
    
    try :
        return RunConfig.model_validate(values)
    except ValidationError as e :
        first = e.errors()[0]
        where = ".".join( str(p) for p in first["loc"] ) or "config"
        raise ConfigError(f"In load_run_config: Invalid {where}: {first['msg']}") from e


def write_run_config( config : RunConfig, out_dir : str | Path) -> Path :
    """
    Write the resolved run configuration next to the run outputs \\
    Args:
        config  : Resolved RunConfig
        out_dir : Output directory (created if missing)
    Returns:
        Path of the written file
    """
    out_dir = Path(out_dir)
    out_dir.mkdir( parents = True, exist_ok = True)
    
    path = out_dir / RUN_CONFIG_FILENAME
    path.write_text( write_to_json_string( config.model_dump( mode = "json")) + "\n")
    logging.info( "Run config written to %s", path)
    
    return path
