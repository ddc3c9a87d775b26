"""
Exception Classes
"""

from typing import Any


class LTOHealthError(Exception) :
    """
    Base class for every domain error raised by `lto_health`. \\
    The CLI maps these to exit code 1.
    """
    pass

# -----------------------------------------------------------------------------------------
# INGESTION

class SchemaError(LTOHealthError) :
    """ A mandatory column role could not be resolved from the header """
    pass

class AmbiguityError(LTOHealthError) :
    """ Two header cells canonicalize identically for one role """
    pass

class ParseError(LTOHealthError) :
    """ Too many malformed rows, or too few valid samples """
    pass

class InsufficientData(LTOHealthError) :
    """ Not enough records for the requested window """
    pass

class NotFound( LTOHealthError, FileNotFoundError) :
    """ Expected inputs or prior run outputs are missing """
    pass

# -----------------------------------------------------------------------------------------
# SYNTHESIS AND ANALYSIS

class ProfileError(LTOHealthError) :
    """ Degradation profile leaves the (0, 100] SoH band """
    pass

class DegenerateTrace(LTOHealthError) :
    """ Trace collapses to a single voltage """
    pass

class RankError(LTOHealthError) :
    """ Least-squares design matrix is rank-deficient """
    pass

class DegenerateScale(LTOHealthError) :
    """ Robust scale is zero while deviations are not """
    pass

class AllFlagged(LTOHealthError) :
    """ No unflagged samples remain to interpolate from """
    pass

class ArgumentError( LTOHealthError, ValueError) :
    """ Invalid argument value or length mismatch """
    pass

# -----------------------------------------------------------------------------------------
# MODEL

class ConfigError(LTOHealthError) :
    """ Model or run configuration violates its invariants """
    pass

class ShapeError(LTOHealthError) :
    """ Batch sequences do not match the model's width or length limits """
    pass

class DivergenceError(LTOHealthError) :
    """
    Training loss became non-finite. \\
    `snapshot` holds the last finite parameter set.
    """
    
    def __init__( self, message : str, snapshot : dict[ str, Any] | None = None) -> None :
        
        super().__init__(message)
        self.snapshot = snapshot
        
        return
