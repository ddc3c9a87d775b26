from __future__ import annotations

import math

import numpy as np
import pytest

from lto_health.anomaly import (
    GAUSSIAN_SCALE_FACTOR,
    detect_anomalies,
    expected_voltages,
    feedback_refine,
    median_absolute_deviation,
    reference_baseline,
    robust_zscores,
)
from lto_health.basemodels import (
    AnomalyReport,
    DischargeTrace,
)
from lto_health.dva import (
    compute_dva,
    find_peak,
)
from lto_health.errors import (
    AllFlagged,
    ArgumentError,
    DegenerateScale,
)
from lto_health.synth import (
    DEFAULT_PROFILE,
    DEFAULT_SHAPE,
    generate_trace,
    generate_traces,
    inject_anomaly,
)


def _clean( cycle : int = 50) -> DischargeTrace :
    return generate_trace( DEFAULT_PROFILE, DEFAULT_SHAPE, cycle)


def _noisy( seed : int, cycle : int = 50) -> DischargeTrace :
    
    profile = DEFAULT_PROFILE.model_copy( update = { "seed" : seed })
    
    return generate_trace( profile, DEFAULT_SHAPE, cycle, noise_sd_V = 0.01)


def test_robust_statistics() -> None :
    
    x = np.array( [ 1.0, 2.0, 3.0, 4.0, 100.0])
    assert median_absolute_deviation(x) == 1.0
    
    z, scale = robust_zscores(x)
    assert scale == GAUSSIAN_SCALE_FACTOR
    assert z[2] == 0.0
    assert z[4] == pytest.approx( 97.0 / GAUSSIAN_SCALE_FACTOR)
    
    z, scale = robust_zscores( np.zeros(5))
    assert scale == 0.0 and np.all(np.isnan(z))


def test_clean_noiseless_trace_has_no_flags() -> None :
    
    report = detect_anomalies(_clean())
    
    assert report.flagged == ()
    assert not report.scale_fallback
    assert report.baseline_kind == "smoothed-self"


def test_zero_scale_fallback_flags_the_spike() -> None :
    
    faulty = inject_anomaly( _clean(), "spike", -0.2, 50)
    report = detect_anomalies(faulty)
    
    assert report.scale_fallback
    assert 50 in report.indices
    assert all( 45 <= i <= 55 for i in report.indices )
    assert all( math.isinf(z) for _, _, z in report.flagged )


def test_zero_scale_strict_mode_raises() -> None :
    
    faulty = inject_anomaly( _clean(), "spike", -0.2, 50)
    
    with pytest.raises(DegenerateScale) :
        detect_anomalies( faulty, strict = True)


def _dyadic( offset_V : float = 0.0) -> DischargeTrace :
    """ 2.5 V down in 2^-7 V steps, so offsets of 0.25 V subtract exactly """
    return DischargeTrace( cell_id     = "d",
                           cycle_index = 1,
                           samples     = tuple( ( 2.5 - i / 128 + offset_V, float(i)) for i in range(40) ) )


def test_zero_scale_constant_offset_flags_every_sample() -> None :
    
    reference = _dyadic()
    shifted   = _dyadic(0.25)
    report    = detect_anomalies( shifted, reference)
    
    assert report.scale_fallback
    assert report.indices == list( range( len(shifted)) )
    assert all( z == math.inf and r == 0.25 for _, r, z in report.flagged )
    
    with pytest.raises(DegenerateScale) :
        detect_anomalies( shifted, reference, strict = True)
    
    assert detect_anomalies( reference, reference).flagged == ()
    assert not detect_anomalies( reference, reference).scale_fallback


def test_infinite_threshold_flags_nothing() -> None :
    
    faulty = inject_anomaly( _noisy(1), "spike", -0.5, 70)
    
    assert detect_anomalies( faulty, threshold_z = math.inf).flagged == ()
    assert detect_anomalies( inject_anomaly( _clean(), "spike", -0.2, 50),
                             threshold_z = math.inf).flagged == ()


def test_argument_checks() -> None :
    
    short = DischargeTrace( cell_id = "t", cycle_index = 1,
                            samples = tuple( ( 2.8 - 0.1 * i, float(i)) for i in range(9) ) )
    
    with pytest.raises(ArgumentError) :
        detect_anomalies(short)
    
    with pytest.raises(ArgumentError) :
        detect_anomalies( _clean(), threshold_z = 0.0)
    
    with pytest.raises(ArgumentError) :
        reference_baseline([])


def test_spike_detection_power() -> None :
    
    detected = 0
    for seed in range(200) :
        faulty = inject_anomaly( _noisy(seed), "spike", -0.1, 100)
        if 100 in detect_anomalies(faulty).indices :
            detected += 1
    
    assert detected >= 190


def test_clean_noisy_traces_are_rarely_flagged() -> None :
    
    flagged = sum( len( detect_anomalies(_noisy(seed)).flagged ) for seed in range(50) )
    
    assert flagged / ( 50 * 201 ) < 0.05


def test_reference_baseline_residuals_are_the_noise() -> None :
    
    reference = reference_baseline( generate_traces( DEFAULT_PROFILE, DEFAULT_SHAPE, [ 100, 50]) )
    assert reference.cycle_index == 50
    
    noisy  = _noisy(0)
    assert np.allclose( expected_voltages( noisy, reference), reference.voltages)
    
    report = detect_anomalies( inject_anomaly( noisy, "sag", -0.1, 120), reference)
    
    assert report.baseline_kind == "reference-trace"
    assert set( range( 120, 125)) <= set(report.indices)

# -----------------------------------------------------------------------------------------
# FEEDBACK

def test_feedback_refine_restores_the_dva_peak() -> None :
    
    clean  = _clean()
    faulty = inject_anomaly( clean, "spike", -0.1, 80)
    report = detect_anomalies(faulty)
    fixed  = feedback_refine( report, faulty)
    
    assert 80 in report.indices
    assert np.max(np.abs( fixed.voltages - clean.voltages)) < 0.01
    assert np.array_equal( fixed.capacities, faulty.capacities)
    
    _, d_clean  = find_peak(compute_dva(clean))
    _, d_faulty = find_peak(compute_dva(faulty))
    _, d_fixed  = find_peak(compute_dva(fixed))
    
    assert abs( d_fixed - d_clean) < abs( d_faulty - d_clean)


def test_feedback_refine_without_flags_is_a_copy() -> None :
    
    clean = _clean()
    
    assert feedback_refine( detect_anomalies(clean), clean) == clean


def test_feedback_refine_rejects_foreign_and_fully_flagged_reports() -> None :
    
    clean  = _clean()
    other  = detect_anomalies(_clean(100))
    
    with pytest.raises(ArgumentError) :
        feedback_refine( other, clean)
    
    everything = AnomalyReport( cell_id       = clean.cell_id,
                                cycle_index   = clean.cycle_index,
                                flagged       = tuple( ( i, 0.1, math.inf) for i in range(len(clean)) ),
                                baseline_kind = "smoothed-self" )
    
    with pytest.raises(AllFlagged) :
        feedback_refine( everything, clean)


def test_flags_shrink_as_the_threshold_grows() -> None :
    
    for seed in range(10) :
        faulty = inject_anomaly( _noisy(seed), "spike", -0.05, 60)
        flags  = [ set( detect_anomalies( faulty, threshold_z = z).indices) for z in ( 2.0, 3.0, 5.0) ]
        
        assert flags[2] <= flags[1] <= flags[0]


def test_feedback_refine_is_stable_under_redetection() -> None :
    
    faulty = inject_anomaly( _clean(), "spike", -0.1, 80)
    report = detect_anomalies(faulty)
    fixed  = feedback_refine( report, faulty)
    again  = detect_anomalies(fixed)
    
    assert report.indices
    assert not set(report.indices) & set(again.indices)
    assert feedback_refine( again, fixed) == fixed
