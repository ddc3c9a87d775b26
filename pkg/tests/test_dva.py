from __future__ import annotations

import numpy as np
import pytest

from lto_health.basemodels import DischargeTrace
from lto_health.dva import (
    DEFAULT_WINDOW,
    compute_dva,
    dva_summary,
    fade_series,
    find_peak,
    moving_average,
    window_capacity,
)
from lto_health.errors import (
    ArgumentError,
    DegenerateTrace,
)
from lto_health.synth import (
    DEFAULT_PROFILE,
    DEFAULT_SHAPE,
    generate_trace,
    generate_traces,
)


def _trace( samples : list[ tuple[ float, float]], cycle : int = 1) -> DischargeTrace :
    return DischargeTrace( cell_id = "t", cycle_index = cycle, samples = tuple(samples))


def _linear( cycle : int = 1) -> DischargeTrace :
    """ 3.0 V down to 2.0 V in 0.1 V steps, 10 mAh per step """
    return _trace( [ ( 3.0 - 0.1 * i, 10.0 * i) for i in range(11) ], cycle)


def test_moving_average_truncates_at_the_edges() -> None :
    
    out = moving_average( np.array( [ 1.0, 2.0, 3.0, 4.0, 5.0]), 3)
    
    assert np.allclose( out, [ 1.5, 2.0, 3.0, 4.0, 4.5])
    assert np.array_equal( moving_average( np.array( [ 1.0, 7.0]), 1), [ 1.0, 7.0])
    
    with pytest.raises(ArgumentError) :
        moving_average( np.array( [ 1.0]), 4)


def test_compute_dva_on_a_linear_trace() -> None :
    
    curve = compute_dva( _linear(), smoothing_window = 1)
    
    assert len(curve.points) == 10
    assert np.allclose( curve.dq_dv, -100.0)
    assert curve.v_mid[0] == pytest.approx(2.95)
    assert curve.smoothing_window == 1


def test_compute_dva_collapses_repeated_voltages() -> None :
    
    trace = _trace( [ ( 2.8, 0.0), ( 2.7, 1.0), ( 2.7, 3.0), ( 2.6, 4.0) ] )
    curve = compute_dva( trace, smoothing_window = 1)
    
    assert np.allclose( curve.v_mid, [ 2.75, 2.65])
    assert np.allclose( curve.dq_dv, [ -20.0, -20.0])


def test_compute_dva_drops_direction_reversals() -> None :
    
    trace = _trace( [ ( 2.8, 0.0), ( 2.7, 1.0), ( 2.75, 2.0), ( 2.6, 3.0) ] )
    curve = compute_dva( trace, smoothing_window = 1)
    
    assert np.allclose( curve.v_mid, [ 2.75, 2.65])
    assert np.allclose( curve.dq_dv, [ -10.0, -20.0])


def test_compute_dva_errors() -> None :
    
    with pytest.raises(DegenerateTrace) :
        compute_dva( _trace( [ ( 2.0, 0.0), ( 2.0, 1.0) ] ))
    
    with pytest.raises(ArgumentError) :
        compute_dva( _linear(), smoothing_window = 4)


def test_peak_sits_on_the_plateau() -> None :
    
    curve  = compute_dva( generate_trace( DEFAULT_PROFILE, DEFAULT_SHAPE, 50))
    v, d   = find_peak(curve)
    
    assert v == pytest.approx( DEFAULT_SHAPE.plateau_center_V, abs = 0.01)
    assert d < 0
    assert abs(d) == pytest.approx( 979.0 * DEFAULT_SHAPE.plateau_sharpness / 4.0, rel = 0.03)


def test_window_capacity_prorates_partial_pairs() -> None :
    
    assert window_capacity( _linear(), 2.25, 2.30) == pytest.approx(5.0)
    assert window_capacity( _linear(), 2.05, 2.45) == pytest.approx(40.0)
    assert window_capacity( _linear(), 3.5,  4.0)  == 0.0
    
    with pytest.raises(ArgumentError) :
        window_capacity( _linear(), 2.3, 2.3)


def test_window_capacity_counts_flat_pairs_inside() -> None :
    
    trace = _trace( [ ( 2.5, 0.0), ( 2.27, 10.0), ( 2.27, 15.0), ( 2.0, 20.0) ] )
    want  = 10.0 * 0.03 / 0.23 + 5.0 + 5.0 * 0.02 / 0.27
    
    assert window_capacity( trace, 2.25, 2.30) == pytest.approx(want)


def test_fade_series_is_sorted_and_decreasing() -> None :
    
    traces = generate_traces( DEFAULT_PROFILE, DEFAULT_SHAPE, [ 500, 1, 250, 50])
    series = fade_series(traces)
    
    assert [ c for c, _ in series ] == [ 1, 50, 250, 500]
    assert all( b < a for ( _, a), ( _, b) in zip( series[:-1], series[1:]) )
    
    with pytest.raises(ArgumentError) :
        fade_series([])


def test_dva_summary_fields() -> None :
    
    trace   = generate_trace( DEFAULT_PROFILE, DEFAULT_SHAPE, 100)
    summary = dva_summary( trace, [ DEFAULT_WINDOW, ( 2.0, 2.5) ])
    
    assert summary["cell"]  == "cell1"
    assert summary["cycle"] == 100
    assert [ w["v_lo"] for w in summary["window_capacities"] ] == [ 2.25, 2.0]
    assert summary["window_capacities"][0]["mAh"] == pytest.approx(
        window_capacity( trace, *DEFAULT_WINDOW) )
    assert summary["window_capacities"][1]["mAh"] > summary["window_capacities"][0]["mAh"]


def test_window_capacity_is_additive_over_adjacent_windows() -> None :
    
    trace = generate_trace( DEFAULT_PROFILE, DEFAULT_SHAPE, 50)
    parts = window_capacity( trace, 2.20, 2.25) + window_capacity( trace, 2.25, 2.30)
    
    assert parts == pytest.approx( window_capacity( trace, 2.20, 2.30), rel = 1e-9)


@pytest.mark.parametrize( "seed", range(5))
def test_compute_dva_is_exact_for_quadratic_capacity( seed : int) -> None :
    
    rng    = np.random.default_rng(seed)
    a, b   = rng.uniform( 50.0, 500.0, size = 2)
    v_max  = 2.9
    u      = np.concatenate( ( [ 0.0 ], np.cumsum( rng.uniform( 1e-3, 1e-2, size = 60)) ) )
    trace  = _trace( [ ( v_max - x, a * x**2 + b * x) for x in u ])
    curve  = compute_dva( trace, smoothing_window = 1)
    
    expected = -2.0 * a * ( v_max - curve.v_mid ) - b
    
    np.testing.assert_allclose( curve.dq_dv, expected, rtol = 1e-9)


def test_compute_dva_error_shrinks_with_the_spacing() -> None :
    
    errors = []
    for n in ( 100, 200) :
        u     = np.linspace( 0.0, 1.0, n + 1)
        curve = compute_dva( _trace( [ ( 3.0 - x, x**3) for x in u ]), smoothing_window = 1)
        exact = -3.0 * ( 3.0 - curve.v_mid )**2
        errors.append( float(np.max(np.abs( curve.dq_dv - exact))) )
    
    assert errors[0] == pytest.approx( 0.25 / 100**2, rel = 1e-4)
    assert errors[0] / errors[1] == pytest.approx( 4.0, rel = 1e-4)


@pytest.mark.parametrize( "window", [ 3, 5, 7])
def test_moving_average_keeps_linear_interiors( window : int) -> None :
    
    values = 2.0 + 0.5 * np.arange(20)
    out    = moving_average( values, window)
    half   = window // 2
    
    np.testing.assert_allclose( out[ half : -half ], values[ half : -half ], rtol = 0, atol = 1e-12)
    assert out[0] > values[0] and out[-1] < values[-1]
    
    flat = moving_average( np.full( 20, 3.25), window)
    np.testing.assert_allclose( flat, 3.25, rtol = 0, atol = 1e-12)
    assert out[ half : -half ].mean() == pytest.approx( values[ half : -half ].mean(), rel = 1e-12)
