"""Power curve, boost selection, and iteration-time model checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntpsim.perfmodel import (
    DEFAULT_SLOWDOWN_CAP,
    MAX_BOOST,
    POWER_ANCHORS,
    POWER_GRID,
    PROTOTYPE_MAX_RATIO,
    TABLE_ROWS,
    IterTimeModel,
    ModelShape,
    PowerCurve,
    backward_slowdown,
    bubble_ratio,
    calibrate_iter_time_model,
    comm_comp_ratio,
    min_boost_power,
    perf_factor,
    pp_transfer_scaling,
)


def test_perf_factor_hits_anchors_exactly():
    assert perf_factor(1.0) == 1.0
    assert perf_factor(1.1) == 1.1 * 0.972
    assert perf_factor(1.2) == 1.2 * 0.935
    assert perf_factor(1.1) == pytest.approx(1.0692, abs=1e-12)
    assert perf_factor(1.2) == pytest.approx(1.122, abs=1e-12)


def test_perf_per_watt_extrapolates_linearly_to_cap():
    curve = PowerCurve()
    # last-segment slope continues past the final anchor
    slope = (0.935 - 0.972) / 0.1
    assert curve.perf_per_watt(1.3) == pytest.approx(0.935 + slope * 0.1, rel=1e-12)
    with pytest.raises(ValueError):
        curve.perf_per_watt(MAX_BOOST + 0.01)
    with pytest.raises(ValueError):
        curve.perf_per_watt(0.99)


@given(st.floats(1.0, MAX_BOOST))
@settings(max_examples=200, deadline=None)
def test_perf_factor_monotone_but_sublinear(p):
    assert perf_factor(p) <= p + 1e-12
    assert perf_factor(p) >= perf_factor(1.0) - 1e-12
    q = min(p + 0.01, MAX_BOOST)
    assert perf_factor(q) >= perf_factor(p) - 1e-12


def test_min_boost_power_on_the_grid():
    assert min_boost_power(32, 30) == 1.15
    assert min_boost_power(32, 28) == 1.3
    assert min_boost_power(32, 24) is None
    assert min_boost_power(32, 32) == 1.0


def test_min_boost_power_accounts_for_head_imbalance():
    # a lopsided head split needs more power than the even share suggests
    even = min_boost_power(32, 30, head_imbalance=1.0)
    skewed = min_boost_power(32, 30, head_imbalance=1.2)
    assert even == 1.15
    assert skewed in (1.3, None) or skewed > even


def test_table_rows_within_tolerance():
    model, resid = calibrate_iter_time_model(TABLE_ROWS)
    assert resid <= 0.01
    for tp, lb, power, want in TABLE_ROWS:
        assert model.rel_iter_time(tp, lb, power) == pytest.approx(want, abs=0.01)


def test_default_model_matches_calibration():
    fitted, _ = calibrate_iter_time_model(TABLE_ROWS)
    default = IterTimeModel()
    assert default.compute_share == pytest.approx(fitted.compute_share, rel=1e-12)
    assert default.batch_exponent == pytest.approx(fitted.batch_exponent, rel=1e-12)


def test_rel_iter_time_structure():
    model = IterTimeModel()
    assert model.rel_iter_time(32, 8, 1.0) == 1.0
    # fewer ranks with the full batch is slower at nominal power
    assert model.rel_iter_time(30, 8, 1.0) > 1.0
    # shrinking the batch pays back part of the deficit
    assert model.rel_iter_time(30, 7, 1.0) < model.rel_iter_time(30, 8, 1.0)
    # extra power speeds the same shape up
    assert model.rel_iter_time(30, 8, 1.15) < model.rel_iter_time(30, 8, 1.0)


@given(st.integers(16, 32), st.integers(1, 8))
@settings(max_examples=100, deadline=None)
def test_rel_iter_time_monotone_in_power(tp, lb):
    model = IterTimeModel()
    times = [model.rel_iter_time(tp, lb, p) for p in POWER_GRID]
    assert all(a >= b - 1e-12 for a, b in zip(times, times[1:]))


def test_bubble_ratio_shrinks_with_batch():
    assert bubble_ratio(pp=8, microbatches=8) > bubble_ratio(pp=8, microbatches=64)
    assert bubble_ratio(pp=1, microbatches=8) == 0.0


def test_pp_transfer_scaling_is_proportional_to_tp_inverse():
    assert pp_transfer_scaling(32, 16) == pytest.approx(2.0)
    assert pp_transfer_scaling(32, 32) == 1.0


def test_backward_slowdown_saturates():
    assert backward_slowdown(0.0) == 1.0
    assert backward_slowdown(PROTOTYPE_MAX_RATIO) <= DEFAULT_SLOWDOWN_CAP + 1e-12
    assert backward_slowdown(10.0) == DEFAULT_SLOWDOWN_CAP
    r = np.linspace(0, PROTOTYPE_MAX_RATIO, 20)
    vals = [backward_slowdown(x) for x in r]
    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))


def test_comm_comp_ratio_is_negligible_at_flagship_scale():
    shape = ModelShape(hidden=16384, layers=126, heads=128)
    args = dict(n1=32, n2=30, pp=8, local_batch=8, seq_len=16384)
    ratio = comm_comp_ratio(shape, **args)
    assert 0.0 < ratio <= PROTOTYPE_MAX_RATIO
    # reshard bytes are fixed per step, so more tokens dilute the ratio
    smaller_batch = dict(args, local_batch=1)
    assert comm_comp_ratio(shape, **smaller_batch) == pytest.approx(8 * ratio, rel=1e-9)
    assert comm_comp_ratio(shape, n1=32, n2=32, pp=8, local_batch=8, seq_len=16384) == 0.0
