import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xmerge.metrics import (
    EgoSample,
    IncompleteRun,
    MetricsRecord,
    detected_ratio,
    driving_safety_params,
    format_value,
    localization_error,
    match_tracks,
    merge_window,
    prediction_error,
    ttc,
)
from v2xmerge.prediction.features import AgentView


class _S:
    def __init__(self, x, y=0.0, vx=0.0, vehicle_id=None):
        self.x, self.y, self.vx, self.vehicle_id = x, y, vx, vehicle_id


def test_ttc_defined_only_while_closing():
    assert ttc(_S(0, vx=30), _S(54.5, vx=20)) == pytest.approx(5.0)
    assert ttc(_S(54.5, vx=20), _S(0, vx=30)) == pytest.approx(5.0)
    assert ttc(_S(0, vx=20), _S(50, vx=30)) is None
    assert ttc(_S(0, vx=30), _S(3, vx=20)) is None  # overlapping


def test_detected_ratio_and_matching():
    truth = {1: _S(0.0), 2: _S(50.0), 3: _S(100.0), 4: _S(900.0)}
    tracks = [_S(50.5, vehicle_id=None), _S(0.2, vehicle_id=1)]
    assert match_tracks(tracks, truth) == {1: (0.2, 0.0), 2: (50.5, 0.0)}
    assert detected_ratio(tracks, truth, (0.0, 0.0), 400.0) == pytest.approx(2 / 3)
    assert detected_ratio(tracks, {}, (0.0, 0.0)) is None
    assert localization_error(tracks, truth) == {1: pytest.approx(0.2), 2: pytest.approx(0.5)}
    with pytest.raises(ValueError):
        detected_ratio(tracks, truth, (0, 0), 0.0)


def test_prediction_errors_by_horizon():
    pe = prediction_error([(1.0, 10.0, 1.0, 9.0, 0.0), (1.0, 10.0, -1.0, 11.0, 0.0), (2.0, 0.0, 0.5, 0.0, 0.0),
                           (4.0, 0.0, 9.0, 0.0, 0.0)])
    assert pe.mae(1.0, "lateral") == 1.0 and pe.mae(1.0, "longitudinal") == 1.0
    assert pe.summary(2.0) == (0.5, 0.5, 0.5)
    assert math.isnan(pe.mae(3.0))


def _sample(t, lane, ax=0.0, gap=50.0, t_ttc=math.inf):
    return EgoSample(t, 0.0, 0.0, 20.0, 0.0, ax, 0.0, lane, gap, gap, t_ttc)


def test_merge_window_and_safety():
    s = [_sample(0.1 * k, 1 if k < 30 else 2, ax=1.0 if k < 10 else -1.0, gap=40.0 - k * 0.1,
                 t_ttc=10.0 if k == 50 else math.inf) for k in range(120)]
    t0, t1 = merge_window(s, 2)
    assert t0 == 0.0 and t1 == pytest.approx(3.0 + 5.0)
    d = driving_safety_params(s, 2)
    assert d.ax_mean == 1.0 and d.v_mean == 20.0
    assert d.min_dist == pytest.approx(40.0 - 8.0)
    assert d.min_ttc == 10.0
    with pytest.raises(IncompleteRun):
        merge_window([_sample(0.0, 1)], 2)


@given(st.floats(allow_nan=True, allow_infinity=True) | st.integers(-10**9, 10**9))
def test_format_value_round_trips(v):
    text = format_value(v)
    if isinstance(v, int):
        assert int(text) == v
    elif math.isnan(v):
        assert text == "nan"
    else:
        assert float(text) == v


def test_record_row_layout():
    r = MetricsRecord("h", 0.5, 3, [0.5, 1.0], [0.2, 0.4])
    row = r.row()
    assert row[:4] == [0.5, 3, 0.75, pytest.approx(0.3)]
    assert all(math.isnan(v) for v in row[4:])
    with pytest.raises(ValueError):
        MetricsRecord("h", 0.5, 3, [1.5])
