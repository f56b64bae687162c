import io
import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xmerge.scenario import (
    ConfigError,
    DuplicateRecord,
    MalformedRow,
    MissingColumn,
    Replay,
    RoadLayout,
    ScenarioConfig,
    TrajectoryRecord,
    assign_v2x_equipment,
    parse_trajectory_csv,
    parse_trajectory_rows,
    write_trajectory_csv,
)

floats = st.floats(-1e4, 1e4, allow_nan=False)
positive = st.floats(0.1, 30, allow_nan=False)
records = st.builds(TrajectoryRecord, st.integers(0, 10**6), st.integers(0, 10**6), floats, floats, positive,
                    positive, floats, floats, st.integers(1, 5))


@given(st.lists(records, max_size=20, unique_by=lambda r: (r.frame, r.vehicle_id)))
def test_trajectory_csv_round_trip(tmp_path_factory, recs):
    p = tmp_path_factory.mktemp("csv") / "t.csv"
    write_trajectory_csv(p, recs)
    assert parse_trajectory_csv(p) == sorted(recs, key=lambda r: (r.frame, r.vehicle_id))


HEADER = ["frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity", "laneId"]


def test_parser_errors():
    with pytest.raises(MissingColumn):
        parse_trajectory_rows([])
    with pytest.raises(MissingColumn):
        parse_trajectory_rows([HEADER[:-1]])
    with pytest.raises(MalformedRow):
        parse_trajectory_rows([HEADER, ["1", "2", "x", "0", "4", "2", "0", "0", "1"]])
    with pytest.raises(MalformedRow):
        parse_trajectory_rows([HEADER, ["1", "2", "0", "0", "-4", "2", "0", "0", "1"]])
    row = ["1", "2", "0", "0", "4", "2", "0", "0", "1"]
    with pytest.raises(DuplicateRecord):
        parse_trajectory_rows([HEADER, row, row])


def test_parser_accepts_extra_columns_and_blank_lines():
    rows = [HEADER + ["extra"], ["3", "1", "1.5", "2", "4", "2", "20", "0", "2", "z"], []]
    (r,) = parse_trajectory_rows(rows)
    assert (r.frame, r.vehicle_id, r.x, r.lane_id) == (3, 1, 1.5, 2)


def test_default_layout_geometry():
    lay = RoadLayout.default()
    assert lay.merge_target_lane == 2 and lay.ramp_is_right
    assert lay.lane_at(0.0) == 2 and lay.lane_at(-3.75) == 1 and lay.lane_at(10.0) is None
    assert lay.lane_change_legal(1, 1, 200.0)
    assert not lay.lane_change_legal(1, 1, 50.0)
    assert not lay.lane_change_legal(2, -1, 200.0)  # no entering the ramp
    assert RoadLayout.from_dict(lay.to_dict()) == lay
    with pytest.raises(ConfigError):
        RoadLayout.from_dict({**lay.to_dict(), "lane_count": 4})


def test_config_validation_and_hash():
    c = ScenarioConfig()
    assert c.config_hash() == ScenarioConfig.from_dict(c.to_dict()).config_hash()
    assert c.config_hash() != c.replace(rng_seed=1).config_hash()
    with pytest.raises(ConfigError):
        ScenarioConfig(penetration_rate=1.2)
    with pytest.raises(ConfigError):
        ScenarioConfig(message_period=0.03)
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"unknown": 1})


@given(st.integers(0, 1000), st.floats(0, 1), st.floats(0, 1))
def test_equipment_sets_are_nested_and_sized(seed, r1, r2):
    ids = range(1, 41)
    lo, hi = sorted((r1, r2))
    a = assign_v2x_equipment(ids, lo, seed, exclude=[1])
    b = assign_v2x_equipment(ids, hi, seed, exclude=[1])
    assert a <= b and 1 not in b
    assert len(b) == int(np.floor(hi * 39 + 0.5))


def test_equipment_edge_rates():
    assert assign_v2x_equipment(range(10), 0.0, 0) == frozenset()
    assert assign_v2x_equipment(range(10), 1.0, 0) == frozenset(range(10))


def test_replay_interpolates_between_frames():
    recs = [TrajectoryRecord(0, 1, 0.0, 0.0, 4.5, 1.9, 10.0, 0.0, 2),
            TrajectoryRecord(1, 1, 0.4, 0.0, 4.5, 1.9, 10.0, 0.0, 2)]
    rp = Replay(recs, 0.04)
    assert rp.ids == [1]
    s = rp.replay_step(0.02)[1]
    assert np.isclose(s.x, 0.2) and np.isclose(s.vx, 10.0)
