import math

import numpy as np
import pytest

from v2xmerge.geo import Body, VehicleState
from v2xmerge.resources import SENSOR_SUITE, resolve_sensor_suite
from v2xmerge.scenario import ConfigError
from v2xmerge.sensors import (
    SensorSpec,
    default_sensor_suite,
    dump_sensor_suite,
    in_field_of_view,
    load_sensor_suite,
    noisy_measurements,
    occluded,
    sense,
)


def _body(vid, x, y, vx=20.0):
    return Body(vid, VehicleState(x, y, 0.0, vx, 0.0))


def test_bundled_suite_file_equals_default_suite():
    a, b = load_sensor_suite(SENSOR_SUITE), default_sensor_suite()
    assert len(a) == len(b)
    for s, t in zip(a, b):
        assert s.kind == t.kind and s.name == t.name
        assert np.allclose([s.mount_yaw, s.range, s.half_angle, s.sigma_range, s.sigma_bearing, s.sigma_range_rate],
                           [t.mount_yaw, t.range, t.half_angle, t.sigma_range, t.sigma_bearing, t.sigma_range_rate])


def test_suite_json_round_trip(tmp_path):
    import json

    p = tmp_path / "suite.json"
    p.write_text(json.dumps(dump_sensor_suite(default_sensor_suite())))
    assert resolve_sensor_suite("suite.json", tmp_path)[0].range == 200.0
    p.write_text('[{"kind": "sonar", "range": 5, "half_angle_deg": 10}]')
    with pytest.raises(ConfigError):
        load_sensor_suite(p)


def test_field_of_view():
    suite = default_sensor_suite()
    assert "LRR" in in_field_of_view(suite, (150.0, 0.0))
    assert in_field_of_view(suite, (0.0, 150.0)) == set()
    assert "LRR" in in_field_of_view(suite, (-150.0, 0.0))


def test_noise_free_measurement_is_exact():
    rel = np.array([[30.0, 4.0, -2.0, 0.5], [-12.0, -3.0, 1.0, 0.0]])
    z, covs = noisy_measurements(rel, np.zeros((2, 3)), np.zeros((2, 4)))
    assert np.allclose(z, rel)
    assert np.allclose(covs, 0.0)


def test_measurement_noise_follows_polar_model():
    # position covariance is the polar covariance rotated to the bearing
    rel = np.array([[40.0, 30.0, 0.0, 0.0]])
    sigma = np.array([[0.5, 0.01, 0.2]])
    _, cov = noisy_measurements(rel, sigma, np.zeros((1, 4)))
    b, r = math.atan2(30, 40), 50.0
    Rot = np.array([[math.cos(b), -math.sin(b)], [math.sin(b), math.cos(b)]])
    expected = Rot @ np.diag([0.25, (r * 0.01) ** 2]) @ Rot.T
    assert np.allclose(cov[0, :2, :2], expected)
    rng = np.random.default_rng(3)
    z, _ = noisy_measurements(np.repeat(rel, 20000, 0), np.repeat(sigma, 20000, 0), rng.standard_normal((20000, 4)))
    assert np.allclose(np.cov(z[:, :2].T), expected, rtol=0.05, atol=1e-3)


def test_occlusion_by_vehicle_in_sight_line():
    me = VehicleState(0, 0, 0, 20, 0)
    assert occluded(me, _body(2, 60, 0), [_body(1, 30, 0)])
    assert not occluded(me, _body(2, 60, 0), [_body(1, 30, 3.75)])
    assert not occluded(me, _body(2, 60, 0), [_body(1, 80, 0)])


def test_sense_respects_occlusion_flag_and_ids(rng):
    world = {0: _body(0, 0, 0), 1: _body(1, 30, 0), 2: _body(2, 60, 0), 3: _body(3, 500, 0)}
    suite = default_sensor_suite()
    seen = {d.measurement.target_id for d in sense(0, world, suite, rng, 1.0)}
    assert seen == {1}
    seen = {d.measurement.target_id for d in sense(0, world, suite, rng, 1.0, occlusion=False)}
    assert seen == {1, 2}
    anon = sense(0, world, suite, rng, 1.0, ids_known=False)
    assert all(d.measurement.target_id is None for d in anon)
    assert all(d.timestamp == 1.0 for d in anon)


def test_sense_is_reproducible_per_seed():
    world = {0: _body(0, 0, 0), 1: _body(1, 30, 3.75), 2: _body(2, -40, 0)}
    a = sense(0, world, default_sensor_suite(), np.random.default_rng(5), 0.0)
    b = sense(0, world, default_sensor_suite(), np.random.default_rng(5), 0.0)
    assert [d.measurement.as_array().tolist() for d in a] == [d.measurement.as_array().tolist() for d in b]


def test_invalid_sensor_specs():
    with pytest.raises(ConfigError):
        SensorSpec("LRR", 0.0, -1.0, 0.1)
    with pytest.raises(ConfigError):
        SensorSpec("LRR", 0.0, 10.0, 4.0)
