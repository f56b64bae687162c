import math

import numpy as np
import pytest

from conftest import random_spd
from v2xmerge.fusion import (
    ALL_COMPONENTS,
    NEW_TRACK,
    SENSOR_COMPONENTS,
    EkfConfig,
    EnvironmentModel,
    SingularInnovationCovariance,
    StaleMessage,
    Track,
    associate,
    ekf_predict,
    ekf_update,
    motion_jacobian,
    motion_model,
    propagate_gaussian,
    propagate_many,
    update_many,
)
from v2xmerge.geo import VehicleState, normalize_angle
from v2xmerge.v2x import PerceivedObject, Role, V2xMessage

CFG = EkfConfig()


def _track(x, P, tid=1, vid=1, t=0.0):
    return Track(tid, vid, np.asarray(x, float), np.asarray(P, float), t, t)


def _textbook_update(x, P, z, R, idx):
    # standard form with an explicit selection matrix
    H = np.eye(5)[list(idx)]
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    y = z - H @ x
    if 2 in idx:
        y[list(idx).index(2)] = normalize_angle(y[list(idx).index(2)])
    return x + K @ y, (np.eye(5) - K @ H) @ P


def test_motion_jacobian_matches_finite_differences(rng):
    for _ in range(30):
        x = np.concatenate([rng.uniform(-50, 50, 2), [0.2], rng.uniform(-30, 30, 2)])
        J = motion_jacobian(x, 0.1)
        Jfd = np.zeros((5, 5))
        for k in range(5):
            e = np.zeros(5)
            e[k] = 1e-6
            d = motion_model(x + e, 0.1) - motion_model(x - e, 0.1)
            Jfd[:, k] = d / 2e-6
        assert np.allclose(J, Jfd, atol=1e-6)


@pytest.mark.parametrize("idx", [ALL_COMPONENTS, SENSOR_COMPONENTS])
def test_joseph_update_matches_textbook_form(rng, idx):
    for _ in range(20):
        x = np.array([*rng.uniform(-50, 50, 2), 0.1, *rng.uniform(5, 30, 2)])
        P = random_spd(rng, 5, 0.5)
        R = random_spd(rng, len(idx), 0.3)
        z = x[list(idx)] + rng.normal(size=len(idx))
        out = ekf_update(_track(x, P), z, R, idx)
        xt, Pt = _textbook_update(x, P, z, R + 1e-9 * np.eye(len(idx)), idx)
        assert np.allclose(out.x[[0, 1, 3, 4]], xt[[0, 1, 3, 4]], atol=1e-8)
        assert np.allclose(out.P, Pt, atol=1e-8)


def test_update_shrinks_covariance(rng):
    P = random_spd(rng, 5)
    out = ekf_update(_track([0, 0, 0, 20, 0], P), np.zeros(5), random_spd(rng, 5))
    assert np.all(np.linalg.eigvalsh(P - out.P) > -1e-9)


def test_batched_propagation_and_update_match_scalar(rng):
    n = 12
    X = np.column_stack([rng.uniform(-80, 80, (n, 2)), rng.uniform(-3, 3, n), rng.uniform(-30, 30, (n, 2))])
    X[4, 3:] = 0.01  # below the heading speed floor
    P = np.array([random_spd(rng, 5, 0.4) for _ in range(n)])
    Xp, Pp = propagate_many(X, P, 0.07, CFG.Q)
    for i in range(n):
        xs, ps = propagate_gaussian(X[i], P[i], 0.07, CFG.Q)
        assert np.allclose(Xp[i], xs) and np.allclose(Pp[i], ps)
    Z = Xp + rng.normal(size=Xp.shape)
    R = np.array([random_spd(rng, 5, 0.3) for _ in range(n)])
    Xu, Pu, _ = update_many(Xp, Pp, Z, R)
    for i in range(n):
        t = ekf_update(_track(Xp[i], Pp[i]), Z[i], R[i])
        assert np.allclose(Xu[i], t.x, atol=1e-9) and np.allclose(Pu[i], t.P, atol=1e-9)


def test_predict_rejects_negative_dt():
    with pytest.raises(ValueError):
        ekf_predict(_track(np.zeros(5), np.eye(5)), -0.1)


def test_singular_innovation_is_reported():
    with pytest.raises(SingularInnovationCovariance):
        ekf_update(_track(np.zeros(5), -np.eye(5)), np.zeros(5), np.zeros((5, 5)))


def test_association_by_id_then_gate():
    t1 = _track([0, 0, 0, 20, 0], np.eye(5), tid=10, vid=3)
    t2 = _track([30, 0, 0, 20, 0], np.eye(5), tid=11, vid=None)
    R = np.eye(4)
    assert associate(3, np.array([100.0, 0, 0, 0]), R, [t1, t2]) == 10
    assert associate(4, np.array([0.0, 0, 0, 0]), R, [t1, t2]) is NEW_TRACK
    assert associate(None, np.array([30.5, 0.2, 0, 0]), R, [t1, t2]) == 11
    assert associate(None, np.array([15.0, 0, 0, 0]), R, [t1, t2]) is NEW_TRACK


def _cam(sender, seq, t, state, cov=None, perceived=()):
    return V2xMessage(sender, seq, t, Role.MAIN_LANE, state, np.eye(5) * 1e-4 if cov is None else cov, perceived)


def test_stale_sequence_is_rejected():
    env = EnvironmentModel(owner_id=0)
    env.ingest_message(_cam(5, 2, 0.0, VehicleState(0, 0, 0, 20, 0)), 0.05)
    with pytest.raises(StaleMessage):
        env.ingest_message(_cam(5, 2, 0.1, VehicleState(2, 0, 0, 20, 0)), 0.15)
    assert env.stale_count == 1


def test_messages_are_predicted_to_receive_time():
    v = 27.78
    env = EnvironmentModel(owner_id=0)
    obj = PerceivedObject(9, VehicleState(50.0, 3.0, 0.0, v, 0.0), np.eye(5) * 1e-4)
    env.ingest_message(_cam(5, 1, 1.0, VehicleState(0.0, 0.0, 0.0, v, 0.0), perceived=(obj,)), 1.05)
    snap = env.prune_and_snapshot(1.05).by_vehicle()
    assert snap[5].x[0] == pytest.approx(v * 0.05, abs=1e-9)
    assert snap[9].x[0] == pytest.approx(50.0 + v * 0.05, abs=1e-9)


def test_own_vehicle_is_never_tracked():
    env = EnvironmentModel(owner_id=5)
    other = PerceivedObject(5, VehicleState(0, 0, 0, 20, 0), np.eye(5))
    env.ingest_message(_cam(7, 1, 0.0, VehicleState(10, 0, 0, 20, 0), perceived=(other,)), 0.05)
    assert set(env.prune_and_snapshot(0.05).by_vehicle()) == {7}


def test_stale_tracks_are_pruned():
    env = EnvironmentModel(owner_id=0)
    env.ingest_message(_cam(5, 1, 0.0, VehicleState(0, 0, 0, 20, 0)), 0.05)
    assert len(env.prune_and_snapshot(1.0)) == 1
    assert len(env.prune_and_snapshot(1.2)) == 0


def test_track_ids_do_not_collide_with_vehicle_ids():
    env = EnvironmentModel(owner_id=0)
    env.ingest_message(_cam(5, 1, 0.0, VehicleState(0, 0, 0, 20, 0)), 0.0)
    (tr,) = env.prune_and_snapshot(0.0)
    assert tr.track_id >= EnvironmentModel.TRACK_ID_BASE
    assert math.isclose(tr.x[3], 20.0)
