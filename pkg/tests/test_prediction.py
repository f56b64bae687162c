import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from conftest import random_spd
from v2xmerge.prediction.features import (
    N_FEATURES,
    SENTINEL_DISTANCE,
    AgentView,
    TargetOffRoad,
    extract_features,
)
from v2xmerge.prediction.gmm import GmmModel, Mixture1D, gmr_condition, train_gmm
from v2xmerge.prediction.labels import FLW, LCL, LCR, label_maneuvers
from v2xmerge.prediction.mlp import (
    DegenerateTrainingSet,
    MlpModel,
    ManeuverProbabilities,
    class_weights,
    loss_and_grad,
    train_mlp,
)
from v2xmerge.prediction.modelio import (
    ModelFormatError,
    load_default_model,
    model_from_bytes,
    model_to_bytes,
    pack_arrays,
    unpack_arrays,
)
from v2xmerge.prediction.predictor import RbbPredictor, VlkPredictor, rbb_predict_arrays, role_override
from v2xmerge.scenario import RoadLayout, TrajectoryRecord
from v2xmerge.v2x import Role

LAYOUT = RoadLayout.default()


def _random_params(rng):
    return {"W1": rng.normal(size=(27, 23)) * 0.3, "b1": rng.normal(size=27) * 0.1,
            "W2": rng.normal(size=(3, 27)) * 0.3, "b2": rng.normal(size=3) * 0.1}


def test_mlp_gradient_matches_finite_differences(rng):
    p = _random_params(rng)
    Z = rng.normal(size=(40, 23))
    y = rng.integers(0, 3, 40)
    w = class_weights(np.r_[y, 0, 1, 2])[:40]
    _, g = loss_and_grad(p, Z, y, w, l2=1e-3)
    for name in p:
        for _ in range(5):
            idx = tuple(rng.integers(0, s) for s in p[name].shape)
            hi = {k: v.copy() for k, v in p.items()}
            lo = {k: v.copy() for k, v in p.items()}
            hi[name][idx] += 1e-6
            lo[name][idx] -= 1e-6
            fd = (loss_and_grad(hi, Z, y, w, 1e-3)[0] - loss_and_grad(lo, Z, y, w, 1e-3)[0]) / 2e-6
            assert g[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_class_weights_balance_classes():
    y = np.array([0] * 10 + [1] * 80 + [2] * 10)
    w = class_weights(y)
    assert np.allclose([w[y == c].sum() for c in range(3)], len(y) / 3)


def test_mlp_learns_separable_classes_deterministically(rng):
    X = rng.normal(size=(600, 23))
    y = np.where(X[:, 0] > 0.5, 0, np.where(X[:, 0] < -0.5, 2, 1))
    a = train_mlp(X, y, seed=1, epochs=30)
    b = train_mlp(X, y, seed=1, epochs=30)
    assert np.array_equal(a.W1, b.W1)
    assert np.mean(a.predict(X) == y) > 0.9
    P = a.posterior(X)
    assert np.allclose(P.sum(axis=1), 1.0)


def test_mlp_rejects_degenerate_training_sets():
    with pytest.raises(DegenerateTrainingSet):
        train_mlp(np.zeros((10, 23)), np.ones(10, dtype=int))
    with pytest.raises(DegenerateTrainingSet):
        train_mlp(np.zeros((3, 5)), np.array([0, 1, 2]))


def test_probabilities_validate_simplex():
    ManeuverProbabilities(0.2, 0.5, 0.3)
    with pytest.raises(ValueError):
        ManeuverProbabilities(0.5, 0.5, 0.5)


def _random_gmm(rng, K=4, D=4):
    w = rng.dirichlet(np.ones(K))
    return GmmModel(w, rng.normal(size=(K, D)) * 2, np.array([random_spd(rng, D) for _ in range(K)]))


def test_gmr_matches_direct_gaussian_conditioning(rng):
    g = _random_gmm(rng)
    q = rng.normal(size=(6, 3))
    mix = gmr_condition(g, q[:, :2], q[:, 2])
    for n in range(len(q)):
        dens = np.array([wk * multivariate_normal(g.means[k, :3], g.covs[k, :3, :3]).pdf(q[n])
                         for k, wk in enumerate(g.weights)])
        assert np.allclose(mix.weights[n], dens / dens.sum(), rtol=1e-9)
        for k in range(g.n_components):
            S = g.covs[k]
            gain = np.linalg.solve(S[:3, :3], S[:3, 3])
            assert mix.means[n, k] == pytest.approx(g.means[k, 3] + gain @ (q[n] - g.means[k, :3]))
            assert mix.variances[n, k] == pytest.approx(S[3, 3] - gain @ S[:3, 3])


def test_gmm_fit_recovers_two_clusters(rng):
    X = np.vstack([rng.normal([0, 0], 0.3, (400, 2)), rng.normal([5, 5], 0.3, (400, 2))])
    g = train_gmm(X, K=2, seed=0)
    order = np.argsort(g.means[:, 0])
    assert np.allclose(g.means[order], [[0, 0], [5, 5]], atol=0.1)
    assert np.allclose(g.weights, 0.5, atol=0.05)
    assert all(b >= a - 1e-9 for a, b in zip(g.log_likelihood, g.log_likelihood[1:]))
    with pytest.raises(ValueError):
        train_gmm(X[:5], K=2)


def test_mixture_moments():
    m = Mixture1D(np.array([[0.25, 0.75]]), np.array([[0.0, 4.0]]), np.array([[1.0, 1.0]]))
    assert m.mean()[0] == pytest.approx(3.0)
    assert m.variance()[0] == pytest.approx(1.0 + 0.25 * 9 + 0.75 * 1)


def test_feature_vector_layout():
    me = AgentView(1, 100.0, 0.5, 20.0, 0.1, 0.2)
    lead = AgentView(2, 130.0, 0.0, 18.0, 0.0)
    left_rear = AgentView(3, 90.0, 3.75, 25.0, 0.0)
    f = extract_features(me, [me, lead, left_rear], LAYOUT)
    assert f.shape == (N_FEATURES,)
    assert f[0] == pytest.approx(1.875 - 0.5) and f[1] == pytest.approx(-1.875 - 0.5)
    assert f[9] == 30.0 and f[10] == -2.0
    assert f[11] == -SENTINEL_DISTANCE
    assert f[15] == -10.0 and f[16] == 5.0
    assert f[21] == 1.0 and f[22] == 0.0  # may go left, may not enter the ramp
    with pytest.raises(TargetOffRoad):
        extract_features(AgentView(1, 0.0, 20.0, 20.0, 0.0), [], LAYOUT)


def test_labels_mark_window_before_crossing():
    # one left lane change at frame 200 (8 s)
    recs = [TrajectoryRecord(f, 1, 0.8 * f, 0.0 if f < 200 else 3.75, 4.5, 1.9, 20.0, 0.0, 2 if f < 200 else 3)
            for f in range(300)]
    lab = label_maneuvers(recs, LAYOUT, 0.04)
    assert lab[(1, 0)] == FLW
    assert lab[(1, 74)] == FLW and lab[(1, 75)] == LCL
    assert lab[(1, 199)] == LCL and lab[(1, 200)] == FLW
    right = [TrajectoryRecord(r.frame, 1, r.x, -r.y, 4.5, 1.9, 20.0, 0.0, 4 - r.lane_id) for r in recs]
    assert label_maneuvers(right, LAYOUT, 0.04)[(1, 199)] == LCR


def test_model_file_round_trip_and_corruption():
    m = load_default_model()
    data = model_to_bytes(m)
    back = model_from_bytes(data)
    assert np.array_equal(back.mlp.W1, m.mlp.W1)
    assert np.array_equal(back.longitudinal.covs, m.longitudinal.covs)
    with pytest.raises(ModelFormatError):
        model_from_bytes(b"NOPE" + data[4:])
    with pytest.raises(ModelFormatError):
        model_from_bytes(data[:-3])
    with pytest.raises(ModelFormatError):
        model_from_bytes(pack_arrays({"mlp_W1": np.zeros((27, 23))}))


@given(st.dictionaries(st.text("abcxyz_", min_size=1, max_size=8),
                       st.lists(st.floats(allow_nan=False), min_size=0, max_size=6), max_size=4))
def test_array_container_round_trip(d):
    arrays = {k: np.array(v, dtype=float) for k, v in d.items()}
    back = unpack_arrays(pack_arrays(arrays))
    assert set(back) == set(arrays) and all(np.array_equal(back[k], arrays[k]) for k in arrays)


def test_vlk_keeps_lane_and_speed():
    a = AgentView(1, 10.0, 0.3, 20.0, 0.5)
    assert np.allclose(VlkPredictor().predict_point(a, [], LAYOUT, 2.0), [50.0, 0.3])


def test_rbb_predictions_are_finite_and_follow_lane_changes():
    m = load_default_model()
    pred = RbbPredictor(m)
    keep = AgentView(1, 200.0, 0.0, 25.0, 0.0)
    p = pred.predict_point(keep, [keep], LAYOUT, 3.0)
    assert np.all(np.isfinite(p)) and abs(p[1]) < 0.5
    assert abs(p[0] - (200.0 + 75.0)) < 6.0
    far = pred.predict_point(keep, [keep], LAYOUT, 7.0)
    assert np.isfinite(far).all()
    merging = AgentView(2, 200.0, -3.2, 22.0, 0.8, equipped=True, role=int(Role.MERGING))
    probs = role_override(merging, ManeuverProbabilities(0.0, 1.0, 0.0), LAYOUT)
    assert probs.p_lcl == 1.0
    F = extract_features(merging, [merging], LAYOUT)
    out = rbb_predict_arrays(m, F, merging.x, merging.y, merging.y - LAYOUT.center(1), 3.0, probs.as_array())
    assert out.point[0, 1] > merging.y + 1.0
    with pytest.raises(ValueError):
        rbb_predict_arrays(m, F, 0.0, 0.0, 0.0, 6.0)
