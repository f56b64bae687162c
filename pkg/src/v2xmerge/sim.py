"""Closed-loop merge simulation.

Recorded traffic is replayed; the ego (a ramp vehicle of the recording) is
driven by the merge planner from its own extended environment model, which
fuses its sensors with the CAM/CPM messages of equipped vehicles.  Once the
ego enters the main lane its ground-truth follower leaves the replay and is
driven by ACC instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fusion import TRACK_LOG_HEADER, EkfConfig, EnvironmentModel, StaleMessage, track_log_rows
from .geo import Body, VehicleState
from .metrics import (
    HORIZONS,
    EgoSample,
    IncompleteRun,
    MetricsRecord,
    detected_ratio,
    driving_safety_params,
    format_value,
    localization_error,
    prediction_error,
    vehicles_in_radius,
)
from .planner import (
    PLANNER_LOG_HEADER,
    AccParams,
    EgoKinematics,
    MergePlanner,
    PlannerConfig,
    acc_follow,
    interaction_switch,
)
from .prediction.features import agent_from_track, extract_features
from .prediction.mlp import ManeuverProbabilities
from .prediction.predictor import PredictionModel, RbbPredictor, VlkPredictor, rbb_predict_arrays, role_override
from .scenario import Replay, Scenario, ScenarioConfig, ScenarioError, assign_v2x_equipment
from .sensors import SensorSpec, default_sensor_suite, sense
from .v2x import Channel, ChannelConfig, Role, build_message, compose_detections

PREDICTION_EVERY = 5  # planner ticks between prediction-error samples
MERGE_TAIL = 5.0  # seconds simulated after the ego enters the main lane
ACC_SPEED_FACTOR = 1.1  # converted follower's set speed relative to its speed at conversion

# independent random streams per vehicle
_SENSE, _CAM, _CHANNEL = 1, 2, 3


class SimulationError(ScenarioError):
    pass


@dataclass
class SimulationOutput:
    config: ScenarioConfig
    equipped: frozenset
    ego: List[EgoSample] = field(default_factory=list)
    coverage: List[list] = field(default_factory=list)  # clock, n_truth, n_tracked
    localization: List[list] = field(default_factory=list)  # clock, vehicle_id, error
    predictions: List[list] = field(default_factory=list)  # clock, vehicle_id, horizon, px, py, tx, ty
    tracks: List[list] = field(default_factory=list)
    planner: List[list] = field(default_factory=list)
    crossing_time: Optional[float] = None
    converted: Optional[int] = None
    stale_messages: int = 0


def metrics_from_logs(config: ScenarioConfig, ego: Sequence[EgoSample], coverage, localization, predictions,
                      target_lane: int) -> MetricsRecord:
    """Per-run metrics from the logged samples; used both live and on reloaded logs."""
    rec = MetricsRecord(
        config.config_hash(), config.penetration_rate, config.rng_seed,
        [int(r[2]) / int(r[1]) for r in coverage if int(r[1]) > 0],
        [float(r[2]) for r in localization],
        prediction_error((float(r[2]), float(r[3]), float(r[4]), float(r[5]), float(r[6])) for r in predictions),
    )
    try:
        rec.driving = driving_safety_params(ego, target_lane, MERGE_TAIL)
    except IncompleteRun as exc:
        rec.error = str(exc)
    return rec


def make_predictor(config: ScenarioConfig, model: Optional[PredictionModel] = None):
    if config.predictor == "vlk":
        return VlkPredictor()
    if model is None:
        from .prediction.modelio import load_default_model

        model = load_default_model()
    return RbbPredictor(model)


@dataclass
class _AccVehicle:
    vid: int
    x: float
    y: float
    vx: float
    length: float
    params: AccParams


def _heading(vx: float, vy: float) -> float:
    return math.atan2(vy, vx) if math.hypot(vx, vy) >= 0.1 else 0.0


def simulate(scenario: Scenario, config: ScenarioConfig, model: Optional[PredictionModel] = None,
             suite: Optional[Sequence[SensorSpec]] = None, ekf: EkfConfig = EkfConfig(),
             planner_config: PlannerConfig = PlannerConfig(), record_tracks: bool = True,
             stop_after_merge: bool = True) -> SimulationOutput:
    cfg = config
    layout = scenario.layout
    suite = list(suite) if suite is not None else default_sensor_suite()
    reach = max(s.range for s in suite) + 10.0
    replay = Replay(scenario.records, cfg.frame_period)
    ego_id = cfg.ego_vehicle_id
    if ego_id not in replay.ids:
        raise SimulationError(f"ego vehicle {ego_id} is not in the scenario")
    t0 = max(replay.t_start, replay.vehicle_span(ego_id)[0])
    t_end = min(t0 + cfg.duration, replay.t_end)
    equipped = assign_v2x_equipment(replay.ids, cfg.penetration_rate, cfg.rng_seed, exclude=[ego_id])
    dims = {v: replay.dims(v) for v in replay.ids}
    ego_len = dims[ego_id][0]

    rngs: Dict[Tuple[int, int], np.random.Generator] = {}

    def rng_for(vid: int, purpose: int) -> np.random.Generator:
        key = (vid, purpose)
        if key not in rngs:
            rngs[key] = np.random.default_rng([cfg.rng_seed, vid, purpose])
        return rngs[key]

    channel = Channel(ChannelConfig(cfg.comm_delay, cfg.message_period, cfg.comms_range, cfg.drop_probability,
                                    cfg.delay_jitter))
    env = EnvironmentModel(ego_id, ekf, length=ego_len)
    predictor = make_predictor(cfg, model)
    planner = MergePlanner(layout, predictor, replace(planner_config, ego_length=ego_len, tick=cfg.message_period))
    cam_sigma = np.array([cfg.cam_position_noise, cfg.cam_position_noise, cfg.cam_heading_noise,
                          cfg.cam_velocity_noise, cfg.cam_velocity_noise])
    cam_cov = np.diag(np.maximum(cam_sigma, 1e-3) ** 2)
    sequence: Dict[int, int] = {}

    vals, _ = replay.step_arrays(t0)
    ex, ey, evx, _ = vals[replay.ids.index(ego_id)]
    ego = {"x": float(ex), "y": float(ey), "vx": max(float(evx), 0.0), "ax": 0.0, "vy": 0.0, "ay": 0.0}
    acc: Dict[int, _AccVehicle] = {}
    out = SimulationOutput(cfg, equipped)
    truth_by_tick: Dict[Tuple[int, int], Tuple[float, float]] = {}
    pending: List[list] = []
    target_lane = layout.merge_target_lane
    dt = cfg.timestep
    n_steps = int(math.floor((t_end - t0) / dt + 1e-9))
    tick_no = 0
    plan = None
    # nothing sent at t0 can arrive before this, so coverage and localization are sampled from here on
    sample_from = t0 + cfg.comm_delay + cfg.delay_jitter - 1e-9

    for k in range(n_steps + 1):
        t = t0 + k * dt
        vals, present = replay.step_arrays(t)
        world: Dict[int, VehicleState] = {}
        for j in np.flatnonzero(present):
            vid = replay.ids[j]
            if vid == ego_id or vid in acc:
                continue
            x, y, vx, vy = vals[j]
            world[vid] = VehicleState(float(x), float(y), _heading(vx, vy), float(vx), float(vy))
        for a in acc.values():
            world[a.vid] = VehicleState(a.x, a.y, 0.0, a.vx, 0.0)
        ego_state = VehicleState(ego["x"], ego["y"], _heading(ego["vx"], ego["vy"]), ego["vx"], ego["vy"])
        world[ego_id] = ego_state

        for d in channel.pop_due(t):
            try:
                env.ingest_message(d.message, d.time)
            except StaleMessage:
                out.stale_messages += 1

        if k % cfg.message_ticks == 0:
            bodies = {vid: Body(vid, s, *dims[vid]) for vid, s in world.items()}
            ids = np.array(sorted(world))
            pos = np.array([[world[v].x, world[v].y] for v in ids])
            positions = {int(v): (float(p[0]), float(p[1])) for v, p in zip(ids, pos)}

            def around(vid: int) -> Dict[int, Body]:
                c = pos[np.searchsorted(ids, vid)]
                near = ids[np.hypot(pos[:, 0] - c[0], pos[:, 1] - c[1]) <= reach]
                return {int(v): bodies[int(v)] for v in near}

            if cfg.ego_equipped:
                for sid in sorted(equipped):
                    s = world.get(sid)
                    if s is None or math.hypot(s.x - ego_state.x, s.y - ego_state.y) > cfg.comms_range:
                        continue
                    dets = sense(sid, around(sid), suite, rng_for(sid, _SENSE), t, cfg.occlusion,
                                 cfg.sensor_ids_known)
                    noise = rng_for(sid, _CAM).standard_normal(5) * cam_sigma
                    reported = VehicleState.from_array(s.as_array() + noise)
                    sequence[sid] = sequence.get(sid, -1) + 1
                    role = Role.MERGING if layout.lane_at(s.y) == layout.ramp_lane_id else Role.MAIN_LANE
                    msg = build_message(sid, sequence[sid], reported, cam_cov,
                                        compose_detections(reported, cam_cov, dets), role, t)
                    channel.broadcast(msg, positions, [ego_id], rng_for(0, _CHANNEL))
            dets = sense(ego_id, around(ego_id), suite, rng_for(ego_id, _SENSE), t, cfg.occlusion,
                         cfg.sensor_ids_known)
            env.ingest_detections(dets, ego_state, cam_cov, t)

            snap = env.prune_and_snapshot(t)
            truth = {vid: s for vid, s in world.items() if vid != ego_id}
            if t >= sample_from:
                inside = vehicles_in_radius(truth, ego_state, cfg.metrics_radius)
                ratio = detected_ratio(snap, inside, ego_state, cfg.metrics_radius)
                out.coverage.append([t, len(inside), 0 if ratio is None else round(ratio * len(inside))])
                for vid, err in localization_error(snap, inside).items():
                    out.localization.append([t, vid, err])
            for vid, s in truth.items():
                truth_by_tick[(tick_no, vid)] = (s.x, s.y)
            if record_tracks:
                out.tracks.extend(track_log_rows(snap))
            if tick_no % PREDICTION_EVERY == 0:
                pending.extend(_predict_tracks(snap, layout, predictor, tick_no, t))

            kin = EgoKinematics(ego["x"], ego["y"], ego["vx"], ego["ax"], ego["vy"], ego["ay"])
            plan = planner.step(t, kin, [tr for tr in snap.tracks if tr.vehicle_id != ego_id])
            tick_no += 1

        lane = layout.lane_at(ego["y"])
        out.ego.append(_ego_sample(t, ego, lane, world, ego_id, ego_len, dims, layout))
        if out.crossing_time is None and lane == target_lane:
            out.crossing_time = t
            converted: set = set()
            out.converted = interaction_switch(world, ego_id, layout, converted)
            for vid in converted:
                s = world[vid]
                acc[vid] = _AccVehicle(vid, s.x, s.y, s.vx, dims[vid][0],
                                       AccParams(set_speed=max(ACC_SPEED_FACTOR * s.vx, 1.0)))
        if k == n_steps or (stop_after_merge and out.crossing_time is not None
                            and t >= out.crossing_time + MERGE_TAIL - 1e-9):
            break

        # ego follows the current plan
        tr = plan.trajectory
        a_cmd = float(np.interp(t, tr.t, tr.ax))
        ego["x"] += ego["vx"] * dt + 0.5 * a_cmd * dt * dt
        ego["vx"] = max(ego["vx"] + a_cmd * dt, 0.0)
        ego["ax"] = a_cmd
        if planner.lateral is not None:
            ls = t + dt - planner.lateral.t0
            poly = planner.lateral.poly
            ego["y"] = float(poly.pos(ls))
            ego["vy"] = float(poly.vel(ls)) if ls >= 0 else 0.0
            ego["ay"] = float(poly.acc(ls)) if ls >= 0 else 0.0

        # converted vehicles react to ground truth ahead of them
        for a in acc.values():
            lead = _lead_of(a, world, dims, layout)
            cmd = acc_follow(a, lead[0] if lead else None, dt, a.params, a.length, lead[1] if lead else 4.5)
            a.x += a.vx * dt + 0.5 * cmd * dt * dt
            a.vx = max(a.vx + cmd * dt, 0.0)

    out.planner = planner.log
    out.predictions = _resolve_predictions(pending, truth_by_tick, cfg.message_period)
    return out


def _ego_sample(t, ego, lane, world, ego_id, ego_len, dims, layout) -> EgoSample:
    """Ground-truth same-lane bumper gaps and smallest TTC around the ego."""
    ahead = behind = best_ttc = math.inf
    if lane is not None:
        for vid, s in world.items():
            if vid == ego_id or layout.lane_at(s.y) != lane:
                continue
            gap = abs(s.x - ego["x"]) - 0.5 * (ego_len + dims[vid][0])
            if s.x >= ego["x"]:
                ahead = min(ahead, gap)
                closing = ego["vx"] - s.vx
            else:
                behind = min(behind, gap)
                closing = s.vx - ego["vx"]
            if closing > 0 and gap > 0:
                best_ttc = min(best_ttc, gap / closing)
    return EgoSample(t, ego["x"], ego["y"], ego["vx"], ego["vy"], ego["ax"], ego["ay"],
                     -1 if lane is None else lane, ahead, behind, best_ttc)


def _lead_of(a: _AccVehicle, world, dims, layout):
    lane = layout.lane_at(a.y)
    best = None
    for vid, s in world.items():
        if vid == a.vid or layout.lane_at(s.y) != lane or s.x <= a.x:
            continue
        if best is None or s.x < best[0].x:
            best = (s, dims[vid][0])
    return best


def _predict_tracks(snap, layout, predictor, tick_no: int, t: float) -> List[list]:
    """Predicted positions of identified tracks at every evaluation horizon."""
    agents = [agent_from_track(tr) for tr in snap.tracks]
    usable = [a for a, tr in zip(agents, snap.tracks)
              if tr.vehicle_id is not None and layout.lane_at(a.y) is not None]
    rows: List[list] = []
    if not usable:
        return rows
    if isinstance(predictor, RbbPredictor):
        model = predictor.model
        F = np.array([extract_features(a, agents, layout) for a in usable])
        probs = np.array([
            role_override(a, ManeuverProbabilities.from_array(p), layout).as_array()
            for a, p in zip(usable, model.mlp.posterior(F))
        ])
        xs = np.array([a.x for a in usable])
        ys = np.array([a.y for a in usable])
        offsets = ys - np.array([layout.center(layout.lane_at(a.y)) for a in usable])
        for h in HORIZONS:
            pts = rbb_predict_arrays(model, F, xs, ys, offsets, h, probs).point
            rows.extend([tick_no, t, a.vehicle_id, h, float(p[0]), float(p[1])] for a, p in zip(usable, pts))
    else:
        for h in HORIZONS:
            for a in usable:
                p = predictor.predict_point(a, agents, layout, h)
                rows.append([tick_no, t, a.vehicle_id, h, float(p[0]), float(p[1])])
    return rows


def _resolve_predictions(pending, truth_by_tick, tick: float) -> List[list]:
    out = []
    for tick_no, t, vid, h, px, py in pending:
        key = (tick_no + int(round(h / tick)), vid)
        if key in truth_by_tick:
            tx, ty = truth_by_tick[key]
            out.append([t, vid, h, px, py, tx, ty])
    return out


# --------------------------------------------------------------------------
# log files

EGO_LOG_HEADER = ("clock", "x", "y", "vx", "vy", "ax", "ay", "lane", "gap_ahead", "gap_behind", "ttc")
COVERAGE_HEADER = ("clock", "n_truth", "n_tracked")
LOCALIZATION_HEADER = ("clock", "vehicle_id", "error")
PREDICTION_HEADER = ("clock", "vehicle_id", "horizon", "pred_x", "pred_y", "true_x", "true_y")


def write_csv(path, header, rows, config_hash: str) -> None:
    """CSV with a trailing ``config_hash`` column; numbers are written round-trip exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header) + ["config_hash"])
        for r in rows:
            w.writerow([c if isinstance(c, str) else format_value(c) for c in r] + [config_hash])


def write_logs(out: SimulationOutput, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    h = out.config.config_hash()
    ego_rows = [[s.clock, s.x, s.y, s.vx, s.vy, s.ax, s.ay, s.lane, s.gap_ahead, s.gap_behind, s.ttc]
                for s in out.ego]
    write_csv(d / "ego.csv", EGO_LOG_HEADER, ego_rows, h)
    write_csv(d / "coverage.csv", COVERAGE_HEADER, out.coverage, h)
    write_csv(d / "localization.csv", LOCALIZATION_HEADER, out.localization, h)
    write_csv(d / "predictions.csv", PREDICTION_HEADER, out.predictions, h)
    write_csv(d / "tracks.csv", TRACK_LOG_HEADER, out.tracks, h)
    write_csv(d / "planner.csv", PLANNER_LOG_HEADER, out.planner, h)


def read_logs(directory):
    """``(ego, coverage, localization, predictions)`` as written by :func:`write_logs`."""
    d = Path(directory)

    def rows(name):
        with open(d / name, newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            next(r)
            return [row[:-1] for row in r]

    ego = [EgoSample(float(r[0]), *(float(v) for v in r[1:7]), int(r[7]), *(float(v) for v in r[8:11]))
           for r in rows("ego.csv")]
    coverage = [[float(r[0]), int(r[1]), int(r[2])] for r in rows("coverage.csv")]
    loc = [[float(r[0]), int(r[1]), float(r[2])] for r in rows("localization.csv")]
    pred = [[float(r[0]), int(r[1]), *(float(v) for v in r[2:])] for r in rows("predictions.csv")]
    return ego, coverage, loc, pred


def run_metrics(out: SimulationOutput, layout) -> MetricsRecord:
    return metrics_from_logs(out.config, out.ego, out.coverage, out.localization, out.predictions,
                             layout.merge_target_lane)
