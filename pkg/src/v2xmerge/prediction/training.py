"""Training and evaluation sample construction from trajectory records.

Predictions are made from estimated states, not ground truth, so every
observed quantity is perturbed with :class:`ObservationNoise` before features
are computed.  Targets are always ground-truth future positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..scenario import RoadLayout, Replay, TrajectoryRecord
from .features import N_FEATURES, AgentView, extract_features
from .gmm import train_gmm
from .labels import label_maneuvers
from .mlp import train_mlp
from .predictor import PredictionModel

TRAIN_HORIZONS = tuple(np.round(np.arange(0.2, 5.01, 0.2), 2))


@dataclass(frozen=True)
class ObservationNoise:
    """Per-axis standard deviations of the state estimate fed to the predictor."""

    x: float = 1.4
    y: float = 0.15
    vx: float = 0.5
    vy: float = 0.1
    ax: float = 0.3

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.ax])


@dataclass
class SampleSet:
    """Observed features plus ground-truth futures for a batch of (vehicle, frame) samples."""

    features: np.ndarray  # (n, 23)
    observed: np.ndarray  # (n, 5): x, y, vx, vy, ax as observed
    truth: np.ndarray  # (n, 2): true current (x, y)
    offsets: np.ndarray  # (n,) observed lateral offset from lane center
    labels: np.ndarray  # (n,)
    futures: np.ndarray  # (n, H, 2) ground-truth (x, y); NaN past the end of the record
    horizons: Tuple[float, ...]
    vehicle_ids: np.ndarray
    frames: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def concat(cls, sets: Sequence["SampleSet"]) -> "SampleSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            raise ValueError("no samples")
        return cls(*(np.concatenate([getattr(s, f) for s in sets]) for f in
                     ("features", "observed", "truth", "offsets", "labels", "futures")),
                   sets[0].horizons,
                   np.concatenate([s.vehicle_ids for s in sets]),
                   np.concatenate([s.frames for s in sets]))


def build_samples(records: Sequence[TrajectoryRecord], layout: RoadLayout, rng: np.random.Generator,
                  horizons: Sequence[float] = TRAIN_HORIZONS, frame_period: float = 0.04, stride: int = 2,
                  noise: ObservationNoise = ObservationNoise()) -> SampleSet:
    replay = Replay(records, frame_period)
    data, present, _ = replay.dense()
    labels = label_maneuvers(records, layout, frame_period)
    nf, nv = present.shape
    # longitudinal acceleration by central differences of the recorded speed
    vx = data[:, :, 2]
    ax = np.zeros_like(vx)
    ax[1:-1] = (vx[2:] - vx[:-2]) / (2 * frame_period)
    ax[0], ax[-1] = ax[1], ax[-2]
    ax = np.nan_to_num(ax)
    steps = [int(round(h / frame_period)) for h in horizons]
    sigma = noise.as_array()

    feats, obs, true_xy, offs, labs, futs, vids, frames = [], [], [], [], [], [], [], []
    for f in range(0, nf, stride):
        cols = np.flatnonzero(present[f])
        if len(cols) == 0:
            continue
        noisy = np.column_stack([data[f, cols], ax[f, cols]]) + rng.normal(size=(len(cols), 5)) * sigma
        agents = [AgentView(replay.ids[j], *noisy[i]) for i, j in enumerate(cols)]
        for i, j in enumerate(cols):
            lane = layout.lane_at(agents[i].y)
            if lane is None:
                continue
            fut = np.full((len(steps), 2), np.nan)
            for k, s in enumerate(steps):
                if f + s < nf and present[f + s, j]:
                    fut[k] = data[f + s, j, :2]
            feats.append(extract_features(agents[i], agents, layout))
            obs.append(noisy[i])
            true_xy.append(data[f, j, :2])
            offs.append(agents[i].y - layout.center(lane))
            labs.append(labels[(replay.ids[j], f + replay.first_frame)])
            futs.append(fut)
            vids.append(replay.ids[j])
            frames.append(f + replay.first_frame)
    n = len(labs)
    return SampleSet(
        np.array(feats).reshape(n, N_FEATURES), np.array(obs).reshape(n, 5), np.array(true_xy).reshape(n, 2),
        np.array(offs),
        np.array(labs, dtype=int), np.array(futs).reshape(n, len(steps), 2), tuple(horizons),
        np.array(vids, dtype=int), np.array(frames, dtype=int),
    )


def expert_samples(samples: SampleSet, rng: np.random.Generator, per_sample: int = 1):
    """Joint-space rows for the lateral experts (per maneuver) and the longitudinal expert.

    Each sample contributes up to ``per_sample`` randomly chosen horizons.
    The longitudinal output is the mean speed over the horizon minus the
    observed speed, measured from the true current position: the position
    estimate error cannot be predicted from the inputs, so leaving it out
    of the target only removes variance.
    """
    lat: Dict[int, List[np.ndarray]] = {0: [], 1: [], 2: []}
    lon = []
    h_all = np.asarray(samples.horizons)
    for i in range(len(samples)):
        valid = np.flatnonzero(~np.isnan(samples.futures[i, :, 0]))
        if len(valid) == 0:
            continue
        pick = rng.choice(valid, size=min(per_sample, len(valid)), replace=False)
        _, y, vx, vy, _ = samples.observed[i]
        x_true = samples.truth[i, 0]
        F = samples.features[i]
        for k in np.sort(pick):
            h = h_all[k]
            fx, fy = samples.futures[i, k]
            lat[int(samples.labels[i])].append([samples.offsets[i], vy, h, fy - y])
            lon.append([F[3], F[4], F[9], F[10], h, (fx - x_true) / h - vx])
    return {m: np.array(v).reshape(-1, 4) for m, v in lat.items()}, np.array(lon).reshape(-1, 6)


def train_models(samples: SampleSet, seed: int = 0, K: int = 8, epochs: int = 60,
                 learning_rate: float = 0.005, l2: float = 1e-3) -> PredictionModel:
    rng = np.random.default_rng(seed)
    mlp = train_mlp(samples.features, samples.labels, seed=seed, epochs=epochs, learning_rate=learning_rate, l2=l2)
    lat, lon = expert_samples(samples, rng)
    experts = tuple(train_gmm(lat[m], K=K, seed=seed + 1 + m, output="lateral") for m in range(3))
    longitudinal = train_gmm(lon, K=K, seed=seed + 4, output="longitudinal")
    return PredictionModel(mlp, experts, longitudinal)


def training_scenarios(spec, seeds: Iterable[int]):
    """Generated ``(records, layout)`` pairs for each seed."""
    from ..synth import generate_synthetic_scenario

    return [generate_synthetic_scenario(spec, seed=s) for s in seeds]


def samples_from_scenarios(scenarios, seed: int = 0, frame_period: float = 0.04, stride: int = 2,
                           horizons: Sequence[float] = TRAIN_HORIZONS,
                           noise: Optional[ObservationNoise] = None) -> SampleSet:
    rng = np.random.default_rng(seed)
    noise = noise or ObservationNoise()
    return SampleSet.concat([
        build_samples(records, layout, rng, horizons, frame_period, stride, noise) for records, layout in scenarios
    ])
