"""Default training data, the default model and the RBB/VLK comparison suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from ..synth import LaneChangeScript, RandomTraffic, ScenarioSpec, VehicleSpec
from .labels import FLW
from .predictor import PredictionModel, rbb_predict_arrays
from .training import SampleSet, samples_from_scenarios, train_models, training_scenarios

TRAINING_SEEDS = tuple(range(100, 116))
EVALUATION_SEEDS = tuple(range(200, 206))
EVALUATION_HORIZONS = (1.0, 2.0, 3.0)


def training_spec() -> ScenarioSpec:
    """Random highway traffic with a merge ramp and automatic lane changes."""
    return ScenarioSpec(traffic=RandomTraffic(count=80), duration=60.0)


def evaluation_spec(scripted: int = 8) -> ScenarioSpec:
    """The training traffic plus ``scripted`` vehicles that change lanes on a timetable.

    Scripted vehicles start spread over the main lanes and switch between
    them twice, so every evaluation scenario carries known lane changes on
    top of the spontaneous ones.
    """
    vehicles = []
    for i in range(scripted):
        lane = 2 if i % 2 == 0 else 3
        other = 3 if lane == 2 else 2
        first = 4.0 + 5.0 * i
        vehicles.append(VehicleSpec(
            i + 1, lane, 50.0 + 90.0 * i, 22.0, behavior="idm", desired_speed=24.0,
            lane_changes=[LaneChangeScript(first, other, 5.0), LaneChangeScript(first + 20.0, lane, 5.0)],
        ))
    spec = training_spec()
    spec.vehicles = vehicles
    return spec


def training_samples(seeds: Iterable[int] = TRAINING_SEEDS, stride: int = 8, seed: int = 0) -> SampleSet:
    return samples_from_scenarios(training_scenarios(training_spec(), seeds), seed=seed, stride=stride)


def train_default_model(seeds: Iterable[int] = TRAINING_SEEDS, stride: int = 8, seed: int = 0) -> PredictionModel:
    """The model shipped with the package: trained on generated traffic from ``seeds``."""
    return train_models(training_samples(seeds, stride, seed), seed=seed)


def evaluation_samples(seeds: Iterable[int] = EVALUATION_SEEDS, stride: int = 5, seed: int = 1,
                       horizons: Sequence[float] = EVALUATION_HORIZONS) -> SampleSet:
    return samples_from_scenarios(training_scenarios(evaluation_spec(), seeds), seed=seed, stride=stride,
                                  horizons=horizons)


@dataclass(frozen=True)
class PredictorComparison:
    """Mean absolute errors per horizon, over all samples and over lane-change samples."""

    horizons: Tuple[float, ...]
    samples: Dict[float, int]
    lane_change_samples: Dict[float, int]
    rbb_lateral: Dict[float, float]
    vlk_lateral: Dict[float, float]
    rbb_longitudinal: Dict[float, float]
    vlk_longitudinal: Dict[float, float]
    rbb_lateral_lc: Dict[float, float]
    vlk_lateral_lc: Dict[float, float]
    rbb_longitudinal_lc: Dict[float, float]
    vlk_longitudinal_lc: Dict[float, float]

    def rows(self):
        """One row per horizon: h, n, n_lc, then RBB/VLK lateral, longitudinal, and the lane-change subset."""
        for h in self.horizons:
            yield [h, self.samples[h], self.lane_change_samples[h],
                   self.rbb_lateral[h], self.vlk_lateral[h], self.rbb_longitudinal[h], self.vlk_longitudinal[h],
                   self.rbb_lateral_lc[h], self.vlk_lateral_lc[h],
                   self.rbb_longitudinal_lc[h], self.vlk_longitudinal_lc[h]]


def evaluate_predictors(model: PredictionModel, samples: SampleSet) -> PredictorComparison:
    """Point-prediction errors of RBB and VLK against ground-truth futures.

    Both predictors see the same noisy observations.  Errors are taken in
    lane coordinates, which on the straight road are world x and y.
    """
    out = {k: {} for k in ("n", "n_lc", "rl", "vl", "rx", "vx", "rl_lc", "vl_lc", "rx_lc", "vx_lc")}
    for k, h in enumerate(samples.horizons):
        ok = ~np.isnan(samples.futures[:, k, 0])
        obs = samples.observed[ok]
        fx, fy = samples.futures[ok, k, 0], samples.futures[ok, k, 1]
        rbb = rbb_predict_arrays(model, samples.features[ok], obs[:, 0], obs[:, 1], samples.offsets[ok], h).point
        vlk = np.column_stack([obs[:, 0] + obs[:, 2] * h, obs[:, 1]])
        lc = samples.labels[ok] != FLW
        errs = {
            "rl": np.abs(rbb[:, 1] - fy), "vl": np.abs(vlk[:, 1] - fy),
            "rx": np.abs(rbb[:, 0] - fx), "vx": np.abs(vlk[:, 0] - fx),
        }
        out["n"][h] = int(ok.sum())
        out["n_lc"][h] = int(lc.sum())
        for name, e in errs.items():
            out[name][h] = float(e.mean()) if len(e) else float("nan")
            out[name + "_lc"][h] = float(e[lc].mean()) if lc.any() else float("nan")
    return PredictorComparison(
        tuple(samples.horizons), out["n"], out["n_lc"], out["rl"], out["vl"], out["rx"], out["vx"],
        out["rl_lc"], out["vl_lc"], out["rx_lc"], out["vx_lc"],
    )
