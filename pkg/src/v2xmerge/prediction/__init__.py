"""Maneuver classification and position prediction."""

from .features import FEATURE_NAMES, N_FEATURES, AgentView, Standardizer, TargetOffRoad, extract_features
from .gmm import EmDegenerate, GmmModel, Mixture1D, gmr_condition, train_gmm
from .labels import FLW, LCL, LCR, MANEUVERS, label_maneuvers
from .mlp import DegenerateTrainingSet, ManeuverProbabilities, MlpModel, classify_maneuver, train_mlp
from .predictor import (
    ModelMissing,
    PredictionModel,
    RbbPredictor,
    VlkPredictor,
    predict_position_rbb,
    predict_position_vlk,
    rbb_predict_arrays,
    role_override,
)
