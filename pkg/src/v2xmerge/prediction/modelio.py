"""Binary model container.

Little-endian: magic "V2XP" | version u16 | array count u16 | per array:
name length u16 | name (ASCII) | ndim u8 | dims u32 each | float64 data (C order).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict

import numpy as np

from .features import Standardizer
from .gmm import GmmModel
from .mlp import MlpModel
from .predictor import PredictionModel

MAGIC = b"V2XP"
VERSION = 1

_EXPERTS = ("lateral_lcl", "lateral_flw", "lateral_lcr", "longitudinal")


class ModelFormatError(ValueError):
    pass


def pack_arrays(arrays: Dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<4sHH", MAGIC, VERSION, len(arrays))]
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("ascii")
        out.append(struct.pack(f"<H{len(raw)}sB{a.ndim}I", len(raw), raw, a.ndim, *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def unpack_arrays(data: bytes) -> Dict[str, np.ndarray]:
    if len(data) < 8:
        raise ModelFormatError("file too short")
    magic, version, count = struct.unpack_from("<4sHH", data, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    pos = 8
    arrays = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("ascii")
            pos += n
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 8
            if pos + size > len(data):
                raise ModelFormatError(f"array {name!r} is truncated")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise ModelFormatError(f"truncated model file: {exc}") from exc
    if pos != len(data):
        raise ModelFormatError(f"{len(data) - pos} trailing bytes")
    return arrays


def model_to_bytes(model: PredictionModel) -> bytes:
    m = model.mlp
    arrays = {
        "feature_mean": m.scaler.mean, "feature_std": m.scaler.std,
        "mlp_W1": m.W1, "mlp_b1": m.b1, "mlp_W2": m.W2, "mlp_b2": m.b2,
    }
    if m.class_prior is not None:
        arrays["mlp_class_prior"] = m.class_prior
    for name, g in zip(_EXPERTS, (*model.lateral, model.longitudinal)):
        arrays[f"{name}_weights"] = g.weights
        arrays[f"{name}_means"] = g.means
        arrays[f"{name}_covs"] = g.covs
    return pack_arrays(arrays)


def model_from_bytes(data: bytes) -> PredictionModel:
    a = unpack_arrays(data)
    try:
        mlp = MlpModel(a["mlp_W1"], a["mlp_b1"], a["mlp_W2"], a["mlp_b2"],
                       Standardizer(a["feature_mean"], a["feature_std"]), [], a.get("mlp_class_prior"))
        experts = [
            GmmModel(a[f"{n}_weights"], a[f"{n}_means"], a[f"{n}_covs"],
                     "longitudinal" if n == "longitudinal" else "lateral")
            for n in _EXPERTS
        ]
    except KeyError as exc:
        raise ModelFormatError(f"missing array {exc}") from exc
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc
    return PredictionModel(mlp, tuple(experts[:3]), experts[3])


def save_model(path, model: PredictionModel) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> PredictionModel:
    return model_from_bytes(Path(path).read_bytes())


def load_default_model() -> PredictionModel:
    """The model trained on the bundled synthetic traffic."""
    from ..resources import DEFAULT_MODEL

    return load_model(DEFAULT_MODEL)
