from .spec import DEFAULT_ANCHORS, DEFAULT_STRIDES, ModelSpec, SpecError, load_config, spec_from_config
from .model import Detector, build_model, load_detector
from .decode import CandidateBox, Detection, decode, decode_arrays

__all__ = [
    "DEFAULT_ANCHORS",
    "DEFAULT_STRIDES",
    "CandidateBox",
    "Detection",
    "Detector",
    "ModelSpec",
    "SpecError",
    "build_model",
    "decode",
    "decode_arrays",
    "load_config",
    "load_detector",
    "spec_from_config",
]
