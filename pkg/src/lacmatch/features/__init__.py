"""Keypoint detection and binary description."""

from lacmatch.features.beblid import (
    BeblidModel,
    BeblidWeakLearner,
    PatchPairSample,
    TrainingError,
    beblid_feature,
    beblid_response,
    compute_beblid,
    describe_beblid,
    load_model,
    save_model,
    train_beblid,
)
from lacmatch.features.brief import compute_brief, describe_brief
from lacmatch.features.descriptors import BinaryDescriptor, DescriptorSet, Keypoint, Keypoints
from lacmatch.features.fast import PATCH_RADIUS, compute_orientation, detect_keypoints

__all__ = [
    "BeblidModel", "BeblidWeakLearner", "BinaryDescriptor", "DescriptorSet", "Keypoint",
    "Keypoints", "PATCH_RADIUS", "PatchPairSample", "TrainingError", "beblid_feature",
    "beblid_response", "compute_beblid", "compute_brief", "compute_orientation",
    "describe_beblid", "describe_brief", "detect_keypoints", "load_model", "save_model",
    "train_beblid",
]
