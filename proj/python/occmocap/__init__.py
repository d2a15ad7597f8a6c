"""Occlusion-robust 3D human motion capture from 2D keypoint sequences."""

import torch  # noqa: F401  (loads libtorch before the extension)

from ._core import (
    CameraIntrinsics,
    ConfigError,
    DataError,
    InvalidArgument,
    NumericalError,
    accel_error,
    body_forward,
    default_config,
    infer,
    lsp_joints,
    matrix_to_rot6d,
    mpjpe,
    pa_mpjpe,
    pve,
    read_detections,
    rot6d_to_matrix,
    save_untrained_lifting,
    solve_translation,
    synthetic_detections,
    validate_config,
)

__all__ = [
    "CameraIntrinsics",
    "ConfigError",
    "DataError",
    "InvalidArgument",
    "NumericalError",
    "accel_error",
    "body_forward",
    "default_config",
    "infer",
    "lsp_joints",
    "matrix_to_rot6d",
    "mpjpe",
    "pa_mpjpe",
    "pve",
    "read_detections",
    "rot6d_to_matrix",
    "save_untrained_lifting",
    "solve_translation",
    "synthetic_detections",
    "validate_config",
]
