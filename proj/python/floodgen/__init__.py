"""Flood image generation for street-level photos (native core)."""

import torch  # noqa: F401  loads libtorch before the extension

from ._core import (  # noqa: F401
    DEPTH_RANGE_M,
    MAX_DEPTH_CODE,
    BadRequest,
    CameraModel,
    FloodgenError,
    Flooder,
    ModelLoadError,
    OutOfRange,
    backproject_heights,
    code_from_depth,
    composite,
    decode_depth,
    depth_from_code,
    encode_depth,
    estimate_scale,
    flood_mask_metric,
    flood_mask_percentile,
    masked_cycle_loss,
    save_random_checkpoint,
    semantic_consistency_loss,
)

__version__ = "0.1.0"
