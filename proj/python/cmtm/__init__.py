"""Two-stream token-modulation segmentation core.

Thin re-export of the compiled extension module.
"""

from ._core import (
    ApiUsageError,
    ConfigError,
    DimError,
    Modulator,
    __version__,
    boundary_accuracy,
    default_config,
    flow_to_rgb,
    generate_sequence,
    positional_embedding,
    region_similarity,
    sample_mask_plan,
)

__all__ = [
    "ApiUsageError",
    "ConfigError",
    "DimError",
    "Modulator",
    "__version__",
    "boundary_accuracy",
    "default_config",
    "flow_to_rgb",
    "generate_sequence",
    "positional_embedding",
    "region_similarity",
    "sample_mask_plan",
]
