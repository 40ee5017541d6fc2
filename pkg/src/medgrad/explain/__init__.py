"""Local-entropy filter, saliency methods and overlay rendering."""

from medgrad.explain.entropy import (
    EntropyMap,
    disk_size,
    entropy_weights,
    local_entropy_fast,
    local_entropy_ref,
    pool_patches,
    to_gray,
)
from medgrad.explain.render import colormap, overlay, render_grid, render_panel, upsample
from medgrad.explain.saliency import (
    METHODS,
    ExplainConfig,
    SaliencyMap,
    channel_gradient_map,
    explain,
    grad_cam,
    grad_eclip,
    medgrad_eclip,
)

__all__ = [
    "METHODS",
    "EntropyMap",
    "ExplainConfig",
    "SaliencyMap",
    "channel_gradient_map",
    "colormap",
    "disk_size",
    "entropy_weights",
    "explain",
    "grad_cam",
    "grad_eclip",
    "local_entropy_fast",
    "local_entropy_ref",
    "medgrad_eclip",
    "overlay",
    "pool_patches",
    "render_grid",
    "render_panel",
    "to_gray",
    "upsample",
]
