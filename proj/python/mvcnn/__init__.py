"""Multi-view CNN toolkit: gradient-based view stacks and a compact
convolutional classifier, backed by the C++ core.

The heavy lifting (view filtering, the network itself, checkpoints,
heatmaps) happens in the `_core` extension; this package just re-exports
its public surface. Arrays cross the boundary as float32 numpy arrays:
images are (h, w, 3) in [0, 1], view stacks are (channels, h, w).
"""

from ._core import (
    Model,
    __version__,
    combo_channels,
    combos,
    compute_views,
    load_image,
    resize_bilinear,
    roc_auc,
    stack_views,
)

__all__ = [
    "Model",
    "__version__",
    "combo_channels",
    "combos",
    "compute_views",
    "load_image",
    "resize_bilinear",
    "roc_auc",
    "stack_views",
]
