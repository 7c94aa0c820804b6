"""Land-use/land-cover segmentation at desk scale.

Raster I/O, tiling, cloud labels, a VGG encoder with U-Net style decoders at
configurable output stride, training, full-raster prediction and per-tile
metrics.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
