"""Semantic segmentation engine for scanned land-use maps.

A self-contained CPU pipeline: synthetic corpus generation, patch sampling
and augmentation, a from-scratch U-shape convolutional network trained with
SGD and hand-written backpropagation, tiled whole-map inference,
morphological label denoising, and Jaccard/accuracy evaluation.
"""

__version__ = "0.1.0"

from .rng import Rng
from .tensor import Shape4

__all__ = ["Rng", "Shape4", "__version__"]
