"""Pseudo-precipitation toolkit.

Learns a point-wise encoder/decoder that blends precipitation with
moisture divergence into a standard-normal proxy field, band-limits and
downscales it, and evaluates the result against the direct route.
"""

from ._kernels import name as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
