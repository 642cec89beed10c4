"""Kernel backend selection.

Prefers the compiled Cython extension when it built successfully, else
falls back to the numpy implementation.  ``PSEUDOPRECIP_BACKEND=python``
or ``=cython`` forces a choice (the latter raises if unavailable, so CI
can assert the extension actually built).
"""

import os

from . import pykernels

_forced = os.environ.get("PSEUDOPRECIP_BACKEND", "").lower()

if _forced == "python":
    backend = pykernels
elif _forced in ("cython", "compiled", "c"):
    from . import _core as backend  # noqa: F401  (ImportError is the contract)
else:
    try:
        from . import _core as backend
    except ImportError:
        backend = pykernels

name = backend.name
affine_forward = backend.affine_forward
affine_backward = backend.affine_backward
tanh_forward = backend.tanh_forward
tanh_backward = backend.tanh_backward
adam_update = backend.adam_update
sorted_quantiles = backend.sorted_quantiles
quantile_loss_grad = backend.quantile_loss_grad
