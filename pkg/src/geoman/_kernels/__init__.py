"""Hot per-pixel kernels: ray casting against proxy primitives and masked bilinear sampling.

The Cython build is used when it imports; otherwise the numpy fallback. Set
``GEOMAN_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("GEOMAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

ELLIPSOID = 0
CAPSULE = 1


def raycast(origin, dirs, kinds, params, backend=None):
    """Nearest hit of each ray against a union of primitives.

    ``dirs`` need not be normalized; the returned ``t`` is in units of ``dirs``,
    so camera rays with unit camera-space z give depth directly. Misses get
    ``t = inf`` and index -1.
    """
    impl = _select(backend)
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    kinds = np.ascontiguousarray(kinds, dtype=np.int64)
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.ndim != 2 or params.shape[1] < 15:
        padded = np.zeros((len(kinds), 15))
        padded[:, : params.shape[-1]] = params.reshape(len(kinds), -1)
        params = padded
    return impl.raycast(origin, dirs, kinds, params)


def bilinear_sample(img, xs, ys, mask=None, backend=None):
    """Sample ``img`` (H, W[, C]) at float pixel coords; returns (values, valid).

    A sample is valid when it lies inside [0, W-1] x [0, H-1] and every corner
    with non-zero weight is set in ``mask``.
    """
    impl = _select(backend)
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if mask is None:
        mask = np.ones(img.shape[:2], dtype=np.uint8)
    out, valid = impl.bilinear_sample(
        np.ascontiguousarray(img),
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(ys, dtype=np.float64),
        np.ascontiguousarray(mask, dtype=np.uint8),
    )
    return (out[..., 0] if squeeze else out), valid


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {backend!r}")
