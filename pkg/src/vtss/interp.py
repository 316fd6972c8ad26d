"""Bilinear resampling with half-pixel (align-corners=false) sampling.

Output pixel ``i`` of an axis resized from ``n_in`` to ``n_out`` samples the
input at

    src = max((i + 0.5) * n_in / n_out - 0.5, 0)

and blends ``floor(src)`` with its right neighbour (clamped to ``n_in - 1``)
using weight ``src - floor(src)``.  This is the rule used by PyTorch's
``interpolate(mode="bilinear", align_corners=False)`` without antialiasing.
"""

import numpy as np


def axis_weights(n_in, n_out):
    """Return ``(lo, hi, frac)`` index/weight arrays for one axis."""
    i = np.arange(n_out, dtype=np.float64)
    src = np.maximum((i + 0.5) * (n_in / n_out) - 0.5, 0.0)
    lo = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(arr, out_h, out_w):
    """Resize the last two axes of ``arr`` to ``(out_h, out_w)``.

    Works for single images ``(C, H, W)`` and batches ``(N, C, H, W)``.
    A same-size resize returns a bit-identical copy.
    """
    arr = np.asarray(arr)
    in_h, in_w = arr.shape[-2:]
    if (in_h, in_w) == (out_h, out_w):
        return arr.copy()
    work = arr.astype(np.float64)
    lo, hi, f = axis_weights(in_h, out_h)
    f = f[:, None]
    work = work[..., lo, :] * (1.0 - f) + work[..., hi, :] * f
    lo, hi, f = axis_weights(in_w, out_w)
    work = work[..., lo] * (1.0 - f) + work[..., hi] * f
    return work.astype(arr.dtype if arr.dtype.kind == "f" else np.float32)
