"""Hot array kernels for convolution, with numba and pure-numpy variants.

The numba path is used when numba imports cleanly and ``SPECSR_DISABLE_NUMBA``
is unset (or ``0``). Both paths produce identical float32 results; the choice
only affects speed.
"""

import os

import numpy as np

_DISABLE = os.environ.get("SPECSR_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLE:
        raise ImportError("numba disabled by SPECSR_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --- pure numpy ---------------------------------------------------------------

def im2col_numpy(x, k):
    """[F, H, W] -> [F*k*k, H*W] with zero 'same' padding."""
    f, h, w = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    # win: [F, H, W, k, k] -> [F, k, k, H, W]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(f * k * k, h * w)


def col2im_numpy(cols, f, h, w, k):
    """Adjoint of :func:`im2col_numpy`: scatter-add columns back to [F, H, W]."""
    p = (k - 1) // 2
    out = np.zeros((f, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    c = cols.reshape(f, k, k, h, w)
    for dy in range(k):
        for dx in range(k):
            out[:, dy:dy + h, dx:dx + w] += c[:, dy, dx]
    return out[:, p:p + h, p:p + w].copy()


# --- numba ----------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _im2col_nb(x, k):
        f, h, w = x.shape
        p = (k - 1) // 2
        cols = np.zeros((f * k * k, h * w), dtype=x.dtype)
        for c in range(f):
            for dy in range(k):
                for dx in range(k):
                    row = (c * k + dy) * k + dx
                    for i in range(h):
                        yi = i + dy - p
                        if yi < 0 or yi >= h:
                            continue
                        base = i * w
                        for j in range(w):
                            xj = j + dx - p
                            if 0 <= xj < w:
                                cols[row, base + j] = x[c, yi, xj]
        return cols

    @numba.njit(cache=True)
    def _col2im_nb(cols, f, h, w, k):
        p = (k - 1) // 2
        out = np.zeros((f, h, w), dtype=cols.dtype)
        # same tap order as col2im_numpy so float32 sums round identically
        for c in range(f):
            for dy in range(k):
                for dx in range(k):
                    row = (c * k + dy) * k + dx
                    for i in range(h):
                        yi = i + dy - p
                        if yi < 0 or yi >= h:
                            continue
                        base = i * w
                        for j in range(w):
                            xj = j + dx - p
                            if 0 <= xj < w:
                                out[c, yi, xj] += cols[row, base + j]
        return out

    def im2col_numba(x, k):
        return _im2col_nb(np.ascontiguousarray(x), k)

    def col2im_numba(cols, f, h, w, k):
        return _col2im_nb(np.ascontiguousarray(cols), f, h, w, k)

    im2col = im2col_numba
    col2im = col2im_numba
else:
    im2col_numba = col2im_numba = None
    im2col = im2col_numpy
    col2im = col2im_numpy
