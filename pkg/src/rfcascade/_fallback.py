"""Pure numpy version of the compiled convolution core (same tap order, same rounding)."""
import numpy as np


def conv_taps(src, offsets, weights, out, threads=1):
    nt, ny, nx = out.shape
    tmp = np.empty_like(out)
    for (a, b, c), w in zip(offsets, weights):
        np.multiply(src[a:a + nt, b:b + ny, c:c + nx], w, out=tmp)
        out += tmp
