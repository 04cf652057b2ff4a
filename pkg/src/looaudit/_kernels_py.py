"""Pure numpy versions of the compiled kernels.

The loops run over the reduction index only; each step is an elementwise
multiply followed by an elementwise add, which reproduces the compiled
accumulation order exactly.
"""

import numpy as np


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"gemm: inner dimensions differ ({a.shape[1]} vs {b.shape[0]})")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"sq_dists: feature dimensions differ ({x.shape[1]} vs {y.shape[1]})")
    out = np.zeros((x.shape[0], y.shape[0]), dtype=np.float64)
    for k in range(x.shape[1]):
        diff = x[:, k : k + 1] - y[:, k][None, :]
        out += diff * diff
    return out
