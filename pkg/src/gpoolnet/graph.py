"""Dense undirected graphs: self-loops, symmetric normalization, subgraph extraction.

All matrices are plain 2-D numpy arrays. Node counts stay small (a few
hundred at most) so nothing here bothers with sparse storage.
"""

import numpy as np

from .errors import ShapeError


class DegenerateDegreeError(ValueError):
    pass


def _check_square(a):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got shape {a.shape}")
    return a


def add_self_loops(a):
    """Return ``a + I``."""
    a = _check_square(a)
    return a + np.eye(a.shape[0], dtype=a.dtype)


def sym_normalize(a_hat):
    """Return ``D^-1/2 A_hat D^-1/2`` where D holds the row sums of ``a_hat``.

    Rows with zero degree are rejected: call :func:`add_self_loops` first.
    """
    a_hat = _check_square(a_hat).astype(np.float64, copy=False)
    deg = a_hat.sum(axis=1)
    if np.any(deg <= 0):
        bad = np.flatnonzero(deg <= 0).tolist()
        raise DegenerateDegreeError(f"zero-degree rows {bad}; add self-loops before normalizing")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]


def normalized_adjacency(a):
    """Shortcut for ``sym_normalize(add_self_loops(a))``."""
    return sym_normalize(add_self_loops(a))


def check_index(idx, n):
    """Validate a strictly ascending index list into ``range(n)``; return it as an int array."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise IndexError(f"index out of range for size {n}: {idx.tolist()}")
    if np.any(np.diff(idx) <= 0):
        raise IndexError(f"indices must be strictly ascending: {idx.tolist()}")
    return idx


def extract_subgraph(a, idx):
    """Keep the rows and columns listed in ``idx`` (ascending), preserving their order."""
    a = _check_square(a)
    idx = check_index(idx, a.shape[0])
    return a[np.ix_(idx, idx)]
