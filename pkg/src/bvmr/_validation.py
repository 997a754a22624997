"""Small input-validation helpers shared by the modules."""

import numpy as np

SYMMETRY_RTOL = 1e-12


def as_vector(v, n=None, name="vector"):
    """Return ``v`` as a 1-D float/complex array, checking its length."""
    arr = np.asarray(v)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.complexfloating):
        arr = arr.astype(float)
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


def as_square(a, n=None, name="matrix"):
    arr = np.atleast_2d(np.asarray(a))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.complexfloating):
        arr = arr.astype(float)
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} has size {arr.shape[0]}, expected {n}")
    return arr


def is_hermitian(a, rtol=SYMMETRY_RTOL):
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    return np.abs(a - a.conj().T).max() <= rtol * scale


def check_interval(t, T, name="t", slack=0.0):
    t = float(t)
    if not (-slack <= t <= T + slack):
        raise ValueError(f"{name}={t} outside [0, {T}]")
    return min(max(t, 0.0), T)
