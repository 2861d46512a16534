"""Input validation helpers used at public entry points."""

from numbers import Integral, Real

import numpy as np

from .exceptions import ArgumentError


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise ArgumentError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ArgumentError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_positive(value, name, strict=True):
    if isinstance(value, bool) or not isinstance(value, Real):
        raise ArgumentError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise ArgumentError(f"{name} must be {bound}, got {value}")
    return value


def check_vector(x, dim, name):
    """Return ``x`` as a float vector of length ``dim``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.reshape(-1)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise ArgumentError(
            f"{name} must be a vector of length {dim}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} contains non-finite entries")
    return arr


def check_matrix(a, shape, name):
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1 and shape[1] == 1 and arr.shape[0] == shape[0]:
        arr = arr.reshape(shape)
    if arr.shape != tuple(shape):
        raise ArgumentError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} contains non-finite entries")
    return arr


def check_node(topology, i, name="node"):
    if isinstance(i, bool) or not isinstance(i, Integral):
        raise ArgumentError(f"{name} must be an integer node index, got {i!r}")
    if not 0 <= i < topology.node_count:
        raise ArgumentError(
            f"{name} {i} out of range for a {topology.node_count}-node topology")
    return int(i)
