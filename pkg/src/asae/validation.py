"""Input validation helpers used at public entry points."""

import numbers

import numpy as np

from .exceptions import DimensionError

# Distributions are accepted if their mass is within this of one.
DISTRIBUTION_ATOL = 1e-8


def check_rng(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Accepts None, an int, a ``SeedSequence`` or an existing Generator (returned as is).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot build a random generator from {seed!r}")


def check_vector(x, name="input", *, length=None, allow_empty=False):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    if length is not None and arr.size != length:
        raise DimensionError(f"{name} must have length {length}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_distribution(p, name="distribution", *, length=None):
    """Validate a probability vector (or a stack of them along the last axis)."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise ValueError(f"{name} must not be empty")
    if length is not None and arr.shape[-1] != length:
        raise DimensionError(f"{name} must have {length} entries, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name} must be finite and nonnegative")
    if np.any(np.abs(arr.sum(axis=-1) - 1.0) > DISTRIBUTION_ATOL):
        raise ValueError(f"{name} must sum to one")
    return arr


def check_action(u, n_actions, name="action"):
    if not isinstance(u, (numbers.Integral, np.integer)) or isinstance(u, bool):
        raise TypeError(f"{name} must be an integer index, got {u!r}")
    if not 0 <= u < n_actions:
        raise IndexError(f"{name} {u} out of range for {n_actions} actions")
    return int(u)


def check_joint_action(joint, n_agents, n_actions, name="joint action"):
    arr = np.asarray(joint)
    if arr.shape != (n_agents,):
        raise DimensionError(f"{name} must hold one action per agent ({n_agents}), got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"{name} must contain integer indices")
    if np.any(arr < 0) or np.any(arr >= n_actions):
        raise IndexError(f"{name} {arr.tolist()} has an index outside [0, {n_actions})")
    return arr.astype(np.int64)


def one_hot(indices, depth):
    """One-hot encode integer ``indices`` along a new trailing axis."""
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros(idx.shape + (depth,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out
