"""Small dense linear-algebra helpers, seeded randomness and a finite-difference
gradient used to validate every hand-derived backward pass in the package."""

import numpy as np

DTYPE = np.float64

INIT_SCHEMES = ("uniform-scaled", "zeros")


class DimensionError(ValueError):
    pass


def make_rng(seed):
    """Return a PCG64-backed generator; equal seeds give equal draws everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def rng_state(rng):
    return rng.bit_generator.state


def rng_from_state(state):
    bitgen = np.random.PCG64()
    bitgen.state = state
    return np.random.Generator(bitgen)


def matvec(M, v):
    M = np.asarray(M, dtype=DTYPE)
    v = np.asarray(v, dtype=DTYPE)
    if M.ndim != 2 or v.ndim != 1 or M.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {M.shape} by {v.shape}")
    out = M @ v
    _check_finite(out)
    return out


def init_weights(shape, scheme, rng, dtype=DTYPE):
    """Initialize a weight table.

    ``uniform-scaled`` draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) where
    fan_in is the last dimension (the table multiplies column vectors).
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s <= 0 for s in shape):
        raise DimensionError(f"non-positive dimension in {shape}")
    if scheme == "zeros":
        return np.zeros(shape, dtype=dtype)
    if scheme != "uniform-scaled":
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    bound = 1.0 / np.sqrt(shape[-1])
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function at ``x``."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    """Max elementwise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def _check_finite(arr):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite value produced")
