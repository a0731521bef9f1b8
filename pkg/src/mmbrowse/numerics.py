"""Shared numeric kernels: seeded RNG streams, activation functions, cosine
similarity, Gumbel noise, and a finite-difference gradient oracle.

Every operation is a pure function of its inputs (plus explicit generator
state), works in float64, and is safe to call from multiple threads as long
as each caller owns its own generator.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

# Stream ids for deriving independent Philox streams from one master seed.
# Each logical task (catalog generation, encoding, simulation, the two
# trainers, live sessions) owns its own stream so runs are reproducible
# byte for byte regardless of which stages execute.
STREAM_CATALOG = 0
STREAM_ENCODER = 1
STREAM_SIMULATOR = 2
STREAM_CORRNET = 3
STREAM_AGENT = 4
STREAM_SERVICE = 5

# Uniform draws are kept this far from {0, 1} before log-log transforms.
UNIFORM_EPS = 1e-12


def stream_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for one (seed, stream...) pair.

    Philox is counter based: distinct stream keys yield statistically
    independent sequences, and identical keys reproduce identical draws on
    every platform.
    """
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(stream)))
    )


def _finite_array(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return v


def sigmoid(x) -> np.ndarray:
    """Elementwise logistic function 1 / (1 + exp(-x)).

    Uses the exp(-|x|) form so large magnitudes saturate instead of
    overflowing.
    """
    v = _finite_array(x, "sigmoid input")
    t = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def softmax(v, axis: int = -1) -> np.ndarray:
    """Probability vector exp(v) / sum(exp(v)), computed with max-subtraction.

    For multi-dimensional input the normalization runs along ``axis``.
    """
    arr = _finite_array(v, "softmax input")
    if arr.size == 0:
        raise InvalidInputError("softmax of an empty vector")
    shifted = arr - np.max(arr, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def cosine_similarity(a, b) -> float:
    """cos(a, b) = a.b / (|a| |b|), clipped into [-1, 1].

    A zero-norm operand raises DegenerateInputError: in this codebase that
    always signals an untrained or collapsed embedding.
    """
    va = _finite_array(a, "cosine input")
    vb = _finite_array(b, "cosine input")
    if va.shape != vb.shape:
        raise InvalidInputError(f"cosine shapes differ: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("zero-norm vector in cosine similarity")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def gumbel_noise(rng: np.random.Generator, size=None):
    """Standard Gumbel(0, 1) noise: -log(-log(u)) for u uniform on (0, 1).

    Draws are clamped away from {0, 1} by 1e-12 so the transform never
    produces infinities.  Returns a scalar when ``size`` is None.
    """
    u = np.clip(rng.random(size), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    g = -np.log(-np.log(u))
    return float(g) if size is None else g


def _eval_objective(f: Callable, x: np.ndarray) -> float:
    value = float(f(x))
    if not np.isfinite(value):
        raise InvalidInputError("objective returned a non-finite value")
    return value


def finite_difference_gradient(f: Callable, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle: (f(x + h e_j) - f(x - h e_j)) / 2h.

    This is the independent check against which all hand-derived gradients
    in the package are validated; it never shares code with them.
    """
    if h <= 0:
        raise InvalidInputError("step h must be positive")
    base = _finite_array(x, "finite difference point").copy()
    grad = np.empty_like(base)
    flat = base.ravel()
    gflat = grad.ravel()
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = _eval_objective(f, base)
        flat[j] = orig - h
        fm = _eval_objective(f, base)
        flat[j] = orig
        gflat[j] = (fp - fm) / (2.0 * h)
    return grad


def finite_difference_at(
    f: Callable, x, indices: Sequence[int], h: float = 1e-5
) -> np.ndarray:
    """Central differences at a subset of flat indices of ``x``.

    Used to spot-check gradients of parameter blocks too large to sweep
    coordinate by coordinate.
    """
    if h <= 0:
        raise InvalidInputError("step h must be positive")
    base = _finite_array(x, "finite difference point").copy()
    flat = base.ravel()
    out = np.empty(len(indices), dtype=np.float64)
    for pos, j in enumerate(indices):
        orig = flat[j]
        flat[j] = orig + h
        fp = _eval_objective(f, base)
        flat[j] = orig - h
        fm = _eval_objective(f, base)
        flat[j] = orig
        out[pos] = (fp - fm) / (2.0 * h)
    return out
