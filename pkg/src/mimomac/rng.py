"""Deterministic random streams.

Every stochastic routine in the package draws from a counter-based Philox
generator keyed by a 64-bit root seed plus a derived stream index, so any
result is reproducible from ``(seed, stream)`` alone, independently of
execution order or worker count.

Complex standard normals are produced by a fixed radius/phase transform of
two uniforms (``sqrt(-ln u1) * exp(2*pi*1j*u2)``) instead of the generator's
built-in normal routine.  The uniform-double mapping of Philox is part of
numpy's stable API, so realizations are bit-identical across platforms.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def derive_seed(root: int, *stream_ids: int) -> int:
    """Mix a root seed with integer stream identifiers (splitmix64 folding)."""
    state = root & _MASK64
    out = root & _MASK64
    for sid in stream_ids:
        state = (state ^ (sid & _MASK64)) & _MASK64
        state, out = _splitmix64(state)
    return out


def make_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``[seed, stream]``; distinct keys never collide."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """I.i.d. circularly symmetric complex Gaussian entries of unit variance.

    Uses the documented transform ``sqrt(-ln u1) * exp(2*pi*1j*u2)`` with
    ``u1 = 1 - U``, ``u2 = U`` drawn as two consecutive uniform arrays, so the
    draw order (u1 block, then u2 block, C-order within each) is fixed.
    """
    u1 = 1.0 - rng.random(shape)
    u2 = rng.random(shape)
    return np.sqrt(-np.log(u1)) * np.exp(2j * np.pi * u2)
