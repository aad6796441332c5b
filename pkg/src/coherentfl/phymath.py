"""Complex linear-algebra helpers and seeded random streams for the PHY layer.

Vectors and matrices are plain ``numpy`` arrays of ``complex128``.  Functions
broadcast over leading batch dimensions where that is natural, so the same
routine serves a single realisation and a vectorised Monte Carlo batch.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError

__all__ = [
    "SeededRng",
    "stream",
    "draw_rayleigh_channel",
    "draw_rayleigh_channels",
    "unitary_pilot",
    "awgn",
    "hermitian",
    "unit_phase_symbols",
]


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    value = int(part)
    if value < 0:
        raise DomainError(f"stream key components must be non-negative, got {value}")
    return value


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for the logical stream ``(seed, *keys)``.

    Keys may be integers or strings (hashed with CRC-32), so a stream is
    typically addressed as ``stream(seed, round, device, "downlink")``.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SeededRng:
    """A reproducible ``(seed, stream_id)`` pair and the generator it owns."""

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "generator", stream(self.seed, self.stream_id))

    def child(self, *keys) -> np.random.Generator:
        return stream(self.seed, self.stream_id, *keys)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, SeededRng):
        return rng.generator
    return rng


def draw_rayleigh_channels(n: int, m: int, rng) -> np.ndarray:
    """``n`` independent CN(0, I_m) vectors stacked as an ``(n, m)`` array."""
    if m < 0 or n < 0:
        raise DimensionError("sizes must be non-negative")
    g = _as_generator(rng)
    re = g.standard_normal((n, m))
    im = g.standard_normal((n, m))
    return (re + 1j * im) / np.sqrt(2.0)


def draw_rayleigh_channel(m: int, rng) -> np.ndarray:
    """One CN(0, I_m) channel vector (real and imaginary parts of variance 1/2)."""
    return draw_rayleigh_channels(1, m, rng)[0]


def unitary_pilot(m: int) -> np.ndarray:
    """Normalised DFT matrix, ``X[j, k] = exp(-2 pi i j k / m) / sqrt(m)``."""
    if m < 1:
        raise DimensionError(f"pilot dimension must be >= 1, got {m}")
    idx = np.arange(m)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / m) / np.sqrt(m)


def awgn(shape, variance: float, rng) -> np.ndarray:
    """Circularly-symmetric complex Gaussian noise with per-entry ``variance``."""
    if variance < 0:
        raise DomainError(f"noise variance must be >= 0, got {variance}")
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    if variance == 0:
        return np.zeros(shape, dtype=complex)
    g = _as_generator(rng)
    scale = np.sqrt(variance / 2.0)
    return scale * (g.standard_normal(shape) + 1j * g.standard_normal(shape))


def hermitian(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose of the trailing two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def unit_phase_symbols(shape, rng) -> np.ndarray:
    """Unit-modulus symbols with uniform phase."""
    g = _as_generator(rng)
    return np.exp(2j * np.pi * g.random(shape))
