"""Deterministic counter-mode random streams.

Every random quantity in the package is a pure function of
(seed, stream id, counter): a 64-bit mix finalizer applied to equally
spaced counter states, split-mix style. Values depend only on their
counter, never on how many values were drawn before them, so chunked,
parallel, and serial generation agree bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import numerics

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_SALT = np.uint64(0xD6E8FEB86659FD93)

# Stream ids used by the package. Callers may use any other ids for their
# own draws; distinct ids give statistically independent streams.
STREAM_NOISE = 1        # smoothing estimation noise
STREAM_SELECT = 2       # smoothing selection noise
STREAM_INIT = 3         # model parameter init
STREAM_TRAIN = 4        # per-epoch training noise
STREAM_PGD = 5          # attack restart offsets
STREAM_KMEANS = 6       # k-means++ seeding
STREAM_SUBSETS = 7      # subset sampling in sweeps


def _mix(x: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the point here; silence the overflow warnings.
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _M1 & _MASK
        x = (x ^ (x >> np.uint64(27))) * _M2 & _MASK
        return x ^ (x >> np.uint64(31))


def mix64(x):
    """Public 64-bit mix finalizer for ints or uint64 arrays."""
    if isinstance(x, (int, np.integer)):
        return int(_mix(np.uint64(int(x) & 0xFFFFFFFFFFFFFFFF)))
    return _mix(np.asarray(x, dtype=np.uint64))


def stream_seed(seed: int, stream: int) -> int:
    """Derive the base state of one named substream of a master seed."""
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        t = np.uint64(stream & 0xFFFFFFFFFFFFFFFF) * _STREAM_SALT & _MASK
    return int(_mix(s ^ _mix(t)))


def raw64(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """uint64 words at counters start .. start+count-1 of a substream."""
    base = np.uint64(stream_seed(seed, stream))
    counters = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(base + counters * _GAMMA & _MASK)


def uniforms(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """Uniform floats in the open interval (0, 1)."""
    bits = raw64(seed, stream, start, count)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


_NORMAL_CHUNK = 1 << 20


def normals(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """Standard-normal draws via the quantile transform of `uniforms`.

    Generated in fixed-size chunks to keep the transform's temporaries
    cache-sized; counter-mode generation makes the chunking invisible.
    """
    if count <= _NORMAL_CHUNK:
        return numerics.normal_quantile(uniforms(seed, stream, start, count))
    out = np.empty(count)
    for off in range(0, count, _NORMAL_CHUNK):
        block = min(_NORMAL_CHUNK, count - off)
        out[off:off + block] = numerics.normal_quantile(
            uniforms(seed, stream, start + off, block))
    return out


def integers(seed: int, stream: int, start: int, count: int, bound: int) -> np.ndarray:
    """Integers in [0, bound); negligible (2^-53) floor bias."""
    return np.minimum(
        (uniforms(seed, stream, start, count) * bound).astype(np.int64), bound - 1
    )
