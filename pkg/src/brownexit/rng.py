"""Counter-based random numbers (Philox4x32-10).

Every draw is a pure function of ``(seed, sample index, step, slot)``, so a
sample's random stream does not depend on how samples are split across
workers.  numpy's ``Philox`` bit generator is sequential per stream, which
would force one generator object per sample; evaluating the bijection directly
on counter arrays keeps the whole batch vectorized.
"""

from __future__ import annotations

import numba as nb
import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_SH = np.uint64(32)


@nb.njit(cache=True)
def _philox_rows(ctr, k0, k1, rounds, out):
    for i in range(ctr.shape[0]):
        x0 = np.uint64(ctr[i, 0])
        x1 = np.uint64(ctr[i, 1])
        x2 = np.uint64(ctr[i, 2])
        x3 = np.uint64(ctr[i, 3])
        a = k0
        b = k1
        for r in range(rounds):
            p0 = _M0 * x0
            p1 = _M1 * x2
            y0 = (p1 >> _SH) ^ x1 ^ a
            y2 = (p0 >> _SH) ^ x3 ^ b
            x1 = p1 & _LO
            x3 = p0 & _LO
            x0 = y0
            x2 = y2
            a = (a + _W0) & _LO
            b = (b + _W1) & _LO
        out[i, 0] = x0
        out[i, 1] = x1
        out[i, 2] = x2
        out[i, 3] = x3


def philox4x32(counter: np.ndarray, key: np.ndarray, rounds: int = 10) -> np.ndarray:
    """Apply Philox4x32 to ``counter`` (shape ``(..., 4)``, uint32) under ``key`` (2 uint32)."""
    c = np.ascontiguousarray(counter, dtype=np.uint32)
    flat = c.reshape(-1, 4)
    out = np.empty(flat.shape, dtype=np.uint32)
    _philox_rows(flat, np.uint64(key[0]), np.uint64(key[1]), rounds, out)
    return out.reshape(c.shape)


def split_seed(seed: int) -> np.ndarray:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint32)


class CounterStream:
    """Uniform and normal variates addressed by ``(sample, step, slot)``.

    One Philox call yields four 32-bit words, i.e. two 53-bit uniforms, for a
    given ``(sample, step, slot)``; ``slot`` distinguishes several calls within
    the same step.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.key = split_seed(seed)

    def words(self, sample: np.ndarray, step: int, slot: int) -> np.ndarray:
        sample = np.asarray(sample, dtype=np.uint64)
        ctr = np.empty(sample.shape + (4,), dtype=np.uint32)
        ctr[..., 0] = (sample & _LO).astype(np.uint32)
        ctr[..., 1] = (sample >> _SH).astype(np.uint32)
        ctr[..., 2] = np.uint32(step & 0xFFFFFFFF)
        ctr[..., 3] = np.uint32(slot & 0xFFFFFFFF)
        return philox4x32(ctr, self.key)

    def uniform(self, sample, step: int, slot: int, count: int = 2) -> np.ndarray:
        """``count`` uniforms in the open interval (0, 1) per sample, shape ``(len(sample), count)``.

        Slots ``slot, slot + 1, ...`` are consumed, two uniforms per slot.
        """
        sample = np.ascontiguousarray(sample, dtype=np.uint64)
        out = np.empty((sample.size, count))
        _uniforms(sample, np.uint64(step & 0xFFFFFFFF), np.uint64(slot), np.uint64(self.key[0]), np.uint64(self.key[1]), out)
        return out

    def normal(self, sample, step: int, slot: int, count: int) -> np.ndarray:
        return ndtri(self.uniform(sample, step, slot, count))


@nb.njit(cache=True)
def _uniforms(sample, step, slot, k0, k1, out):
    ctr = np.empty((1, 4), dtype=np.uint32)
    w = np.empty((1, 4), dtype=np.uint32)
    count = out.shape[1]
    for i in range(sample.size):
        for b in range((count + 1) // 2):
            ctr[0, 0] = np.uint32(sample[i] & _LO)
            ctr[0, 1] = np.uint32(sample[i] >> _SH)
            ctr[0, 2] = np.uint32(step)
            ctr[0, 3] = np.uint32(slot + np.uint64(b))
            _philox_rows(ctr, k0, k1, 10, w)
            for h in range(2):
                j = 2 * b + h
                if j < count:
                    hi = np.uint64(w[0, 2 * h]) >> np.uint64(5)
                    lo = np.uint64(w[0, 2 * h + 1]) >> np.uint64(6)
                    m = (hi << np.uint64(26)) | lo
                    out[i, j] = (np.float64(m) + 0.5) * 2.0**-53
