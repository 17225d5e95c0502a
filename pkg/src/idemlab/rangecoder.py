"""Carry-less 32-bit range coder over static per-dimension frequency tables.

Wire behavior is frozen: 32-bit state, top-byte renormalization with the
underflow-forcing trick, 4-byte flush, bytes emitted in stream order.
Frequency tables are integer counts summing to exactly TOTAL_FREQ per
dimension, every symbol >= 1 count, so the coder never meets a zero-mass
symbol and range never drops below the total.

Both the encode and decode loops are hot kernels: jitted under numba,
executed as plain Python under the numpy backend (same source, same bits).
"""

import numpy as np

from ._backend import jit_kernel
from .errors import CorruptStream

__all__ = [
    "TOTAL_FREQ",
    "FLUSH_BITS",
    "quantize_pmf",
    "encode_symbols",
    "decode_symbols",
]

TOTAL_FREQ = 1 << 16
FLUSH_BITS = 32  # the 4-byte flush is the coder constant in rate accounting

_MASK32 = np.uint64(0xFFFFFFFF)
_TWO32 = np.uint64(1 << 32)
_TOP = np.uint64(1 << 24)
_BOT = np.uint64(1 << 16)


def quantize_pmf(pmf: np.ndarray, total: int = TOTAL_FREQ) -> np.ndarray:
    """Quantize a pmf to integer counts summing to total, each count >= 1.

    Largest-remainder apportionment with index tie-break, so the table is a
    pure function of the pmf.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or pmf.size < 2:
        raise ValueError("pmf must be 1-D with at least 2 entries")
    if np.any(pmf < 0) or pmf.sum() <= 0:
        raise ValueError("pmf must be nonnegative with positive mass")
    k = pmf.size
    if total < k:
        raise ValueError("total too small for one count per symbol")
    scaled = pmf / pmf.sum() * (total - k)
    base = np.floor(scaled).astype(np.int64) + 1  # the +1 is the p_min floor
    short = total - int(base.sum())
    remainders = scaled - np.floor(scaled)
    order = np.lexsort((np.arange(k), -remainders))
    base[order[:short]] += 1
    return base


@jit_kernel
def _rc_encode(symbols, counts, cumulative, out):
    """Encode symbols (flat, with per-symbol dim index interleaving handled
    by the caller via 2-D indexing). Returns bytes written, or -1 on overflow
    of the out buffer."""
    n_vec, d = symbols.shape
    low = np.uint64(0)
    rng = _MASK32
    pos = 0
    for i in range(n_vec):
        for j in range(d):
            s = symbols[i, j]
            tot = np.uint64(TOTAL_FREQ)
            r = rng // tot
            low = (low + r * np.uint64(cumulative[j, s])) & _MASK32
            rng = r * np.uint64(counts[j, s])
            while True:
                if (low ^ (low + rng)) < _TOP:
                    pass
                elif rng < _BOT:
                    rng = (_TWO32 - low) & (_BOT - np.uint64(1))
                else:
                    break
                if pos >= out.shape[0]:
                    return -1
                out[pos] = np.uint8(low >> np.uint64(24))
                pos += 1
                low = (low << np.uint64(8)) & _MASK32
                rng = (rng << np.uint64(8)) & _MASK32
    for _ in range(4):
        if pos >= out.shape[0]:
            return -1
        out[pos] = np.uint8(low >> np.uint64(24))
        pos += 1
        low = (low << np.uint64(8)) & _MASK32
    return pos


@jit_kernel
def _rc_decode(payload, n_vec, d, counts, cumulative, out):
    """Decode n_vec*d symbols from payload. Returns bytes consumed, or -1 if
    the payload ran out early."""
    low = np.uint64(0)
    rng = _MASK32
    code = np.uint64(0)
    pos = 0
    for _ in range(4):
        if pos >= payload.shape[0]:
            return -1
        code = (code << np.uint64(8)) | np.uint64(payload[pos])
        pos += 1
    for i in range(n_vec):
        for j in range(d):
            tot = np.uint64(TOTAL_FREQ)
            r = rng // tot
            val = ((code + _TWO32 - low) & _MASK32) // r
            if val >= tot:
                val = tot - np.uint64(1)
            # linear scan: tables are short (2R+1 entries)
            s = 0
            while np.uint64(cumulative[j, s + 1]) <= val:
                s += 1
            out[i, j] = s
            low = (low + r * np.uint64(cumulative[j, s])) & _MASK32
            rng = r * np.uint64(counts[j, s])
            while True:
                if (low ^ (low + rng)) < _TOP:
                    pass
                elif rng < _BOT:
                    rng = (_TWO32 - low) & (_BOT - np.uint64(1))
                else:
                    break
                if pos >= payload.shape[0]:
                    return -1
                code = ((code << np.uint64(8)) | np.uint64(payload[pos])) & _MASK32
                pos += 1
                low = (low << np.uint64(8)) & _MASK32
                rng = (rng << np.uint64(8)) & _MASK32
    return pos


def encode_symbols(symbols: np.ndarray, counts: np.ndarray) -> bytes:
    """Range-code a (n, d) block of table indices with per-dimension counts."""
    symbols = np.ascontiguousarray(symbols, dtype=np.int64)
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    cumulative = _cumulative(counts)
    # worst case is ~2 bytes/symbol at TOTAL_FREQ precision; pad generously
    cap = 2 * symbols.size + 64
    out = np.empty(cap, dtype=np.uint8)
    written = _rc_encode(symbols, counts, cumulative, out)
    if written < 0:  # pragma: no cover - capacity bound is generous
        raise CorruptStream("encoder exceeded payload capacity bound")
    return out[:written].tobytes()


def decode_symbols(payload: bytes, n_vec: int, d: int, counts: np.ndarray) -> np.ndarray:
    """Decode a (n_vec, d) block; the payload must be consumed exactly."""
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    cumulative = _cumulative(counts)
    buf = np.frombuffer(payload, dtype=np.uint8)
    out = np.empty((n_vec, d), dtype=np.int64)
    consumed = _rc_decode(buf, n_vec, d, counts, cumulative, out)
    if consumed < 0:
        raise CorruptStream("payload truncated")
    if consumed != buf.shape[0]:
        raise CorruptStream(
            f"payload length mismatch: {buf.shape[0]} bytes, {consumed} consumed"
        )
    return out


def _cumulative(counts: np.ndarray) -> np.ndarray:
    if np.any(counts.sum(axis=1) != TOTAL_FREQ):
        raise ValueError("each count row must sum to TOTAL_FREQ")
    if np.any(counts < 1):
        raise ValueError("all counts must be >= 1")
    cum = np.zeros((counts.shape[0], counts.shape[1] + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cum[:, 1:])
    return cum
