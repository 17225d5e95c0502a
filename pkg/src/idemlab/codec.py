"""MSE base codec: orthogonal transform, scalar quantizer, optional power
companding, static entropy model, and a frozen bitstream format.

Without companding the codec is exactly idempotent (decoded points are
lattice fixed points). Power companding is the configurable source of
non-idempotence that re-compression experiments rely on.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import rangecoder
from .errors import CorruptStream, OutOfRange, RankDeficient

__all__ = [
    "TransformCodec",
    "Symbols",
    "Bitstream",
    "fit",
    "encode",
    "decode",
    "encode_ste",
    "serialize",
    "deserialize",
    "rate_bpp",
    "compand",
    "decompand",
]

_ORTHO_TOL = 1e-10
_MAGIC = b"IDC1"
_VERSION = 1
# |v| floor when evaluating the companding derivative, which blows up at 0
_DERIV_EPS = 1e-12


def compand(v: np.ndarray, gamma: float | None) -> np.ndarray:
    """Sign-preserving power companding; identity when gamma is None."""
    if gamma is None:
        return v
    return np.sign(v) * np.abs(v) ** gamma


def decompand(u: np.ndarray, gamma: float | None) -> np.ndarray:
    if gamma is None:
        return u
    return np.sign(u) * np.abs(u) ** (1.0 / gamma)


def compand_deriv(v: np.ndarray, gamma: float | None) -> np.ndarray:
    if gamma is None:
        return np.ones_like(v)
    return gamma * np.maximum(np.abs(v), _DERIV_EPS) ** (gamma - 1.0)


def decompand_deriv(u: np.ndarray, gamma: float | None) -> np.ndarray:
    if gamma is None:
        return np.ones_like(u)
    inv = 1.0 / gamma
    return inv * np.maximum(np.abs(u), _DERIV_EPS) ** (inv - 1.0)


@dataclass(frozen=True)
class TransformCodec:
    """Immutable codec: x -> clamp(rint(compand(A^T x)/step)) -> A decompand(step*s)."""

    transform: np.ndarray
    step: np.ndarray
    gamma: float | None
    symbol_range: int
    entropy_counts: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.transform, dtype=np.float64)
        object.__setattr__(self, "transform", a)
        d = a.shape[0]
        if a.shape != (d, d):
            raise ValueError("transform must be square")
        if np.max(np.abs(a.T @ a - np.eye(d))) >= _ORTHO_TOL:
            raise ValueError("transform is not orthogonal")
        step = np.broadcast_to(np.asarray(self.step, dtype=np.float64), (d,)).copy()
        object.__setattr__(self, "step", step)
        if np.any(step <= 0):
            raise ValueError("quantization step must be positive")
        if self.gamma is not None and not 0.0 < self.gamma <= 1.0:
            raise ValueError("companding gamma must lie in (0, 1]")
        r = int(self.symbol_range)
        object.__setattr__(self, "symbol_range", r)
        if r < 1:
            raise ValueError("symbol_range must be >= 1")
        counts = np.asarray(self.entropy_counts, dtype=np.int64)
        object.__setattr__(self, "entropy_counts", counts)
        if counts.shape != (d, 2 * r + 1):
            raise ValueError("entropy table must be (dim, 2R+1)")
        if np.any(counts < 1) or np.any(counts.sum(axis=1) != rangecoder.TOTAL_FREQ):
            raise ValueError("entropy counts must be >= 1 and sum to the coder total")

    @property
    def dim(self) -> int:
        return self.transform.shape[0]

    @property
    def entropy_model(self) -> np.ndarray:
        """Per-dimension pmf over the 2R+1 symbol indices."""
        return self.entropy_counts / float(rangecoder.TOTAL_FREQ)

    @classmethod
    def uniform(
        cls,
        dim: int,
        step,
        symbol_range: int,
        gamma: float | None = None,
        transform: np.ndarray | None = None,
    ) -> "TransformCodec":
        """Codec with a flat entropy model; handy when only the lattice matters."""
        if transform is None:
            transform = np.eye(dim)
        k = 2 * symbol_range + 1
        counts = np.tile(rangecoder.quantize_pmf(np.full(k, 1.0 / k)), (dim, 1))
        return cls(transform, step, gamma, symbol_range, counts)


@dataclass(frozen=True)
class Symbols:
    """Quantized transform indices; one vector (d,) or a batch (n, d)."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim not in (1, 2):
            raise ValueError("indices must be 1-D or 2-D")
        object.__setattr__(self, "indices", idx)

    @property
    def as_matrix(self) -> np.ndarray:
        return self.indices[None, :] if self.indices.ndim == 1 else self.indices

    def __eq__(self, other) -> bool:
        if not isinstance(other, Symbols):
            return NotImplemented
        return np.array_equal(self.as_matrix, other.as_matrix)


@dataclass(frozen=True)
class Bitstream:
    """Self-contained serialized form: header plus range-coded payload."""

    data: bytes

    @property
    def byte_length(self) -> int:
        return len(self.data)

    @property
    def header_length(self) -> int:
        _, _, header_len, _ = _parse_header(self.data)
        return header_len

    @property
    def payload_length(self) -> int:
        return self.byte_length - self.header_length

    def to_file(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.data)

    @classmethod
    def from_file(cls, path) -> "Bitstream":
        with open(path, "rb") as fh:
            return cls(fh.read())


def fit(
    samples: np.ndarray,
    step,
    gamma: float | None = None,
    symbol_range: int | None = None,
) -> TransformCodec:
    """Fit transform and entropy model to samples.

    The transform is the eigenbasis of the sample covariance, eigenvalues
    descending, each eigenvector's first nonzero component made positive.
    The entropy model is the add-one-smoothed histogram of the quantized
    transform coefficients. When symbol_range is omitted it is sized with
    ~50% headroom beyond the largest coefficient seen, which keeps clamping
    off the fit data and vanishingly rare beyond it.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n, d = samples.shape
    if n < d + 1:
        raise RankDeficient(f"need at least {d + 1} samples, got {n}")
    cov = np.cov(samples, rowvar=False).reshape(d, d)
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 0 or evals[0] <= 1e-12 * evals[-1]:
        raise RankDeficient("sample covariance is singular")
    order = np.argsort(evals)[::-1]
    a = evecs[:, order]
    for j in range(d):
        col = a[:, j]
        first = np.flatnonzero(np.abs(col) > 1e-12)[0]
        if col[first] < 0:
            a[:, j] = -col
    step_vec = np.broadcast_to(np.asarray(step, dtype=np.float64), (d,))
    u = compand(samples @ a, gamma) / step_vec
    if symbol_range is None:
        symbol_range = int(np.ceil(1.5 * np.max(np.abs(u)))) + 1
    r = int(symbol_range)
    idx = np.clip(np.rint(u).astype(np.int64), -r, r)
    k = 2 * r + 1
    counts = np.empty((d, k), dtype=np.int64)
    for j in range(d):
        hist = np.bincount(idx[:, j] + r, minlength=k).astype(np.float64)
        counts[j] = rangecoder.quantize_pmf((hist + 1.0) / (n + k))
    return TransformCodec(a, step_vec, gamma, r, counts)


def encode(codec: TransformCodec, x: np.ndarray) -> Symbols:
    """Quantize: clamp(rint(compand(A^T x)/step), -R, R)."""
    x = np.asarray(x, dtype=np.float64)
    u = compand(x @ codec.transform, codec.gamma) / codec.step
    r = codec.symbol_range
    return Symbols(np.clip(np.rint(u).astype(np.int64), -r, r))


def decode(codec: TransformCodec, s: Symbols) -> np.ndarray:
    """Reconstruct: A decompand(step * s)."""
    u = codec.step * s.indices.astype(np.float64)
    return decompand(u, codec.gamma) @ codec.transform.T


def encode_ste(codec: TransformCodec, x: np.ndarray) -> tuple[Symbols, np.ndarray]:
    """Encode plus the straight-through jacobian ds/dx.

    Rounding and clamping are treated as identity in the derivative, so the
    returned (d, d) matrix is diag(1/step) diag(compand'(A^T x)) A^T.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("encode_ste takes a single vector")
    v = x @ codec.transform
    jac = (compand_deriv(v, codec.gamma) / codec.step)[:, None] * codec.transform.T
    return encode(codec, x), jac


def serialize(codec: TransformCodec, s: Symbols) -> Bitstream:
    """Produce the frozen wire format: header then range-coded payload."""
    mat = s.as_matrix
    r = codec.symbol_range
    if mat.shape[1] != codec.dim:
        raise OutOfRange("symbol dimension does not match codec")
    if np.any(mat < -r) or np.any(mat > r):
        raise OutOfRange("symbols outside [-R, R]")
    payload = rangecoder.encode_symbols(mat + r, codec.entropy_counts)
    head = bytearray()
    head += _MAGIC
    head += struct.pack("<B", _VERSION)
    head += struct.pack("<H", codec.dim)
    head += codec.step.astype("<f8").tobytes()
    head += struct.pack("<B", 0 if codec.gamma is None else 1)
    head += struct.pack("<d", 1.0 if codec.gamma is None else codec.gamma)
    head += struct.pack("<H", r)
    head += struct.pack("<I", mat.shape[0])
    head += codec.entropy_counts.astype("<u2").tobytes()
    head += struct.pack("<I", len(payload))
    return Bitstream(bytes(head) + payload)


def deserialize(b: Bitstream) -> Symbols:
    """Recover symbols from a bitstream; raises CorruptStream on any mismatch."""
    meta, counts, header_len, payload_len = _parse_header(b.data)
    d, r, count = meta["d"], meta["r"], meta["count"]
    payload = b.data[header_len:]
    if len(payload) != payload_len:
        raise CorruptStream(
            f"declared payload of {payload_len} bytes, found {len(payload)}"
        )
    mat = rangecoder.decode_symbols(payload, count, d, counts) - r
    return Symbols(mat[0] if count == 1 else mat)


def rate_bpp(b: Bitstream, pixel_count: int) -> float:
    """Total coded bits (header included) per pixel."""
    if pixel_count <= 0:
        raise ValueError("pixel_count must be positive")
    return 8.0 * b.byte_length / pixel_count


def _parse_header(data: bytes):
    fixed = 4 + 1 + 2
    if len(data) < fixed:
        raise CorruptStream("bitstream shorter than its magic")
    if data[:4] != _MAGIC:
        raise CorruptStream(f"bad magic {data[:4]!r}")
    version = data[4]
    if version != _VERSION:
        raise CorruptStream(f"unsupported version {version}")
    (d,) = struct.unpack_from("<H", data, 5)
    off = 7
    need = 8 * d + 1 + 8 + 2 + 4
    if len(data) < off + need:
        raise CorruptStream("truncated header")
    step = np.frombuffer(data, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    comp_flag = data[off]
    off += 1
    (gamma,) = struct.unpack_from("<d", data, off)
    off += 8
    (r,) = struct.unpack_from("<H", data, off)
    off += 2
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    k = 2 * r + 1
    if len(data) < off + 2 * d * k + 4:
        raise CorruptStream("truncated entropy table")
    counts = (
        np.frombuffer(data, dtype="<u2", count=d * k, offset=off)
        .reshape(d, k)
        .astype(np.int64)
    )
    off += 2 * d * k
    (payload_len,) = struct.unpack_from("<I", data, off)
    off += 4
    meta = {
        "d": d,
        "r": r,
        "count": count,
        "step": step,
        "gamma": None if comp_flag == 0 else gamma,
    }
    return meta, counts, off, payload_len
