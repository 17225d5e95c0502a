"""Exact finite-alphabet verification lab.

Everything here is small enough to enumerate, so every check is exact:
posteriors come from direct normalization, optimal codecs from exhaustive
partition search, and MSE identities from double enumeration. Sampling
appears only where the claim itself is statistical.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import InvalidRate, ZeroMassCode

__all__ = [
    "FiniteSource",
    "TabularCodec",
    "PosteriorTable",
    "Theorem1Report",
    "Theorem3Report",
    "inverse_image",
    "code_pmf",
    "exact_posterior",
    "posterior_table",
    "rejection_sample_constrained",
    "check_theorem1",
    "design_mse_optimal_codec",
    "check_theorem3",
    "posterior_sampling_mse",
    "example1_source",
    "example1_codec",
    "random_source",
    "random_codec",
]

_PMF_TOL = 1e-12


@dataclass(frozen=True)
class FiniteSource:
    """Discrete scalar source: pmf over an ordered alphabet of real values."""

    pmf: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "values", values)
        if pmf.ndim != 1 or values.shape != pmf.shape:
            raise ValueError("pmf and values must be 1-D and equally long")
        if np.any(pmf < 0):
            raise ValueError("pmf entries must be nonnegative")
        if abs(pmf.sum() - 1.0) > _PMF_TOL:
            raise ValueError(f"pmf sums to {pmf.sum()!r}, not 1")
        if np.any(np.diff(values) <= 0):
            raise ValueError("values must be strictly increasing")

    @property
    def alphabet_size(self) -> int:
        return self.pmf.shape[0]


@dataclass(frozen=True)
class TabularCodec:
    """Deterministic encoder table and real-valued decoder table."""

    encode_map: np.ndarray
    decode_values: np.ndarray

    def __post_init__(self):
        enc = np.asarray(self.encode_map, dtype=np.int64)
        dec = np.asarray(self.decode_values, dtype=np.float64)
        object.__setattr__(self, "encode_map", enc)
        object.__setattr__(self, "decode_values", dec)
        if enc.ndim != 1 or dec.ndim != 1:
            raise ValueError("encode_map and decode_values must be 1-D")
        if np.any(enc < 0) or np.any(enc >= dec.shape[0]):
            raise ValueError("encode_map entries must lie in [0, m)")
        if not np.all(np.isfinite(dec)):
            raise ValueError("decode_values must be finite")

    @property
    def num_codes(self) -> int:
        return self.decode_values.shape[0]


@dataclass(frozen=True)
class PosteriorTable:
    """Posterior rows p(X=x | Y=y); rows with p_Y(y)=0 are flagged undefined."""

    rows: np.ndarray
    defined: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        defined = np.asarray(self.defined, dtype=bool)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "defined", defined)
        if rows.shape[0] != defined.shape[0]:
            raise ValueError("one defined flag per row required")
        sums = rows[defined].sum(axis=1)
        if defined.any() and np.max(np.abs(sums - 1.0), initial=0.0) > _PMF_TOL:
            raise ValueError("defined posterior rows must sum to 1")


def inverse_image(codec: TabularCodec, y: int) -> np.ndarray:
    """Indices of all source symbols encoding to code y (may be empty)."""
    if not 0 <= y < codec.num_codes:
        raise ValueError(f"code {y} outside [0, {codec.num_codes})")
    return np.flatnonzero(codec.encode_map == y)


def code_pmf(source: FiniteSource, codec: TabularCodec) -> np.ndarray:
    """Induced pmf of Y = f(X)."""
    out = np.zeros(codec.num_codes)
    np.add.at(out, codec.encode_map, source.pmf)
    return out


def exact_posterior(source: FiniteSource, codec: TabularCodec, y: int) -> np.ndarray:
    """Posterior p(X | Y=y): the source pmf restricted to f^-1[y], renormalized."""
    pre = inverse_image(codec, y)
    mass = source.pmf[pre].sum()
    if mass <= 0.0:
        raise ZeroMassCode(f"code {y} has zero probability mass")
    post = np.zeros_like(source.pmf)
    post[pre] = source.pmf[pre] / mass
    return post


def posterior_table(source: FiniteSource, codec: TabularCodec) -> PosteriorTable:
    rows = np.zeros((codec.num_codes, source.alphabet_size))
    defined = code_pmf(source, codec) > 0.0
    for y in np.flatnonzero(defined):
        rows[y] = exact_posterior(source, codec, int(y))
    return PosteriorTable(rows=rows, defined=defined)


def rejection_sample_constrained(
    source: FiniteSource,
    codec: TabularCodec,
    y: int,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw n samples of X ~ pmf conditioned on f(X)=y, by rejection."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pre = inverse_image(codec, y)
    accept_mass = source.pmf[pre].sum()
    if pre.size == 0 or accept_mass <= 0.0:
        raise ZeroMassCode(f"code {y} has empty or zero-mass preimage")
    out = np.empty(n, dtype=np.int64)
    filled = 0
    # oversample by the expected rejection factor, then top up
    while filled < n:
        batch = max(256, int((n - filled) / accept_mass * 1.2))
        draws = rng.choice(source.alphabet_size, size=batch, p=source.pmf)
        kept = draws[codec.encode_map[draws] == y]
        take = min(kept.size, n - filled)
        out[filled : filled + take] = kept[:take]
        filled += take
    return out


@dataclass(frozen=True)
class Theorem1Report:
    """Support check: posterior mass must stay inside the inverse image."""

    passed: bool
    violations: list = field(default_factory=list)
    codes_checked: int = 0


def check_theorem1(
    source: FiniteSource,
    codec: TabularCodec,
    table: PosteriorTable | None = None,
) -> Theorem1Report:
    """Verify that every positive-mass posterior entry lies in f^-1[y].

    A table may be supplied to audit externally produced posteriors;
    by default the exact one is computed and the check is a tautology test
    of the enumeration machinery.
    """
    if table is None:
        table = posterior_table(source, codec)
    violations = []
    checked = 0
    for y in np.flatnonzero(table.defined):
        checked += 1
        support = np.flatnonzero(table.rows[y] > 0.0)
        bad = support[codec.encode_map[support] != y]
        for x in bad:
            violations.append((int(x), int(y), float(table.rows[y][x])))
    return Theorem1Report(passed=not violations, violations=violations, codes_checked=checked)


def design_mse_optimal_codec(
    source: FiniteSource, bits: int
) -> tuple[TabularCodec, float]:
    """Exhaustive MSE-optimal fixed-rate scalar codec.

    Searches all contiguous partitions of the ordered alphabet into 2**bits
    nonempty cells, decoding each cell to its conditional mean. Ties go to
    the first partition in lexicographic boundary order.
    """
    n = source.alphabet_size
    m = 2**bits
    if bits < 1 or m > n:
        raise InvalidRate(f"2**{bits} codes exceed alphabet size {n}")
    v, p = source.values, source.pmf
    best_mse = np.inf
    best = None
    for cuts in combinations(range(1, n), m - 1):
        bounds = (0, *cuts, n)
        enc = np.empty(n, dtype=np.int64)
        dec = np.empty(m)
        mse = 0.0
        for j in range(m):
            lo, hi = bounds[j], bounds[j + 1]
            enc[lo:hi] = j
            mass = p[lo:hi].sum()
            mean = (p[lo:hi] * v[lo:hi]).sum() / mass if mass > 0 else v[lo:hi].mean()
            dec[j] = mean
            mse += (p[lo:hi] * (v[lo:hi] - mean) ** 2).sum()
        if mse < best_mse:
            best_mse = mse
            best = TabularCodec(encode_map=enc, decode_values=dec)
    return best, float(best_mse)


@dataclass(frozen=True)
class Theorem3Report:
    """Decoder-injectivity check, with the merge construction as witness."""

    injective: bool
    duplicate_groups: list
    merged: TabularCodec | None
    mse_original: float
    mse_merged: float
    entropy_original: float
    entropy_merged: float


def _codec_mse(source: FiniteSource, codec: TabularCodec) -> float:
    recon = codec.decode_values[codec.encode_map]
    return float((source.pmf * (source.values - recon) ** 2).sum())


def _code_entropy(source: FiniteSource, codec: TabularCodec) -> float:
    py = code_pmf(source, codec)
    py = py[py > 0]
    return float(-(py * np.log2(py)).sum())


def check_theorem3(codec: TabularCodec, source: FiniteSource) -> Theorem3Report:
    """Check that distinct positive-mass codes decode to distinct values.

    When they do not, builds the merged codec (duplicate codes collapsed to
    one) and reports its MSE and code entropy: the merge must keep MSE
    identical while strictly lowering entropy, which is the contradiction
    that rules out non-injective decoders for MSE-optimal codecs.
    """
    py = code_pmf(source, codec)
    live = np.flatnonzero(py > 0)
    groups: dict[float, list[int]] = {}
    for y in live:
        groups.setdefault(float(codec.decode_values[y]), []).append(int(y))
    duplicates = [g for g in groups.values() if len(g) > 1]
    mse0 = _codec_mse(source, codec)
    h0 = _code_entropy(source, codec)
    if not duplicates:
        return Theorem3Report(True, [], None, mse0, mse0, h0, h0)
    # collapse each duplicate group onto its first code, then compact indices
    remap = np.arange(codec.num_codes)
    for g in duplicates:
        remap[g] = g[0]
    kept = np.unique(remap[codec.encode_map])
    compact = {int(old): new for new, old in enumerate(kept)}
    enc = np.array([compact[int(remap[c])] for c in codec.encode_map], dtype=np.int64)
    dec = codec.decode_values[kept]
    merged = TabularCodec(encode_map=enc, decode_values=dec)
    return Theorem3Report(
        injective=False,
        duplicate_groups=duplicates,
        merged=merged,
        mse_original=mse0,
        mse_merged=_codec_mse(source, merged),
        entropy_original=h0,
        entropy_merged=_code_entropy(source, merged),
    )


def posterior_sampling_mse(source: FiniteSource, codec: TabularCodec) -> float:
    """Exact E[(X - Xhat)^2] with Xhat drawn from p(X|Y), by double enumeration."""
    total = 0.0
    py = code_pmf(source, codec)
    for y in np.flatnonzero(py > 0):
        pre = inverse_image(codec, int(y))
        post = source.pmf[pre] / py[y]
        diffs = source.values[pre][:, None] - source.values[pre][None, :]
        joint = source.pmf[pre][:, None] * post[None, :]
        total += (joint * diffs**2).sum()
    return float(total)


def example1_source() -> FiniteSource:
    """Uniform source on the integer alphabet {0..5}."""
    return FiniteSource(pmf=np.full(6, 1 / 6), values=np.arange(6.0))


def example1_codec() -> TabularCodec:
    """The 1-bit codec mapping {0,1,2}->0 and {3,4,5}->1 with mean decoding."""
    return TabularCodec(encode_map=np.array([0, 0, 0, 1, 1, 1]), decode_values=np.array([1.0, 4.0]))


def random_source(rng: np.random.Generator, max_n: int = 12) -> FiniteSource:
    """Random strictly-ordered source with Dirichlet-ish weights, no zero mass."""
    n = int(rng.integers(2, max_n + 1))
    pmf = rng.random(n) + 0.05
    pmf /= pmf.sum()
    values = np.cumsum(rng.random(n) + 0.1)
    return FiniteSource(pmf=pmf, values=values)


def random_codec(rng: np.random.Generator, n: int, max_m: int = 4) -> TabularCodec:
    """Random surjective-ish encoder table with random decode values."""
    m = int(rng.integers(1, min(max_m, n) + 1))
    enc = rng.integers(0, m, size=n)
    enc[rng.integers(0, n)] = 0  # keep at least one live code
    return TabularCodec(encode_map=enc, decode_values=rng.normal(size=m))
