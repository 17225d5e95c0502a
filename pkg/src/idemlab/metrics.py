"""Distortion, divergence, idempotence, and Bjontegaard metrics, plus the
rate-distortion record types and their CSV form."""

import io
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .codec import TransformCodec, decode, encode
from .errors import DegenerateMoments, LengthMismatch, NoOverlap

__all__ = [
    "RDPoint",
    "RDCurve",
    "mse",
    "psnr",
    "gaussian_frechet",
    "wasserstein1_1d",
    "tv_distance",
    "bd_metric",
    "recompression_mse",
    "curves_to_csv",
    "curves_from_csv",
]

PSNR_CAP_DB = 99.0
# mse below this fraction of peak^2 counts as lossless and gets the cap
_PSNR_CAP_RATIO = 0.9e-9


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error over all coordinates of two equally-shaped sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"shape {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(mse_value: float, peak: float) -> float:
    """10 log10(peak^2 / mse), capped near losslessness."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    if mse_value < peak**2 * _PSNR_CAP_RATIO:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak**2 / mse_value))


def _fit_moments(samples: np.ndarray):
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.ndim != 2:
        raise DegenerateMoments("samples must be (n, d)")
    n, d = samples.shape
    if n <= d + 1:
        raise DegenerateMoments(f"need more than {d + 1} samples, got {n}")
    if not np.all(np.isfinite(samples)):
        raise DegenerateMoments("samples contain non-finite values")
    return samples.mean(axis=0), np.cov(samples, rowvar=False).reshape(d, d)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(m)
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T


def gaussian_frechet(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """Squared Frechet distance between Gaussian fits of the two sample sets.

    ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)), the cross square root
    taken through the symmetrized eigendecomposition with negative
    eigenvalues clipped at zero.
    """
    mu_a, cov_a = _fit_moments(samples_a)
    mu_b, cov_b = _fit_moments(samples_b)
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    evals = np.linalg.eigvalsh(inner)
    cross = np.sqrt(np.clip(evals, 0.0, None)).sum()
    fd2 = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a + cov_b) - 2.0 * cross)
    return max(fd2, 0.0)


def wasserstein1_1d(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """W1 between equal-size 1-D samples: mean absolute gap of sorted values."""
    a = np.asarray(samples_a, dtype=np.float64).ravel()
    b = np.asarray(samples_b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"{a.size} vs {b.size} samples")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def tv_distance(pmf_a: np.ndarray, pmf_b: np.ndarray) -> float:
    a = np.asarray(pmf_a, dtype=np.float64)
    b = np.asarray(pmf_b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"shape {a.shape} vs {b.shape}")
    return float(0.5 * np.abs(a - b).sum())


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    mse: float
    psnr: float
    divergence: float

    @classmethod
    def from_mse(
        cls, bpp: float, mse_value: float, divergence: float, peak: float
    ) -> "RDPoint":
        return cls(
            bpp=float(bpp),
            mse=float(mse_value),
            psnr=psnr(mse_value, peak),
            divergence=float(divergence),
        )

    def consistent_with_peak(self, peak: float, tol: float = 1e-9) -> bool:
        return abs(self.psnr - psnr(self.mse, peak)) <= tol


@dataclass(frozen=True)
class RDCurve:
    label: str
    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        bpps = [p.bpp for p in pts]
        if any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise ValueError("bpp must be strictly increasing along a curve")

    @property
    def bpp(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    def quality(self, axis: str) -> np.ndarray:
        if axis not in ("psnr", "divergence"):
            raise ValueError("quality axis must be 'psnr' or 'divergence'")
        return np.array([getattr(p, axis) for p in self.points])


def bd_metric(curve_a: RDCurve, curve_b: RDCurve, quality_axis: str = "psnr") -> float:
    """Average quality gap (B minus A) over the shared log-rate interval.

    Quality is interpolated against log(bpp) with monotone piecewise cubics.
    Positive means B sits above A on the chosen axis; for psnr that is
    better, for divergence (lower-is-better) it is worse.
    """
    for c in (curve_a, curve_b):
        if len(c.points) < 4:
            raise ValueError(f"curve {c.label!r} needs >= 4 points for BD")
    la, lb = np.log(curve_a.bpp), np.log(curve_b.bpp)
    qa, qb = curve_a.quality(quality_axis), curve_b.quality(quality_axis)
    lo, hi = max(la.min(), lb.min()), min(la.max(), lb.max())
    if not lo < hi:
        raise NoOverlap("rate ranges do not overlap")
    grid = np.linspace(lo, hi, 1024)
    fa = PchipInterpolator(la, qa)(grid)
    fb = PchipInterpolator(lb, qb)(grid)
    return float(np.trapezoid(fb - fa, grid) / (hi - lo))


def recompression_mse(codec: TransformCodec, reconstructions: np.ndarray) -> float:
    """Mean ||xhat - g0(f0(xhat))||^2 over a set of reconstructions."""
    xs = np.atleast_2d(np.asarray(reconstructions, dtype=np.float64))
    if xs.size == 0:
        raise ValueError("empty reconstruction set")
    again = decode(codec, encode(codec, xs))
    return float(np.mean(np.sum((xs - again) ** 2, axis=1)))


_CSV_HEADER = "label,bpp,mse,psnr,divergence"


def curves_to_csv(curves: list[RDCurve]) -> str:
    """Render curves in the frozen CSV form (UTF-8, dot decimal, repr floats)."""
    buf = io.StringIO()
    buf.write(_CSV_HEADER + "\n")
    for curve in curves:
        for p in curve.points:
            buf.write(f"{curve.label},{p.bpp!r},{p.mse!r},{p.psnr!r},{p.divergence!r}\n")
    return buf.getvalue()


def curves_from_csv(text: str) -> list[RDCurve]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _CSV_HEADER:
        raise ValueError("missing or malformed CSV header")
    grouped: dict[str, list[RDPoint]] = {}
    order: list[str] = []
    for ln in lines[1:]:
        label, bpp, mse_v, psnr_v, div = ln.split(",")
        if label not in grouped:
            grouped[label] = []
            order.append(label)
        grouped[label].append(
            RDPoint(bpp=float(bpp), mse=float(mse_v), psnr=float(psnr_v), divergence=float(div))
        )
    return [RDCurve(label=lab, points=tuple(grouped[lab])) for lab in order]
