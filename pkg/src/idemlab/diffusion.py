"""Gaussian-mixture source with closed-form noised marginals and scores,
plus the ancestral sampler built on them.

Scores are exact, so the generative model equals the source and sampling
error is pure discretization. The per-chain loop is a hot kernel; mixture
tables (noised means, inverse covariances, log-determinants) are
precomputed in batch outside it.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._backend import jit_kernel

__all__ = [
    "GmmSource",
    "NoiseSchedule",
    "ScoreField",
    "marginal_at",
    "score",
    "score_hessian",
    "tweedie_x0",
    "ddpm_step",
    "sample_unconditional",
]

_TERMINAL_ALPHA_BAR = 1e-3


@dataclass(frozen=True)
class GmmSource:
    """Mixture of Gaussians with SPD covariances."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.covs, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)
        k = w.shape[0]
        if mu.ndim != 2 or mu.shape[0] != k:
            raise ValueError("means must be (k, d)")
        d = mu.shape[1]
        if cov.shape != (k, d, d):
            raise ValueError("covs must be (k, d, d)")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        if np.max(np.abs(cov - np.swapaxes(cov, 1, 2))) > 1e-12:
            raise ValueError("covariances must be symmetric")
        np.linalg.cholesky(cov)  # raises LinAlgError unless SPD

    @property
    def components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    @property
    def cov(self) -> np.ndarray:
        mu = self.mean
        centered = self.means - mu
        second = np.einsum("k,kij->ij", self.weights, self.covs)
        spread = np.einsum("k,ki,kj->ij", self.weights, centered, centered)
        return second + spread

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        chol = np.linalg.cholesky(self.covs)
        return self.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        covinv = np.linalg.inv(self.covs)
        _, logdet = np.linalg.slogdet(self.covs)
        diff = x[:, None, :] - self.means[None, :, :]
        quad = np.einsum("nki,kij,nkj->nk", diff, covinv, diff)
        ll = (
            np.log(self.weights)[None, :]
            - 0.5 * (logdet[None, :] + quad + self.dim * math.log(2.0 * math.pi))
        )
        m = ll.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(ll - m).sum(axis=1, keepdims=True)))[:, 0]


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule with cumulative products; index t runs 0..T."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        object.__setattr__(self, "betas", b)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("betas must be a nonempty vector")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValueError("betas must be non-decreasing")
        abar = np.concatenate([[1.0], np.cumprod(1.0 - b)])
        object.__setattr__(self, "alpha_bar", abar)
        if abar[-1] >= _TERMINAL_ALPHA_BAR:
            raise ValueError(
                f"terminal alpha_bar {abar[-1]:.2e} too large; extend or steepen the schedule"
            )

    @property
    def steps(self) -> int:
        return self.betas.shape[0]

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @classmethod
    def linear(
        cls, steps: int = 200, beta_start: float = 1e-4, beta_end: float = 0.08
    ) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, steps))


@dataclass(frozen=True)
class ScoreField:
    """Bounded additive score perturbation for model-mismatch experiments."""

    amplitude: float
    freq: np.ndarray
    phase: np.ndarray

    @classmethod
    def random(
        cls, dim: int, steps: int, amplitude: float, seed: int
    ) -> "ScoreField":
        rng = np.random.default_rng(seed)
        return cls(
            amplitude=float(amplitude),
            freq=rng.normal(scale=1.5, size=(dim, dim)),
            phase=rng.uniform(0.0, 2.0 * np.pi, size=steps + 1),
        )


def _null_field(dim: int, steps: int):
    return 0.0, np.zeros((dim, dim)), np.zeros(steps + 1)


def marginal_at(source: GmmSource, schedule: NoiseSchedule, t: int) -> GmmSource:
    """Noised marginal at step t: means shrink by sqrt(abar), covariances blend to I."""
    if not 0 <= t <= schedule.steps:
        raise ValueError(f"t={t} outside [0, {schedule.steps}]")
    ab = schedule.alpha_bar[t]
    eye = np.eye(source.dim)
    return GmmSource(
        weights=source.weights,
        means=np.sqrt(ab) * source.means,
        covs=ab * source.covs + (1.0 - ab) * eye,
    )


def noised_tables(source: GmmSource, schedule: NoiseSchedule):
    """Per-step mixture parameters consumed by the chain kernels.

    Returns (means_t, covinv_t, logdet_t, logw) with leading axis t = 0..T.
    """
    ab = schedule.alpha_bar[:, None, None, None]
    eye = np.eye(source.dim)
    covs_t = ab * source.covs[None] + (1.0 - ab) * eye[None, None]
    means_t = np.sqrt(schedule.alpha_bar)[:, None, None] * source.means[None]
    covinv_t = np.linalg.inv(covs_t)
    _, logdet_t = np.linalg.slogdet(covs_t)
    return (
        np.ascontiguousarray(means_t),
        np.ascontiguousarray(covinv_t),
        np.ascontiguousarray(logdet_t),
        np.log(source.weights),
    )


@jit_kernel
def _mixture_score(x, means, covinv, logdet, logw, hess_out, want_hess):
    """Score (and optionally hessian of log density) of one mixture slice at x.

    means (k, d), covinv (k, d, d); writes the hessian into hess_out when
    want_hess, and returns the score vector.
    """
    k, d = means.shape
    qvecs = np.empty((k, d))
    ll = np.empty(k)
    for i in range(k):
        q = 0.0
        for a in range(d):
            acc = 0.0
            for b in range(d):
                acc += covinv[i, a, b] * (x[b] - means[i, b])
            qvecs[i, a] = acc
        for a in range(d):
            q += (x[a] - means[i, a]) * qvecs[i, a]
        ll[i] = logw[i] - 0.5 * (logdet[i] + q)
    top = ll[0]
    for i in range(1, k):
        if ll[i] > top:
            top = ll[i]
    z = 0.0
    for i in range(k):
        ll[i] = np.exp(ll[i] - top)
        z += ll[i]
    score_out = np.zeros(d)
    for i in range(k):
        r = ll[i] / z
        for a in range(d):
            score_out[a] -= r * qvecs[i, a]
    if want_hess:
        for a in range(d):
            for b in range(d):
                h = 0.0
                for i in range(k):
                    r = ll[i] / z
                    h += r * (qvecs[i, a] * qvecs[i, b] - covinv[i, a, b])
                hess_out[a, b] = h - score_out[a] * score_out[b]
    return score_out


@jit_kernel
def _ancestral_chains(x_init, noises, betas, abar, means_t, covinv_t, logdet_t, logw,
                      pamp, pfreq, pphase, out):
    """Unguided reverse chains; x_init (n, d), noises (T-1, n, d), out (n, d)."""
    n, d = x_init.shape
    big_t = betas.shape[0]
    hess = np.empty((d, d))
    for c in range(n):
        x = x_init[c].copy()
        for t in range(big_t, 0, -1):
            s = _mixture_score(x, means_t[t], covinv_t[t], logdet_t[t], logw, hess, False)
            if pamp != 0.0:
                for a in range(d):
                    arg = pphase[t]
                    for b in range(d):
                        arg += pfreq[a, b] * x[b]
                    s[a] += pamp * np.sin(arg)
            beta = betas[t - 1]
            root_alpha = np.sqrt(1.0 - beta)
            for a in range(d):
                x[a] = (x[a] + beta * s[a]) / root_alpha
            if t > 1:
                sigma = np.sqrt((1.0 - abar[t - 1]) / (1.0 - abar[t]) * beta)
                for a in range(d):
                    x[a] = x[a] + sigma * noises[big_t - t, c, a]
        for a in range(d):
            out[c, a] = x[a]
    return -1


def score(
    source: GmmSource,
    schedule: NoiseSchedule,
    x: np.ndarray,
    t: int,
    perturb: ScoreField | None = None,
) -> np.ndarray:
    """Gradient of the log density of marginal_at(source, schedule, t) at x."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    noised = marginal_at(source, schedule, t)
    covinv = np.linalg.inv(noised.covs)
    _, logdet = np.linalg.slogdet(noised.covs)
    diff = pts[:, None, :] - noised.means[None, :, :]
    qvec = np.einsum("kij,nkj->nki", covinv, diff)
    ll = np.log(noised.weights)[None, :] - 0.5 * (
        logdet[None, :] + np.einsum("nki,nki->nk", diff, qvec)
    )
    m = ll.max(axis=1, keepdims=True)
    resp = np.exp(ll - m)
    resp /= resp.sum(axis=1, keepdims=True)
    out = -np.einsum("nk,nki->ni", resp, qvec)
    if perturb is not None and perturb.amplitude != 0.0:
        out = out + perturb.amplitude * np.sin(
            pts @ perturb.freq.T + perturb.phase[t]
        )
    return out[0] if single else out


def score_hessian(
    source: GmmSource, schedule: NoiseSchedule, x: np.ndarray, t: int
) -> tuple[np.ndarray, np.ndarray]:
    """Score and hessian of the log noised density at a single point."""
    x = np.asarray(x, dtype=np.float64)
    noised = marginal_at(source, schedule, t)
    covinv = np.linalg.inv(noised.covs)
    _, logdet = np.linalg.slogdet(noised.covs)
    diff = x[None, :] - noised.means
    qvec = np.einsum("kij,kj->ki", covinv, diff)
    ll = np.log(noised.weights) - 0.5 * (logdet + np.einsum("ki,ki->k", diff, qvec))
    resp = np.exp(ll - ll.max())
    resp /= resp.sum()
    s = -resp @ qvec
    hess = (
        np.einsum("k,ki,kj->ij", resp, qvec, qvec)
        - np.einsum("k,kij->ij", resp, covinv)
        - np.outer(s, s)
    )
    return s, hess


def tweedie_x0(
    source: GmmSource, schedule: NoiseSchedule, x_t: np.ndarray, t: int
) -> np.ndarray:
    """Posterior mean E[X_0 | X_t = x_t], exact for the analytic score."""
    if t < 1:
        raise ValueError("tweedie_x0 requires t >= 1")
    ab = schedule.alpha_bar[t]
    return (x_t + (1.0 - ab) * score(source, schedule, x_t, t)) / np.sqrt(ab)


def ddpm_step(
    source: GmmSource,
    schedule: NoiseSchedule,
    x_t: np.ndarray,
    t: int,
    rng: np.random.Generator,
    perturb: ScoreField | None = None,
) -> np.ndarray:
    """One ancestral update x_t -> x_{t-1}; the t=1 step adds no noise."""
    if t < 1:
        raise ValueError("ddpm_step requires t >= 1")
    x_t = np.asarray(x_t, dtype=np.float64)
    beta = schedule.betas[t - 1]
    s = score(source, schedule, x_t, t, perturb)
    mean = (x_t + beta * s) / np.sqrt(1.0 - beta)
    if t == 1:
        return mean
    ab = schedule.alpha_bar
    sigma = np.sqrt((1.0 - ab[t - 1]) / (1.0 - ab[t]) * beta)
    return mean + sigma * rng.standard_normal(x_t.shape)


def sample_unconditional(
    source: GmmSource,
    schedule: NoiseSchedule,
    n: int,
    rng: np.random.Generator,
    perturb: ScoreField | None = None,
) -> np.ndarray:
    """Draw n samples by running the full reverse chain from N(0, I)."""
    d = source.dim
    big_t = schedule.steps
    x_init = rng.standard_normal((n, d))
    noises = rng.standard_normal((big_t - 1, n, d))
    means_t, covinv_t, logdet_t, logw = noised_tables(source, schedule)
    if perturb is None:
        pamp, pfreq, pphase = _null_field(d, big_t)
    else:
        pamp, pfreq, pphase = perturb.amplitude, perturb.freq, perturb.phase
    out = np.empty((n, d))
    _ancestral_chains(
        x_init, noises, schedule.betas, schedule.alpha_bar,
        means_t, covinv_t, logdet_t, logw, pamp, pfreq, pphase, out,
    )
    return out
