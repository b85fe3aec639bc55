"""Metrics for trained models and exact divergences for small distributions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rbm import RbmParams, free_energy
from .targets import TargetModel, effective_energy


def _samples(x) -> np.ndarray:
    return x.samples if hasattr(x, "samples") else np.asarray(x)


def r_theta(params: RbmParams, model: TargetModel, val) -> float:
    """Mean over all ordered pairs of ``(dF - dE_target)^2``.

    Equal to twice the population variance of ``F - E_target`` over ``val``.
    """
    x = _samples(val)
    if len(x) == 0:
        raise ValueError("empty validation set")
    r = np.atleast_1d(free_energy(params, x) - effective_energy(model, x))
    return float(2.0 * np.mean((r - r.mean()) ** 2))


@dataclass(frozen=True)
class EmpiricalEnergyDist:
    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=np.float64).ravel())
        if not np.all(np.isfinite(v)):
            raise ValueError("energies must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def of(cls, model: TargetModel, samples) -> "EmpiricalEnergyDist":
        return cls(np.atleast_1d(effective_energy(model, _samples(samples))))

    def __len__(self) -> int:
        return self.values.size


def wasserstein_1d(a, b) -> float:
    """Exact ``integral |F_a - F_b|`` between two empirical CDFs."""
    u = a.values if isinstance(a, EmpiricalEnergyDist) else np.sort(np.asarray(a, dtype=np.float64).ravel())
    v = b.values if isinstance(b, EmpiricalEnergyDist) else np.sort(np.asarray(b, dtype=np.float64).ravel())
    if u.size == 0 or v.size == 0:
        raise ValueError("wasserstein_1d needs two non-empty samples")
    grid = np.concatenate([u, v])
    grid.sort(kind="mergesort")
    widths = np.diff(grid)
    cdf_u = np.searchsorted(u, grid[:-1], side="right") / u.size
    cdf_v = np.searchsorted(v, grid[:-1], side="right") / v.size
    return float(np.sum(np.abs(cdf_u - cdf_v) * widths))


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (2, Nx), rows orthonormal
    explained_variance: np.ndarray


def fit_pca(train, n_components: int = 2) -> PcaModel:
    """Top principal axes of the bit matrix from a covariance eigendecomposition.

    Each axis is signed so its largest-magnitude entry is positive.
    """
    x = _samples(train).astype(np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError(f"PCA needs at least 3 samples, got {x.shape[0] if x.ndim == 2 else 0}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    tol = max(evals[0], 0.0) * 1e-12 + 1e-15
    nonzero = int(np.sum(evals > tol))
    if nonzero < n_components:
        raise ValueError(f"data has only {nonzero} direction(s) of nonzero variance; need {n_components}")
    comps = evecs[:, :n_components].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, comps, evals[:n_components].copy())


def project(pca: PcaModel, samples) -> np.ndarray:
    """Coordinates of ``samples`` along the principal axes, shape ``(K, 2)``."""
    x = np.atleast_2d(_samples(samples)).astype(np.float64)
    if x.shape[1] != pca.mean.size:
        raise ValueError(f"samples have Nx={x.shape[1]}, PCA was fit on {pca.mean.size}")
    return (x - pca.mean) @ pca.components.T


def hamming_histogram(samples, k: int, rng: np.random.Generator) -> np.ndarray:
    """Normalised Hamming distances of all ``k(k-1)/2`` pairs of a random size-``k`` subset."""
    x = _samples(samples)
    if not 2 <= k <= len(x):
        raise ValueError(f"k={k} must be between 2 and the sample count {len(x)}")
    sub = x[rng.choice(len(x), size=k, replace=False)].astype(np.int32)
    # d(a,b) = |a| + |b| - 2 a.b on bits
    ones = sub.sum(axis=1)
    d = ones[:, None] + ones[None, :] - 2 * (sub @ sub.T)
    iu, ju = np.triu_indices(k, k=1)
    return d[iu, ju] / x.shape[1]


@dataclass(frozen=True)
class ExactDivergences:
    kl_fwd: float
    kl_rev: float
    kl2_fwd: float
    kl2_rev: float
    ratio_div: float
    mh_acceptance_expectation: float

    @property
    def decomposition(self) -> float:
        """``2 KL(p||q) KL(q||p) + KL2(p||q) + KL2(q||p)``."""
        return 2.0 * self.kl_fwd * self.kl_rev + self.kl2_fwd + self.kl2_rev


def exact_divergences(p, q, check: bool = True) -> ExactDivergences:
    """Divergences between a target ``p`` and a model ``q`` by direct summation.

    Forward quantities take expectations under ``p``.  The ratio divergence
    and the acceptance expectation are double sums over ``x' ~ p, x ~ q`` of
    ``log(p(x') q(x) / (q(x') p(x)))``.  Entries must be strictly positive.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v <= 0):
            raise ValueError(f"{name} has zero or negative entries; log ratios are undefined there")
        if abs(v.sum() - 1.0) > 1e-12:
            raise ValueError(f"{name} sums to {v.sum()!r}, not 1")
    lr = np.log(p) - np.log(q)
    kl_fwd = float(np.sum(p * lr))
    kl_rev = float(np.sum(q * -lr))
    kl2_fwd = float(np.sum(p * lr**2))
    kl2_rev = float(np.sum(q * lr**2))
    # log ratio[x', x] = lr[x'] - lr[x]
    pair = lr[:, None] - lr[None, :]
    w = p[:, None] * q[None, :]
    ratio_div = float(np.sum(w * pair**2))
    accept = float(np.sum(w * np.exp(np.minimum(pair, 0.0))))
    out = ExactDivergences(kl_fwd, kl_rev, kl2_fwd, kl2_rev, ratio_div, accept)
    if check and not np.isclose(out.decomposition, ratio_div, rtol=1e-9, atol=1e-12):
        raise ArithmeticError(f"decomposition mismatch {out.decomposition!r} vs {ratio_div!r}")
    return out


def mean_stderr(values) -> tuple[float, float]:
    """Mean and ``sample std / sqrt(n)``; stderr is NaN for a single value."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se
