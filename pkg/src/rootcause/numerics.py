"""Dense kernels: Cholesky with jitter fallback, triangular solves, moments, covariance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

JITTER_SCALE = 1e-8
JITTER_ATTEMPTS = 10
DEFAULT_SHRINKAGE = 0.1


class NotPositiveDefinite(np.linalg.LinAlgError):
    def __init__(self, pivot: int, jitter: float):
        super().__init__(f"matrix not positive definite (pivot {pivot}, jitter up to {jitter:.3g})")
        self.pivot = pivot
        self.jitter = jitter


class DegenerateColumnError(ValueError):
    def __init__(self, columns, names=None):
        labels = [names[j] for j in columns] if names is not None else list(columns)
        super().__init__(f"zero sample variance in column(s) {labels}")
        self.columns = list(columns)


@dataclass(frozen=True)
class LowerTriangular:
    """Cholesky factor with positive diagonal; ``jitter`` is the ridge that was added."""

    matrix: np.ndarray
    jitter: float = 0.0

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


def _potrf(a: np.ndarray) -> tuple[np.ndarray, int]:
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return c, info


def cholesky_lower(sigma: np.ndarray) -> LowerTriangular:
    """Cholesky factor ``L`` with ``L L^T = sigma (+ jitter I)``.

    On a non-positive pivot a ridge ``lam * I`` is added, starting at
    ``1e-8 * mean(diag)`` and doubling, for at most 10 attempts.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {sigma.shape}")
    c, info = _potrf(sigma)
    if info == 0:
        return LowerTriangular(c)
    lam = JITTER_SCALE * float(np.mean(np.diag(sigma)))
    if not lam > 0:
        lam = JITTER_SCALE
    eye = np.eye(sigma.shape[0])
    for _ in range(JITTER_ATTEMPTS):
        c, info = _potrf(sigma + lam * eye)
        if info == 0:
            return LowerTriangular(c, lam)
        lam *= 2
    raise NotPositiveDefinite(info - 1, lam / 2)


def forward_solve(L: LowerTriangular | np.ndarray, y: np.ndarray) -> np.ndarray:
    m = L.matrix if isinstance(L, LowerTriangular) else L
    return solve_triangular(m, y, lower=True, check_finite=False)


def batched_forward_solve(L: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve ``L[b] x[b] = y[b]`` for a stack of lower-triangular matrices."""
    m, p = y.shape
    x = np.empty_like(y)
    for i in range(p):
        acc = np.einsum("bj,bj->b", L[:, i, :i], x[:, :i]) if i else 0.0
        x[:, i] = (y[:, i] - acc) / L[:, i, i]
    return x


def sample_moments(data: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column means, standard deviations (1/(n-1)) and a mask of zero-variance columns."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("need an n x p matrix with n >= 2")
    mean = data.mean(axis=0)
    sd = data.std(axis=0, ddof=1)
    return mean, sd, sd == 0


@dataclass(frozen=True)
class CovMode:
    """Covariance estimator choice: ``sample``, ``shrunk`` (with alpha) or ``auto``."""

    kind: str = "auto"
    alpha: float = DEFAULT_SHRINKAGE

    def __post_init__(self):
        if self.kind not in ("auto", "sample", "shrunk"):
            raise ValueError(f"unknown covariance mode {self.kind!r}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"shrinkage intensity must lie in [0, 1], got {self.alpha}")

    @classmethod
    def parse(cls, text: str) -> "CovMode":
        text = text.strip().lower()
        if text in ("auto", "sample"):
            return cls(text)
        if text == "shrunk":
            return cls("shrunk")
        if text.startswith("shrunk:"):
            return cls("shrunk", float(text.split(":", 1)[1]))
        raise ValueError(f"cannot parse covariance mode {text!r}")

    def resolve(self, n: int, p: int) -> "CovMode":
        if self.kind != "auto":
            return self
        return CovMode("sample") if n > p else CovMode("shrunk", self.alpha)

    def __str__(self) -> str:
        return f"shrunk:{self.alpha:g}" if self.kind == "shrunk" else self.kind


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    mode: CovMode


def covariance(data: np.ndarray, mode: CovMode | str = CovMode("sample")) -> CovarianceEstimate:
    """Unbiased sample covariance, optionally shrunk towards ``trace/p * I``."""
    if isinstance(mode, str):
        mode = CovMode.parse(mode)
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    if n < 2:
        raise ValueError("need at least two samples")
    mode = mode.resolve(n, p)
    centred = data - data.mean(axis=0)
    s = centred.T @ centred / (n - 1)
    s = (s + s.T) / 2
    if mode.kind == "shrunk":
        mu = np.trace(s) / p
        s = (1 - mode.alpha) * s
        s[np.diag_indices(p)] += mode.alpha * mu
    return CovarianceEstimate(s, mode)
