"""Squared z-scores and permutation/Cholesky root cause scores.

For a permutation ``pi`` of the variables, the centred interventional case is
whitened with the Cholesky factor of the permuted observational covariance,
``xi(pi) = L_pi^{-1} (x_case[pi] - mean[pi])``.  When ``pi`` puts the parents of
the root cause before it and its real descendants after it, ``xi(pi)`` has a
single nonzero entry located at the root cause.  The gap between the two
largest ``|xi|`` entries measures how close a permutation comes to that pattern.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .numerics import (
    CovMode,
    DegenerateColumnError,
    LowerTriangular,
    NotPositiveDefinite,
    batched_forward_solve,
    cholesky_lower,
    covariance,
    forward_solve,
    sample_moments,
)
from .sem import Dataset, Intervention, Sem, WeightedDag, real_descendants

log = logging.getLogger(__name__)

# thresholds 0.1, 0.3, ..., 4.9 on the squared z-scores
FIXED_THRESHOLDS = tuple(round(0.1 + 0.2 * k, 10) for k in range(25))
MAX_ALL_PERMS_P = 8
_CHUNK_ENTRIES = 4_000_000


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class Permutation:
    """``forward[i]`` is the variable placed at position ``i``."""

    forward: np.ndarray
    inverse: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        fwd = np.array(self.forward, dtype=np.int64)
        if sorted(fwd.tolist()) != list(range(fwd.size)):
            raise ValueError(f"not a permutation: {fwd.tolist()}")
        inv = np.empty_like(fwd)
        inv[fwd] = np.arange(fwd.size)
        fwd.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "inverse", inv)

    @classmethod
    def identity(cls, p: int) -> "Permutation":
        return cls(np.arange(p))

    def __len__(self) -> int:
        return self.forward.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Permutation) and np.array_equal(self.forward, other.forward)

    def __hash__(self) -> int:
        return hash(self.forward.tobytes())

    def position(self, variable: int) -> int:
        return int(self.inverse[variable])

    def tolist(self) -> list[int]:
        return self.forward.tolist()


@dataclass(frozen=True)
class GapScore:
    value: float  # math.inf for a 1-sparse xi
    winner: int

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)


def _gaps(abs_xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise relative gap between the two largest entries and the argmax position."""
    top = np.sort(abs_xi, axis=1)
    first, second = top[:, -1], top[:, -2]
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(second > 0, (first - second) / second, np.where(first > 0, np.inf, 0.0))
    return gap, np.argmax(abs_xi, axis=1)


def gap_score(xi: np.ndarray, perm: Permutation) -> GapScore:
    xi = np.asarray(xi, dtype=float)
    if xi.size < 2:
        raise ValueError("need at least two entries")
    gap, pos = _gaps(np.abs(xi)[None, :])
    return GapScore(float(gap[0]), int(perm.forward[pos[0]]))


def squared_zscores(dataset: Dataset) -> np.ndarray:
    mean, sd, degenerate = sample_moments(dataset.observations)
    if degenerate.any():
        raise DegenerateColumnError(np.flatnonzero(degenerate).tolist(), dataset.names)
    return ((dataset.case - mean) / sd) ** 2


def xi_hat(L: LowerTriangular | np.ndarray, mean: np.ndarray, case: np.ndarray) -> np.ndarray:
    """Whitened shift of an (already permuted) case."""
    return forward_solve(L, np.asarray(case, dtype=float) - np.asarray(mean, dtype=float))


def generate_permutations(
    zscores_sq: np.ndarray,
    v: int,
    thresholds: Sequence[float] | None = None,
    rng=None,
) -> list[Permutation]:
    """Candidate orderings built from aberrant sets ``D = {j : z2_j >= t}``.

    For every threshold ``t`` (default: each observed squared z-score, in
    variable order), every ``d`` in ``D`` and each of ``v`` repeats, emit
    ``(shuffled rest, d, shuffled D minus d)``.  Repeated threshold values
    give the same ``D`` and are visited once; exact duplicate permutations are
    dropped, keeping the first occurrence.
    """
    if v < 1:
        raise ValueError("v must be at least 1")
    rng = as_rng(rng)
    z = np.asarray(zscores_sq, dtype=float)
    p = z.size
    if thresholds is None:
        thresholds = z
    # dict keeps first-seen order
    thresholds = list(dict.fromkeys(float(t) for t in thresholds))
    seen: set[bytes] = set()
    out: list[Permutation] = []
    for t in thresholds:
        aberrant = np.flatnonzero(z >= t)
        if aberrant.size == 0:
            continue
        rest = np.flatnonzero(z < t)
        for d in aberrant:
            others = aberrant[aberrant != d]
            for _ in range(v):
                fwd = np.concatenate([rng.permutation(rest), [d], rng.permutation(others)]).astype(np.int64)
                key = fwd.tobytes()
                if key in seen:
                    continue
                seen.add(key)
                out.append(Permutation(fwd))
    assert all(len(pi) == p for pi in out)
    return out


def _factor_stack(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factors of a stack; rows that cannot be factored are flagged."""
    ok = np.ones(stack.shape[0], dtype=bool)
    try:
        return np.linalg.cholesky(stack), ok
    except np.linalg.LinAlgError:
        pass
    factors = np.zeros_like(stack)
    for b, sigma in enumerate(stack):
        try:
            factors[b] = cholesky_lower(sigma).matrix
        except NotPositiveDefinite:
            ok[b] = False
            factors[b] = np.eye(sigma.shape[0])
    return factors, ok


@dataclass
class PermutationScores:
    """Per-permutation gap statistic and nominated variable."""

    orders: np.ndarray  # m x p
    gaps: np.ndarray
    winners: np.ndarray
    failed: int = 0


def score_permutations(
    cov: np.ndarray,
    mean: np.ndarray,
    case: np.ndarray,
    perms: Sequence[Permutation] | np.ndarray,
) -> PermutationScores:
    """Evaluate the gap statistic for every permutation of one covariance estimate."""
    if isinstance(perms, np.ndarray):
        orders = perms.astype(np.int64, copy=False)
    else:
        orders = np.array([pi.forward for pi in perms], dtype=np.int64).reshape(len(perms), -1)
    m, p = orders.shape
    shift = np.asarray(case, dtype=float) - np.asarray(mean, dtype=float)
    gaps = np.empty(m)
    winners = np.empty(m, dtype=np.int64)
    keep = np.ones(m, dtype=bool)
    chunk = max(1, _CHUNK_ENTRIES // max(1, p * p))
    for lo in range(0, m, chunk):
        idx = orders[lo : lo + chunk]
        stack = cov[idx[:, :, None], idx[:, None, :]]
        L, ok = _factor_stack(stack)
        xi = batched_forward_solve(L, shift[idx])
        g, pos = _gaps(np.abs(xi))
        gaps[lo : lo + chunk] = g
        winners[lo : lo + chunk] = idx[np.arange(idx.shape[0]), pos]
        keep[lo : lo + chunk] = ok
    failed = int(m - keep.sum())
    if failed:
        log.warning("%d of %d permutations skipped: covariance not positive definite", failed, m)
    return PermutationScores(orders[keep], gaps[keep], winners[keep], failed)


def candidate_scores(scores: PermutationScores, p: int) -> dict[int, float]:
    """Largest gap among the permutations nominating each variable."""
    best = np.full(p, -1.0)
    np.maximum.at(best, scores.winners, scores.gaps)
    return {int(i): float(best[i]) for i in np.flatnonzero(best >= 0)}


@dataclass(frozen=True)
class Fallback:
    c_min: float
    weights: np.ndarray


def fallback_scores(zscores_sq: np.ndarray, candidates: dict[int, float], largest_finite: float | None) -> Fallback:
    """Scores for non-candidates: z-score weights times half the smallest candidate score."""
    p = zscores_sq.size
    outside = np.array([i for i in range(p) if i not in candidates], dtype=int)
    weights = np.zeros(p)
    if candidates:
        finite = [c for c in candidates.values() if math.isfinite(c)]
        if finite:
            c_min = min(finite) / 2
        else:
            c_min = (largest_finite if largest_finite is not None else 1.0) / 2
    else:
        c_min = 1.0 / 2
    if outside.size:
        total = float(zscores_sq[outside].sum())
        if total > 0:
            weights[outside] = zscores_sq[outside] / total
        else:
            weights[outside] = 1.0 / outside.size
    return Fallback(c_min, weights)


@dataclass
class ScoreReport:
    names: tuple[str, ...]
    zscores_sq: np.ndarray
    rc_scores: np.ndarray
    candidates: np.ndarray  # boolean mask
    fallback_weights: np.ndarray
    c_min: float
    n_permutations: int = 0
    cov_mode: str = ""
    root_cause: int | None = None
    details: dict | None = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return self.rc_scores.size

    @property
    def candidate_set(self) -> list[int]:
        return np.flatnonzero(self.candidates).tolist()

    def ranking(self) -> list[int]:
        """Variables sorted by decreasing RC-score (stable on ties)."""
        return sorted(range(self.p), key=lambda j: -self.rc_scores[j])

    def rank_of(self, r: int | None = None) -> int:
        from .evaluation import root_cause_rank

        r = self.root_cause if r is None else r
        if r is None:
            raise ValueError("no root cause given")
        return root_cause_rank(self.rc_scores, r)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "zscore_sq", "rc_score", "in_candidate_set"])
        for j in range(self.p):
            w.writerow([
                self.names[j],
                repr(float(self.zscores_sq[j])),
                repr(float(self.rc_scores[j])),
                "true" if self.candidates[j] else "false",
            ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ScoreReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["variable", "zscore_sq", "rc_score", "in_candidate_set"]:
            raise ValueError("not a score report")
        body = rows[1:]
        names = tuple(r[0] for r in body)
        z = np.array([float(r[1]) for r in body])
        c = np.array([float(r[2]) for r in body])
        cand = np.array([r[3] == "true" for r in body])
        return cls(names, z, c, cand, np.zeros(len(body)), math.nan)


def assemble_report(
    names: Sequence[str],
    zscores_sq: np.ndarray,
    candidates: dict[int, float],
    largest_finite: float | None,
    **extra,
) -> ScoreReport:
    p = zscores_sq.size
    fb = fallback_scores(zscores_sq, candidates, largest_finite)
    scores = fb.weights * fb.c_min
    mask = np.zeros(p, dtype=bool)
    for i, c in candidates.items():
        scores[i] = c
        mask[i] = True
    return ScoreReport(tuple(names), zscores_sq, scores, mask, fb.weights, fb.c_min, **extra)


def _largest_finite(gaps: np.ndarray) -> float | None:
    finite = gaps[np.isfinite(gaps)]
    return float(finite.max()) if finite.size else None


def discover(
    dataset: Dataset,
    perms: Sequence[Permutation] | np.ndarray,
    cov_mode: CovMode = CovMode(),
    zscores_sq: np.ndarray | None = None,
) -> tuple[PermutationScores, np.ndarray, CovMode]:
    """Score a fixed permutation set against one covariance estimate of ``dataset``."""
    z = squared_zscores(dataset) if zscores_sq is None else zscores_sq
    est = covariance(dataset.observations, cov_mode)
    mean = dataset.observations.mean(axis=0)
    return score_permutations(est.matrix, mean, dataset.case, perms), z, est.mode


def rc_scores(
    dataset: Dataset,
    v: int = 10,
    thresholds: Sequence[float] | None = None,
    cov_mode: CovMode = CovMode(),
    rng=None,
) -> ScoreReport:
    """RC-scores from permutations generated out of the squared z-scores."""
    z = squared_zscores(dataset)
    perms = generate_permutations(z, v, thresholds, rng)
    scores, z, mode = discover(dataset, perms, cov_mode, z)
    cands = candidate_scores(scores, dataset.p)
    return assemble_report(
        dataset.names, z, cands, _largest_finite(scores.gaps),
        n_permutations=len(perms), cov_mode=str(mode),
    )


def all_permutations(p: int) -> np.ndarray:
    if p > MAX_ALL_PERMS_P:
        raise ValueError(f"refusing to enumerate {p}! permutations (limit p <= {MAX_ALL_PERMS_P})")
    return np.array(list(itertools.permutations(range(p))), dtype=np.int64).reshape(-1, p)


def rc_scores_all_perms(dataset: Dataset, cov_mode: CovMode = CovMode()) -> ScoreReport:
    orders = all_permutations(dataset.p)
    scores, z, mode = discover(dataset, orders, cov_mode)
    cands = candidate_scores(scores, dataset.p)
    return assemble_report(
        dataset.names, z, cands, _largest_finite(scores.gaps),
        n_permutations=orders.shape[0], cov_mode=str(mode),
    )


def population_xi(sem: Sem, perm: Permutation, iv: Intervention) -> np.ndarray:
    """Whitened mean shift computed from the exact model moments."""
    t = sem.total_effects()
    cov = (t * sem.error_variances) @ t.T
    shift = t @ iv.vector(sem.p)
    order = perm.forward
    L = cholesky_lower(cov[np.ix_(order, order)])
    return forward_solve(L, shift[order])


def population_xi_batch(sem: Sem, orders: np.ndarray, iv: Intervention) -> np.ndarray:
    t = sem.total_effects()
    cov = (t * sem.error_variances) @ t.T
    shift = t @ iv.vector(sem.p)
    stack = cov[orders[:, :, None], orders[:, None, :]]
    return batched_forward_solve(np.linalg.cholesky(stack), shift[orders])


def is_sufficient(dag: WeightedDag, perm: Permutation, r: int, rde: Iterable[int] | None = None) -> bool:
    """Parents of ``r`` precede it and its real descendants follow it."""
    pos = perm.inverse
    rde = real_descendants(dag, r) if rde is None else rde
    before = all(pos[k] < pos[r] for k in dag.parents(r))
    after = all(pos[k] > pos[r] for k in rde)
    return bool(before and after)
