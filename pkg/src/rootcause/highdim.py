"""High-dimensional root cause scores via node-wise Markov blanket estimation.

Each response variable is scored inside the subsystem formed by itself and
its Lasso-estimated Markov blanket, which avoids estimating the full
covariance matrix when ``p`` is comparable to or larger than ``n``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import MutableMapping, Sequence

import numpy as np

from .lasso import cv_lasso
from .numerics import CovMode
from .scoring import (
    FIXED_THRESHOLDS,
    ScoreReport,
    assemble_report,
    discover,
    generate_permutations,
    squared_zscores,
)
from .sem import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HighdimConfig:
    response_threshold: float = 1.5
    all_responses: bool = False
    v: int = 10
    thresholds: tuple[float, ...] | None = FIXED_THRESHOLDS
    cv_folds: int = 5
    n_lambdas: int = 100
    lambda_eps: float = 1e-3
    cov_mode: CovMode = CovMode()
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.response_threshold >= 0:
            raise ValueError("response_threshold must be nonnegative")
        if self.v < 1:
            raise ValueError("v must be at least 1")


@dataclass(frozen=True)
class Blanket:
    members: tuple[int, ...]
    lam: float


@dataclass
class ResponseRecord:
    variable: int
    status: str
    blanket_size: int = 0
    lam: float | None = None
    score: float | None = None
    n_permutations: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self, names: Sequence[str]) -> dict:
        score = self.score
        if score is not None and math.isinf(score):
            score = "inf"
        return {
            "variable": names[self.variable],
            "index": self.variable,
            "status": self.status,
            "blanket_size": self.blanket_size,
            "lambda": self.lam,
            "score": score,
            "n_permutations": self.n_permutations,
        }


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def estimate_blanket(observations: np.ndarray, i: int, config: HighdimConfig) -> Blanket:
    """Cross-validated Lasso of column ``i`` on the remaining columns."""
    p = observations.shape[1]
    others = np.delete(np.arange(p), i)
    fit = cv_lasso(
        observations[:, others], observations[:, i],
        folds=config.cv_folds, n_lambdas=config.n_lambdas, eps=config.lambda_eps,
        rng=_stream(config.seed, i, 0),
    )
    return Blanket(tuple(others[fit.support].tolist()), fit.lam)


def score_response(
    dataset: Dataset, i: int, blanket: Blanket, config: HighdimConfig
) -> tuple[ResponseRecord, float | None]:
    """Score variable ``i`` within its subsystem; also returns the largest finite gap seen."""
    rec = ResponseRecord(i, "candidate", len(blanket.members), blanket.lam)
    if not blanket.members:
        rec.status = "empty-blanket"
        return rec, None
    cols = np.array(sorted({i, *blanket.members}))
    sub = dataset.subset(cols)
    local = int(np.searchsorted(cols, i))
    z = squared_zscores(sub)
    perms = generate_permutations(z, config.v, config.thresholds, _stream(config.seed, i, 1))
    rec.n_permutations = len(perms)
    if not perms:
        rec.status = "no-permutations"
        return rec, None
    scores, _, _ = discover(sub, perms, config.cov_mode, z)
    if scores.gaps.size == 0:
        rec.status = "numerical-failure"
        return rec, None
    finite = scores.gaps[np.isfinite(scores.gaps)]
    largest = float(finite.max()) if finite.size else None
    mine = scores.gaps[scores.winners == local]
    if mine.size == 0:
        rec.status = "not-candidate"
        return rec, largest
    rec.score = float(mine.max())
    return rec, largest


def select_responses(zscores_sq: np.ndarray, config: HighdimConfig) -> list[int]:
    if config.all_responses:
        return list(range(zscores_sq.size))
    return np.flatnonzero(zscores_sq > config.response_threshold).tolist()


def rc_scores_highdim(
    dataset: Dataset,
    config: HighdimConfig = HighdimConfig(),
    blankets: MutableMapping[int, Blanket] | None = None,
) -> ScoreReport:
    """RC-scores with per-response subsystems.

    ``blankets`` may carry estimates from an earlier call on the same
    observational data; new estimates are added to it.  Per-response details
    end up in ``report.details``.
    """
    z = squared_zscores(dataset)
    responses = select_responses(z, config)
    cache = {} if blankets is None else blankets

    def work(i: int):
        try:
            if i not in cache:
                cache[i] = estimate_blanket(dataset.observations, i, config)
            return score_response(dataset, i, cache[i], config)
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.warning("response %s skipped: %s", dataset.names[i], exc)
            return ResponseRecord(i, "numerical-failure", extra={"error": str(exc)}), None

    if config.workers > 1 and len(responses) > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(work, responses))
    else:
        results = [work(i) for i in responses]

    candidates: dict[int, float] = {}
    largest: float | None = None
    for rec, big in results:
        if rec.status != "candidate":
            log.info("response %s: %s", dataset.names[rec.variable], rec.status)
        if rec.score is not None:
            candidates[rec.variable] = rec.score
        if big is not None:
            largest = big if largest is None else max(largest, big)

    report = assemble_report(
        dataset.names, z, candidates, largest,
        n_permutations=sum(r.n_permutations for r, _ in results),
        cov_mode=str(config.cov_mode),
    )
    report.details = {
        "responses": [r.to_dict(dataset.names) for r, _ in results],
        "n_responses": len(responses),
        "n_candidates": len(candidates),
        "skipped": sum(r.status in ("empty-blanket", "numerical-failure", "no-permutations") for r, _ in results),
        "c_min": report.c_min,
    }
    return report
