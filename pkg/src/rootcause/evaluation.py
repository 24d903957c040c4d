"""Simulation harness: generate models and cases, score them, aggregate root cause ranks."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .highdim import Blanket, HighdimConfig, rc_scores_highdim
from .numerics import CovMode
from .scoring import FIXED_THRESHOLDS, rc_scores, rc_scores_all_perms, squared_zscores
from .sem import (
    ERROR_FAMILIES,
    Dataset,
    Intervention,
    Sem,
    hub_dag,
    random_dag,
    random_polytree,
    rescale_to_target_variances,
    sample_interventional,
    sample_observational,
    shuffle_variables,
)

log = logging.getLogger(__name__)

METHODS = ("zscore", "rc", "rc_highdim", "rc_allperm")
DAG_KINDS = ("random", "hub", "polytree")


def root_cause_rank(scores, r: int) -> int:
    """1 + number of other variables scoring at least as high (ties count against ``r``)."""
    scores = np.asarray(scores, dtype=float)
    others = np.delete(scores, r)
    return int(1 + np.count_nonzero(others >= scores[r]))


def rank_cdf(ranks: Sequence[int], K: int) -> np.ndarray:
    if K < 1:
        raise ValueError("K must be at least 1")
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        return np.zeros(K)
    return np.array([np.mean(ranks <= k) for k in range(1, K + 1)])


@dataclass
class ExperimentConfig:
    dag_kind: str = "random"
    p: int = 20
    s: float = 0.4
    n: int = 200
    delta: float = 8.0
    error_family: str = "gaussian"
    n_matrices: int = 20
    cases_per_matrix: int = 50
    methods: tuple[str, ...] = ("zscore", "rc")
    eta: float = 0.0
    seed: int = 0
    # hub layout (p is derived from it when dag_kind == "hub")
    n_hubs: int = 4
    upper: int = 15
    lower: int = 10
    cross_in: int = 4
    cross_out: int = 3
    error_var_range: tuple[float, float] = (1.0, 2.0)
    target_var_range: tuple[float, float] = (10.0, 50.0)
    intercept_range: tuple[float, float] = (-10.0, 10.0)
    shuffle: bool = True
    v: int = 10
    thresholds: tuple[float, ...] | None = FIXED_THRESHOLDS
    cov: str = "auto"
    response_threshold: float = 1.5
    highdim_v: int = 10
    cv_folds: int = 5
    workers: int = 1

    def __post_init__(self):
        if self.dag_kind not in DAG_KINDS:
            raise ValueError(f"dag_kind must be one of {DAG_KINDS}")
        if self.error_family not in ERROR_FAMILIES:
            raise ValueError(f"error_family must be one of {ERROR_FAMILIES}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if min(self.n, self.n_matrices, self.cases_per_matrix, self.v) < 1 or self.p < 2:
            raise ValueError("counts must be positive")
        if not 0 <= self.eta < 1:
            raise ValueError("eta must lie in [0, 1)")
        if self.dag_kind == "hub":
            self.p = self.n_hubs * (1 + self.upper + self.lower)
        self.methods = tuple(self.methods)
        self.error_var_range = tuple(self.error_var_range)
        self.target_var_range = tuple(self.target_var_range)
        self.intercept_range = tuple(self.intercept_range)
        if self.thresholds is not None:
            self.thresholds = tuple(float(t) for t in self.thresholds)
        CovMode.parse(self.cov)

    @property
    def n_latent(self) -> int:
        return int(math.floor(self.eta * self.p))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        data = dict(data)
        if data.get("thresholds") == "auto":
            data["thresholds"] = None
        return cls(**data)


@dataclass
class RankResult:
    records: list[dict]
    ranks: dict[str, np.ndarray]
    cdf: dict[str, np.ndarray]
    failures: int = 0
    regenerated: int = 0

    def ranks_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["case_id", "matrix_id", "root_cause", "method", "rank"])
        for rec in self.records:
            w.writerow([rec["case_id"], rec["matrix_id"], rec["root_cause"], rec["method"], rec["rank"]])
        return buf.getvalue()

    def cdf_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "k", "value"])
        for method, values in self.cdf.items():
            for k, val in enumerate(values, start=1):
                w.writerow([method, k, repr(float(val))])
        return buf.getvalue()

    def write(self, out_dir: str | Path, config: ExperimentConfig | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ranks.csv").write_text(self.ranks_csv(), encoding="utf-8")
        (out / "cdf.csv").write_text(self.cdf_csv(), encoding="utf-8")
        if config is not None:
            (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


def build_sem(config: ExperimentConfig, rng: np.random.Generator) -> Sem:
    """One random model with targeted marginal variances, variables shuffled."""
    if config.dag_kind == "random":
        dag = random_dag(config.p, config.s, rng)
    elif config.dag_kind == "hub":
        dag = hub_dag(config.n_hubs, config.upper, config.lower, config.cross_in, config.cross_out, config.s, rng)
    else:
        dag = random_polytree(config.p, rng)
    p = dag.p
    b = rng.uniform(*config.intercept_range, size=p)
    err = rng.uniform(*config.error_var_range, size=p)
    sem = Sem(dag, b, err, (config.error_family,) * p)
    sem = rescale_to_target_variances(sem, rng.uniform(*config.target_var_range, size=p))
    if config.shuffle:
        sem, _ = shuffle_variables(sem, rng)
    return sem


@dataclass
class Case:
    case_id: int
    matrix_id: int
    root_cause: int  # index in the full model
    dataset: Dataset
    local_root: int  # index inside ``dataset``
    seed_seq: np.random.SeedSequence = field(repr=False)
    blankets: dict | None = field(default=None, repr=False)


def _child(seq: np.random.SeedSequence, key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seq.entropy, spawn_key=seq.spawn_key + (key,))


def _draw_cases(config: ExperimentConfig):
    """Yield (sem, cases) per matrix; all randomness comes from per-matrix/per-case streams."""
    root = np.random.SeedSequence(config.seed)
    regenerated = 0
    case_id = 0
    for m, mseq in enumerate(root.spawn(config.n_matrices)):
        gen_seq, root_seq, case_parent = mseq.spawn(3)
        rng = np.random.default_rng(gen_seq)
        sem = build_sem(config, rng)
        p = sem.p
        obs = sample_observational(sem, config.n, rng)
        pick = np.random.default_rng(root_seq)
        roots = pick.choice(p, size=config.cases_per_matrix, replace=p < config.cases_per_matrix)
        shared = {} if config.n_latent == 0 else None
        cases = []
        for c, cseq in enumerate(case_parent.spawn(config.cases_per_matrix)):
            crng = np.random.default_rng(_child(cseq, 0))
            r = int(roots[c])
            x = sample_interventional(sem, Intervention(r, config.delta), crng)
            keep = np.arange(p)
            if config.n_latent:
                drop = crng.choice(p, size=config.n_latent, replace=False)
                while r in drop:
                    regenerated += 1
                    log.info("case %d: root cause drawn as latent, redrawing", case_id)
                    drop = crng.choice(p, size=config.n_latent, replace=False)
                keep = np.setdiff1d(keep, drop)
            ds = Dataset(obs[:, keep], x[keep], tuple(f"X{j + 1}" for j in keep))
            local = int(np.searchsorted(keep, r))
            cases.append(Case(case_id, m, r, ds, local, cseq, shared))
            case_id += 1
        yield sem, cases, regenerated


def _method_scores(case: Case, config: ExperimentConfig) -> dict[str, np.ndarray]:
    # one stream per method, independent of which other methods run
    keys = {m: i for i, m in enumerate(METHODS)}
    cov = CovMode.parse(config.cov)
    out = {}
    for method in config.methods:
        seed = _child(case.seed_seq, 100 + keys[method])
        if method == "zscore":
            out[method] = squared_zscores(case.dataset)
        elif method == "rc":
            out[method] = rc_scores(case.dataset, config.v, config.thresholds, cov, np.random.default_rng(seed)).rc_scores
        elif method == "rc_allperm":
            out[method] = rc_scores_all_perms(case.dataset, cov).rc_scores
        else:
            hd = HighdimConfig(
                response_threshold=config.response_threshold,
                v=config.highdim_v,
                thresholds=config.thresholds,
                cv_folds=config.cv_folds,
                cov_mode=cov,
                # blanket estimates depend only on the matrix, so they can be shared across cases
                seed=int(_child(np.random.SeedSequence(config.seed), 10_000 + case.matrix_id).generate_state(1)[0])
                if case.blankets is not None
                else int(seed.generate_state(1)[0]),
            )
            out[method] = rc_scores_highdim(case.dataset, hd, case.blankets).rc_scores
    return out


def run_experiment(config: ExperimentConfig) -> RankResult:
    records: list[dict] = []
    failures = 0
    regenerated = 0

    def work(case: Case):
        try:
            return case, _method_scores(case, config), None
        except (ValueError, np.linalg.LinAlgError) as exc:
            return case, None, exc

    for _, cases, regenerated in _draw_cases(config):
        if config.workers > 1:
            with ThreadPoolExecutor(config.workers) as pool:
                results = list(pool.map(work, cases))
        else:
            results = [work(c) for c in cases]
        for case, scores, exc in results:
            if exc is not None:
                failures += 1
                log.warning("case %d failed: %s", case.case_id, exc)
                continue
            for method in config.methods:
                records.append({
                    "case_id": case.case_id,
                    "matrix_id": case.matrix_id,
                    "root_cause": case.root_cause,
                    "method": method,
                    "rank": root_cause_rank(scores[method], case.local_root),
                })
    K = config.p - config.n_latent
    ranks = {m: np.array([r["rank"] for r in records if r["method"] == m], dtype=int) for m in config.methods}
    cdf = {m: rank_cdf(ranks[m], K) for m in config.methods}
    if failures:
        log.warning("%d cases excluded after failures", failures)
    return RankResult(records, ranks, cdf, failures, regenerated)
