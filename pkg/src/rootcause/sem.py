"""Linear structural equation models: generation, sampling and graph queries.

Variables are indexed from 0. ``B[j, k]`` is the weight of the edge ``k -> j``,
so a model reads ``X = b + B X + eps`` (plus a mean shift for the
interventional sample).
"""
from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GAUSSIAN = "gaussian"
UNIFORM = "uniform"
ERROR_FAMILIES = (GAUSSIAN, UNIFORM)

ZERO_TOL = 1e-12


def numerical_zero(matrix: np.ndarray) -> float:
    """Threshold below which entries of ``matrix`` count as zero."""
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    return ZERO_TOL * (1.0 + scale)


@dataclass(frozen=True)
class WeightedDag:
    weights: np.ndarray
    causal_order: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        order = np.array(self.causal_order, dtype=int)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weights must be square, got shape {w.shape}")
        p = w.shape[0]
        if sorted(order.tolist()) != list(range(p)):
            raise ValueError("causal_order is not a permutation of the variables")
        ordered = w[np.ix_(order, order)]
        if np.any(np.triu(ordered) != 0):
            raise ValueError("weights are not strictly lower-triangular under causal_order")
        w.setflags(write=False)
        order.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "causal_order", order)

    @property
    def p(self) -> int:
        return self.weights.shape[0]

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.weights[j] != 0)

    def children(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.weights[:, j] != 0)

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.weights))

    def permuted(self, perm: Sequence[int]) -> "WeightedDag":
        """Relabel so that new variable ``i`` is old variable ``perm[i]``."""
        perm = np.asarray(perm, dtype=int)
        inv = np.argsort(perm)
        return WeightedDag(self.weights[np.ix_(perm, perm)], inv[self.causal_order])


@dataclass(frozen=True)
class Sem:
    dag: WeightedDag
    intercept: np.ndarray
    error_variances: np.ndarray
    error_family: tuple[str, ...] = field(default=())

    def __post_init__(self):
        p = self.dag.p
        b = np.array(self.intercept, dtype=float)
        var = np.array(self.error_variances, dtype=float)
        fam = tuple(self.error_family) or (GAUSSIAN,) * p
        if b.shape != (p,) or var.shape != (p,) or len(fam) != p:
            raise ValueError("intercept, error_variances and error_family must have length p")
        if np.any(~(var > 0)):
            raise ValueError("error variances must be strictly positive")
        bad = set(fam) - set(ERROR_FAMILIES)
        if bad:
            raise ValueError(f"unknown error family {sorted(bad)}")
        object.__setattr__(self, "intercept", b)
        object.__setattr__(self, "error_variances", var)
        object.__setattr__(self, "error_family", fam)

    @property
    def p(self) -> int:
        return self.dag.p

    def total_effects(self) -> np.ndarray:
        return total_effects(self.dag)

    def mean(self) -> np.ndarray:
        return self.total_effects() @ self.intercept

    def covariance(self) -> np.ndarray:
        t = self.total_effects()
        return (t * self.error_variances) @ t.T

    def permuted(self, perm: Sequence[int]) -> "Sem":
        perm = np.asarray(perm, dtype=int)
        return Sem(
            self.dag.permuted(perm),
            self.intercept[perm],
            self.error_variances[perm],
            tuple(self.error_family[i] for i in perm),
        )

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "b": self.intercept.tolist(),
            "B": self.dag.weights.tolist(),
            "error_family": list(self.error_family),
            "error_variances": self.error_variances.tolist(),
            "causal_order": self.dag.causal_order.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Sem":
        weights = np.asarray(data["B"], dtype=float)
        if "p" in data and weights.shape != (data["p"], data["p"]):
            raise ValueError(f"B has shape {weights.shape}, expected p={data['p']}")
        for key in ("b", "B", "error_variances"):
            if not np.all(np.isfinite(np.asarray(data[key], dtype=float))):
                raise ValueError(f"non-finite entry in {key!r}")
        return cls(
            WeightedDag(weights, data["causal_order"]),
            data["b"],
            data["error_variances"],
            tuple(data.get("error_family") or ()),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Sem":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Intervention:
    target: int
    shift: float

    def vector(self, p: int) -> np.ndarray:
        if not 0 <= self.target < p:
            raise ValueError(f"intervention target {self.target} outside 0..{p - 1}")
        delta = np.zeros(p)
        delta[self.target] = self.shift
        return delta


@dataclass(frozen=True)
class Dataset:
    """Observational reference samples plus one interventional case."""

    observations: np.ndarray
    case: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        case = np.array(self.case, dtype=float).ravel()
        if obs.ndim != 2:
            raise ValueError("observations must be a 2-d matrix")
        n, p = obs.shape
        if n < 2:
            raise ValueError(f"need at least 2 observations, got {n}")
        if case.shape != (p,):
            raise ValueError(f"case has length {case.size}, observations have {p} columns")
        if not np.all(np.isfinite(obs)) or not np.all(np.isfinite(case)):
            raise ValueError("non-finite entries in dataset")
        names = tuple(self.names) or tuple(f"X{j + 1}" for j in range(p))
        if len(names) != p:
            raise ValueError("names must have one label per variable")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "case", case)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def p(self) -> int:
        return self.observations.shape[1]

    def subset(self, columns: Sequence[int]) -> "Dataset":
        columns = np.asarray(columns, dtype=int)
        return Dataset(
            self.observations[:, columns],
            self.case[columns],
            tuple(self.names[j] for j in columns),
        )


# ---------------------------------------------------------------------------
# generators


def random_dag(p: int, s: float, rng: np.random.Generator) -> WeightedDag:
    """Lower-triangular DAG; every possible edge present with probability ``s``."""
    if p < 1:
        raise ValueError("p must be positive")
    if not 0 <= s <= 1:
        raise ValueError(f"sparsity must lie in [0, 1], got {s}")
    mask = np.tril(rng.random((p, p)) < s, k=-1)
    weights = rng.uniform(-1.0, 1.0, size=(p, p))
    # U(-1, 1) can return exactly -1.0 but never 0 in practice; keep edges nonzero anyway
    weights[weights == 0] = 1.0
    return WeightedDag(np.where(mask, weights, 0.0), np.arange(p))


def random_polytree(p: int, rng: np.random.Generator) -> WeightedDag:
    """Random directed tree: node ``i > 0`` gets one parent drawn from ``0..i-1``."""
    weights = np.zeros((p, p))
    for i in range(1, p):
        w = rng.uniform(-1.0, 1.0)
        weights[i, rng.integers(i)] = w if w != 0 else 1.0
    return WeightedDag(weights, np.arange(p))


def _block_dag(size: int, s: float, rng: np.random.Generator) -> np.ndarray:
    return random_dag(size, s, rng).weights if size > 1 else np.zeros((size, size))


def hub_dag(
    n_hubs: int,
    upper: int,
    lower: int,
    cross_in: int,
    cross_out: int,
    s: float,
    rng: np.random.Generator,
) -> WeightedDag:
    """Hub graph: upper blocks feed their hub, each hub feeds its lower block.

    Layout of the variables is ``[upper blocks | hubs | lower blocks]`` which
    is already a causal order.  Besides its own blocks every hub receives
    ``cross_in`` edges from nodes of other upper blocks and sends ``cross_out``
    edges to nodes of other lower blocks, sampled without replacement.
    """
    if min(n_hubs, upper, lower) < 1 or min(cross_in, cross_out) < 0:
        raise ValueError("hub counts and block sizes must be positive")
    if cross_in > (n_hubs - 1) * upper:
        raise ValueError(f"cross_in={cross_in} exceeds the {(n_hubs - 1) * upper} eligible upper nodes")
    if cross_out > (n_hubs - 1) * lower:
        raise ValueError(f"cross_out={cross_out} exceeds the {(n_hubs - 1) * lower} eligible lower nodes")

    p = n_hubs * (1 + upper + lower)
    hub0 = n_hubs * upper
    low0 = hub0 + n_hubs
    upper_blocks = [np.arange(h * upper, (h + 1) * upper) for h in range(n_hubs)]
    lower_blocks = [np.arange(low0 + h * lower, low0 + (h + 1) * lower) for h in range(n_hubs)]

    mask = np.zeros((p, p), dtype=bool)
    for block in upper_blocks + lower_blocks:
        inner = _block_dag(len(block), s, rng) != 0
        mask[np.ix_(block, block)] = inner
    for h in range(n_hubs):
        hub = hub0 + h
        others_up = np.concatenate([b for g, b in enumerate(upper_blocks) if g != h] or [np.empty(0, int)])
        others_low = np.concatenate([b for g, b in enumerate(lower_blocks) if g != h] or [np.empty(0, int)])
        sources = np.concatenate([upper_blocks[h], rng.choice(others_up, size=cross_in, replace=False)])
        targets = np.concatenate([lower_blocks[h], rng.choice(others_low, size=cross_out, replace=False)])
        mask[hub, sources] = True
        mask[targets, hub] = True

    weights = rng.uniform(-1.0, 1.0, size=(p, p))
    weights[weights == 0] = 1.0
    return WeightedDag(np.where(mask, weights, 0.0), np.arange(p))


def rescale_to_target_variances(sem: Sem, targets: Sequence[float]) -> Sem:
    """Rescale edge weights (and source error variances) so Var(X_i) = targets[i].

    Nodes are visited in causal order; the incoming weights of node ``i`` are
    multiplied by ``sqrt((target_i - err_var_i) / v_i)`` where ``v_i`` is the
    variance of the parent contribution under the already-rescaled ancestors.
    """
    targets = np.asarray(targets, dtype=float)
    p = sem.p
    if targets.shape != (p,) or np.any(~(targets > 0)):
        raise ValueError("targets must be a positive vector of length p")
    weights = sem.dag.weights.copy()
    err = sem.error_variances.copy()
    order = sem.dag.causal_order
    # covariance of the variables in causal order, filled row by row
    cov = np.zeros((p, p))
    for pos, i in enumerate(order):
        prev = order[:pos]
        w = weights[i, prev]
        if not np.any(w != 0):
            err[i] = targets[i]
            cov[pos, pos] = targets[i]
            continue
        if targets[i] <= err[i]:
            raise ValueError(f"target variance {targets[i]} of node {i} does not exceed its error variance {err[i]}")
        sub = cov[:pos, :pos]
        v = float(w @ sub @ w)
        assert v > 0, f"parent contribution of node {i} has zero variance"
        w = w * np.sqrt((targets[i] - err[i]) / v)
        weights[i, prev] = w
        row = w @ sub
        cov[pos, :pos] = row
        cov[:pos, pos] = row
        cov[pos, pos] = targets[i]
    return Sem(WeightedDag(weights, order), sem.intercept, err, sem.error_family)


def shuffle_variables(sem: Sem, rng: np.random.Generator) -> tuple[Sem, np.ndarray]:
    """Randomly relabel the variables; returns the new model and the permutation.

    New variable ``i`` is old variable ``perm[i]``; apply ``data[:, perm]`` to
    data generated from the old model.
    """
    perm = rng.permutation(sem.p)
    return sem.permuted(perm), perm


# ---------------------------------------------------------------------------
# sampling


def _errors(sem: Sem, n: int, rng: np.random.Generator) -> np.ndarray:
    fam = np.array(sem.error_family)
    gauss = fam == GAUSSIAN
    sd = np.sqrt(sem.error_variances)
    eps = np.empty((n, sem.p))
    if gauss.any():
        z = rng.standard_normal((n, sem.p))
        eps[:, gauss] = z[:, gauss] * sd[gauss]
    if (~gauss).any():
        u = rng.uniform(-1.0, 1.0, size=(n, sem.p))
        half_width = np.sqrt(3.0) * sd
        eps[:, ~gauss] = u[:, ~gauss] * half_width[~gauss]
    return eps


def _solve_structural(sem: Sem, innovations: np.ndarray) -> np.ndarray:
    weights = sem.dag.weights
    x = np.zeros_like(innovations)
    for i in sem.dag.causal_order:
        pa = np.flatnonzero(weights[i])
        x[:, i] = innovations[:, i]
        if pa.size:
            x[:, i] += x[:, pa] @ weights[i, pa]
    return x


def sample_observational(sem: Sem, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return _solve_structural(sem, sem.intercept + _errors(sem, n, rng))


def sample_interventional(sem: Sem, iv: Intervention, rng: np.random.Generator) -> np.ndarray:
    delta = iv.vector(sem.p)
    return _solve_structural(sem, sem.intercept + _errors(sem, 1, rng) + delta)[0]


# ---------------------------------------------------------------------------
# graph queries


def total_effects(dag: WeightedDag) -> np.ndarray:
    """``(I - B)^{-1}``; entry ``(k, r)`` is the total effect of ``r`` on ``k``."""
    p = dag.p
    return np.linalg.solve(np.eye(p) - dag.weights, np.eye(p))


def _reach(adj: np.ndarray, start: int, blocked: int | None = None) -> set[int]:
    """Nodes reachable from ``start`` following ``adj[u] -> v`` edges."""
    seen: set[int] = set()
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v == blocked or v in seen:
                continue
            seen.add(v)
            queue.append(v)
    seen.discard(start)
    return seen


@dataclass(frozen=True)
class GraphSets:
    parents: frozenset[int]
    ancestors: frozenset[int]
    descendants: frozenset[int]
    real_descendants: frozenset[int]


def ancestors(dag: WeightedDag, j: int) -> set[int]:
    return _reach((dag.weights != 0), j)


def descendants(dag: WeightedDag, j: int) -> set[int]:
    return _reach((dag.weights != 0).T, j)


def real_descendants(dag: WeightedDag, j: int, effects: np.ndarray | None = None) -> set[int]:
    t = total_effects(dag) if effects is None else effects
    col = np.abs(t[:, j]) > numerical_zero(t)
    col[j] = False
    return set(np.flatnonzero(col).tolist())


def graph_sets(dag: WeightedDag, j: int) -> GraphSets:
    if not 0 <= j < dag.p:
        raise ValueError(f"variable {j} outside 0..{dag.p - 1}")
    return GraphSets(
        frozenset(dag.parents(j).tolist()),
        frozenset(ancestors(dag, j)),
        frozenset(descendants(dag, j)),
        frozenset(real_descendants(dag, j)),
    )


def bypass_confounders(dag: WeightedDag, r: int, k: int) -> set[int]:
    """Common ancestors of r and k with a directed path to k avoiding r."""
    adj_down = (dag.weights != 0).T
    common = ancestors(dag, r) & ancestors(dag, k)
    return {j for j in common if k in _reach(adj_down, j, blocked=r)}


def is_polytree(dag: WeightedDag) -> bool:
    """True when the skeleton has no undirected cycle."""
    parent = list(range(dag.p))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for j, k in zip(*np.nonzero(dag.weights)):
        a, b = find(int(j)), find(int(k))
        if a == b:
            return False
        parent[a] = b
    return True


class Safety(enum.Enum):
    SAFE = "safe"
    UNSAFE = "unsafe"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class SafetyReport:
    """Outcome of comparing Var(X_k) with alpha_{r->k}^2 Var(X_r).

    ``verdict`` is the exact variance comparison; ``structural`` names the
    graph condition that guarantees safety, or is None when none applies.
    """

    verdict: Safety
    var_k: float
    scaled_var_r: float
    structural: str | None

    @property
    def structurally_safe(self) -> bool:
        return self.structural is not None


def zscore_safety(dag: WeightedDag, error_variances, r: int, k: int, rtol: float = 1e-10) -> SafetyReport:
    if r == k:
        raise ValueError("r and k must differ")
    err = np.asarray(error_variances, dtype=float)
    t = total_effects(dag)
    var = np.einsum("ij,j,ij->i", t, err, t)
    var_k = float(var[k])
    scaled = float(t[k, r] ** 2 * var[r])
    gap = var_k - scaled
    if abs(gap) <= rtol * max(var_k, scaled):
        verdict = Safety.BOUNDARY
    else:
        verdict = Safety.SAFE if gap > 0 else Safety.UNSAFE

    if k not in descendants(dag, r):
        structural = "not a descendant"
    elif not bypass_confounders(dag, r, k):
        structural = "no bypassing confounder"
    elif np.all(dag.weights >= 0):
        structural = "nonnegative weights"
    elif is_polytree(dag):
        structural = "polytree"
    else:
        structural = None
    return SafetyReport(verdict, var_k, scaled, structural)
