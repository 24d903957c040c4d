"""Independent reference computations used to check the package.

Each routine takes a different route from the production code: explicit
path enumeration instead of a linear solve, scalar loops instead of LAPACK,
explicit inverses instead of triangular solves, and so on.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def path_sum_effects(B: np.ndarray) -> np.ndarray:
    """(I - B)^{-1} as the sum over directed paths of edge-weight products."""
    p = B.shape[0]
    children = {k: [j for j in range(p) if B[j, k] != 0] for k in range(p)}
    T = np.eye(p)

    def walk(start, node, prod):
        for c in children[node]:
            w = prod * B[c, node]
            T[c, start] += w
            walk(start, c, w)

    for r in range(p):
        walk(r, r, 1.0)
    return T


def reachable(B: np.ndarray) -> np.ndarray:
    """reach[k, j] is True when a directed path j -> ... -> k exists (transitive closure)."""
    p = B.shape[0]
    R = (B != 0).astype(int)
    closure = R.copy()
    power = R.copy()
    for _ in range(p):
        power = (power @ R > 0).astype(int)
        closure |= power
    return closure.astype(bool)


def scalar_cholesky(A: np.ndarray) -> np.ndarray:
    """Textbook Cholesky-Banachiewicz with Python scalars."""
    n = A.shape[0]
    L = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            s = sum(L[i][k] * L[j][k] for k in range(j))
            if i == j:
                L[i][j] = math.sqrt(A[i][i] - s)
            else:
                L[i][j] = (A[i][j] - s) / L[j][j]
    return np.array(L)


def gap_by_sorting(xi) -> tuple[float, int]:
    """Relative top-two gap of |xi| and the first position of the maximum."""
    a = [abs(float(x)) for x in xi]
    first, second = sorted(a, reverse=True)[:2]
    if second == 0:
        value = math.inf if first > 0 else 0.0
    else:
        value = (first - second) / second
    return value, a.index(first)


def brute_force_rc(obs: np.ndarray, case: np.ndarray, orders, zsq: np.ndarray) -> np.ndarray:
    """RC-scores from explicit inverses of per-permutation Cholesky factors."""
    p = obs.shape[1]
    mu = obs.mean(axis=0)
    S = np.cov(obs, rowvar=False)
    best: dict[int, float] = {}
    all_gaps = []
    for order in orders:
        order = list(order)
        L = np.linalg.cholesky(S[np.ix_(order, order)])
        xi = np.linalg.inv(L) @ (case[order] - mu[order])
        g, pos = gap_by_sorting(xi)
        all_gaps.append(g)
        w = order[pos]
        best[w] = max(best.get(w, -1.0), g)
    finite = [c for c in best.values() if math.isfinite(c)]
    if finite:
        c_min = min(finite) / 2
    else:
        fin = [g for g in all_gaps if math.isfinite(g)]
        c_min = (max(fin) if fin else 1.0) / 2
    outside = [i for i in range(p) if i not in best]
    total = sum(zsq[i] for i in outside)
    scores = np.zeros(p)
    for i in range(p):
        if i in best:
            scores[i] = best[i]
        else:
            scores[i] = (zsq[i] / total if total > 0 else 1 / len(outside)) * c_min
    return scores


def enumerate_algorithm1(zsq, thresholds=None) -> set[tuple[tuple[int, ...], int, tuple[int, ...]]]:
    """All (rest-set, d, D-minus-d set) triples the ordering generator can emit, ignoring shuffles."""
    zsq = list(zsq)
    ts = zsq if thresholds is None else thresholds
    out = set()
    for t in ts:
        D = [j for j, z in enumerate(zsq) if z >= t]
        rest = tuple(sorted(j for j, z in enumerate(zsq) if z < t))
        for d in D:
            out.add((rest, d, tuple(sorted(set(D) - {d}))))
    return out


def least_squares(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """OLS with intercept through the normal equations."""
    A = np.column_stack([np.ones(len(y)), X])
    beta = np.linalg.solve(A.T @ A, A.T @ y)
    return beta[1:], float(beta[0])


def all_orderings(p: int):
    return itertools.permutations(range(p))


def worst_case_rank(scores, r: int) -> int:
    return 1 + sum(1 for k, s in enumerate(scores) if k != r and s >= scores[r])
