"""Coordinate-descent Lasso with k-fold cross-validation.

Columns are standardized (zero mean, unit population variance) and the
response centred before fitting, so the problem solved is

    min_beta  1/(2n) ||y_c - Z beta||^2 + lam ||beta||_1

on the standardized design ``Z``.  Coefficients are reported on the original
scale together with the matching intercept.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000
# fraction of deviance explained at which a penalty path stops (as in glmnet)
PATH_SATURATION = 0.999
# sweeps between active-set solves along a penalty path
POLISH_EVERY = 5


@numba.njit(cache=True, nogil=True)
def _soft(x, lam):
    if x > lam:
        return x - lam
    if x < -lam:
        return x + lam
    return 0.0


@numba.njit(cache=True, nogil=True)
def _objective(yy, c, beta, grad, lam):
    # 1/(2n)||y - Z b||^2 = yy/2 - c.b + b.G b/2 and G b = c - grad
    quad = 0.0
    lin = 0.0
    l1 = 0.0
    for j in range(beta.size):
        lin += c[j] * beta[j]
        quad += beta[j] * (c[j] - grad[j])
        l1 += abs(beta[j])
    return 0.5 * yy - lin + 0.5 * quad + lam * l1


@numba.njit(cache=True, nogil=True)
def _chol_solve(A, b):
    """Solve A x = b for symmetric A; returns (x, ok) with ok False if A is not safely PD."""
    m = b.size
    L = np.zeros((m, m))
    floor = 1e-10 * (1.0 + np.max(np.abs(np.diag(A)))) if m else 0.0
    for j in range(m):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if d <= floor:
            return b, False
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, m):
            acc = A[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    x = b.copy()
    for i in range(m):
        for k in range(i):
            x[i] -= L[i, k] * x[k]
        x[i] /= L[i, i]
    for i in range(m - 1, -1, -1):
        for k in range(i + 1, m):
            x[i] -= L[k, i] * x[k]
        x[i] /= L[i, i]
    return x, True


@numba.njit(cache=True, nogil=True)
def _polish(G, c, beta, grad, lam):
    """Jump to the exact minimizer for the current active set and signs, if it is one.

    Accepted only when the signs are kept and every inactive coordinate
    satisfies its optimality condition; otherwise nothing changes.
    """
    active = np.flatnonzero(beta)
    m = active.size
    if m == 0:
        return False
    sub = np.empty((m, m))
    rhs = np.empty(m)
    for a in range(m):
        ja = active[a]
        rhs[a] = c[ja] - lam * np.sign(beta[ja])
        for b in range(m):
            sub[a, b] = G[ja, active[b]]
    x, ok = _chol_solve(sub, rhs)
    if not ok:
        return False
    for a in range(m):
        if np.sign(x[a]) != np.sign(beta[active[a]]):
            return False
    new_grad = c.copy()
    for a in range(m):
        ja = active[a]
        for k in range(c.size):
            new_grad[k] -= G[k, ja] * x[a]
    for k in range(c.size):
        if beta[k] == 0.0 and G[k, k] > 0.0 and abs(new_grad[k]) > lam:
            return False
    for a in range(m):
        beta[active[a]] = x[a]
    grad[:] = new_grad
    return True


@numba.njit(cache=True, nogil=True)
def _cd(G, c, yy, beta, lam, tol, max_iter, trace, polish=0):
    """Cyclic coordinate descent on the Gram form; updates ``beta`` in place.

    With ``polish > 0`` an active-set solve is attempted after ``polish``
    sweeps, then with doubling gaps, whenever the last sweep left the support
    unchanged.  Convergence is still decided by a plain sweep.
    """
    q = c.size
    grad = c - G @ beta
    n_trace = 0
    next_polish = polish
    for it in range(max_iter):
        biggest = 0.0
        moved = False
        for j in range(q):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            new = _soft(grad[j] + gjj * old, lam) / gjj
            if new != old:
                d = new - old
                if old == 0.0 or new == 0.0:
                    moved = True
                for k in range(q):
                    grad[k] -= G[k, j] * d
                beta[j] = new
                if abs(d) > biggest:
                    biggest = abs(d)
        if trace.size > 0 and n_trace < trace.size:
            trace[n_trace] = _objective(yy, c, beta, grad, lam)
            n_trace += 1
        if biggest < tol:
            return it + 1, True
        if polish > 0 and it + 1 >= next_polish and not moved:
            if not _polish(G, c, beta, grad, lam):
                next_polish = 2 * (it + 1)
    return max_iter, False


@numba.njit(cache=True, nogil=True)
def _cd_path(G, c, yy, lambdas, tol, max_iter, saturation):
    """Warm-started path; once the fit explains ``saturation`` of the deviance
    the remaining (smaller) penalties reuse the last solution."""
    q = c.size
    out = np.zeros((lambdas.size, q))
    beta = np.zeros(q)
    empty = np.zeros(0)
    ok = True
    done = False
    for i in range(lambdas.size):
        if not done:
            _, conv = _cd(G, c, yy, beta, lambdas[i], tol, max_iter, empty, POLISH_EVERY)
            ok = ok and conv
            if yy > 0.0:
                # residual sum of squares / n = yy - 2 c.b + b.G b
                rss = yy - 2.0 * (c @ beta) + beta @ (G @ beta)
                if 1.0 - rss / yy >= saturation:
                    done = True
        out[i] = beta
    return out, ok


@dataclass
class Standardized:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    gram: np.ndarray
    xty: np.ndarray
    yy: float


def standardize(X: np.ndarray, y: np.ndarray) -> Standardized:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    safe = np.where(x_scale > 0, x_scale, 1.0)
    Z = (X - x_mean) / safe
    Z[:, x_scale == 0] = 0.0
    yc = y - y.mean()
    return Standardized(x_mean, x_scale, float(y.mean()), Z.T @ Z / n, Z.T @ yc / n, float(yc @ yc / n))


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    return float(np.max(np.abs(standardize(X, y).xty), initial=0.0))


@dataclass
class LassoFit:
    coefficients: np.ndarray
    intercept: float
    lam: float
    coef_std: np.ndarray
    n_iter: int = 0
    converged: bool = True
    objective_trace: np.ndarray | None = None
    lambdas: np.ndarray | None = field(default=None, repr=False)
    cv_error: np.ndarray | None = field(default=None, repr=False)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients != 0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coefficients + self.intercept


def _to_original(st: Standardized, coef_std: np.ndarray) -> tuple[np.ndarray, float]:
    coef = np.where(st.x_scale > 0, coef_std / np.where(st.x_scale > 0, st.x_scale, 1.0), 0.0)
    return coef, st.y_mean - float(st.x_mean @ coef)


def lasso_cd(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    record_objective: bool = False,
    warm_start: np.ndarray | None = None,
) -> LassoFit:
    """Lasso at a single penalty by cyclic coordinate descent with soft-thresholding."""
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    st = standardize(X, y)
    q = st.xty.size
    beta = np.zeros(q) if warm_start is None else np.array(warm_start, dtype=float)
    trace = np.full(max_iter if record_objective else 0, np.nan)
    n_iter, converged = _cd(st.gram, st.xty, st.yy, beta, float(lam), float(tol), int(max_iter), trace)
    if not converged:
        log.warning("lasso did not converge in %d sweeps (lambda=%g)", max_iter, lam)
    coef, icpt = _to_original(st, beta)
    return LassoFit(
        coef, icpt, float(lam), beta, n_iter, bool(converged),
        trace[:n_iter] if record_objective else None,
    )


def kkt_violation(X: np.ndarray, y: np.ndarray, fit: LassoFit) -> float:
    """Largest violation of the Lasso optimality conditions on the standardized scale."""
    st = standardize(X, y)
    grad = st.xty - st.gram @ fit.coef_std
    b = fit.coef_std
    active = b != 0
    live = st.x_scale > 0
    v_zero = np.abs(grad[~active & live]) - fit.lam
    v_active = np.abs(grad[active] - fit.lam * np.sign(b[active]))
    return float(max(np.max(v_zero, initial=0.0), np.max(v_active, initial=0.0)))


def lambda_grid(lam_max: float, n_lambdas: int = 100, eps: float = 1e-3) -> np.ndarray:
    return np.geomspace(lam_max, eps * lam_max, n_lambdas)


def fold_assignment(n: int, folds: int, rng) -> np.ndarray:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return rng.permutation(np.arange(n) % folds)


def cv_lasso(
    X: np.ndarray,
    y: np.ndarray,
    folds: int = 5,
    n_lambdas: int = 100,
    eps: float = 1e-3,
    rng=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> LassoFit:
    """Select the penalty by k-fold mean validation MSE, then refit on all rows.

    Ties in CV error go to the larger penalty.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, q = X.shape
    if not n >= folds >= 2:
        raise ValueError(f"need n >= folds >= 2, got n={n}, folds={folds}")
    full = standardize(X, y)
    lam_max = float(np.max(np.abs(full.xty), initial=0.0))
    if lam_max == 0:
        return LassoFit(np.zeros(q), full.y_mean, 0.0, np.zeros(q))
    lambdas = lambda_grid(lam_max, n_lambdas, eps)
    assign = fold_assignment(n, folds, rng)
    errors = np.zeros((folds, lambdas.size))
    for f in range(folds):
        train, test = assign != f, assign == f
        st = standardize(X[train], y[train])
        path, ok = _cd_path(st.gram, st.xty, st.yy, lambdas, float(tol), int(max_iter), PATH_SATURATION)
        if not ok:
            log.warning("lasso path did not fully converge on fold %d", f)
        scale = np.where(st.x_scale > 0, st.x_scale, np.inf)
        coefs = path / scale
        icpts = st.y_mean - coefs @ st.x_mean
        resid = y[test][:, None] - (X[test] @ coefs.T + icpts)
        errors[f] = np.mean(resid**2, axis=0)
    mean_err = errors.mean(axis=0)
    best = int(np.argmin(mean_err))  # first minimum = largest penalty on ties
    path, ok = _cd_path(full.gram, full.xty, full.yy, lambdas[: best + 1], float(tol), int(max_iter), PATH_SATURATION)
    beta = path[-1]
    coef, icpt = _to_original(full, beta)
    return LassoFit(coef, icpt, float(lambdas[best]), beta, converged=bool(ok), lambdas=lambdas, cv_error=mean_err)
