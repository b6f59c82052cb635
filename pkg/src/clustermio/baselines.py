"""Reference estimators: OLS, ridge and a random-intercept linear mixed model.

The mixed model is fitted by maximum likelihood (or REML) with ``beta`` and
``sigma_eps^2`` profiled out in closed form, leaving a one-dimensional search
over the variance ratio ``rho = sigma_gamma^2 / sigma_eps^2``.  For a random
intercept the marginal covariance ``sigma_eps^2 (I + rho A A')`` is
block-diagonal with blocks ``I + rho 11'``, so every evaluation is O(n p^2)
through per-cluster sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize_scalar

from .errors import BothZero, NonConvergence, RankDeficient, ShapeMismatch

CONVERGED = "converged"
DEGENERATE = "degenerate"

RHO_MAX = 1e6
MAX_EVALUATIONS = 200


@dataclass(frozen=True, eq=False)
class LinearFit:
    beta: np.ndarray
    residual_variance: float
    dof: int
    method: str = "ols"


@dataclass(frozen=True, eq=False)
class LmemFit:
    beta: np.ndarray
    gamma_blups: np.ndarray
    sigma2_gamma: float
    sigma2_eps: float
    loglik: float
    rho: float
    status: str = CONVERGED
    reml: bool = False
    evaluations: int = 0

    @property
    def icc(self) -> float:
        return icc_of(self.sigma2_gamma, self.sigma2_eps)

    @property
    def degenerate(self) -> bool:
        return self.status == DEGENERATE


def fit_ols(X, y) -> LinearFit:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if n <= p:
        raise RankDeficient(f"OLS needs n > p (n={n}, p={p})")
    # rank check on the singular values; lstsq alone silently returns a minimum-norm answer
    U, sv, Vt = np.linalg.svd(X, full_matrices=False)
    if sv[-1] <= sv[0] * max(n, p) * np.finfo(float).eps:
        raise RankDeficient("design matrix is not of full column rank")
    beta = Vt.T @ ((U.T @ y) / sv)
    rss = float(np.sum((y - X @ beta) ** 2))
    return LinearFit(beta=beta, residual_variance=rss / (n - p), dof=p, method="ols")


def fit_ridge(X, y, mu: float) -> LinearFit:
    """Ridge coefficients ``(mu I + X'X)^{-1} X'y``."""
    if not mu > 0:
        raise ValueError("ridge weight must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    G = X.T @ X
    G[np.diag_indices_from(G)] += mu
    beta = cho_solve(cho_factor(G, lower=True), X.T @ y)
    # effective degrees of freedom tr(X (X'X + mu I)^-1 X')
    H = cho_solve(cho_factor(G, lower=True), X.T @ X)
    dof = float(np.trace(H))
    rss = float(np.sum((y - X @ beta) ** 2))
    return LinearFit(beta=beta, residual_variance=rss / max(n - dof, 1.0), dof=int(round(dof)), method="ridge")


def icc_of(sigma2_gamma: float, sigma2_eps: float) -> float:
    if sigma2_gamma < 0 or sigma2_eps < 0:
        raise ValueError("variance components must be non-negative")
    if sigma2_gamma == 0 and sigma2_eps == 0:
        raise BothZero("ICC undefined when both variance components are zero")
    return sigma2_gamma / (sigma2_gamma + sigma2_eps)


def predict_population(fit, X_new) -> np.ndarray:
    """Population-level prediction ``X_new @ beta``; random effects are set to zero."""
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != fit.beta.shape[0]:
        raise ShapeMismatch(f"X_new has {X_new.shape[1]} columns, model expects {fit.beta.shape[0]}")
    return X_new @ fit.beta


class _ProfiledLikelihood:
    def __init__(self, X, y, cluster_index, K, reml):
        self.X, self.y, self.reml = X, y, reml
        self.n, self.p = X.shape
        self.idx = cluster_index
        self.nk = np.bincount(cluster_index, minlength=K).astype(float)
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yy = float(y @ y)
        # per-cluster sums of X rows and y
        self.Sx = np.zeros((K, self.p))
        np.add.at(self.Sx, cluster_index, X)
        self.Sy = np.bincount(cluster_index, weights=y, minlength=K)

    def weights(self, rho):
        return rho / (1.0 + self.nk * rho)

    def gls(self, rho):
        w = self.weights(rho)
        XVX = self.XtX - (self.Sx * w[:, None]).T @ self.Sx
        XVy = self.Xty - (self.Sx * w[:, None]).T @ self.Sy
        try:
            fac = cho_factor(XVX, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence("singular GLS system: fixed effects are not identified") from exc
        beta = cho_solve(fac, XVy)
        # r' V^{-1} r with r = y - X beta
        Sr = self.Sy - self.Sx @ beta
        rr = self.yy - 2 * beta @ self.Xty + beta @ self.XtX @ beta
        quad = rr - float(np.sum(w * Sr**2))
        logdet_xvx = 2.0 * float(np.sum(np.log(np.diag(fac[0]))))
        return beta, max(quad, 0.0), logdet_xvx

    def __call__(self, rho):
        """Profiled log-likelihood at ``rho``, with the profiled beta and sigma_eps^2."""
        beta, quad, logdet_xvx = self.gls(rho)
        logdet_v = float(np.sum(np.log1p(self.nk * rho)))
        if self.reml:
            dof = self.n - self.p
            s2 = quad / dof
            ll = -0.5 * (dof * (math.log(2 * math.pi * s2) + 1.0) + logdet_v + logdet_xvx)
        else:
            s2 = quad / self.n
            ll = -0.5 * (self.n * (math.log(2 * math.pi * s2) + 1.0) + logdet_v)
        return ll, beta, s2


def fit_lmem_random_intercept(X, y, A, reml: bool = False, max_evaluations: int = MAX_EVALUATIONS) -> LmemFit:
    """Random-intercept mixed model by profiled (RE)ML.

    ``A`` is the n-by-K one-hot assignment matrix.  Raises ``NonConvergence``
    when the fixed effects are not identified or the search exceeds its
    evaluation cap; an optimum at ``rho = 0`` yields a valid fit with status
    ``"degenerate"`` and ``sigma2_gamma = 0``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != X.shape[0]:
        raise ShapeMismatch("A must be n-by-K")
    K = A.shape[1]
    if K < 2:
        raise ValueError("random-intercept model needs at least two clusters")
    cluster_index = np.argmax(A, axis=1)
    profile = _ProfiledLikelihood(X, y, cluster_index, K, reml)
    if np.any(profile.nk < 1):
        raise ValueError("every cluster needs at least one row")

    cache = {}
    evals = 0

    def ll_log(t):
        nonlocal evals
        rho = 0.0 if t == -math.inf else math.exp(t)
        if rho not in cache:
            evals += 1
            if evals > max_evaluations:
                raise NonConvergence("likelihood search exceeded its evaluation cap")
            cache[rho] = profile(rho)
            if not math.isfinite(cache[rho][0]):
                raise NonConvergence("non-finite likelihood")
        return cache[rho][0]

    # coarse grid over {0} and log-spaced rho, then a bounded search between grid neighbours
    grid = np.linspace(math.log(1e-6), math.log(RHO_MAX), 37)
    vals = [ll_log(t) for t in grid]
    zero_val = ll_log(-math.inf)
    j = int(np.argmax(vals))
    if zero_val >= vals[j] and j == 0:
        rho = 0.0
    else:
        lo = grid[max(j - 1, 0)]
        hi = grid[min(j + 1, len(grid) - 1)]
        res = minimize_scalar(lambda t: -ll_log(t), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10, "maxiter": max(max_evaluations - evals, 1)})
        t = float(res.x) if vals[j] <= -res.fun else grid[j]
        ll_log(t)
        rho = math.exp(t)
        if zero_val > cache[rho][0]:
            rho = 0.0
    ll, beta, s2 = cache[rho]
    status = DEGENERATE if rho == 0.0 else CONVERGED

    shrink = profile.nk * rho / (1.0 + profile.nk * rho)
    mean_resid = (profile.Sy - profile.Sx @ beta) / profile.nk
    return LmemFit(
        beta=beta,
        gamma_blups=shrink * mean_resid,
        sigma2_gamma=rho * s2,
        sigma2_eps=s2,
        loglik=ll,
        rho=rho,
        status=status,
        reml=reml,
        evaluations=evals,
    )


def lmem_loglik(X, y, A, rho: float, reml: bool = False) -> float:
    """Profiled log-likelihood at a given variance ratio (exposed for probing)."""
    X = np.asarray(X, dtype=float)
    A = np.asarray(A)
    profile = _ProfiledLikelihood(X, np.asarray(y, dtype=float).ravel(), np.argmax(A, axis=1), A.shape[1], reml)
    return profile(rho)[0]


def lmem_loglik_dense(X, y, A, beta, sigma2_gamma, sigma2_eps) -> float:
    """Gaussian marginal log-likelihood with an explicit n-by-n covariance (test oracle)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    A = np.asarray(A, dtype=float)
    V = sigma2_eps * np.eye(X.shape[0]) + sigma2_gamma * A @ A.T
    r = y - X @ beta
    sign, logdet = np.linalg.slogdet(V)
    return float(-0.5 * (X.shape[0] * math.log(2 * math.pi) + logdet + r @ np.linalg.solve(V, r)))
