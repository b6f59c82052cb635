"""Cardinality-constrained ridge regression over the extended design.

The inner problem for a support ``s`` is the ridge regression restricted to
the active columns,

    c(s) = min_b ||y - Xt_S b||^2 + mu ||b||^2 = y' alpha(s),

which is convex in the (relaxed) support indicators with gradient
``dc/ds_i = -(xt_i' alpha)^2 / mu``.  ``solve_outer_approximation`` minimises
``c`` over binary supports that keep every fixed-effect column and at most
``lambda_i`` columns of cluster-effect block ``i``, by accumulating these
supporting hyperplanes in a master problem.

``brute_force_best_subset`` enumerates every feasible support and is the
verification oracle for the cutting-plane solver.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import SingularSystem, TooLarge
from .model import CoefficientSplit, ExtendedDesign, split_coefficients

OPTIMAL = "Optimal"
ITERATION_LIMIT = "IterationLimit"
TIME_LIMIT = "TimeLimit"

DEFAULT_MU = 1e-3
BRUTE_FORCE_CAP = 20
_TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class InnerSolution:
    alpha: np.ndarray
    c: float
    beta_tilde: np.ndarray


@dataclass(frozen=True, eq=False)
class Cut:
    """Supporting hyperplane ``c(s') >= value + gradient . (s' - anchor)``."""

    anchor: np.ndarray
    value: float
    gradient: np.ndarray

    def evaluate(self, s) -> float:
        return float(self.value + self.gradient @ (np.asarray(s, dtype=float) - self.anchor))


@dataclass
class SolverOptions:
    eps_rel: float = 1e-6
    eps_abs: float = 1e-9
    max_iters: int = 500
    time_limit: Optional[float] = None
    warm_start: bool = True
    master: str = "bnb"  # "bnb" | "enumerate"
    node_limit: int = 2_000_000
    record_cuts: bool = False  # keep every generated cut on the returned fit

    def tolerance(self, incumbent: float) -> float:
        return max(self.eps_abs, self.eps_rel * abs(incumbent))


@dataclass(frozen=True, eq=False)
class MioFit:
    support: np.ndarray
    split: CoefficientSplit
    beta_tilde: np.ndarray
    objective: float
    lower_bound: float
    iterations: int
    cuts_generated: int
    status: str
    budgets: tuple
    mu: float
    p: int
    K: int
    q: int
    bound_trace: tuple = field(default=())
    nodes: int = 0
    elapsed: float = 0.0
    cuts: tuple = field(default=())

    @property
    def gap(self) -> float:
        return self.objective - self.lower_bound

    @property
    def active_effects(self) -> np.ndarray:
        """Boolean q x K mask of cluster effects allowed to be nonzero."""
        return self.support[self.p:].reshape(self.q, self.K)


def _as_budgets(budgets, q: int, K: int) -> tuple:
    if np.isscalar(budgets):
        budgets = [budgets] * q
    budgets = tuple(int(b) for b in budgets)
    if len(budgets) != q:
        raise ValueError(f"expected {q} per-block budgets, got {len(budgets)}")
    for b in budgets:
        if not 0 <= b <= K:
            raise ValueError(f"sparsity budget {b} outside [0, K={K}]")
    return budgets


def _lex_key(support: np.ndarray) -> tuple:
    return tuple(np.flatnonzero(support).tolist())


class _Kernel:
    """Cached Gram information for repeated restricted ridge solves."""

    def __init__(self, design: ExtendedDesign, y, mu: float):
        if not mu > 0:
            raise SingularSystem(f"ridge weight mu must be positive, got {mu}")
        self.Xt = np.asarray(design.Xt, dtype=float)
        self.y = np.asarray(y, dtype=float).ravel()
        if self.y.shape[0] != self.Xt.shape[0]:
            raise ValueError("y length does not match the design")
        self.mu = float(mu)
        self.p, self.K, self.q = design.p, design.K, design.q
        self.d = design.n_columns
        self.m = self.q * self.K
        self.gram = self.Xt.T @ self.Xt
        self.Xty = self.Xt.T @ self.y
        self.yy = float(self.y @ self.y)
        self.block_of_free = np.repeat(np.arange(self.q), self.K)
        self.solves = 0

    def full_support(self, free: np.ndarray) -> np.ndarray:
        s = np.ones(self.d, dtype=bool)
        s[self.p:] = free
        return s

    def solve(self, support: np.ndarray, removal: bool = False):
        """Restricted ridge coefficients, residual and objective for a full-length support.

        With ``removal`` also return, for every column, the exact increase of
        ``c`` when that single column is dropped (zero off the support).
        """
        self.solves += 1
        cols = np.flatnonzero(support)
        beta = np.zeros(self.d)
        if cols.size == 0:
            alpha = self.y.copy()
            out = beta, alpha, float(self.y @ alpha)
            return out + (np.zeros(self.d),) if removal else out
        G = self.gram[np.ix_(cols, cols)]
        G = G + self.mu * np.eye(cols.size)
        try:
            factor = cho_factor(G, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - mu > 0 makes G positive definite
            raise SingularSystem(str(exc)) from exc
        beta[cols] = cho_solve(factor, self.Xty[cols], check_finite=False)
        alpha = self.y - self.Xt[:, cols] @ beta[cols]
        c = float(self.y @ alpha)
        if not removal:
            return beta, alpha, c
        # c(S minus j) - c(S) = beta_j^2 / [H^-1]_jj with H = mu I + G_S
        Linv = solve_triangular(np.tril(factor[0]), np.eye(cols.size), lower=True, check_finite=False)
        hinv_diag = np.einsum("ij,ij->j", Linv, Linv)
        delta = np.zeros(self.d)
        delta[cols] = beta[cols] ** 2 / hinv_diag
        return beta, alpha, c, delta

    def free_gradient(self, alpha: np.ndarray) -> np.ndarray:
        return -((self.Xt[:, self.p:].T @ alpha) ** 2) / self.mu

    def cut(self, support: np.ndarray):
        beta, alpha, c = self.solve(support)
        return beta, alpha, c, self.free_gradient(alpha)

    def greedy(self, budgets: tuple) -> np.ndarray:
        """Forward selection on c within per-block budgets; returns the free mask."""
        free = np.zeros(self.m, dtype=bool)
        remaining = np.array(budgets)
        diag = np.diag(self.gram)[self.p:] + self.mu
        while True:
            allowed = ~free & (remaining[self.block_of_free] > 0)
            if not allowed.any():
                return free
            s = self.full_support(free)
            cols = np.flatnonzero(s)
            _, alpha, _ = self.solve(s)
            score = (self.Xt[:, self.p:].T @ alpha) ** 2
            if cols.size:
                G = self.gram[np.ix_(cols, cols)].copy()
                G[np.diag_indices_from(G)] += self.mu
                L = np.linalg.cholesky(G)
                W = solve_triangular(L, self.gram[np.ix_(cols, np.arange(self.p, self.d))], lower=True)
                denom = diag - np.einsum("ij,ij->j", W, W)
            else:
                denom = diag
            score = np.where(allowed, score / denom, -np.inf)
            j = int(np.argmax(score))
            free[j] = True
            remaining[self.block_of_free[j]] -= 1


def _check_support(kernel: _Kernel, support) -> np.ndarray:
    s = np.asarray(support).astype(bool).ravel()
    if s.shape[0] != kernel.d:
        raise ValueError(f"support has length {s.shape[0]}, expected {kernel.d}")
    if not s[: kernel.p].all():
        raise ValueError("fixed-effect columns must be in every support")
    return s


def inner_solve(design: ExtendedDesign, y, support, mu: float = DEFAULT_MU) -> InnerSolution:
    """Ridge regression restricted to ``support``.

    Solves ``(mu I + Xt_S' Xt_S) b_S = Xt_S' y`` by Cholesky and returns the
    residual ``alpha``, the optimal value ``c = y' alpha`` and the full-length
    coefficient vector (zero off the support).
    """
    kernel = _Kernel(design, y, mu)
    beta, alpha, c = kernel.solve(_check_support(kernel, support))
    return InnerSolution(alpha=alpha, c=c, beta_tilde=beta)


def cut_at(design: ExtendedDesign, y, support, mu: float = DEFAULT_MU) -> Cut:
    kernel = _Kernel(design, y, mu)
    s = _check_support(kernel, support)
    _, _, c, g = kernel.cut(s)
    gradient = np.zeros(kernel.d)
    gradient[kernel.p:] = g
    return Cut(anchor=s.astype(float), value=c, gradient=gradient)


# ---------------------------------------------------------------------------
# master problems


def _saturating_supports(q: int, K: int, budgets: tuple) -> np.ndarray:
    """All free masks using the full budget in every block.

    c is non-increasing under activation, so some minimiser saturates every
    budget and the master may be restricted to these points.
    """
    per_block = [list(itertools.combinations(range(K), min(b, K))) for b in budgets]
    rows = []
    for combo in itertools.product(*per_block):
        row = np.zeros(q * K, dtype=bool)
        for i, idx in enumerate(combo):
            row[[i * K + j for j in idx]] = True
        rows.append(row)
    return np.array(rows, dtype=bool).reshape(len(rows), q * K)


class _State:
    def __init__(self, kernel: _Kernel, opts: SolverOptions, deadline: float):
        self.kernel = kernel
        self.opts = opts
        self.deadline = deadline
        self.best_free: Optional[np.ndarray] = None
        self.best_c = math.inf
        self.cuts = 0
        self.nodes = 0
        self.timed_out = False
        self.node_limited = False
        self.log: list = []

    def _record(self, free, c, g):
        if self.opts.record_cuts:
            k = self.kernel
            gradient = np.zeros(k.d)
            gradient[k.p:] = g
            self.log.append(Cut(anchor=k.full_support(free).astype(float), value=c, gradient=gradient))

    def offer(self, free: np.ndarray, c: float):
        """Update the incumbent; equal objectives go to the lexicographically smaller support."""
        if self.best_free is None or c < self.best_c - _TIE_RTOL * max(1.0, abs(c)):
            self.best_free, self.best_c = free.copy(), c
        elif abs(c - self.best_c) <= _TIE_RTOL * max(1.0, abs(c)):
            if _lex_key(free) < _lex_key(self.best_free):
                self.best_free, self.best_c = free.copy(), min(c, self.best_c)

    def evaluate(self, free: np.ndarray):
        beta, alpha, c, g = self.kernel.cut(self.kernel.full_support(free))
        self.cuts += 1
        self._record(free, c, g)
        return c, g

    def evaluate_relaxation(self, free: np.ndarray):
        """Cut at a relaxation point plus the single-column removal costs of its free columns."""
        k = self.kernel
        _, alpha, c, delta = k.solve(k.full_support(free), removal=True)
        self.cuts += 1
        g = k.free_gradient(alpha)
        self._record(free, c, g)
        return c, g, delta[k.p:]

    def out_of_time(self) -> bool:
        if time.perf_counter() > self.deadline:
            self.timed_out = True
        return self.timed_out


def _run_enumeration(state: _State, budgets: tuple, anchor: np.ndarray, trace: list):
    """Classic multi-tree outer approximation with an exhaustive master."""
    k = state.kernel
    F = _saturating_supports(k.q, k.K, budgets)
    Ff = F.astype(float)
    lower = np.full(F.shape[0], -np.inf)
    visited = set()
    free = anchor
    it = 0
    lb = -np.inf
    while True:
        it += 1
        c, g = state.evaluate(free)
        state.offer(free, c)
        visited.add(free.tobytes())
        np.maximum(lower, c + (Ff - free) @ g, out=lower)
        j = int(np.argmin(lower))
        lb = min(float(lower[j]), state.best_c)
        trace.append((it, lb, state.best_c))
        if state.best_c - lb <= state.opts.tolerance(state.best_c):
            return it, lb, OPTIMAL
        if it >= state.opts.max_iters:
            return it, lb, ITERATION_LIMIT
        if state.out_of_time():
            return it, lb, TIME_LIMIT
        free = F[j]
        if free.tobytes() in visited:  # pragma: no cover - exact cut at a visited point closes the gap
            return it, lb, OPTIMAL


def _cut_bound(const, g_free, node_free_fixed, undecided_by_block, remaining):
    """Smallest value the cut can take over completions of a node."""
    val = const + g_free[node_free_fixed].sum()
    for cols, r in zip(undecided_by_block, remaining):
        if r <= 0 or cols.size == 0:
            continue
        vals = g_free[cols]
        if cols.size > r:
            vals = np.partition(vals, r - 1)[:r]
        val += vals[vals < 0].sum()
    return val


def _removal_bound(c_relax, delta, undecided_by_block, remaining):
    """Bound from monotonicity: a completion drops at least ``|D_b| - r_b`` undecided
    columns of block ``b``, so it costs at least the smallest such single removal."""
    best = 0.0
    for cols, r in zip(undecided_by_block, remaining):
        excess = cols.size - max(int(r), 0)
        if excess > 0:
            best = max(best, float(np.partition(delta[cols], excess - 1)[excess - 1]))
    return c_relax + best


def _run_bnb(state: _State, budgets: tuple, order: np.ndarray, trace: list):
    """Depth-first branch and bound on the free binaries.

    Node bounds are the cut-set maximum over completions.  Cuts are added
    lazily at each node's relaxation point (every undecided column switched on
    where budget remains), which is a point of the convex domain even when it
    violates the budget.
    """
    k = state.kernel
    block = k.block_of_free
    m = k.m
    # node: (depth, fixed-on mask, remaining budgets, parent cut (const, g) or None)
    stack = [(0, np.zeros(m, dtype=bool), np.array(budgets), None)]
    lb_closed = math.inf
    position = np.empty(m, dtype=int)
    position[order] = np.arange(m)
    while stack:
        if state.out_of_time() or state.nodes >= state.opts.node_limit:
            state.node_limited = not state.timed_out
            # open nodes: bound them by the weakest information available
            lb_closed = -math.inf
            break
        depth, on, remaining, parent_cut = stack.pop()
        state.nodes += 1
        undecided = order[depth:]
        undecided = undecided[remaining[block[undecided]] > 0]
        by_block = [undecided[block[undecided] == b] for b in range(k.q)]
        tol = state.opts.tolerance(state.best_c) if math.isfinite(state.best_c) else 0.0
        if parent_cut is not None:
            bound = _cut_bound(parent_cut[0], parent_cut[1], on, by_block, remaining)
            if bound >= state.best_c - tol:
                lb_closed = min(lb_closed, bound)
                continue
        relax = on.copy()
        relax[undecided] = True
        c, g, delta = state.evaluate_relaxation(relax)
        feasible = all(cols.size <= r for cols, r in zip(by_block, remaining))
        if feasible:
            # the relaxation point is itself feasible and dominates every completion
            state.offer(relax, c)
            lb_closed = min(lb_closed, c)
            continue
        const = c - g @ relax
        bound = max(_cut_bound(const, g, on, by_block, remaining),
                    _removal_bound(c, delta, by_block, remaining))
        if bound >= state.best_c - tol:
            lb_closed = min(lb_closed, bound)
            continue
        # branch on the first undecided column in the ordering
        j = undecided[0]
        nxt = position[j] + 1
        off = (nxt, on, remaining, (const, g))
        on1 = on.copy()
        on1[j] = True
        rem1 = remaining.copy()
        rem1[block[j]] -= 1
        stack.append(off)
        stack.append((nxt, on1, rem1, (const, g)))
    lb = min(lb_closed, state.best_c)
    trace.append((len(trace) + 1, lb, state.best_c))
    return lb


def _variable_order(kernel: _Kernel, warm: np.ndarray) -> np.ndarray:
    """Warm-start columns first (by greedy strength), the rest by cut steepness."""
    _, alpha, _ = kernel.solve(kernel.full_support(warm))
    steep = kernel.free_gradient(alpha)
    beta_full, _, _ = kernel.solve(kernel.full_support(np.ones(kernel.m, dtype=bool)))
    strength = np.abs(beta_full[kernel.p:])
    secondary = np.where(warm, -strength, steep)
    return np.lexsort((np.arange(kernel.m), secondary, ~warm))


def solve_outer_approximation(
    design: ExtendedDesign,
    y,
    budgets,
    mu: float = DEFAULT_MU,
    opts: Optional[SolverOptions] = None,
) -> MioFit:
    """Minimise ``c(s)`` over supports with at most ``budgets[i]`` active columns per block.

    Returns the incumbent with status ``IterationLimit``/``TimeLimit`` when the
    corresponding limit is hit before the gap closes.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    kernel = _Kernel(design, y, mu)
    budgets = _as_budgets(budgets, kernel.q, kernel.K)
    deadline = t0 + opts.time_limit if opts.time_limit is not None else math.inf
    state = _State(kernel, opts, deadline)
    trace: list = []

    if opts.warm_start:
        anchor = kernel.greedy(budgets)
    else:
        anchor = np.zeros(kernel.m, dtype=bool)
        for b, lam in enumerate(budgets):
            anchor[b * kernel.K: b * kernel.K + lam] = True

    master = opts.master

    if kernel.m == 0 or all(b == 0 for b in budgets) or all(b >= kernel.K for b in budgets):
        # a single feasible saturating support
        c, _ = state.evaluate(anchor)
        state.offer(anchor, c)
        it, lb, status = 1, c, OPTIMAL
        trace.append((1, lb, c))
    elif master == "enumerate":
        it, lb, status = _run_enumeration(state, budgets, anchor, trace)
    elif master == "bnb":
        c, _ = state.evaluate(anchor)
        state.offer(anchor, c)
        trace.append((1, -math.inf, c))
        order = _variable_order(kernel, anchor)
        it = 1
        status = ITERATION_LIMIT
        lb = -math.inf
        while it < opts.max_iters:
            it += 1
            lb = _run_bnb(state, budgets, order, trace)
            if state.best_c - lb <= opts.tolerance(state.best_c):
                status = OPTIMAL
                break
            if state.timed_out:
                status = TIME_LIMIT
                break
            if state.node_limited:
                status = ITERATION_LIMIT
                break
    else:
        raise ValueError(f"unknown master strategy {opts.master!r}")

    support = kernel.full_support(state.best_free)
    beta, _, c = kernel.solve(support)
    return MioFit(
        support=support,
        split=split_coefficients(beta, kernel.p, kernel.K, kernel.q),
        beta_tilde=beta,
        objective=c,
        lower_bound=min(lb, c),
        iterations=it,
        cuts_generated=state.cuts,
        status=status,
        budgets=budgets,
        mu=float(mu),
        p=kernel.p,
        K=kernel.K,
        q=kernel.q,
        bound_trace=tuple(trace),
        nodes=state.nodes,
        elapsed=time.perf_counter() - t0,
        cuts=tuple(state.log),
    )


# ---------------------------------------------------------------------------
# enumeration oracle


def _feasible_masks(q: int, K: int, budgets: tuple) -> np.ndarray:
    m = q * K
    codes = np.arange(2**m, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(m)) & 1).astype(bool)
    ok = np.ones(codes.shape[0], dtype=bool)
    for b, lam in enumerate(budgets):
        ok &= bits[:, b * K:(b + 1) * K].sum(axis=1) <= lam
    return bits[ok]


def brute_force_best_subset(design: ExtendedDesign, y, budgets, mu: float = DEFAULT_MU, chunk: int = 20000) -> MioFit:
    """Exact minimiser of ``c`` by evaluating every feasible support.

    The fixed-effect block is eliminated once (Schur complement), after which
    each support needs one small solve on the free columns; solves are batched
    by support size.
    """
    t0 = time.perf_counter()
    kernel = _Kernel(design, y, mu)
    if kernel.m > BRUTE_FORCE_CAP:
        raise TooLarge(f"{kernel.m} free indicators exceed the enumeration cap of {BRUTE_FORCE_CAP}")
    budgets = _as_budgets(budgets, kernel.q, kernel.K)
    p = kernel.p
    G = kernel.gram + kernel.mu * np.eye(kernel.d)
    b = kernel.Xty
    if p:
        GFF = G[:p, :p]
        fac = cho_factor(GFF, lower=True)
        solF = cho_solve(fac, np.column_stack([b[:p], G[:p, p:]]))
        base = kernel.yy - b[:p] @ solF[:, 0]
        H = G[p:, p:] - G[p:, :p] @ solF[:, 1:]
        r = b[p:] - G[p:, :p] @ solF[:, 0]
    else:
        base, H, r = kernel.yy, G, b

    masks = _feasible_masks(kernel.q, kernel.K, budgets)
    values = np.empty(masks.shape[0])
    sizes = masks.sum(axis=1)
    for size in np.unique(sizes):
        rows = np.flatnonzero(sizes == size)
        if size == 0:
            values[rows] = base
            continue
        idx_all = np.nonzero(masks[rows])[1].reshape(rows.size, size)
        for start in range(0, rows.size, chunk):
            idx = idx_all[start:start + chunk]
            Hs = H[idx[:, :, None], idx[:, None, :]]
            rs = r[idx]
            sol = np.linalg.solve(Hs, rs[..., None])[..., 0]
            values[rows[start:start + chunk]] = base - np.einsum("ij,ij->i", rs, sol)

    best = values.min()
    ties = np.flatnonzero(values <= best + _TIE_RTOL * max(1.0, abs(best)))
    winner = min(ties, key=lambda i: _lex_key(masks[i]))
    support = kernel.full_support(masks[winner])
    beta, _, c = kernel.solve(support)
    return MioFit(
        support=support,
        split=split_coefficients(beta, p, kernel.K, kernel.q),
        beta_tilde=beta,
        objective=c,
        lower_bound=c,
        iterations=1,
        cuts_generated=0,
        status=OPTIMAL,
        budgets=budgets,
        mu=float(mu),
        p=p,
        K=kernel.K,
        q=kernel.q,
        bound_trace=(),
        nodes=int(masks.shape[0]),
        elapsed=time.perf_counter() - t0,
    )
