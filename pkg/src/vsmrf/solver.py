"""Node-wise sparse-group-lasso pseudo-likelihood fits via ADMM.

For node ``r`` the loss is the average negative conditional log-likelihood

    l(theta) = -(1/n) sum_i [<B_r(x_r^i), eta_i> - A_r(eta_i)],
    eta_i = theta_r + sum_t theta_rt B_t(x_t^i),

penalized by ``lambda1 * sum_t sqrt(nu_rt) ||theta_rt||_2 + lambda2 * ||theta_rt||_1``
(the bias is never penalized). ADMM splits ``theta = z``: a damped Newton
step on the smooth part, a closed-form block prox on the penalty and a
scaled dual update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import NodeParamVector, block_slices, tau, unflatten

HESSIAN_MODES = ("auto", "exact-woodbury", "diagonal-quasi", "dense")
# dense Newton is used by "auto" up to this many parameters
DENSE_TAU_LIMIT = 3000
INNER_TOL_FACTOR = 0.1


class FitError(RuntimeError):
    """Raised for unrecoverable per-node failures (e.g. infeasible data)."""


@dataclass(frozen=True)
class AdmmConfig:
    alpha: float = 1.0
    eps_abs: float = 1e-6
    eps_rel: float = 1e-4
    max_iter: int = 10000
    newton_tol: float = 1e-9
    newton_max: int = 50
    hessian_mode: str = "auto"
    residual_balancing: bool = False

    def __post_init__(self):
        for name in ("alpha", "eps_abs", "eps_rel", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.newton_max < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.hessian_mode not in HESSIAN_MODES:
            raise ValueError(f"hessian_mode must be one of {HESSIAN_MODES}")


@dataclass(frozen=True)
class PenaltyWeights:
    lambda1: float
    lambda2: float
    group_sizes: tuple = ()

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty weights must be non-negative")

    @classmethod
    def for_node(cls, schema, r, lambda1, lambda2):
        dims = schema.stat_dims
        return cls(float(lambda1), float(lambda2),
                   tuple(dims[r] * dims[t] for t in range(schema.p) if t != r))


@dataclass
class NodeFit:
    params: NodeParamVector
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    converged: bool
    lambda1: float = 0.0
    lambda2: float = 0.0
    newton_steps: int = 0
    message: str = ""
    # (theta, z, u) iterates, used to warm-start the next grid point
    state: tuple = field(default=None, repr=False, compare=False)

    def to_dict(self):
        from .model import flatten
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "params": flatten(self.params).tolist(),
            "iterations": self.iterations,
            "newton_steps": self.newton_steps,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "objective": self.objective,
            "converged": self.converged,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, schema, r, d):
        return cls(
            params=unflatten(schema, r, np.array(d["params"], dtype=float)),
            iterations=d["iterations"], primal_residual=d["primal_residual"],
            dual_residual=d["dual_residual"], objective=d["objective"],
            converged=d["converged"], lambda1=d["lambda1"], lambda2=d["lambda2"],
            newton_steps=d.get("newton_steps", 0), message=d.get("message", ""))


class NodeProblem:
    """Precomputed design for one node conditional.

    Internally parameters live in an ``m_r x F`` matrix ``Theta`` whose
    columns are ``[bias | block_t1 | block_t2 | ...]`` so that
    ``eta_i = Theta @ f_i`` with ``f_i = (1, B_t1(x_t1^i), ...)``. ``perm``
    maps the flat layout onto ``Theta.ravel()``.
    """

    def __init__(self, data, r):
        schema = data.schema
        if data.n == 0:
            raise FitError("dataset is empty")
        self.schema = schema
        self.r = r
        self.family = schema.families[r]
        self.m = m = schema.stat_dims[r]
        others = [t for t in range(schema.p) if t != r]
        cols = [np.ones((data.n, 1))] + [data.node_stats(t) for t in others]
        self.F = np.hstack(cols)
        self.Fd = Fd = self.F.shape[1]
        self.n = data.n
        self.B = data.node_stats(r)
        self.tau = tau(schema, r)
        assert self.tau == m * Fd
        # flat index k -> position in Theta.ravel()
        perm = list(range(0, m * Fd, Fd))
        c0 = 1
        for t in others:
            mt = schema.stat_dims[t]
            for a in range(m):
                perm.extend(a * Fd + c0 + b for b in range(mt))
            c0 += mt
        self.perm = np.array(perm)
        self.blocks = [sl for _, sl in sorted(block_slices(schema, r).items())]
        self.block_nodes = others
        self.Bbar = (self.B.T @ self.F) / self.n  # m x F
        self.Bbar_flat = self.Bbar.ravel()[self.perm]
        self.eq = self._equality_matrix()

    def _equality_matrix(self):
        E = self.family.eq_matrix
        if E is None:
            return None
        # E @ Theta[:, c] == 0 for every feature column c
        rows = []
        for e in E:
            for c in range(self.Fd):
                row = np.zeros(self.m * self.Fd)
                row[np.arange(self.m) * self.Fd + c] = e
                rows.append(row[self.perm])
        return np.array(rows)

    def theta_matrix(self, v):
        full = np.empty(self.tau)
        full[self.perm] = v
        return full.reshape(self.m, self.Fd)

    def eta(self, v):
        return self.F @ self.theta_matrix(v).T

    def feasible(self, v):
        return bool(np.all(self.family.feasible(self.eta(v))))

    def first_infeasible(self, v):
        ok = self.family.feasible(self.eta(v))
        bad = np.flatnonzero(~ok)
        return int(bad[0]) if bad.size else None

    def loss(self, v, eta=None):
        eta = self.eta(v) if eta is None else eta
        if not np.all(self.family.feasible(eta)):
            return math.inf
        return float(-self.Bbar_flat @ v + self.family.log_partition(eta).mean())

    def grad(self, v, eta=None):
        eta = self.eta(v) if eta is None else eta
        G = (self.family.grad(eta).T @ self.F) / self.n - self.Bbar
        return G.ravel()[self.perm]

    def _weights(self, eta):
        return self.family.hessian(eta)  # n x m x m

    def hessian(self, v, eta=None):
        eta = self.eta(v) if eta is None else eta
        W = self._weights(eta)
        m, Fd, F = self.m, self.Fd, self.F
        H = np.empty((m, Fd, m, Fd))
        for a in range(m):
            for b in range(a, m):
                blk = (F * W[:, a, b, None]).T @ F / self.n
                H[a, :, b, :] = blk
                if b != a:
                    H[b, :, a, :] = blk.T
        H = H.reshape(m * Fd, m * Fd)
        return H[np.ix_(self.perm, self.perm)]

    def hessian_diag(self, v, eta=None):
        eta = self.eta(v) if eta is None else eta
        W = self._weights(eta)
        d = np.einsum("ia,ic->ac", W[:, np.arange(self.m), np.arange(self.m)], self.F * self.F) / self.n
        return d.ravel()[self.perm]

    def hessian_factor(self, v, eta=None):
        """``V`` with ``V.T @ V`` equal to the loss Hessian (rank <= n*m_r)."""
        eta = self.eta(v) if eta is None else eta
        W = self._weights(eta)
        lam, Q = np.linalg.eigh(W)
        L = Q * np.sqrt(np.clip(lam, 0, None))[:, None, :]  # W_i = L_i L_i^T
        V = np.einsum("iak,ic->ikac", L, self.F).reshape(self.n * self.m, self.m * self.Fd)
        return V[:, self.perm] / math.sqrt(self.n)

    def resolve_mode(self, mode):
        if mode != "auto":
            return mode
        if self.n < self.tau / 2:
            return "exact-woodbury"
        if self.tau <= DENSE_TAU_LIMIT:
            return "dense"
        return "diagonal-quasi"

    def feasible_start(self, margin=1e-3):
        """Zero pseudo-edges with the bias at the family's feasible point."""
        v = np.zeros(self.tau)
        v[:self.m] = self.family.feasible_point()
        if not self.feasible(v):  # pragma: no cover - catalog points are interior
            raise FitError(f"no feasible start for node {self.r}")
        return v


# -- penalty and prox -------------------------------------------------------------

def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def penalty(v, weights, blocks):
    total = 0.0
    for sl, nu in zip(blocks, weights.group_sizes):
        blk = v[sl]
        total += weights.lambda1 * math.sqrt(nu) * float(np.linalg.norm(blk)) + weights.lambda2 * float(np.abs(blk).sum())
    return total


def prox_block(y, lambda1, lambda2, nu, alpha=1.0):
    """Minimizer of ``lambda1 sqrt(nu) ||z|| + lambda2 ||z||_1 + alpha/2 ||z - y||^2``."""
    s = soft_threshold(alpha * np.asarray(y, dtype=float), lambda2)
    nrm = float(np.linalg.norm(s))
    thr = math.sqrt(nu) * lambda1
    if nrm <= thr or nrm == 0.0:
        return np.zeros_like(s)
    return (nrm - thr) * s / (alpha * nrm)


def z_update(y, weights, cfg=AdmmConfig(), blocks=None, bias_dim=0):
    """Block-wise prox of the penalty at ``y``; bias coordinates pass through.

    ``blocks`` lists the slices of the pseudo-edge blocks; by default the
    whole vector after ``bias_dim`` is split in order by
    ``weights.group_sizes``.
    """
    y = np.asarray(y, dtype=float)
    if blocks is None:
        blocks, pos = [], bias_dim
        for nu in weights.group_sizes:
            blocks.append(slice(pos, pos + nu))
            pos += nu
    z = y.copy()
    for sl, nu in zip(blocks, weights.group_sizes):
        z[sl] = prox_block(y[sl], weights.lambda1, weights.lambda2, nu, cfg.alpha)
    return z


def u_update(u, theta, z):
    return np.asarray(u) + np.asarray(theta) - np.asarray(z)


# -- theta update -------------------------------------------------------------------

def _newton_solver(problem, v, eta, alpha, mode):
    """Return a function applying ``(H + alpha I)^-1`` to vectors or columns."""
    if mode == "dense":
        H = problem.hessian(v, eta)
        H[np.diag_indices_from(H)] += alpha
        fac = cho_factor(H)
        return lambda rhs: cho_solve(fac, rhs)
    if mode == "diagonal-quasi":
        d = problem.hessian_diag(v, eta) + alpha
        return lambda rhs: rhs / (d if rhs.ndim == 1 else d[:, None])
    if mode == "exact-woodbury":
        V = problem.hessian_factor(v, eta)
        K = V @ V.T
        K[np.diag_indices_from(K)] += alpha
        fac = cho_factor(K)
        return lambda rhs: (rhs - V.T @ cho_solve(fac, V @ rhs)) / alpha
    raise ValueError(f"unknown hessian mode {mode!r}")


def _newton_direction(problem, solve, g):
    d = -solve(g)
    E = problem.eq
    if E is None:
        return d
    # equality-constrained step: d = -S (g + E^T nu) with E d = 0
    SE = solve(E.T)
    nu = np.linalg.lstsq(E @ SE, E @ d, rcond=None)[0]
    return d - SE @ nu


@dataclass
class _ThetaResult:
    v: np.ndarray
    steps: int
    grad_norm: float
    line_search_failed: bool


class _HessianCache:
    """Factorized ``H + alpha I`` reused across Newton steps until progress
    stalls; a stale factor still yields a descent direction."""

    def __init__(self):
        self.solve = None
        self.fresh = False
        self.builds = 0

    def get(self, problem, v, eta, alpha, mode):
        if self.solve is None:
            self.solve = _newton_solver(problem, v, eta, alpha, mode)
            self.fresh = True
            self.builds += 1
        return self.solve

    def invalidate(self):
        self.solve = None
        self.fresh = False


def _theta_update(problem, v, z, u, cfg, mode, cache=None, tol=None):
    alpha = cfg.alpha
    tol = cfg.newton_tol if tol is None else max(tol, cfg.newton_tol)
    cache = _HessianCache() if cache is None else cache
    c = z - u
    eta = problem.eta(v)
    f = problem.loss(v, eta) + 0.5 * alpha * float((v - c) @ (v - c))
    if not math.isfinite(f):
        raise FitError(f"infeasible theta at sample {problem.first_infeasible(v)}")
    steps, failed, gnorm, prev = 0, False, math.inf, None
    attempts = 0
    while attempts < cfg.newton_max:
        attempts += 1
        g = problem.grad(v, eta) + alpha * (v - c)
        if problem.eq is not None:
            g_check = g - problem.eq.T @ np.linalg.lstsq(problem.eq.T, g, rcond=None)[0]
        else:
            g_check = g
        gnorm = float(np.linalg.norm(g_check))
        # at least one step per call unless already exact
        if gnorm <= cfg.newton_tol or (steps and gnorm <= tol):
            break
        if prev is not None and gnorm > 0.25 * prev and not cache.fresh:
            cache.invalidate()
        solve = cache.get(problem, v, eta, alpha, mode)
        was_fresh = cache.fresh
        cache.fresh = False
        d = _newton_direction(problem, solve, g)
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g_check, -gnorm * gnorm
        t = 1.0
        ok = False
        while t >= 1e-12:
            w = v + t * d
            eta_w = problem.eta(w)
            fw = problem.loss(w, eta_w)
            if math.isfinite(fw):
                fw += 0.5 * alpha * float((w - c) @ (w - c))
                if fw <= f + 1e-4 * t * slope:
                    ok = True
                    break
            t *= 0.5
        if not ok:
            if not was_fresh:
                cache.invalidate()
                prev = None
                continue
            failed = True
            break
        if t < 1.0:
            cache.invalidate()
        v, eta, f = w, eta_w, fw
        prev = gnorm
        steps += 1
    return _ThetaResult(v, steps, gnorm, failed)


def theta_update(theta_prev, z, u, data, r, cfg=AdmmConfig()):
    """One ADMM theta step: damped Newton on ``l(theta) + alpha/2 ||theta - z + u||^2``."""
    from .model import flatten
    problem = NodeProblem(data, r)
    vec = lambda x: flatten(x) if isinstance(x, NodeParamVector) else np.asarray(x, dtype=float)
    res = _theta_update(problem, vec(theta_prev), vec(z), vec(u), cfg, problem.resolve_mode(cfg.hessian_mode))
    return unflatten(data.schema, r, res.v)


# -- losses on the public surface -----------------------------------------------------

def node_loss(theta, data, r):
    from .model import flatten
    problem = NodeProblem(data, r)
    v = flatten(theta) if isinstance(theta, NodeParamVector) else np.asarray(theta, dtype=float)
    eta = problem.eta(v)
    bad = problem.first_infeasible(v)
    if bad is not None:
        raise FitError(f"node {r}: conditional natural parameter infeasible at sample {bad}")
    return problem.loss(v, eta)


def node_loss_grad(theta, data, r):
    from .model import flatten
    problem = NodeProblem(data, r)
    v = flatten(theta) if isinstance(theta, NodeParamVector) else np.asarray(theta, dtype=float)
    bad = problem.first_infeasible(v)
    if bad is not None:
        raise FitError(f"node {r}: conditional natural parameter infeasible at sample {bad}")
    return problem.grad(v)


def node_loss_hessian(theta, data, r):
    from .model import flatten
    problem = NodeProblem(data, r)
    v = flatten(theta) if isinstance(theta, NodeParamVector) else np.asarray(theta, dtype=float)
    bad = problem.first_infeasible(v)
    if bad is not None:
        raise FitError(f"node {r}: conditional natural parameter infeasible at sample {bad}")
    return problem.hessian(v)


# -- ADMM driver ------------------------------------------------------------------------

def _objective(problem, weights, z, theta):
    loss = problem.loss(z)
    if not math.isfinite(loss):
        loss = problem.loss(theta)
    return loss + penalty(z, weights, problem.blocks)


def _admm(problem, weights, cfg, warm=None):
    if len(weights.group_sizes) != len(problem.blocks):
        raise ValueError("group_sizes do not match the node's pseudo-edges")
    for sl, nu in zip(problem.blocks, weights.group_sizes):
        if sl.stop - sl.start != nu:
            raise ValueError("group_sizes do not match the node's pseudo-edges")
    mode = problem.resolve_mode(cfg.hessian_mode)
    if warm is not None:
        v, z, u = (np.array(a, dtype=float) for a in warm)
        if not problem.feasible(v):
            v = problem.feasible_start()
    else:
        v = problem.feasible_start()
        z = v.copy()
        u = np.zeros_like(v)
    alpha = cfg.alpha
    sqrt_tau = math.sqrt(problem.tau)
    newton_steps = 0
    ls_failures = 0
    r_norm = s_norm = math.inf
    converged = False
    cache = _HessianCache()
    it = 0
    for it in range(1, cfg.max_iter + 1):
        # inexact theta step: tighten with the ADMM residuals
        inner_tol = INNER_TOL_FACTOR * min(r_norm, s_norm)
        res = _theta_update(problem, v, z, u, replace(cfg, alpha=alpha), mode, cache, inner_tol)
        v = res.v
        newton_steps += res.steps
        ls_failures += res.line_search_failed
        z_old = z
        z = z_update(v + u, weights, replace(cfg, alpha=alpha), blocks=problem.blocks)
        u = u + v - z
        r_norm = float(np.linalg.norm(v - z))
        s_norm = float(np.linalg.norm(alpha * (z - z_old)))
        eps_pri = sqrt_tau * cfg.eps_abs + cfg.eps_rel * max(float(np.linalg.norm(v)), float(np.linalg.norm(z)))
        eps_dual = sqrt_tau * cfg.eps_abs + cfg.eps_rel * float(np.linalg.norm(alpha * u))
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break
        if cfg.residual_balancing:
            if r_norm > 10 * s_norm:
                alpha *= 2.0
                u = u / 2.0
                cache.invalidate()
            elif s_norm > 10 * r_norm:
                alpha /= 2.0
                u = u * 2.0
                cache.invalidate()
    msg = "" if converged else f"reached max_iter={cfg.max_iter}"
    if ls_failures:
        msg = (msg + "; " if msg else "") + f"line search underflow in {ls_failures} theta updates"
    return v, z, u, it, r_norm, s_norm, converged, newton_steps, msg


def _make_fit(problem, weights, cfg, warm=None):
    v, z, u, it, r_norm, s_norm, converged, steps, msg = _admm(problem, weights, cfg, warm)
    return NodeFit(
        params=unflatten(problem.schema, problem.r, z),
        iterations=it, primal_residual=r_norm, dual_residual=s_norm,
        objective=_objective(problem, weights, z, v), converged=converged,
        lambda1=weights.lambda1, lambda2=weights.lambda2, newton_steps=steps,
        message=msg, state=(v, z, u))


def fit_node(data, r, weights, cfg=AdmmConfig(), warm_start=None):
    """Solve the penalized pseudo-likelihood problem for node ``r``.

    ``warm_start`` may be a previous :class:`NodeFit` (its iterates seed
    ADMM). Non-convergence is reported through ``converged=False``.
    """
    problem = NodeProblem(data, r)
    if isinstance(weights, (tuple, list)):
        weights = PenaltyWeights.for_node(data.schema, r, *weights)
    elif not weights.group_sizes:
        weights = PenaltyWeights.for_node(data.schema, r, weights.lambda1, weights.lambda2)
    warm = warm_start.state if isinstance(warm_start, NodeFit) else warm_start
    return _make_fit(problem, weights, cfg, warm)


def lambda_pairs(lambda1_grid, lambda2_grid):
    """Broadcast two grids (length-1 grids repeat) into ``(l1, l2)`` pairs."""
    l1 = np.atleast_1d(np.asarray(lambda1_grid, dtype=float))
    l2 = np.atleast_1d(np.asarray(lambda2_grid, dtype=float))
    if len(l1) == 1:
        l1 = np.repeat(l1, len(l2))
    if len(l2) == 1:
        l2 = np.repeat(l2, len(l1))
    if len(l1) != len(l2):
        raise ValueError(f"grid lengths differ: {len(l1)} vs {len(l2)}")
    if np.any(np.diff(l1) > 0) or np.any(np.diff(l2) > 0):
        raise ValueError("lambda grids must be non-increasing")
    return list(zip(l1.tolist(), l2.tolist()))


def regularization_path(data, r, lambda1_grid, lambda2_grid, cfg=AdmmConfig(), warm=True):
    """Fit node ``r`` along descending grids, warm-starting each point from
    the previous solution."""
    problem = NodeProblem(data, r)
    fits = []
    prev = None
    for l1, l2 in lambda_pairs(lambda1_grid, lambda2_grid):
        weights = PenaltyWeights.for_node(data.schema, r, l1, l2)
        fit = _make_fit(problem, weights, cfg, prev.state if (warm and prev is not None) else None)
        fits.append(fit)
        prev = fit
    return fits


def default_lambda_grid(lo=1e-4, hi=0.5, num=20):
    """Descending log-spaced grid over ``[lo, hi]``."""
    return np.geomspace(hi, lo, num)


# -- optimality certificate ------------------------------------------------------------

def kkt_residual(data, r, params, weights):
    """Smallest violation of the sub-gradient optimality system at ``params``.

    For every pseudo-edge block with loss gradient ``g``: a zero block needs
    ``||S(g, lambda2)||_2 <= lambda1 sqrt(nu)``; on a nonzero block, nonzero
    entries need ``g + lambda1 sqrt(nu) theta/||theta|| + lambda2 sign(theta) = 0``
    and zero entries ``|g| <= lambda2``. The bias gradient must vanish.
    Returns the largest violation (0 means exactly optimal).
    """
    from .model import flatten
    problem = NodeProblem(data, r)
    v = flatten(params) if isinstance(params, NodeParamVector) else np.asarray(params, dtype=float)
    g = problem.grad(v)
    if not isinstance(weights, PenaltyWeights) or not weights.group_sizes:
        l1, l2 = (weights.lambda1, weights.lambda2) if isinstance(weights, PenaltyWeights) else weights
        weights = PenaltyWeights.for_node(data.schema, r, l1, l2)
    worst = float(np.abs(g[:problem.m]).max())
    for sl, nu in zip(problem.blocks, weights.group_sizes):
        gb, th = g[sl], v[sl]
        thr = weights.lambda1 * math.sqrt(nu)
        nrm = float(np.linalg.norm(th))
        if nrm == 0.0:
            worst = max(worst, float(np.linalg.norm(soft_threshold(gb, weights.lambda2))) - thr)
            continue
        nz = th != 0
        resid = gb[nz] + thr * th[nz] / nrm + weights.lambda2 * np.sign(th[nz])
        worst = max(worst, float(np.abs(resid).max()))
        if (~nz).any():
            worst = max(worst, float(np.abs(gb[~nz]).max()) - weights.lambda2)
    return max(worst, 0.0)
