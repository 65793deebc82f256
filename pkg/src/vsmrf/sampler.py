"""Synthetic ground-truth models and Gibbs sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expfam import Categorical
from .model import Dataset, JointModel, ModelValidationError, gaussian_precision, validate_model


@dataclass(frozen=True)
class SamplerConfig:
    burn_in: int = 2000
    thin: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass(frozen=True)
class SparsityProfile:
    edge_sparsity: float
    param_sparsity: float

    def __post_init__(self):
        for name in ("edge_sparsity", "param_sparsity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


HIGH_SPARSITY = SparsityProfile(0.9, 0.5)
LOW_SPARSITY = SparsityProfile(0.5, 0.1)


def _safe_signs(row_bounds, col_range):
    """Signs of ``w`` for which ``w * B`` (B in ``col_range``) can never
    push a coordinate with open bounds ``row_bounds`` toward infeasibility."""
    lo_bound, hi_bound = row_bounds
    lo, hi = col_range
    allowed = {-1.0, 1.0}
    if np.isfinite(hi_bound):
        # contribution must stay <= 0
        allowed &= {-1.0} if lo >= 0 else {1.0} if hi <= 0 else set()
    if np.isfinite(lo_bound):
        allowed &= {1.0} if lo >= 0 else {-1.0} if hi <= 0 else set()
    return allowed


def sign_pattern(fam_r, fam_t):
    """Allowed signs for each entry of an ``m_r x m_t`` interaction block.

    Returns an object array of sets; an empty set marks a structural zero.
    """
    rr, rt = fam_r.stat_ranges(), fam_t.stat_ranges()
    out = np.empty((fam_r.stat_dim, fam_t.stat_dim), dtype=object)
    for i in range(fam_r.stat_dim):
        for j in range(fam_t.stat_dim):
            s = _safe_signs((fam_r.lower[i], fam_r.upper[i]), rt[j])
            s &= _safe_signs((fam_t.lower[j], fam_t.upper[j]), rr[i])
            out[i, j] = s
    return out


def _draw_block(pattern, profile, weight_scale, rng):
    allowed = [(i, j) for i in range(pattern.shape[0]) for j in range(pattern.shape[1]) if pattern[i, j]]
    if not allowed:
        return None
    block = np.zeros(pattern.shape)
    while True:
        for i, j in allowed:
            if rng.random() < profile.param_sparsity:
                continue
            signs = sorted(pattern[i, j])
            sign = signs[0] if len(signs) == 1 else (1.0 if rng.random() < 0.5 else -1.0)
            block[i, j] = sign * rng.uniform(0.5, 1.0) * weight_scale
        if block.any():
            return block
        if profile.param_sparsity >= 1.0:
            return None


def _load_gaussian_diagonal(schema, bias, edges, margin=0.1):
    """Shift Gaussian ``eta_2`` biases down until the Gaussian block of the
    joint has precision with smallest eigenvalue >= ``margin``."""
    probe = JointModel(schema, bias, edges)
    prec, gauss = gaussian_precision(probe)
    if prec is None or len(gauss) < 2:
        return bias
    lam = np.linalg.eigvalsh(prec).min()
    if lam >= margin:
        return bias
    bias = [b.copy() for b in bias]
    for r in gauss:
        bias[r][1] -= 0.5 * (margin - lam)
    return tuple(bias)


def random_model(schema, profile, weight_scale=1.0, rng=None, max_retries=50):
    """Draw a random sparse ground-truth model.

    Each unordered pair becomes an edge with probability
    ``1 - edge_sparsity``. Inside an edge each entry is zero with
    probability ``param_sparsity`` and otherwise has magnitude
    ``U[0.5, 1] * weight_scale``. Entry signs are restricted so that no
    configuration can push a constrained natural parameter out of its
    domain; entries that admit no safe sign are structural zeros. Biases
    start at each family's feasible point, with Gaussian precision loaded
    when needed for joint normalizability.
    """
    if weight_scale <= 0:
        raise ValueError("weight_scale must be positive")
    rng = np.random.default_rng(rng)
    fams = schema.families
    if any(f.eq_matrix is not None for f in fams):
        raise ValueError("random_model does not support equality-constrained families")
    patterns = {}
    last_error = None
    for _ in range(max_retries):
        edges = {}
        for r in range(schema.p):
            for t in range(r + 1, schema.p):
                if rng.random() >= 1.0 - profile.edge_sparsity:
                    continue
                key = (fams[r].tag, fams[t].tag)
                if key not in patterns:
                    patterns[key] = sign_pattern(fams[r], fams[t])
                block = _draw_block(patterns[key], profile, weight_scale, rng)
                if block is not None:
                    edges[(r, t)] = block
        bias = tuple(f.feasible_point() for f in fams)
        bias = _load_gaussian_diagonal(schema, bias, edges)
        model = JointModel(schema, bias, edges)
        try:
            validate_model(model)
            return model
        except ModelValidationError as exc:
            last_error = exc
    raise ModelValidationError(f"no valid model after {max_retries} draws: {last_error}")


def _fast_stats(fam):
    tag = fam.tag
    if tag == "bernoulli":
        return lambda x: (x,)
    if tag == "gaussian":
        return lambda x: (x, x * x)
    if tag == "gamma":
        return lambda x: (math.log(x), x)
    if isinstance(fam, Categorical):
        table = fam.stats(np.arange(fam.k, dtype=float))
        return lambda x: table[int(x)]
    return lambda x: fam.stats(x)


def _unconstrained(fam):
    """True when every natural parameter vector is valid (no check needed)."""
    return fam.eq_matrix is None and np.all(np.isneginf(fam.lower)) and np.all(np.isposinf(fam.upper))


def gibbs_sample(model, n, cfg=SamplerConfig()):
    """Systematic-scan Gibbs sampler.

    Runs ``burn_in`` discarded scans, then keeps every ``thin``-th scan
    until ``n`` samples are collected. The initial state draws each node
    from its family at the bias. Deterministic given ``cfg.seed``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    schema = model.schema
    fams = schema.families
    p = schema.p
    rng = np.random.default_rng(cfg.seed)
    coupling = model.coupling_matrix()
    slices = [schema.stat_slice(r) for r in range(p)]
    rows = [coupling[slices[r]] for r in range(p)]
    active = [bool(rows[r].any()) for r in range(p)]
    check = [active[r] and not _unconstrained(fams[r]) for r in range(p)]
    stats_fn = [_fast_stats(f) for f in fams]
    bias = model.bias

    s = np.zeros(schema.total_stat_dim)
    x = []
    for r, f in enumerate(fams):
        v = f.sample(bias[r], rng)
        x.append(v)
        s[slices[r]] = stats_fn[r](v)

    out = [np.empty((n, f.value_dim)) if f.value_dim > 1 else np.empty(n) for f in fams]
    total = cfg.burn_in + n * cfg.thin
    kept = 0
    for scan in range(total):
        for r in range(p):
            eta = bias[r] + rows[r] @ s if active[r] else bias[r]
            if check[r] and not fams[r].feasible(eta):
                raise ModelValidationError(
                    f"scan {scan}: conditional of node {schema.names[r]!r} is improper at eta={eta.tolist()}")
            v = fams[r].sample(eta, rng)
            x[r] = v
            s[slices[r]] = stats_fn[r](v)
        if scan >= cfg.burn_in and (scan - cfg.burn_in + 1) % cfg.thin == 0:
            for r in range(p):
                out[r][kept] = x[r]
            kept += 1
    data = Dataset(schema, out)
    data.scans = total
    return data
