"""Minimal finite-dimensional exponential families with vector statistics.

Every family has density

    p(x | eta) = exp(<eta, B(x)> + C(x) - A(eta))

with the base measure folded into ``A`` (``C == 0`` for every catalog
family). All parameter-side methods are vectorized over leading axes:
``eta`` has shape ``(..., stat_dim)``.

Catalog tags (used by schema files)::

    bernoulli                 B(x) = x,                  x in {0, 1}
    gaussian                  B(x) = (x, x**2),          eta_2 < 0
    gamma                     B(x) = (log x, x),         eta_1 > -1, eta_2 < 0
    dirichlet:k               B(x) = (log x_1..log x_k), eta_j > -1
    categorical:k             B(x) = (1[x=1]..1[x=k-1]), reference category 0
    categorical:k:overcomplete  one-hot statistics with sum(eta) == 0
    inflated:<base>:<points>  point-inflated wrapper, e.g. inflated:gamma:0,25
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln, logsumexp, polygamma

SIMPLEX_TOL = 1e-9
FEASIBILITY_MARGIN = 0.1


class DomainError(ValueError):
    """A value lies outside the family's sample space."""


class ConstraintViolation(ValueError):
    """A natural parameter lies outside the open feasible region."""

    def __init__(self, message, coordinate=None, bound=None, value=None):
        super().__init__(message)
        self.coordinate = coordinate
        self.bound = bound
        self.value = value


@dataclass(frozen=True)
class InflationPoint:
    """An atom added to a base family.

    ``in_base_domain`` is true when the base measure already puts mass on
    ``value`` (only possible for discrete bases); the normalizer then
    removes the base atom so the point is not counted twice.
    """

    value: float
    in_base_domain: bool = False


class FamilySpec:
    """Base class for catalog families.

    Subclasses define ``tag``, ``stat_dim``, ``value_dim``, the open
    bounds ``lower``/``upper`` on natural parameters and the vectorized
    numerical methods.
    """

    tag: str
    stat_dim: int
    value_dim: int = 1
    discrete: bool = False
    domain_descriptor: str = ""
    eq_matrix: np.ndarray | None = None

    lower: np.ndarray
    upper: np.ndarray

    # -- statistics -----------------------------------------------------
    def stats(self, x):
        """Sufficient statistics; vectorized over leading sample axis."""
        raise NotImplementedError

    def check_domain(self, x):
        raise NotImplementedError

    def base_measure(self, x):
        self.check_domain(x)
        x = np.asarray(x, dtype=float)
        if self.value_dim > 1:
            return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
        return np.zeros(x.shape) if x.ndim else 0.0

    # -- parameters -----------------------------------------------------
    def feasible(self, eta):
        """Boolean mask over leading axes: strictly inside the open box
        and on the equality manifold."""
        eta = np.asarray(eta, dtype=float)
        ok = np.all((eta > self.lower) & (eta < self.upper), axis=-1)
        if self.eq_matrix is not None:
            ok &= np.all(np.abs(eta @ self.eq_matrix.T) <= 1e-8, axis=-1)
        return ok

    def check_feasible(self, eta):
        eta = np.asarray(eta, dtype=float)
        if eta.shape[-1] != self.stat_dim:
            raise ConstraintViolation(
                f"{self.tag}: expected {self.stat_dim} natural parameters, got {eta.shape[-1]}")
        flat = eta.reshape(-1, self.stat_dim)
        bad_lo = flat <= self.lower
        bad_hi = flat >= self.upper
        if bad_lo.any() or bad_hi.any() or np.isnan(flat).any():
            row, col = np.argwhere(bad_lo | bad_hi | np.isnan(flat))[0]
            bound = self.lower[col] if bad_lo[row, col] else self.upper[col]
            side = ">" if bad_lo[row, col] else "<"
            raise ConstraintViolation(
                f"{self.tag}: eta[{col}] = {flat[row, col]!r} violates eta[{col}] {side} {bound!r}",
                coordinate=int(col), bound=float(bound), value=float(flat[row, col]))
        if self.eq_matrix is not None:
            resid = np.abs(flat @ self.eq_matrix.T)
            if (resid > 1e-8).any():
                raise ConstraintViolation(
                    f"{self.tag}: equality constraint violated by {resid.max():.3g}",
                    bound=0.0, value=float(resid.max()))

    def log_partition(self, eta):
        raise NotImplementedError

    def grad(self, eta):
        raise NotImplementedError

    def hessian(self, eta):
        raise NotImplementedError

    def feasible_point(self):
        """Deterministic phase-I point: every open bound is cleared by
        ``FEASIBILITY_MARGIN`` scaled by the bound magnitude (at least 1)."""
        eta = np.zeros(self.stat_dim)
        for j in range(self.stat_dim):
            lo, hi = self.lower[j], self.upper[j]
            lo_ok = not np.isfinite(lo) or eta[j] - lo >= FEASIBILITY_MARGIN * max(1.0, abs(lo))
            hi_ok = not np.isfinite(hi) or hi - eta[j] >= FEASIBILITY_MARGIN * max(1.0, abs(hi))
            if lo_ok and hi_ok:
                continue
            if np.isfinite(lo) and np.isfinite(hi):
                eta[j] = 0.5 * (lo + hi)
            elif np.isfinite(hi):
                eta[j] = hi - max(1.0, abs(hi))
            else:
                eta[j] = lo + max(1.0, abs(lo))
        return eta

    # -- sampling / enumeration ------------------------------------------
    def sample(self, eta, rng):
        raise NotImplementedError

    def support(self):
        """All domain values for discrete families, else ``None``."""
        return None

    def stat_ranges(self):
        """Per-coordinate closed hull ``(lo, hi)`` of B over the domain
        (possibly infinite); used for interval-arithmetic feasibility."""
        raise NotImplementedError

    def domain_sample(self, rng, n):
        """``n`` values spread over the domain (minimality checks)."""
        raise NotImplementedError

    def mean_value(self, eta):
        """Mean of the raw value; used for edge-effect heuristics."""
        return self.grad(eta)

    def __repr__(self):
        return f"<{type(self).__name__} {self.tag}>"

    def __eq__(self, other):
        return isinstance(other, FamilySpec) and other.tag == self.tag

    def __hash__(self):
        return hash(self.tag)


def _as_scalar_values(x):
    return np.asarray(x, dtype=float)


class Bernoulli(FamilySpec):
    tag = "bernoulli"
    stat_dim = 1
    discrete = True
    domain_descriptor = "binary {0, 1}"
    lower = np.array([-np.inf])
    upper = np.array([np.inf])

    def check_domain(self, x):
        x = _as_scalar_values(x)
        if not np.all((x == 0) | (x == 1)):
            raise DomainError(f"bernoulli value must be 0 or 1, got {x!r}")

    def stats(self, x):
        self.check_domain(x)
        x = _as_scalar_values(x)
        return x[..., None].copy()

    def log_partition(self, eta):
        return np.logaddexp(0.0, np.asarray(eta, dtype=float)[..., 0])

    def grad(self, eta):
        return expit(np.asarray(eta, dtype=float))

    def hessian(self, eta):
        p = expit(np.asarray(eta, dtype=float))
        return (p * (1 - p))[..., None]

    def sample(self, eta, rng):
        e = float(eta[0])
        p = 1.0 / (1.0 + math.exp(-e)) if e > -700 else 0.0
        return 1.0 if rng.random() < p else 0.0

    def support(self):
        return [0.0, 1.0]

    def stat_ranges(self):
        return [(0.0, 1.0)]

    def domain_sample(self, rng, n):
        return rng.integers(0, 2, size=n).astype(float)


class Gaussian(FamilySpec):
    tag = "gaussian"
    stat_dim = 2
    domain_descriptor = "real line"
    lower = np.array([-np.inf, -np.inf])
    upper = np.array([np.inf, 0.0])
    _HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)

    def check_domain(self, x):
        x = _as_scalar_values(x)
        if not np.all(np.isfinite(x)):
            raise DomainError(f"gaussian value must be finite, got {x!r}")

    def stats(self, x):
        self.check_domain(x)
        x = _as_scalar_values(x)
        return np.stack([x, x * x], axis=-1)

    def log_partition(self, eta):
        eta = np.asarray(eta, dtype=float)
        e1, e2 = eta[..., 0], eta[..., 1]
        return -e1 * e1 / (4 * e2) - 0.5 * np.log(-2 * e2) + self._HALF_LOG_2PI

    def grad(self, eta):
        eta = np.asarray(eta, dtype=float)
        e1, e2 = eta[..., 0], eta[..., 1]
        var = -0.5 / e2
        mu = e1 * var
        return np.stack([mu, mu * mu + var], axis=-1)

    def hessian(self, eta):
        eta = np.asarray(eta, dtype=float)
        e1, e2 = eta[..., 0], eta[..., 1]
        h11 = -0.5 / e2
        h12 = e1 / (2 * e2 * e2)
        h22 = -e1 * e1 / (2 * e2 ** 3) + 1 / (2 * e2 * e2)
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

    def feasible_point(self):
        return np.array([0.0, -0.5])

    def sample(self, eta, rng):
        var = -0.5 / float(eta[1])
        return float(eta[0]) * var + math.sqrt(var) * rng.standard_normal()

    def stat_ranges(self):
        return [(-np.inf, np.inf), (0.0, np.inf)]

    def domain_sample(self, rng, n):
        return rng.uniform(-5, 5, size=n)

    def mean_value(self, eta):
        return self.grad(eta)[..., :1]


class Gamma(FamilySpec):
    """Gamma with shape ``eta_1 + 1`` and rate ``-eta_2``."""

    tag = "gamma"
    stat_dim = 2
    domain_descriptor = "positive reals"
    lower = np.array([-1.0, -np.inf])
    upper = np.array([np.inf, 0.0])

    def check_domain(self, x):
        x = _as_scalar_values(x)
        if not np.all(np.isfinite(x) & (x > 0)):
            raise DomainError(f"gamma value must be positive and finite, got {x!r}")

    def stats(self, x):
        self.check_domain(x)
        x = _as_scalar_values(x)
        return np.stack([np.log(x), x], axis=-1)

    def log_partition(self, eta):
        eta = np.asarray(eta, dtype=float)
        a = eta[..., 0] + 1
        return gammaln(a) - a * np.log(-eta[..., 1])

    def grad(self, eta):
        eta = np.asarray(eta, dtype=float)
        a, b = eta[..., 0] + 1, -eta[..., 1]
        return np.stack([digamma(a) - np.log(b), a / b], axis=-1)

    def hessian(self, eta):
        eta = np.asarray(eta, dtype=float)
        a, b = eta[..., 0] + 1, -eta[..., 1]
        h11 = polygamma(1, a)
        h12 = 1 / b
        h22 = a / (b * b)
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

    def feasible_point(self):
        return np.array([0.0, -1.0])

    def sample(self, eta, rng):
        x = rng.gamma(float(eta[0]) + 1, -1.0 / float(eta[1]))
        # shape < 1 can underflow to exactly zero
        return x if x > 0 else 5e-324

    def stat_ranges(self):
        return [(-np.inf, np.inf), (0.0, np.inf)]

    def domain_sample(self, rng, n):
        return np.exp(rng.uniform(-4, 3, size=n))

    def mean_value(self, eta):
        return self.grad(eta)[..., 1:]


class Dirichlet(FamilySpec):
    """Dirichlet on the (k-1)-simplex with ``alpha = eta + 1``."""

    discrete = False

    def __init__(self, k):
        if k < 2:
            raise ValueError("dirichlet needs k >= 2")
        self.k = k
        self.tag = f"dirichlet:{k}"
        self.stat_dim = k
        self.value_dim = k
        self.domain_descriptor = f"({k - 1})-simplex"
        self.lower = np.full(k, -1.0)
        self.upper = np.full(k, np.inf)

    def check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.k:
            raise DomainError(f"{self.tag} value must have {self.k} coordinates, got shape {x.shape}")
        if not np.all(x > 0) or not np.all(np.abs(x.sum(axis=-1) - 1) <= SIMPLEX_TOL):
            raise DomainError(f"{self.tag} value must lie in the open simplex, got {x!r}")

    def stats(self, x):
        self.check_domain(x)
        return np.log(np.asarray(x, dtype=float))

    def log_partition(self, eta):
        a = np.asarray(eta, dtype=float) + 1
        return gammaln(a).sum(axis=-1) - gammaln(a.sum(axis=-1))

    def grad(self, eta):
        a = np.asarray(eta, dtype=float) + 1
        return digamma(a) - digamma(a.sum(axis=-1))[..., None]

    def hessian(self, eta):
        a = np.asarray(eta, dtype=float) + 1
        diag = polygamma(1, a)
        off = polygamma(1, a.sum(axis=-1))
        h = -off[..., None, None] * np.ones(a.shape[:-1] + (self.k, self.k))
        idx = np.arange(self.k)
        h[..., idx, idx] += diag
        return h

    def sample(self, eta, rng):
        x = rng.dirichlet(np.asarray(eta, dtype=float) + 1)
        if not np.all(x > 0):
            x = np.maximum(x, 1e-300)
            x /= x.sum()
        return x

    def stat_ranges(self):
        return [(-np.inf, 0.0)] * self.k

    def domain_sample(self, rng, n):
        return rng.dirichlet(np.full(self.k, 0.7), size=n)

    def mean_value(self, eta):
        a = np.asarray(eta, dtype=float) + 1
        return a / a.sum(axis=-1, keepdims=True)


class Categorical(FamilySpec):
    """Categorical over ``{0, ..., k-1}``.

    The default minimal form uses ``k - 1`` indicators with category 0 as
    reference. ``overcomplete=True`` uses all ``k`` indicators together
    with the affine constraint ``sum(eta) == 0``.
    """

    discrete = True

    def __init__(self, k, overcomplete=False):
        if k < 2:
            raise ValueError("categorical needs k >= 2")
        self.k = k
        self.overcomplete = overcomplete
        self.tag = f"categorical:{k}" + (":overcomplete" if overcomplete else "")
        self.stat_dim = k if overcomplete else k - 1
        self.domain_descriptor = f"finite set {{0..{k - 1}}}"
        self.lower = np.full(self.stat_dim, -np.inf)
        self.upper = np.full(self.stat_dim, np.inf)
        self.eq_matrix = np.ones((1, k)) if overcomplete else None

    def check_domain(self, x):
        x = _as_scalar_values(x)
        if not np.all((x == np.round(x)) & (x >= 0) & (x < self.k)):
            raise DomainError(f"{self.tag} value must be an integer in [0, {self.k}), got {x!r}")

    def stats(self, x):
        self.check_domain(x)
        x = _as_scalar_values(x).astype(int)
        onehot = np.eye(self.k)[x]
        return onehot if self.overcomplete else onehot[..., 1:]

    def _full(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.overcomplete:
            return eta
        return np.concatenate([np.zeros(eta.shape[:-1] + (1,)), eta], axis=-1)

    def log_partition(self, eta):
        return logsumexp(self._full(eta), axis=-1)

    def grad(self, eta):
        full = self._full(eta)
        p = np.exp(full - logsumexp(full, axis=-1, keepdims=True))
        return p if self.overcomplete else p[..., 1:]

    def hessian(self, eta):
        g = self.grad(eta)
        h = -g[..., :, None] * g[..., None, :]
        idx = np.arange(g.shape[-1])
        h[..., idx, idx] += g
        return h

    def sample(self, eta, rng):
        full = self._full(eta)
        p = np.exp(full - full.max())
        return float(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"), self.k - 1))

    def support(self):
        return [float(c) for c in range(self.k)]

    def stat_ranges(self):
        return [(0.0, 1.0)] * self.stat_dim

    def domain_sample(self, rng, n):
        return rng.integers(0, self.k, size=n).astype(float)

    def mean_value(self, eta):
        full = self._full(eta)
        p = np.exp(full - logsumexp(full, axis=-1, keepdims=True))
        return (p * np.arange(self.k)).sum(axis=-1, keepdims=True)


class Inflated(FamilySpec):
    """Point-inflated family over a scalar-valued base.

    Statistics are ``(1[x=j_1], ..., 1[x=j_K], B_base(x))`` with the base
    block zeroed on the inflation points, so the density at ``j_k`` is
    ``exp(eta0_k - A)``. The normalizer is

        A = log(sum_k exp(eta0_k) - sum_k a_k exp(<eta1, B(j_k)>) + exp(A_base(eta1)))

    where ``a_k = 1`` iff the base measure already has an atom at ``j_k``.
    Applying the single-point formula recursively gives the same result.
    """

    def __init__(self, base, points):
        if base.value_dim != 1:
            raise ValueError("inflation needs a scalar-valued base family")
        values = [p.value for p in points]
        if len(set(values)) != len(values):
            raise ValueError(f"duplicate inflation points: {values}")
        if not points:
            raise ValueError("need at least one inflation point")
        self.base = base
        self.points = tuple(points)
        self.point_values = np.array(values, dtype=float)
        self.atoms = np.array([p.in_base_domain for p in points], dtype=bool)
        if self.atoms.any():
            self._atom_stats = base.stats(self.point_values[self.atoms])
        else:
            self._atom_stats = np.zeros((0, base.stat_dim))
        self.K = len(points)
        self.stat_dim = self.K + base.stat_dim
        self.discrete = base.discrete
        pts = ",".join(_fmt_point(v) for v in values)
        self.tag = f"inflated:{base.tag}:{pts}"
        self.domain_descriptor = f"{base.domain_descriptor} union {{{pts}}}"
        self.lower = np.concatenate([np.full(self.K, -np.inf), base.lower])
        self.upper = np.concatenate([np.full(self.K, np.inf), base.upper])
        if base.eq_matrix is not None:
            self.eq_matrix = np.hstack([np.zeros((base.eq_matrix.shape[0], self.K)), base.eq_matrix])

    def _point_mask(self, x):
        return x[..., None] == self.point_values

    def check_domain(self, x):
        x = _as_scalar_values(x)
        rest = x[~self._point_mask(x).any(axis=-1)]
        if rest.size:
            self.base.check_domain(rest)

    def stats(self, x):
        self.check_domain(x)
        x = _as_scalar_values(x)
        ind = self._point_mask(x).astype(float)
        on_point = ind.any(axis=-1)
        out = np.zeros(x.shape + (self.stat_dim,))
        out[..., :self.K] = ind
        if (~on_point).any():
            out[~on_point, self.K:] = self.base.stats(x[~on_point])
        return out

    def _terms(self, eta):
        """Log-weights of the atoms and of the (atom-free) base mass."""
        eta = np.asarray(eta, dtype=float)
        eta0, eta1 = eta[..., :self.K], eta[..., self.K:]
        log_base = self.base.log_partition(eta1)
        if self.atoms.any():
            atom_logw = eta1 @ self._atom_stats.T
            # log(exp(A) - sum exp(atom_logw)) without leaving log space
            removed = logsumexp(atom_logw, axis=-1)
            log_base = log_base + np.log1p(-np.exp(removed - log_base))
        else:
            atom_logw = None
        return eta0, eta1, log_base, atom_logw

    def log_partition(self, eta):
        eta0, _, log_base, _ = self._terms(eta)
        return logsumexp(np.concatenate([eta0, log_base[..., None]], axis=-1), axis=-1)

    def grad(self, eta):
        eta0, eta1, log_base, atom_logw = self._terms(eta)
        logz = logsumexp(np.concatenate([eta0, log_base[..., None]], axis=-1), axis=-1)
        p0 = np.exp(eta0 - logz[..., None])
        # d/deta1 of exp(A_base) - sum_atoms exp(<eta1, b_k>), divided by Z
        g1 = np.exp(self.base.log_partition(eta1) - logz)[..., None] * self.base.grad(eta1)
        if atom_logw is not None:
            g1 = g1 - np.exp(atom_logw - logz[..., None]) @ self._atom_stats
        return np.concatenate([p0, g1], axis=-1)

    def hessian(self, eta):
        eta0, eta1, log_base, atom_logw = self._terms(eta)
        logz = logsumexp(np.concatenate([eta0, log_base[..., None]], axis=-1), axis=-1)
        g = self.grad(eta)
        K = self.K
        d2 = np.zeros(g.shape + (self.stat_dim,))
        idx = np.arange(K)
        d2[..., idx, idx] = np.exp(eta0 - logz[..., None])
        gb = self.base.grad(eta1)
        wb = np.exp(self.base.log_partition(eta1) - logz)[..., None, None]
        q2 = wb * (self.base.hessian(eta1) + gb[..., :, None] * gb[..., None, :])
        if atom_logw is not None:
            wa = np.exp(atom_logw - logz[..., None])
            q2 = q2 - np.einsum("...k,ki,kj->...ij", wa, self._atom_stats, self._atom_stats)
        d2[..., K:, K:] = q2
        return d2 - g[..., :, None] * g[..., None, :]

    def sample(self, eta, rng):
        eta = np.asarray(eta, dtype=float)
        eta0, eta1, log_base, _ = self._terms(eta)
        logw = np.append(eta0, log_base)
        w = np.exp(logw - logw.max())
        c = np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right")
        if c < self.K:
            return float(self.point_values[c])
        atom_vals = self.point_values[self.atoms]
        while True:
            x = self.base.sample(eta1, rng)
            if not np.any(atom_vals == x):
                return x

    def feasible_point(self):
        return np.concatenate([np.zeros(self.K), self.base.feasible_point()])

    def support(self):
        base = self.base.support()
        if base is None:
            return None
        extra = [v for v in self.point_values.tolist() if v not in base]
        return list(base) + extra

    def stat_ranges(self):
        ranges = [(0.0, 1.0)] * self.K
        for lo, hi in self.base.stat_ranges():
            ranges.append((min(lo, 0.0), max(hi, 0.0)))
        return ranges

    def domain_sample(self, rng, n):
        x = self.base.domain_sample(rng, n)
        hit = rng.random(n) < 0.3
        x[hit] = rng.choice(self.point_values, size=hit.sum())
        return x

    def feasible(self, eta):
        eta = np.asarray(eta, dtype=float)
        ok = super().feasible(eta)
        if self.atoms.any():
            with np.errstate(all="ignore"):
                eta1 = eta[..., self.K:]
                ok &= logsumexp(eta1 @ self._atom_stats.T, axis=-1) < self.base.log_partition(eta1)
        return ok

    def mean_value(self, eta):
        g = self.grad(eta)
        base_mean_stat = self.base.mean_value(eta[..., self.K:])
        base_w = 1 - g[..., :self.K].sum(axis=-1, keepdims=True)
        return (g[..., :self.K] * self.point_values).sum(axis=-1, keepdims=True) + base_w * base_mean_stat


def _fmt_point(v):
    return repr(float(v)).removesuffix(".0") if float(v).is_integer() else repr(float(v))


# -- catalog ------------------------------------------------------------------

def inflate(base, points):
    """Wrap ``base`` with atoms at ``points``.

    ``points`` may hold :class:`InflationPoint` objects or bare numbers; for
    numbers, ``in_base_domain`` is inferred (an atom of a discrete base).
    """
    resolved = []
    for p in points:
        if isinstance(p, InflationPoint):
            resolved.append(p)
            continue
        v = float(p)
        atom = False
        if base.discrete:
            try:
                base.check_domain(v)
                atom = True
            except DomainError:
                atom = False
        resolved.append(InflationPoint(v, atom))
    return Inflated(base, resolved)


def parse_family(tag):
    """Build a family from its schema tag."""
    if not isinstance(tag, str) or not tag:
        raise ValueError(f"family tag must be a non-empty string, got {tag!r}")
    t = tag.strip()
    if t == "bernoulli":
        return Bernoulli()
    if t == "gaussian":
        return Gaussian()
    if t == "gamma":
        return Gamma()
    head, _, rest = t.partition(":")
    if head == "inflated":
        base_tag, sep, pts = rest.rpartition(":")
        if not sep or not base_tag or not pts:
            raise ValueError(f"malformed inflated tag {tag!r}; expected inflated:<base>:<p1,p2,...>")
        try:
            points = [float(s) for s in pts.split(",")]
        except ValueError:
            raise ValueError(f"malformed inflation points in {tag!r}") from None
        return inflate(parse_family(base_tag), points)
    if head in ("dirichlet", "categorical"):
        parts = rest.split(":")
        try:
            k = int(parts[0])
        except ValueError:
            raise ValueError(f"malformed family tag {tag!r}") from None
        if head == "dirichlet" and len(parts) == 1:
            return Dirichlet(k)
        if head == "categorical" and len(parts) == 1:
            return Categorical(k)
        if head == "categorical" and parts[1:] == ["overcomplete"]:
            return Categorical(k, overcomplete=True)
    raise ValueError(f"unknown family tag {tag!r}")


# -- functional interface -----------------------------------------------------

def sufficient_statistics(family, x):
    return family.stats(x)


def base_measure(family, x):
    return family.base_measure(x)


def log_partition(family, eta):
    family.check_feasible(eta)
    out = family.log_partition(eta)
    return float(out) if np.ndim(out) == 0 else out


def grad_log_partition(family, eta):
    family.check_feasible(eta)
    return family.grad(eta)


def hessian_log_partition(family, eta):
    family.check_feasible(eta)
    return family.hessian(eta)


def sample(family, eta, rng):
    family.check_feasible(eta)
    return family.sample(np.asarray(eta, dtype=float), rng)


def feasible_point(family):
    return family.feasible_point()


def winsorize_to_bucket(values, quantile=99.5):
    """Map values above the ``quantile`` percentile of the positive entries
    to the cap itself, so they land on an outlier inflation point.

    Returns ``(mapped, cap)``; pair with ``inflate(gamma, [0, cap])``.
    """
    values = np.asarray(values, dtype=float)
    pos = values[values > 0]
    if pos.size == 0:
        raise ValueError("no positive values to winsorize")
    cap = float(np.percentile(pos, quantile))
    return np.where(values > cap, cap, values), cap
