"""Independent reference computations used by the tests.

Nothing here calls the library's log-partition, prox or solver code; the
oracles work from densities, brute-force sums, quadrature and generic
optimizers.
"""
import itertools
import math

import mpmath
import numpy as np
from scipy import integrate

from vsmrf.expfam import Bernoulli, Categorical, Dirichlet, Gamma, Gaussian, Inflated


def random_eta(fam, rng):
    """Feasible natural parameters in a range where quadrature is reliable."""
    if isinstance(fam, Bernoulli):
        return rng.uniform(-4, 4, 1)
    if isinstance(fam, Gaussian):
        return np.array([rng.uniform(-2, 2), rng.uniform(-2.0, -0.2)])
    if isinstance(fam, Gamma):
        return np.array([rng.uniform(-0.8, 3.0), rng.uniform(-3.0, -0.3)])
    if isinstance(fam, Dirichlet):
        return rng.uniform(-0.8, 3.0, fam.k)
    if isinstance(fam, Categorical):
        eta = rng.uniform(-3, 3, fam.stat_dim)
        if fam.overcomplete:
            eta -= eta.mean()
        return eta
    if isinstance(fam, Inflated):
        return np.concatenate([rng.uniform(-2, 2, fam.K), random_eta(fam.base, rng)])
    raise TypeError(fam)


# -- base integrals ------------------------------------------------------------

def _gaussian_log_integral(e1, e2):
    # integrand exp(e1 x + e2 x^2), recentred at its peak for stability
    mu = -e1 / (2 * e2)
    peak = e1 * mu + e2 * mu * mu
    sd = math.sqrt(-0.5 / e2)
    f = lambda x: math.exp(e1 * x + e2 * x * x - peak)
    val = sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
              for a, b in ((-math.inf, mu - 10 * sd), (mu - 10 * sd, mu + 10 * sd), (mu + 10 * sd, math.inf)))
    return peak + math.log(val)


def _gamma_log_integral(e1, e2):
    # x = e^s turns x^{e1} e^{e2 x} dx into exp((e1 + 1) s + e2 e^s) ds
    a, b = e1 + 1, -e2
    s0 = math.log(a / b)
    peak = a * s0 - b * math.exp(s0)
    f = lambda s: math.exp(a * s - b * math.exp(s) - peak)
    val = sum(integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
              for lo, hi in ((-math.inf, s0 - 5), (s0 - 5, s0 + 5), (s0 + 5, math.inf)))
    return peak + math.log(val)


def _dirichlet_log_normalizer(eta):
    alpha = [mpmath.mpf(float(e)) + 1 for e in eta]
    return float(sum(mpmath.loggamma(a) for a in alpha) - mpmath.loggamma(sum(alpha)))


def _discrete_states(fam):
    if isinstance(fam, Bernoulli):
        return [0.0, 1.0]
    if isinstance(fam, Categorical):
        return [float(c) for c in range(fam.k)]
    raise TypeError(fam)


def _discrete_stat(fam, x):
    if isinstance(fam, Bernoulli):
        return np.array([x])
    onehot = np.eye(fam.k)[int(x)]
    return onehot if fam.overcomplete else onehot[1:]


def log_partition_oracle(fam, eta):
    eta = np.asarray(eta, dtype=float)
    if isinstance(fam, (Bernoulli, Categorical)):
        terms = [float(eta @ _discrete_stat(fam, x)) for x in _discrete_states(fam)]
        m = max(terms)
        return m + math.log(sum(math.exp(t - m) for t in terms))
    if isinstance(fam, Gaussian):
        return _gaussian_log_integral(*eta)
    if isinstance(fam, Gamma):
        return _gamma_log_integral(*eta)
    if isinstance(fam, Dirichlet):
        return _dirichlet_log_normalizer(eta)
    if isinstance(fam, Inflated):
        return _inflated_oracle(fam, eta)
    raise TypeError(fam)


def _inflated_oracle(fam, eta):
    """Sum the density exp(<eta, B(x)>) over the atoms and the base part.

    Discrete bases are summed state by state with the inflated statistic
    itself; continuous bases add the atom masses to a quadrature of the
    base integral (the points carry no base mass).
    """
    K = fam.K
    eta0, eta1 = eta[:K], eta[K:]
    pts = list(fam.point_values)
    if fam.base.discrete:
        states = sorted(set(_discrete_states(fam.base)) | set(pts))
        terms = []
        for x in states:
            if x in pts:
                terms.append(float(eta0[pts.index(x)]))
            else:
                terms.append(float(eta1 @ _discrete_stat(fam.base, x)))
        m = max(terms)
        return m + math.log(sum(math.exp(t - m) for t in terms))
    base = log_partition_oracle(fam.base, eta1)
    terms = list(eta0) + [base]
    m = max(terms)
    return m + math.log(sum(math.exp(t - m) for t in terms))


def inflated_gamma_total_mass(fam, eta, log_z):
    """Atom masses plus the quadrature of the continuous density, normalized
    by ``exp(log_z)``; should be 1."""
    K = fam.K
    eta0, (e1, e2) = eta[:K], eta[K:]
    atoms = sum(math.exp(e - log_z) for e in eta0)
    f = lambda x: math.exp(e1 * math.log(x) + e2 * x - log_z)
    cont = integrate.quad(f, 0, 1, limit=200)[0] + integrate.quad(f, 1, math.inf, limit=200)[0]
    return atoms + cont


# -- finite differences ------------------------------------------------------------

def fd_grad(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


# -- enumeration of small joint models ------------------------------------------------

def brute_force_joint(model):
    """Exact joint over all states of a discrete model, summing each pair once."""
    schema = model.schema
    supports = [_discrete_states(f) for f in schema.families]
    states = list(itertools.product(*supports))
    logp = []
    for x in states:
        stats = [_discrete_stat(f, v) for f, v in zip(schema.families, x)]
        s = sum(float(model.bias[r] @ stats[r]) for r in range(schema.p))
        for (r, t), blk in model.edges.items():
            s += float(stats[r] @ blk @ stats[t])
        logp.append(s)
    logp = np.array(logp)
    logp -= logp.max()
    p = np.exp(logp)
    return states, p / p.sum()


# -- sparse-group-lasso prox by direct minimization ----------------------------------

def prox_objective(z, y, lambda1, lambda2, nu, alpha=1.0):
    return (lambda1 * math.sqrt(nu) * np.linalg.norm(z) + lambda2 * np.abs(z).sum()
            + 0.5 * alpha * float((z - y) @ (z - y)))


def brute_force_prox(y, lambda1, lambda2, nu, alpha=1.0):
    """Minimize the block prox objective over every closed sign orthant.

    Inside an orthant the l1 term is linear, so each piece is a smooth
    bound-constrained problem; the best orthant optimum (or zero) wins.
    """
    from scipy.optimize import minimize
    y = np.asarray(y, dtype=float)
    obj = lambda z: prox_objective(z, y, lambda1, lambda2, nu, alpha)

    def smooth(z, signs):
        nrm = np.linalg.norm(z)
        g = alpha * (z - y) + lambda2 * signs
        if nrm > 0:
            g = g + lambda1 * math.sqrt(nu) * z / nrm
        return obj(z), g

    best = np.zeros_like(y)
    for signs in itertools.product([-1.0, 1.0], repeat=y.size):
        signs = np.array(signs)
        x0 = np.where(signs * y > 0, y, 0.0)
        if not x0.any():
            continue
        bounds = [(0, None) if sg > 0 else (None, 0) for sg in signs]
        res = minimize(smooth, x0, args=(signs,), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"ftol": 1e-16, "gtol": 1e-13, "maxiter": 1000})
        if obj(res.x) < obj(best):
            best = res.x
    return best


# -- dense reference solver for the penalized node problem ------------------------------

def logistic_loss(X, y, w):
    eta = X @ w
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def logistic_grad(X, y, w):
    p = 1.0 / (1.0 + np.exp(-(X @ w)))
    return X.T @ (p - y) / len(y)


def fista_logistic(X, y, lambda1, lambda2, groups, tol=1e-14, max_iter=500000):
    """Accelerated proximal gradient for a logistic loss with a sparse group
    lasso penalty on ``groups`` (column index arrays; other columns free).

    Written from scratch: own loss, own Lipschitz step, textbook
    shrink-then-group-shrink prox, gradient-based adaptive restart.
    """
    L = 0.25 * np.linalg.eigvalsh(X.T @ X / len(y)).max()
    step = 1.0 / L

    def prox(x):
        out = x.copy()
        for g in groups:
            b = np.sign(x[g]) * np.maximum(np.abs(x[g]) - step * lambda2, 0.0)
            nb = np.linalg.norm(b)
            thr = step * lambda1 * math.sqrt(len(g))
            out[g] = 0.0 if nb <= thr else (1 - thr / nb) * b
        return out

    v = np.zeros(X.shape[1])
    w, t = v.copy(), 1.0
    for _ in range(max_iter):
        vn = prox(w - step * logistic_grad(X, y, w))
        if np.linalg.norm(vn - v) < tol:
            return vn
        if float((w - vn) @ (vn - v)) > 0:  # momentum points uphill: restart
            w, t = vn.copy(), 1.0
        else:
            tn = (1 + math.sqrt(1 + 4 * t * t)) / 2
            w = vn + (t - 1) / tn * (vn - v)
            t = tn
        v = vn
    return v


def logistic_objective(X, y, w, lambda1, lambda2, groups):
    pen = sum(lambda1 * math.sqrt(len(g)) * np.linalg.norm(w[g]) + lambda2 * np.abs(w[g]).sum() for g in groups)
    return logistic_loss(X, y, w) + pen


def auc_oracle(points):
    """Trapezoid rule written independently: sort, dedupe, integrate."""
    pts = sorted({(0.0, 0.0), (1.0, 1.0), *[(float(a), float(b)) for a, b in points]})
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    trap = getattr(np, "trapezoid", None) or np.trapz
    return float(trap(ys, xs))
