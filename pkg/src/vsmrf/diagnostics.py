"""Recovery metrics and numerical checks of the sparsistency conditions."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import flatten, true_node_params
from .solver import NodeProblem
from .stitcher import stitch

LEVELS = ("edge", "parameter")


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RocPoint:
    lambda1: float
    lambda2: float
    tpr: float
    fpr: float
    level: str
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def tpr_defined(self):
        return self.tp + self.fn > 0

    @property
    def fpr_defined(self):
        return self.fp + self.tn > 0

    @property
    def defined(self):
        return self.tpr_defined and self.fpr_defined


def _rate(a, b):
    return a / (a + b) if a + b else float("nan")


def _point(l1, l2, level, tp, fp, tn, fn):
    return RocPoint(l1, l2, _rate(tp, fn), _rate(fp, tn), level, tp, fp, tn, fn)


def edge_confusion(truth, graph):
    """(tp, fp, tn, fn) over unordered node pairs."""
    true_edges = truth.edge_set()
    est = graph.edge_set()
    p = truth.schema.p
    total = p * (p - 1) // 2
    tp = len(true_edges & est)
    fp = len(est - true_edges)
    fn = len(true_edges - est)
    return tp, fp, total - tp - fp - fn, fn


def parameter_confusion(truth, graph):
    """(tp, fp, tn, fn) over the scalar entries of both directional blocks
    of every true edge; entries of dropped edges count as estimated zero."""
    tp = fp = tn = fn = 0
    for (r, t) in sorted(truth.edge_set()):
        true_rt = truth.edge(r, t) != 0
        e = graph.edges.get((r, t))
        if e is None:
            est_rt = np.zeros_like(true_rt)
            est_tr = np.zeros_like(true_rt.T)
        else:
            est_rt, est_tr = e.block_rt != 0, e.block_tr != 0
        for truth_mask, est_mask in ((true_rt, est_rt), (true_rt.T, est_tr)):
            tp += int(np.sum(truth_mask & est_mask))
            fp += int(np.sum(~truth_mask & est_mask))
            tn += int(np.sum(~truth_mask & ~est_mask))
            fn += int(np.sum(truth_mask & ~est_mask))
    return tp, fp, tn, fn


def _check_grid(paths):
    lengths = {len(path) for path in paths}
    if len(lengths) != 1:
        raise GridMismatch(f"paths have different lengths: {sorted(lengths)}")
    grids = [[(f.lambda1, f.lambda2) for f in path] for path in paths]
    for r, g in enumerate(grids[1:], 1):
        if g != grids[0]:
            raise GridMismatch(f"node {r} was fit on a different lambda grid")
    return grids[0]


def roc_curve(truth, paths, level="edge"):
    """One :class:`RocPoint` per grid point, stitching with the AND rule.

    ``paths[r]`` is node ``r``'s list of fits along a shared grid.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    schema = truth.schema
    if len(paths) != schema.p:
        raise GridMismatch(f"expected {schema.p} paths, got {len(paths)}")
    grid = _check_grid(paths)
    confusion = edge_confusion if level == "edge" else parameter_confusion
    out = []
    for k, (l1, l2) in enumerate(grid):
        graph = stitch([paths[r][k] for r in range(schema.p)], schema, "AND")
        out.append(_point(l1, l2, level, *confusion(truth, graph)))
    return out


def auc(points):
    """Trapezoidal area under (fpr, tpr) points, with (0, 0) and (1, 1) added."""
    pts = []
    for pt in points:
        if isinstance(pt, RocPoint):
            if not pt.defined:
                raise ValueError(f"ROC point at lambda1={pt.lambda1} has an undefined rate")
            pts.append((pt.fpr, pt.tpr))
        else:
            pts.append((float(pt[0]), float(pt[1])))
    if len(pts) < 2:
        raise ValueError("auc needs at least two points")
    pts = sorted(set(pts) | {(0.0, 0.0), (1.0, 1.0)})
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


# -- group-structured norms ------------------------------------------------------

def _check_partition(groups, size):
    seen = np.concatenate([np.asarray(g, dtype=int).ravel() for g in groups]) if groups else np.array([], int)
    if len(seen) != size or len(np.unique(seen)) != size or (size and (seen.min() < 0 or seen.max() >= size)):
        raise ValueError("groups must partition the index set")


def _lp(x, a):
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        return 0.0
    if x.size == 1:
        return float(abs(x[0]))
    return float(np.linalg.norm(x, ord=a))


def group_structured_norm(v, groups, a=2.0, b=2.0):
    """``a``-norm of the vector of per-group ``b``-norms."""
    v = np.asarray(v, dtype=float).ravel()
    _check_partition(groups, v.size)
    return _lp([_lp(v[np.asarray(g, dtype=int)], b) for g in groups], a)


def matrix_group_norm(M, row_groups, col_groups, a=math.inf, c=2.0, b=2.0, d=2.0):
    """Group norm ``||M||_{(a,b),(c,d)}``: every row is reduced with the
    ``(c, d)`` group norm over ``col_groups``, then the resulting vector is
    reduced with the ``(a, b)`` group norm over ``row_groups``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _check_partition(row_groups, M.shape[0])
    _check_partition(col_groups, M.shape[1])
    rows = [group_structured_norm(M[i], col_groups, c, d) for i in range(M.shape[0])]
    return group_structured_norm(rows, row_groups, a, b)


# -- sparsistency conditions -------------------------------------------------------

def sample_fisher_information(truth_params, data, r):
    """Hessian of node ``r``'s pseudo-likelihood loss at ``truth_params``,
    restricted to the pseudo-edge coordinates (the bias is dropped)."""
    problem = NodeProblem(data, r)
    v = flatten(truth_params)
    bad = problem.first_infeasible(v)
    if bad is not None:
        raise ValueError(f"parameters are infeasible at sample {bad}")
    H = problem.hessian(v)
    m = problem.m
    Q = H[m:, m:]
    return (Q + Q.T) / 2.0


def min_edge_norm_threshold(m_max, c_min, lambda1, lambda2):
    """Smallest true-edge norm for which exact neighborhood recovery is
    guaranteed at ``(lambda1, lambda2)``: ``10 m_max / c_min (l1 + l2)``."""
    if c_min <= 0:
        return math.inf
    return 10.0 * m_max / c_min * (lambda1 + lambda2)


@dataclass
class SparsistencyReport:
    node: int
    d_r: int
    c_min: float
    incoherence: float
    alpha: float  # largest grid alpha meeting the incoherence bound (nan if none)
    incoherence_bound: float
    min_edge_norm: float
    m_ratio: float  # m_min / m_max over all nodes
    nu_ratio: float  # nu_min / nu_max over node r's groups
    d_max_hat: float
    degenerate: bool = False
    singular: bool = False

    @property
    def incoherence_holds(self):
        return not math.isnan(self.alpha)

    def to_dict(self):
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}


def check_sparsistency_conditions(truth, data, r, alpha_grid=(0.1, 0.25, 0.5, 0.75, 1.0), singular_tol=1e-12):
    """Evaluate the dependency, incoherence and boundedness quantities for node ``r``.

    ``S`` holds the coordinates of the blocks of true neighbors; every
    block is one group. Degenerate (no neighbors) or singular ``Q_SS``
    cases are flagged in the report rather than raised.
    """
    schema = truth.schema
    dims = schema.stat_dims
    others = [t for t in range(schema.p) if t != r]
    params = true_node_params(truth, r)
    Q = sample_fisher_information(params, data, r)
    groups, pos = {}, 0
    for t in others:
        size = dims[r] * dims[t]
        groups[t] = np.arange(pos, pos + size)
        pos += size
    nbrs = [t for t in others if np.any(params.block(t) != 0)]
    non = [t for t in others if t not in nbrs]
    m_ratio = min(dims) / max(dims)
    nus = [dims[r] * dims[t] for t in others]
    nu_ratio = min(nus) / max(nus) if nus else 1.0
    stats = np.hstack([data.node_stats(t) for t in others]) if others else np.zeros((data.n, 0))
    second = stats.T @ stats / data.n
    d_max_hat = float(np.linalg.eigvalsh(second).max()) if second.size else 0.0
    d_r = len(nbrs)
    nan = float("nan")
    base = dict(node=r, d_r=d_r, m_ratio=m_ratio, nu_ratio=nu_ratio, d_max_hat=d_max_hat)
    if not nbrs:
        return SparsistencyReport(c_min=nan, incoherence=nan, alpha=nan, incoherence_bound=nan,
                                  min_edge_norm=nan, degenerate=True, **base)
    S = np.concatenate([groups[t] for t in nbrs])
    min_edge = min(float(np.linalg.norm(params.block(t))) for t in nbrs)
    Q_SS = Q[np.ix_(S, S)]
    c_min = float(np.linalg.eigvalsh(Q_SS).min())
    if c_min <= singular_tol:
        return SparsistencyReport(c_min=c_min, incoherence=nan, alpha=nan, incoherence_bound=nan,
                                  min_edge_norm=min_edge, singular=True, **base)
    if non:
        Sc = np.concatenate([groups[t] for t in non])
        R = Q[np.ix_(Sc, S)] @ np.linalg.inv(Q_SS)
        row_groups, off = [], 0
        for t in non:
            row_groups.append(np.arange(off, off + len(groups[t])))
            off += len(groups[t])
        col_groups, off = [], 0
        for t in nbrs:
            col_groups.append(np.arange(off, off + len(groups[t])))
            off += len(groups[t])
        incoherence = matrix_group_norm(R, row_groups, col_groups, a=math.inf, c=2.0)
    else:
        incoherence = 0.0
    bound = lambda a: m_ratio * (1.0 - a) / math.sqrt(d_r)
    ok = [a for a in alpha_grid if 0 < a <= 1 and incoherence <= bound(a)]
    alpha = max(ok) if ok else nan
    return SparsistencyReport(c_min=c_min, incoherence=incoherence, alpha=alpha,
                              incoherence_bound=bound(alpha) if ok else nan,
                              min_edge_norm=min_edge, **base)
