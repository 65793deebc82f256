"""Pairwise vector-space MRF parameterization.

A :class:`JointModel` stores one bias vector ``theta_r`` per node and one
``m_r x m_t`` interaction matrix per unordered pair. The node conditional of
``X_r`` is the node's exponential family at natural parameter

    eta_r(x) = theta_r + sum_{t != r} theta_rt B_t(x_t)

and the joint log-density (up to its normalizer) counts every pair once:

    sum_r <B_r(x_r), theta_r> + sum_{r < t} B_r(x_r)^T theta_rt B_t(x_t).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .expfam import ConstraintViolation, FamilySpec, parse_family


class ModelValidationError(ValueError):
    """The model's conditionals are not guaranteed to be proper."""


@dataclass(frozen=True)
class GraphSchema:
    nodes: tuple  # of (name, FamilySpec)

    def __post_init__(self):
        nodes = tuple((str(n), f) for n, f in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not nodes:
            raise ValueError("schema needs at least one node")
        names = [n for n, _ in nodes]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate node names: {dup}")
        dims = [f.stat_dim for _, f in nodes]
        object.__setattr__(self, "_offsets", np.concatenate([[0], np.cumsum(dims)]).astype(int))

    @classmethod
    def from_tags(cls, entries):
        """``entries``: iterable of ``(name, tag)`` pairs."""
        return cls(tuple((name, parse_family(tag)) for name, tag in entries))

    @property
    def p(self):
        return len(self.nodes)

    @property
    def names(self):
        return [n for n, _ in self.nodes]

    @property
    def families(self):
        return [f for _, f in self.nodes]

    @property
    def stat_dims(self):
        return [f.stat_dim for _, f in self.nodes]

    @property
    def total_stat_dim(self):
        return int(self._offsets[-1])

    def stat_slice(self, r):
        return slice(int(self._offsets[r]), int(self._offsets[r + 1]))

    def index(self, name):
        return self.names.index(name)

    def to_list(self):
        return [{"name": n, "family": f.tag} for n, f in self.nodes]

    @classmethod
    def from_list(cls, entries):
        out = []
        for i, e in enumerate(entries):
            try:
                out.append((e["name"], parse_family(e["family"])))
            except (KeyError, TypeError) as exc:
                raise ValueError(f"schema entry {i}: needs 'name' and 'family' ({exc})") from None
            except ValueError as exc:
                raise ValueError(f"schema entry {i} ({e.get('name')!r}): {exc}") from None
        return cls(tuple(out))


class Dataset:
    """``n`` samples: raw per-node values plus the stacked statistic matrix.

    ``values[r]`` has shape ``(n,)`` for scalar nodes and ``(n, k)`` for
    vector nodes; ``stats`` has shape ``(n, sum_r m_r)``.
    """

    def __init__(self, schema, values):
        if len(values) != schema.p:
            raise ValueError(f"expected values for {schema.p} nodes, got {len(values)}")
        vals = []
        for (name, fam), v in zip(schema.nodes, values):
            v = np.asarray(v, dtype=float)
            if fam.value_dim > 1:
                v = v.reshape(-1, fam.value_dim)
            else:
                v = v.reshape(-1)
            vals.append(v)
        ns = {len(v) for v in vals}
        if len(ns) != 1:
            raise ValueError(f"nodes have differing sample counts: {sorted(ns)}")
        self.schema = schema
        self.values = vals
        self.n = ns.pop()
        blocks = []
        for (name, fam), v in zip(schema.nodes, vals):
            try:
                blocks.append(fam.stats(v).reshape(self.n, fam.stat_dim))
            except ValueError as exc:
                raise type(exc)(f"node {name!r}: {exc}") from None
        self.stats = np.hstack(blocks) if self.n else np.zeros((0, schema.total_stat_dim))

    def node_stats(self, r):
        return self.stats[:, self.schema.stat_slice(r)]

    def row(self, i):
        return [v[i] for v in self.values]

    def head(self, n):
        return Dataset(self.schema, [v[:n] for v in self.values])

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class JointModel:
    schema: GraphSchema
    bias: tuple
    edges: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = self.schema.stat_dims
        bias = tuple(np.array(b, dtype=float).reshape(-1) for b in self.bias)
        if len(bias) != self.schema.p:
            raise ValueError(f"need {self.schema.p} bias vectors, got {len(bias)}")
        for r, b in enumerate(bias):
            if b.shape != (dims[r],):
                raise ValueError(f"bias of node {r} has shape {b.shape}, expected ({dims[r]},)")
        edges = {}
        for (r, t), m in self.edges.items():
            r, t = int(r), int(t)
            if r == t:
                raise ValueError(f"self-edge on node {r}")
            m = np.array(m, dtype=float)
            if r > t:
                r, t, m = t, r, m.T
            if m.shape != (dims[r], dims[t]):
                raise ValueError(f"edge ({r},{t}) has shape {m.shape}, expected ({dims[r]}, {dims[t]})")
            if np.any(m != 0):
                edges[(r, t)] = m
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "edges", dict(sorted(edges.items())))

    def edge(self, r, t):
        """``theta_rt`` as seen from node ``r`` (``m_r x m_t``)."""
        if r < t:
            m = self.edges.get((r, t))
            return m if m is not None else np.zeros((self.schema.stat_dims[r], self.schema.stat_dims[t]))
        m = self.edges.get((t, r))
        return m.T if m is not None else np.zeros((self.schema.stat_dims[r], self.schema.stat_dims[t]))

    def neighbors(self, r):
        return sorted({t for e in self.edges for t in e if r in e and t != r})

    def edge_set(self):
        return set(self.edges)

    def coupling_matrix(self):
        """Dense symmetric matrix over stacked statistics (zero diagonal blocks)."""
        d = self.schema.total_stat_dim
        out = np.zeros((d, d))
        for (r, t), m in self.edges.items():
            sr, st = self.schema.stat_slice(r), self.schema.stat_slice(t)
            out[sr, st] = m
            out[st, sr] = m.T
        return out

    # -- serialization --------------------------------------------------
    def to_dict(self):
        return {
            "format": "vsmrf-model",
            "version": 1,
            "nodes": self.schema.to_list(),
            "bias": [b.tolist() for b in self.bias],
            "edges": [{"r": r, "t": t, "block": m.tolist()} for (r, t), m in self.edges.items()],
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or d.get("format") != "vsmrf-model":
            raise ValueError("not a vsmrf model document")
        schema = GraphSchema.from_list(d["nodes"])
        edges = {(e["r"], e["t"]): np.array(e["block"], dtype=float) for e in d["edges"]}
        return cls(schema, tuple(np.array(b, dtype=float) for b in d["bias"]), edges)


# -- conditionals ---------------------------------------------------------------

def _node_stats(schema, t, x_t):
    return schema.families[t].stats(x_t)


def conditional_natural_params(model, r, x):
    """Natural parameter of node ``r`` given the other nodes' values.

    ``x`` is a length-``p`` sequence; ``x[r]`` is ignored.
    """
    schema = model.schema
    eta = model.bias[r].copy()
    for t in range(schema.p):
        if t == r:
            continue
        m = model.edge(r, t)
        if not m.any():
            schema.families[t].check_domain(x[t])
            continue
        eta = eta + m @ _node_stats(schema, t, x[t])
    schema.families[r].check_feasible(eta)
    return eta


def node_log_pseudolikelihood(model, x):
    """Sum over nodes of the conditional log-density at the full sample ``x``."""
    total = 0.0
    for r, fam in enumerate(model.schema.families):
        eta = conditional_natural_params(model, r, x)
        total += float(fam.stats(x[r]) @ eta) + float(fam.base_measure(x[r])) - float(fam.log_partition(eta))
    return total


def joint_log_potential(model, x):
    """Unnormalized joint log-density, each pair counted once."""
    schema = model.schema
    s = [schema.families[r].stats(x[r]) for r in range(schema.p)]
    val = sum(float(s[r] @ model.bias[r]) for r in range(schema.p))
    for (r, t), m in model.edges.items():
        val += float(s[r] @ m @ s[t])
    return val


def enumerate_joint(model):
    """Exact joint over an all-discrete model: ``(configs, probabilities)``."""
    supports = [f.support() for f in model.schema.families]
    if any(s is None for s in supports):
        raise ValueError("enumeration needs every family to be discrete")
    configs = list(itertools.product(*supports))
    logp = np.array([joint_log_potential(model, list(c)) for c in configs])
    logp -= logp.max()
    p = np.exp(logp)
    return configs, p / p.sum()


def exact_conditional(model, r, x):
    """Conditional of node ``r`` computed from the normalized joint.

    Returns ``(support, log_probabilities)``.
    """
    support = model.schema.families[r].support()
    if support is None:
        raise ValueError("exact conditional needs a discrete node")
    configs, probs = enumerate_joint(model)
    logs = []
    for v in support:
        target = list(x)
        target[r] = v
        target = tuple(target)
        mask = [all(np.array_equal(a, b) for a, b in zip(c, target)) for c in configs]
        logs.append(np.log(probs[np.array(mask)].sum()))
    logs = np.array(logs)
    return support, logs - np.logaddexp.reduce(logs)


# -- feasibility validation -------------------------------------------------------

def _interval_mul(w, lo, hi):
    if w == 0:
        return 0.0, 0.0
    a, b = w * lo, w * hi
    return (a, b) if a <= b else (b, a)


def conditional_ranges(model):
    """Interval hull of each node's conditional natural parameter over the
    product of statistic ranges; list of ``(lo, hi)`` arrays per node."""
    schema = model.schema
    ranges = [np.array(f.stat_ranges(), dtype=float) for f in schema.families]
    out = []
    for r in range(schema.p):
        lo = model.bias[r].copy()
        hi = model.bias[r].copy()
        for t in model.neighbors(r):
            m = model.edge(r, t)
            for i in range(m.shape[0]):
                for j in range(m.shape[1]):
                    a, b = _interval_mul(m[i, j], *ranges[t][j])
                    lo[i] += a
                    hi[i] += b
        out.append((lo, hi))
    return out


def gaussian_precision(model):
    """Worst-case joint precision of the pure-Gaussian nodes' ``x`` block,
    or ``None`` when the model has no Gaussian nodes."""
    schema = model.schema
    gauss = [r for r, f in enumerate(schema.families) if f.tag == "gaussian"]
    if not gauss:
        return None, gauss
    ranges = conditional_ranges(model)
    prec = np.zeros((len(gauss), len(gauss)))
    for a, r in enumerate(gauss):
        prec[a, a] = -2.0 * ranges[r][1][1]
        for b, t in enumerate(gauss):
            if t != r:
                prec[a, b] = -model.edge(r, t)[0, 0]
    return prec, gauss


def validate_model(model, margin=0.0):
    """Check that every reachable conditional is feasible and that the
    Gaussian sub-block is jointly normalizable.

    Raises :class:`ModelValidationError` with the first failure found.
    """
    schema = model.schema
    for r, (lo, hi) in enumerate(conditional_ranges(model)):
        fam = schema.families[r]
        for i in range(fam.stat_dim):
            lo_ok = fam.lower[i] == -np.inf or lo[i] > fam.lower[i] + margin
            hi_ok = fam.upper[i] == np.inf or hi[i] < fam.upper[i] - margin
            if not (lo_ok and hi_ok):
                raise ModelValidationError(
                    f"node {schema.names[r]!r}: conditional eta[{i}] ranges over [{lo[i]}, {hi[i]}], "
                    f"outside ({fam.lower[i]}, {fam.upper[i]})")
        if fam.eq_matrix is not None:
            for t in model.neighbors(r):
                if np.any(np.abs(fam.eq_matrix @ model.edge(r, t)) > 1e-12):
                    raise ModelValidationError(f"node {schema.names[r]!r}: edge to {t} leaves the equality manifold")
            try:
                fam.check_feasible(model.bias[r])
            except ConstraintViolation as exc:
                raise ModelValidationError(str(exc)) from None
    prec, gauss = gaussian_precision(model)
    if prec is not None and len(gauss) > 1:
        lam = np.linalg.eigvalsh(prec).min()
        if not lam > margin:
            raise ModelValidationError(
                f"gaussian block precision has smallest eigenvalue {lam:.4g}; joint not normalizable")


# -- per-node parameter layout ------------------------------------------------------

def tau(schema, r):
    dims = schema.stat_dims
    return dims[r] * (1 + sum(dims) - dims[r])


@dataclass
class NodeParamVector:
    """Parameters of one node conditional.

    Flat layout: bias first, then the block for every other node in
    ascending index order, each block row-major (``m_r x m_t``).
    """

    node: int
    theta_bias: np.ndarray
    theta_blocks: dict  # t -> (m_r, m_t)

    def block(self, t):
        return self.theta_blocks[t]

    def nonzero_blocks(self):
        return [t for t, b in sorted(self.theta_blocks.items()) if np.any(b != 0)]

    def __eq__(self, other):
        if not isinstance(other, NodeParamVector) or other.node != self.node:
            return False
        if not np.array_equal(self.theta_bias, other.theta_bias):
            return False
        if self.theta_blocks.keys() != other.theta_blocks.keys():
            return False
        return all(np.array_equal(b, other.theta_blocks[t]) for t, b in self.theta_blocks.items())

    @classmethod
    def zeros(cls, schema, r):
        dims = schema.stat_dims
        return cls(r, np.zeros(dims[r]), {t: np.zeros((dims[r], dims[t])) for t in range(schema.p) if t != r})


def flatten(npv):
    parts = [np.asarray(npv.theta_bias, dtype=float).ravel()]
    parts += [np.asarray(npv.theta_blocks[t], dtype=float).ravel() for t in sorted(npv.theta_blocks)]
    return np.concatenate(parts)


def unflatten(schema, r, v):
    v = np.asarray(v, dtype=float)
    expected = tau(schema, r)
    if v.shape != (expected,):
        raise ValueError(f"node {r}: expected flat vector of length {expected}, got shape {v.shape}")
    dims = schema.stat_dims
    mr = dims[r]
    bias = v[:mr].copy()
    blocks = {}
    pos = mr
    for t in range(schema.p):
        if t == r:
            continue
        size = mr * dims[t]
        blocks[t] = v[pos:pos + size].reshape(mr, dims[t]).copy()
        pos += size
    return NodeParamVector(r, bias, blocks)


def block_slices(schema, r):
    """``{t: slice}`` of each pseudo-edge block inside the flat vector."""
    dims = schema.stat_dims
    mr = dims[r]
    out = {}
    pos = mr
    for t in range(schema.p):
        if t == r:
            continue
        out[t] = slice(pos, pos + mr * dims[t])
        pos += mr * dims[t]
    return out


def true_node_params(model, r):
    """The node-``r`` slice of a joint model as a :class:`NodeParamVector`."""
    return NodeParamVector(
        r, model.bias[r].copy(),
        {t: model.edge(r, t).copy() for t in range(model.schema.p) if t != r})
