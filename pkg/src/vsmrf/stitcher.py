"""Combine node-wise neighborhood estimates into an undirected graph."""
from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape, quoteattr

import numpy as np

RULES = ("AND", "OR")


class StitchError(ValueError):
    pass


def edge_strength(block_rt, block_tr):
    """L2 norm of both directional blocks taken together."""
    a = np.asarray(block_rt, dtype=float)
    b = np.asarray(block_tr, dtype=float)
    if a.shape != b.T.shape:
        raise StitchError(f"block shapes {a.shape} and {b.shape} are not transposes")
    # hypot rescales internally, so tiny or huge blocks neither underflow nor overflow
    return float(math.hypot(*a.ravel(), *b.ravel()))


@dataclass(frozen=True)
class StitchedEdge:
    r: int
    t: int
    block_rt: np.ndarray  # m_r x m_t, from node r's fit
    block_tr: np.ndarray  # m_t x m_r, from node t's fit
    strength: float


@dataclass
class StitchedGraph:
    schema: object
    edges: dict  # (r, t) with r < t -> StitchedEdge
    rule: str = "AND"

    def edge_set(self):
        return set(self.edges)

    def named_edges(self):
        names = self.schema.names
        return [(names[r], names[t]) for r, t in sorted(self.edges)]

    def to_dict(self):
        return {
            "format": "vsmrf-graph",
            "rule": self.rule,
            "schema": self.schema.to_list(),
            "edges": [
                {"r": r, "t": t, "block_rt": e.block_rt.tolist(),
                 "block_tr": e.block_tr.tolist(), "strength": e.strength}
                for (r, t), e in sorted(self.edges.items())
            ],
        }

    @classmethod
    def from_dict(cls, d):
        from .model import GraphSchema
        if not isinstance(d, dict) or d.get("format") != "vsmrf-graph":
            raise StitchError("not a graph document")
        schema = GraphSchema.from_list(d["schema"])
        edges = {}
        for e in d["edges"]:
            r, t = int(e["r"]), int(e["t"])
            edges[(r, t)] = StitchedEdge(r, t, np.array(e["block_rt"], dtype=float),
                                         np.array(e["block_tr"], dtype=float), float(e["strength"]))
        return cls(schema, edges, d["rule"])


def _params_by_node(fits, schema):
    by_node = {}
    for f in fits:
        params = getattr(f, "params", f)
        node = params.node
        if node in by_node and by_node[node] != params:
            raise StitchError(f"conflicting fits for node {node}")
        by_node[node] = params
    missing = [schema.names[r] for r in range(schema.p) if r not in by_node]
    if missing:
        raise StitchError(f"missing fits for nodes {missing}")
    extra = sorted(k for k in by_node if not 0 <= k < schema.p)
    if extra:
        raise StitchError(f"fits for unknown nodes {extra}")
    return by_node


def stitch(fits, schema, rule="AND"):
    """Build the graph from one fit (or NodeParamVector) per node.

    A pseudo-edge counts as present when its block has any nonzero entry.
    ``AND`` keeps a pair when both directions are present, ``OR`` when
    either is.
    """
    rule = rule.upper()
    if rule not in RULES:
        raise StitchError(f"rule must be one of {RULES}, got {rule!r}")
    params = _params_by_node(fits, schema)
    edges = {}
    for r in range(schema.p):
        for t in range(r + 1, schema.p):
            b_rt = np.asarray(params[r].block(t), dtype=float)
            b_tr = np.asarray(params[t].block(r), dtype=float)
            a, b = bool(np.any(b_rt != 0)), bool(np.any(b_tr != 0))
            keep = (a and b) if rule == "AND" else (a or b)
            if keep:
                edges[(r, t)] = StitchedEdge(r, t, b_rt, b_tr, edge_strength(b_rt, b_tr))
    return StitchedGraph(schema, edges, rule)


def top_k_edges(graph, k):
    """Edges by decreasing strength; ties broken by the sorted name pair."""
    if k < 0:
        raise ValueError("k must be >= 0")
    names = graph.schema.names
    ranked = sorted(graph.edges.values(),
                    key=lambda e: (-e.strength, tuple(sorted((names[e.r], names[e.t])))))
    return ranked[:k]


def effect_sign(edge, stat_means):
    """Heuristic direction of an edge's effect on the conditional means.

    Each block is weighted by the mean statistics of the neighbor it reads
    from; the sign of the summed contribution is returned (-1, 0 or 1).
    """
    contrib = (edge.block_rt @ stat_means[edge.t]).sum() + (edge.block_tr @ stat_means[edge.r]).sum()
    return int(np.sign(contrib))


def _edge_attrs(graph, edges, stat_means):
    out = []
    for e in edges:
        sign = effect_sign(e, stat_means) if stat_means is not None else 0
        out.append((e, sign))
    return out


def _dot_id(s):
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph, edges=None, stat_means=None):
    edges = list(graph.edges.values()) if edges is None else edges
    names = graph.schema.names
    ids = [_dot_id(n) for n in names]
    fams = graph.schema.families
    lines = ["graph vsmrf {"]
    for ident, name, fam in zip(ids, names, fams):
        label = _dot_id(name)[:-1] + "\\n" + fam.tag + '"'
        lines.append(f'  {ident} [label={label}, family="{fam.tag}"];')
    for e, sign in _edge_attrs(graph, edges, stat_means):
        lines.append(f'  {ids[e.r]} -- {ids[e.t]} [strength={e.strength!r}, effect={sign}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_graphml(graph, edges=None, stat_means=None):
    edges = list(graph.edges.values()) if edges is None else edges
    names = graph.schema.names
    fams = graph.schema.families
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">',
        '  <key id="family" for="node" attr.name="family" attr.type="string"/>',
        '  <key id="strength" for="edge" attr.name="strength" attr.type="double"/>',
        '  <key id="effect" for="edge" attr.name="effect" attr.type="int"/>',
        '  <graph id="vsmrf" edgedefault="undirected">',
    ]
    for name, fam in zip(names, fams):
        lines.append(f'    <node id={quoteattr(name)}><data key="family">{escape(fam.tag)}</data></node>')
    for e, sign in _edge_attrs(graph, edges, stat_means):
        lines.append(
            f'    <edge source={quoteattr(names[e.r])} target={quoteattr(names[e.t])}>'
            f'<data key="strength">{e.strength!r}</data><data key="effect">{sign}</data></edge>')
    lines += ["  </graph>", "</graphml>"]
    return "\n".join(lines) + "\n"
