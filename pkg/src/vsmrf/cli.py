"""Command-line driver: generate -> sample -> fit -> stitch -> eval -> export.

Every command writes ``<out>.manifest.json`` recording the command, its
effective arguments and SHA-256 digests of inputs and outputs. Passing a
manifest (or any JSON object of flag values) to ``--config`` overrides the
command-line flags, so ``vsmrf fit --config fits.json.manifest.json``
replays a run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import auc, roc_curve
from .model import Dataset, GraphSchema, JointModel, ModelValidationError
from .sampler import SamplerConfig, SparsityProfile, gibbs_sample, random_model
from .solver import AdmmConfig, FitError, NodeFit, default_lambda_grid, lambda_pairs, regularization_path
from .stitcher import StitchedGraph, stitch, to_dot, to_graphml, top_k_edges

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# -- file formats --------------------------------------------------------------

def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None


def load_schema(path):
    doc = _read_json(path)
    entries = doc.get("nodes", doc) if isinstance(doc, dict) else doc
    if not isinstance(entries, list):
        raise ValueError(f"{path}: schema must be a list of {{name, family}} entries")
    return GraphSchema.from_list(entries)


def dataset_header(schema):
    return [f"{name}.{k}" for name, fam in schema.nodes for k in range(fam.value_dim)]


def write_dataset(path, data):
    schema = data.schema
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset_header(schema))
        cols = [v.reshape(data.n, -1) for v in data.values]
        for i in range(data.n):
            w.writerow([repr(float(x)) for c in cols for x in c[i]])


def read_dataset(path, schema):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    header, body = rows[0], rows[1:]
    expected = dataset_header(schema)
    if header != expected:
        raise ValueError(f"{path}: header {header} does not match schema columns {expected}")
    try:
        arr = np.array([[float(x) for x in row] for row in body], dtype=float).reshape(len(body), len(expected))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    values, pos = [], 0
    for _, fam in schema.nodes:
        values.append(arr[:, pos:pos + fam.value_dim].squeeze(axis=1) if fam.value_dim == 1
                      else arr[:, pos:pos + fam.value_dim])
        pos += fam.value_dim
    return Dataset(schema, values)


def fits_document(schema, grid, cfg, paths):
    return {
        "format": "vsmrf-fits",
        "schema": schema.to_list(),
        "grid": [list(g) for g in grid],
        "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "paths": [[f.to_dict() for f in path] for path in paths],
    }


def load_fits(path):
    doc = _read_json(path)
    if not isinstance(doc, dict) or doc.get("format") != "vsmrf-fits":
        raise ValueError(f"{path}: not a fits document")
    schema = GraphSchema.from_list(doc["schema"])
    paths = [[NodeFit.from_dict(schema, r, d) for d in path] for r, path in enumerate(doc["paths"])]
    if len(paths) != schema.p:
        raise ValueError(f"{path}: {len(paths)} node paths for {schema.p} nodes")
    return schema, paths


# -- manifest -------------------------------------------------------------------

def write_manifest(out, command, args, inputs):
    manifest = {
        "command": command,
        "seed": args.get("seed"),
        "args": args,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": {str(out): _digest(out)},
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    _write_json(f"{out}.manifest.json", manifest)
    return manifest


def manifest_digest(manifest):
    """Digest of a manifest ignoring its timestamp."""
    body = {k: v for k, v in manifest.items() if k != "timestamp"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


# -- commands ---------------------------------------------------------------------

def cmd_generate(a):
    schema = load_schema(a.schema)
    profile = SparsityProfile(a.edge_sparsity, a.param_sparsity)
    model = random_model(schema, profile, a.weight_scale, rng=a.seed)
    _write_json(a.out, model.to_dict())
    return [a.schema], EXIT_OK


def cmd_sample(a):
    model = JointModel.from_dict(_read_json(a.model))
    data = gibbs_sample(model, a.n, SamplerConfig(a.burn_in, a.thin, a.seed))
    write_dataset(a.out, data)
    return [a.model], EXIT_OK


def _fit_one(job):
    data, r, grid, cfg, warm = job
    l1, l2 = zip(*grid)
    return regularization_path(data, r, list(l1), list(l2), cfg, warm=warm)


def cmd_fit(a):
    schema = load_schema(a.schema)
    data = read_dataset(a.data, schema)
    l1 = a.lambda1 if a.lambda1 else default_lambda_grid().tolist()
    grid = lambda_pairs(l1, a.lambda2)
    cfg = AdmmConfig(alpha=a.alpha, eps_abs=a.eps_abs, eps_rel=a.eps_rel, max_iter=a.max_iter,
                     newton_tol=a.newton_tol, newton_max=a.newton_max, hessian_mode=a.hessian_mode,
                     residual_balancing=a.residual_balancing)
    jobs = [(data, r, grid, cfg, not a.no_warm_start) for r in range(schema.p)]
    if a.jobs > 1 and schema.p > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as ex:
            paths = list(ex.map(_fit_one, jobs))
    else:
        paths = [_fit_one(j) for j in jobs]
    _write_json(a.out, fits_document(schema, grid, cfg, paths))
    bad = [(schema.names[r], f.lambda1, f.lambda2) for r, path in enumerate(paths) for f in path if not f.converged]
    for name, x1, x2 in bad:
        print(f"warning: node {name!r} did not converge at lambda=({x1}, {x2})", file=sys.stderr)
    return [a.data, a.schema], (EXIT_NONCONVERGED if bad and a.strict else EXIT_OK)


def _grid_index(paths, index, lambda1):
    grid = [(f.lambda1, f.lambda2) for f in paths[0]]
    if lambda1 is not None:
        hits = [k for k, (x, _) in enumerate(grid) if math.isclose(x, lambda1, rel_tol=1e-12)]
        if not hits:
            raise ValueError(f"lambda1={lambda1} is not on the fitted grid")
        return hits[0]
    if not -len(grid) <= index < len(grid):
        raise ValueError(f"grid index {index} out of range for {len(grid)} points")
    return index


def cmd_stitch(a):
    schema, paths = load_fits(a.fits)
    k = _grid_index(paths, a.grid_index, a.lambda1)
    graph = stitch([path[k] for path in paths], schema, a.rule)
    _write_json(a.out, graph.to_dict())
    return [a.fits], EXIT_OK


def cmd_eval(a):
    truth = JointModel.from_dict(_read_json(a.truth))
    schema, paths = load_fits(a.fits)
    if schema != truth.schema:
        raise ValueError("fits and truth use different schemas")
    levels = ["edge", "parameter"] if a.level == "both" else [a.level]
    rows = []
    for level in levels:
        pts = roc_curve(truth, paths, level)
        rows.extend(pts)
        try:
            print(f"{level} AUC {auc(pts):.6f}")
        except ValueError as exc:
            print(f"{level} AUC undefined ({exc})")
    with open(a.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda1", "lambda2", "level", "tpr", "fpr"])
        for pt in rows:
            w.writerow([repr(pt.lambda1), repr(pt.lambda2), pt.level, repr(pt.tpr), repr(pt.fpr)])
    return [a.truth, a.fits], EXIT_OK


def cmd_export(a):
    graph = StitchedGraph.from_dict(_read_json(a.graph))
    edges = top_k_edges(graph, a.top_k if a.top_k is not None else len(graph.edges))
    means, inputs = None, [a.graph]
    if a.data:
        data = read_dataset(a.data, graph.schema)
        means = [data.node_stats(r).mean(axis=0) for r in range(graph.schema.p)]
        inputs.append(a.data)
    text = to_dot(graph, edges, means) if a.format == "dot" else to_graphml(graph, edges, means)
    Path(a.out).write_text(text)
    return inputs, EXIT_OK


# checked after --config is applied, so a manifest alone can drive a run
REQUIRED = {
    "generate": ("schema", "out"), "sample": ("model", "n", "out"), "fit": ("data", "schema", "out"),
    "stitch": ("fits", "out"), "eval": ("truth", "fits", "out"), "export": ("graph", "out"),
}

COMMANDS = {
    "generate": cmd_generate, "sample": cmd_sample, "fit": cmd_fit,
    "stitch": cmd_stitch, "eval": cmd_eval, "export": cmd_export,
}


def build_parser():
    p = _Parser(prog="vsmrf", description="Vector-space MRF structure learning.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="JSON file (or run manifest) overriding flags")
        sp.add_argument("--out", help="output path (required unless given by --config)")

    g = sub.add_parser("generate", help="draw a random ground-truth model")
    g.add_argument("--schema")
    g.add_argument("--edge-sparsity", type=float, default=0.9)
    g.add_argument("--param-sparsity", type=float, default=0.5)
    g.add_argument("--weight-scale", type=float, default=1.0)
    common(g)

    s = sub.add_parser("sample", help="Gibbs-sample a dataset from a model")
    s.add_argument("--model")
    s.add_argument("--n", type=int)
    s.add_argument("--burn-in", type=int, default=2000)
    s.add_argument("--thin", type=int, default=10)
    common(s)

    f = sub.add_parser("fit", help="fit per-node regularization paths")
    f.add_argument("--data")
    f.add_argument("--schema")
    f.add_argument("--lambda1", type=float, nargs="+", help="descending grid (default: 20 log-spaced in [1e-4, 0.5])")
    f.add_argument("--lambda2", type=float, nargs="+", default=[1e-4])
    f.add_argument("--alpha", type=float, default=1.0)
    f.add_argument("--eps-abs", type=float, default=1e-6)
    f.add_argument("--eps-rel", type=float, default=1e-4)
    f.add_argument("--max-iter", type=int, default=10000)
    f.add_argument("--newton-tol", type=float, default=1e-9)
    f.add_argument("--newton-max", type=int, default=50)
    f.add_argument("--hessian-mode", default="auto", choices=["auto", "exact-woodbury", "diagonal-quasi", "dense"])
    f.add_argument("--residual-balancing", action="store_true")
    f.add_argument("--no-warm-start", action="store_true")
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("--strict", action="store_true", help="exit 3 if any node fails to converge")
    common(f)

    st = sub.add_parser("stitch", help="combine node fits into a graph")
    st.add_argument("--fits")
    st.add_argument("--rule", choices=["AND", "OR"], default="AND")
    st.add_argument("--grid-index", type=int, default=-1)
    st.add_argument("--lambda1", type=float)
    common(st)

    e = sub.add_parser("eval", help="ROC of fits against a ground-truth model")
    e.add_argument("--truth")
    e.add_argument("--fits")
    e.add_argument("--level", choices=["edge", "parameter", "both"], default="both")
    common(e)

    x = sub.add_parser("export", help="write a graph as DOT or GraphML")
    x.add_argument("--graph")
    x.add_argument("--format", choices=["dot", "graphml"], default="dot")
    x.add_argument("--top-k", type=int)
    x.add_argument("--data", help="dataset for effect signs (optional)")
    common(x)
    return p


def _apply_config(parser, args, argv):
    if not args.config:
        return args
    doc = _read_json(args.config)
    if not isinstance(doc, dict):
        raise UsageError("--config must hold a JSON object")
    if "command" in doc and doc["command"] != args.command:
        raise UsageError(f"config is for command {doc['command']!r}, not {args.command!r}")
    overrides = doc.get("args", doc)
    known = vars(args)
    for key, value in overrides.items():
        key = key.replace("-", "_")
        if key in ("command", "config"):
            continue
        if key not in known:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        setattr(args, key, value)
    return args


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(parser, args, argv)
        missing = [f"--{k.replace('_', '-')}" for k in REQUIRED[args.command] if getattr(args, k) is None]
        if missing:
            raise UsageError(f"missing required arguments: {', '.join(missing)}")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        inputs, code = COMMANDS[args.command](args)
        echo = {k: v for k, v in vars(args).items() if k != "config"}
        write_manifest(args.out, args.command, echo, inputs)
        return code
    except UsageError as exc:
        print(f"vsmrf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, OSError, ModelValidationError, FitError) as exc:
        print(f"vsmrf {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
