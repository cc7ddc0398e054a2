"""Command-line interface.

Every subcommand reads its settings from defaults, then an optional JSON
``--config`` file, then command-line flags (flags win). ``--dump-config``
prints the merged settings and exits. Exit status is 0 on success, 1 for
input/configuration errors and 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from ._backend import THREADS_ENV, default_threads, set_threads
from .errors import ConfigError, InputError, NumericalError
from .geodesic import DEFAULT_BASIS_SIZE, DEFAULT_STEPS, build_basis, compute_geodesic, export_path, load_basis, save_basis
from .karcher import KarcherProblem, compute_karcher_mean, write_report as write_karcher_report
from .mesh import MeshFormatError, extract_geometry, list_mesh_files, load_mesh, load_meshes, save_mesh
from .metric import MetricParams, body_distance_sq, distance_matrix, read_distance_csv, write_distance_csv
from .optim import OptimConfig
from .retrieval import evaluate_retrieval, format_table, run_retrieval_experiment, write_report
from .synth import SynthSpec, write_corpus

OPTIM_DEFAULTS = {"max_iter": 500, "grad_tol": 1e-6, "memory": 10}

DEFAULTS = {
    "distance": {"mesh_a": None, "mesh_b": None, "params": [1.0, 1.0, 1.0], "template": None},
    "distmat": {"mesh_dir": None, "params": [1.0, 1.0, 1.0], "out": "distances.csv", "labels": None,
                "label_column": None, "template": None},
    "basis": {"seq_dir": None, "tau": 10, "n_components": DEFAULT_BASIS_SIZE, "out": "basis.bin",
              "center": False, "template": None},
    "geodesic": {"f0": None, "f1": None, "basis": None, "params": [1.0, 1.0, 0.0], "steps": DEFAULT_STEPS,
                 "out_dir": "geodesic", "template": None, **OPTIM_DEFAULTS},
    "mean": {"mesh_dir": None, "basis": None, "params": [0.0, 1.0, 1.0], "out": "mean.obj", "report": None,
             "init_index": 0, "template": None, **OPTIM_DEFAULTS},
    "retrieval": {"distmat": None, "mesh_dir": None, "labels": None, "label_column": None,
                  "params": [[1.0, 1e-4, 0.0], [0.0, 1.0, 1.0]], "out": "retrieval_report.json", "template": None},
    "synth": {"spec": None, "out_dir": None},
}

REQUIRED = {
    "distance": ["mesh_a", "mesh_b"],
    "distmat": ["mesh_dir"],
    "basis": ["seq_dir"],
    "geodesic": ["f0", "f1", "basis"],
    "mean": ["mesh_dir", "basis"],
    "retrieval": ["labels"],
    "synth": ["spec", "out_dir"],
}


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _params_arg(text):
    try:
        return list(MetricParams.parse(text).as_tuple())
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_optim(p):
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--grad-tol", type=float, dest="grad_tol")
    p.add_argument("--memory", type=int)


def build_parser():
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with settings (flags override it)")
    common.add_argument("--dump-config", action="store_true", help="print effective settings and exit")
    common.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    common.add_argument("--template", help="template mesh defining the shared topology")

    parser = _Parser(prog="elastic-bodies", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    kw = dict(parents=[common], argument_default=argparse.SUPPRESS)

    p = sub.add_parser("distance", help="elastic distance between two meshes", **kw)
    p.add_argument("mesh_a", nargs="?")
    p.add_argument("mesh_b", nargs="?")
    p.add_argument("--params", type=_params_arg, help="a,lambda,c")

    p = sub.add_parser("distmat", help="pairwise distance matrix of a mesh directory", **kw)
    p.add_argument("mesh_dir", nargs="?")
    p.add_argument("--params", type=_params_arg)
    p.add_argument("--out")
    p.add_argument("--labels", help="labels.csv to add a label column")
    p.add_argument("--label-column", dest="label_column")

    p = sub.add_parser("basis", help="PCA deformation basis from motion sequences", **kw)
    p.add_argument("seq_dir", nargs="?")
    p.add_argument("--tau", type=int)
    p.add_argument("--n-components", type=int, dest="n_components")
    p.add_argument("--out")
    p.add_argument("--center", action="store_true")

    p = sub.add_parser("geodesic", help="geodesic path between two meshes", **kw)
    p.add_argument("f0", nargs="?")
    p.add_argument("f1", nargs="?")
    p.add_argument("--basis")
    p.add_argument("--params", type=_params_arg)
    p.add_argument("--steps", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    _add_optim(p)

    p = sub.add_parser("mean", help="Karcher mean of a mesh directory", **kw)
    p.add_argument("mesh_dir", nargs="?")
    p.add_argument("--basis")
    p.add_argument("--params", type=_params_arg)
    p.add_argument("--out")
    p.add_argument("--report")
    p.add_argument("--init-index", type=int, dest="init_index")
    _add_optim(p)

    p = sub.add_parser("retrieval", help="NN/FT/ST retrieval scores", **kw)
    p.add_argument("--distmat")
    p.add_argument("--mesh-dir", dest="mesh_dir")
    p.add_argument("--labels")
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--params", type=_params_arg, action="append")
    p.add_argument("--out")

    p = sub.add_parser("synth", help="generate a synthetic registered corpus", **kw)
    p.add_argument("spec", nargs="?")
    p.add_argument("out_dir", nargs="?")
    return parser


def resolve_config(args):
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config", "dump_config")}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a JSON object")
        unknown = sorted(set(data) - set(cfg) - {"threads"})
        if unknown:
            raise ConfigError(f"unknown config keys for '{cmd}': {', '.join(unknown)}")
        cfg.update(data)
    cfg.update(given)
    cfg.setdefault("threads", None)
    if cfg["threads"] is None:
        cfg["threads"] = default_threads()
    # validate metric parameters at parse time
    if "params" in cfg:
        if cmd == "retrieval":
            plist = cfg["params"]
            if not isinstance(plist, list) or not plist:
                raise ConfigError("retrieval params must be a non-empty list of triples")
            cfg["params"] = [list(MetricParams.parse(p).as_tuple()) for p in plist]
        else:
            cfg["params"] = list(MetricParams.parse(cfg["params"]).as_tuple())
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def _check_required(cmd, cfg):
    missing = [k for k in REQUIRED[cmd] if not cfg.get(k)]
    if missing:
        raise ConfigError(f"'{cmd}' needs: {', '.join(missing)}")
    for key in ("mesh_a", "mesh_b", "f0", "f1", "basis", "spec", "labels", "distmat", "template"):
        if cfg.get(key) and not Path(cfg[key]).is_file():
            raise ConfigError(f"{key}: no such file {cfg[key]}")
    for key in ("mesh_dir", "seq_dir"):
        if cfg.get(key) and not Path(cfg[key]).is_dir():
            raise ConfigError(f"{key}: no such directory {cfg[key]}")


def _topology(cfg, first_file):
    src = cfg.get("template") or first_file
    return load_mesh(src).topology


def _optim(cfg):
    return OptimConfig(max_iter=int(cfg["max_iter"]), grad_tol=float(cfg["grad_tol"]), memory=int(cfg["memory"]))


def read_labels(path, files, column=None):
    """Label columns of ``labels.csv`` ordered like ``files`` (matched by file name or stem)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: no label rows")
    key = "file" if "file" in rows[0] else ("name" if "name" in rows[0] else None)
    if key is None:
        raise ConfigError(f"{path}: needs a 'file' or 'name' column")
    columns = [c for c in rows[0] if c != key]
    if column is not None:
        if column not in columns:
            raise ConfigError(f"{path}: no label column {column!r}")
        columns = [column]
    table = {}
    for r in rows:
        table[r[key]] = r
        table[Path(r[key]).stem] = r
    out = {}
    for c in columns:
        labels = []
        for f in files:
            r = table.get(f) or table.get(Path(f).stem)
            if r is None:
                raise ConfigError(f"{path}: no label for {f}")
            labels.append(r[c])
        out[c] = labels
    return out


def cmd_distance(cfg):
    a = cfg["mesh_a"]
    topo = _topology(cfg, a)
    ma, mb = load_mesh(a, topo), load_mesh(cfg["mesh_b"], topo)
    params = MetricParams.parse(cfg["params"])
    br = body_distance_sq(extract_geometry(ma), extract_geometry(mb), params)
    print(f"params       {params}")
    print(f"distance     {br.distance:.12g}")
    print(f"distance_sq  {br.total:.12g}")
    print(f"metric_part  {br.metric_part:.12g}")
    print(f"normal_part  {br.normal_part:.12g}")
    return 0


def _load_dir(cfg, directory):
    files = list_mesh_files(directory)
    if not files:
        raise MeshFormatError(f"no OBJ/PLY files in {directory}")
    topo = _topology(cfg, files[0])
    return files, load_meshes(files, topo)


def cmd_distmat(cfg):
    files, meshes = _load_dir(cfg, cfg["mesh_dir"])
    labels = None
    if cfg.get("labels"):
        sets = read_labels(cfg["labels"], [f.name for f in files], cfg.get("label_column"))
        labels = next(iter(sets.values()))
    M = distance_matrix(meshes, cfg["params"], labels=labels, names=[f.stem for f in files], threads=cfg["threads"])
    write_distance_csv(cfg["out"], M)
    print(f"wrote {len(files)}x{len(files)} distance matrix to {cfg['out']}")
    return 0


def cmd_basis(cfg):
    root = Path(cfg["seq_dir"])
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    seq_dirs = [d for d in subdirs if list_mesh_files(d)] or [root]
    first = list_mesh_files(seq_dirs[0])
    if not first:
        raise MeshFormatError(f"no mesh sequences under {root}")
    topo = _topology(cfg, first[0])
    seqs = [load_meshes(list_mesh_files(d), topo) for d in seq_dirs]
    basis = build_basis(seqs, tau=int(cfg["tau"]), n_components=int(cfg["n_components"]), center=bool(cfg["center"]))
    save_basis(cfg["out"], basis)
    print(f"wrote basis with {basis.size} components ({len(seqs)} sequences) to {cfg['out']}")
    return 0


def cmd_geodesic(cfg):
    topo = _topology(cfg, cfg["f0"])
    f0, f1 = load_mesh(cfg["f0"], topo), load_mesh(cfg["f1"], topo)
    basis = load_basis(cfg["basis"])
    path = compute_geodesic(f0, f1, basis, cfg["params"], steps=int(cfg["steps"]), config=_optim(cfg))
    export_path(path, cfg["out_dir"])
    r = path.report
    print(f"linear-path energy  {r.value_history[0]:.12g}")
    print(f"geodesic energy     {r.final_value:.12g}")
    print(f"iterations          {r.iterations} ({'converged' if r.converged else r.message})")
    return 0


def cmd_mean(cfg):
    files, meshes = _load_dir(cfg, cfg["mesh_dir"])
    basis = load_basis(cfg["basis"])
    problem = KarcherProblem(meshes, basis, cfg["params"], init_index=int(cfg["init_index"]))
    mean, report = compute_karcher_mean(problem, _optim(cfg))
    save_mesh(cfg["out"], mean)
    rpath = cfg.get("report") or str(Path(cfg["out"]).with_name("karcher_report.json"))
    write_karcher_report(rpath, problem, mean, report)
    print(f"Karcher functional  {report.value_history[0]:.12g} -> {report.final_value:.12g}")
    print(f"wrote {cfg['out']} and {rpath}")
    return 0


def cmd_retrieval(cfg):
    if cfg.get("distmat"):
        M = read_distance_csv(cfg["distmat"])
        sets = read_labels(cfg["labels"], M.names, cfg.get("label_column"))
        rows = []
        for name, labels in sets.items():
            rows.append({"params": None, "labels": name, **evaluate_retrieval(M, labels)})
        table = "\n".join(f"{r['labels']:<10} NN {r['NN']:6.1f}  FT {r['FT']:6.1f}  ST {r['ST']:6.1f}" for r in rows)
    elif cfg.get("mesh_dir"):
        files, meshes = _load_dir(cfg, cfg["mesh_dir"])
        sets = read_labels(cfg["labels"], [f.name for f in files], cfg.get("label_column"))
        rows = run_retrieval_experiment(meshes, sets, cfg["params"], threads=cfg["threads"],
                                        names=[f.stem for f in files])
        table = format_table(rows)
    else:
        raise ConfigError("retrieval needs --distmat or --mesh-dir")
    write_report(cfg["out"], rows)
    print(table)
    return 0


def cmd_synth(cfg):
    try:
        data = json.loads(Path(cfg["spec"]).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read synth spec {cfg['spec']}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("synth spec must be a JSON object")
    spec = SynthSpec.from_dict(data)
    sequences = data.get("sequences", [])
    names = write_corpus(cfg["out_dir"], spec, sequences)
    print(f"wrote {len(names)} meshes and {len(sequences)} sequences to {cfg['out_dir']}")
    return 0


COMMANDS = {
    "distance": cmd_distance,
    "distmat": cmd_distmat,
    "basis": cmd_basis,
    "geodesic": cmd_geodesic,
    "mean": cmd_mean,
    "retrieval": cmd_retrieval,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if getattr(args, "dump_config", False):
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        _check_required(args.command, cfg)
        set_threads(cfg["threads"])
        return COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
