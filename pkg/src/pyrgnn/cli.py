"""Command-line entry point: ``pyrgnn {generate,embed,classify,project}``.

Every option can also be set in a TOML file passed with ``--config``; keys are
the option names with dashes replaced by underscores, either at top level or
in a table named after the command. Command-line values take precedence.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import analysis_rows, write_analysis_csv
from .cache import CACHE_ENV, PyramidCache
from .datasets import SyntheticConfig, generate_synthetic, load_dataset, write_manifest, write_tud
from .errors import DataError, NumericalError, PreconditionViolated
from .pooling import NdpConfig, PoolMethod
from .readout import ALPHA_GRID, Architecture, Protocol, accuracy_time_ratio, lda_project, nested_cv
from .reservoir import ReservoirConfig, embed_stack, init_layers

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("pyrgnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SMOKE_GRAPHS = 30


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # required options and unset paths have nothing useful to show
    def _get_help_string(self, action):
        if action.default is None or action.required:
            return action.help
        return super()._get_help_string(action)


def _formatter(prog):
    return _DefaultsFormatter(prog, max_help_position=32)


def _add_reservoir_options(p):
    p.add_argument("--method", choices=[m.value for m in PoolMethod], default="nopool", help="pooling method")
    p.add_argument("--levels", "-L", type=int, default=2, help="number of reservoir layers L")
    p.add_argument("--hidden", "-H", type=int, default=50, help="reservoir units per layer H")
    p.add_argument("--epsilon", type=float, default=1e-5, help="fixed-point stopping threshold")
    p.add_argument("--max-iter", type=int, default=50, help="maximum fixed-point iterations")
    p.add_argument("--delta", type=float, default=0.1, help="NDP relative sparsification threshold")
    p.add_argument(
        "--partition", choices=["spectral_sign", "greedy_swap"], default="spectral_sign", help="NDP MAXCUT heuristic"
    )
    p.add_argument("--cache-dir", default=None, help=f"pyramid cache directory, falls back to ${CACHE_ENV}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pyrgnn", description="Reservoir graph embeddings with pooling pyramids.", formatter_class=_formatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None, help="TOML file with option defaults")
    parser.add_argument("--verbose", "-v", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    parser.command_parsers = sub.choices

    p = sub.add_parser("generate", help="write a synthetic benchmark corpus", formatter_class=_formatter)
    p.add_argument("--difficulty", choices=["easy", "hard"], default="easy", help="corpus difficulty")
    p.add_argument("--n", type=int, default=1800, help="number of graphs")
    p.add_argument("--small", action="store_true", help="use the reduced corpus size from the geometry file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")

    p = sub.add_parser("embed", help="embed every graph of a dataset", formatter_class=_formatter)
    p.add_argument("--dataset", required=True, help="dataset directory (TUD text layout)")
    p.add_argument("--name", default=None, help="dataset file prefix, inferred when omitted")
    _add_reservoir_options(p)
    p.add_argument("--rho", type=float, default=0.9, help="spectral radius of W")
    p.add_argument("--omega-in", type=float, default=0.5, help="input scaling of layer 1")
    p.add_argument("--omega-hid", type=float, default=0.8, help="input scaling of layers > 1")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")

    p = sub.add_parser("classify", help="nested cross-validated classification", formatter_class=_formatter)
    p.add_argument("--dataset", default=None, help="dataset directory (required unless --smoke)")
    p.add_argument("--name", default=None, help="dataset file prefix, inferred when omitted")
    _add_reservoir_options(p)
    p.add_argument("--folds", type=int, default=5, help="external folds")
    p.add_argument("--val-fraction", type=float, default=0.1, help="validation share of each training portion")
    p.add_argument("--configs", type=int, default=100, help="random hyper-parameter configurations")
    p.add_argument("--seeds", type=int, default=3, help="reservoir initializations per configuration")
    p.add_argument("--alphas", type=float, nargs="+", default=list(ALPHA_GRID), help="ridge alpha grid")
    p.add_argument(
        "--smoke",
        action="store_true",
        help=f"quick preset: 2 folds, 2 configurations, 1 seed; without --dataset uses {SMOKE_GRAPHS} generated graphs",
    )
    p.add_argument("--ratio-report", action="store_true", help="also report accuracy / (t_tr + t_ts)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")

    p = sub.add_parser("project", help="LDA projection of embeddings", formatter_class=_formatter)
    p.add_argument("--embeddings", required=True, help="embeddings CSV written by 'embed'")
    p.add_argument("--labels", default=None, help="file with one label per line; the CSV label column is used when omitted")
    p.add_argument("--out-dim", type=int, default=2, help="projection dimension (at most classes - 1)")
    p.add_argument("--out", required=True, help="output CSV")
    return parser


COMMAND_NAMES = ("generate", "embed", "classify", "project")


def _read_config(argv):
    """Parse ``--config`` ahead of the full command line."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return None
    try:
        with open(known.config, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config file {known.config}: {exc}") from exc


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    data = _read_config(argv)
    if data:
        subparsers = parser.command_parsers
        common = {k: v for k, v in data.items() if k not in COMMAND_NAMES}
        for cmd in COMMAND_NAMES:
            sub = subparsers[cmd]
            known = {a.dest for a in sub._actions}
            section = data.get(cmd, {})
            unknown = set(section) - known
            if unknown:
                raise UsageError(f"unknown option(s) in config table [{cmd}]: {', '.join(sorted(unknown))}")
            values = {k: v for k, v in {**common, **section}.items() if k in known}
            sub.set_defaults(**values)
            for action in sub._actions:
                if action.dest in values:
                    action.required = False
    return parser.parse_args(argv)


# --- commands ----------------------------------------------------------------


def cmd_generate(args) -> int:
    config = SyntheticConfig.preset(args.difficulty, args.n, args.seed, small=args.small)
    bundle = generate_synthetic(config)
    out = Path(args.out)
    write_tud(bundle, out)
    write_manifest(bundle, out)
    stats = bundle.stats()
    print(
        f"wrote {stats['samples']} graphs to {out} "
        f"(avg vertices {stats['avg_vertices']:.2f}, avg edges {stats['avg_edges']:.2f})"
    )
    return EXIT_OK


def _ndp_config(args):
    return NdpConfig(delta=args.delta, partition_method=args.partition)


def _cache(args):
    return PyramidCache.from_env(args.cache_dir)


def cmd_embed(args) -> int:
    from .readout import build_pyramids

    bundle = load_dataset(args.dataset, args.name)
    arch = Architecture(args.method, args.levels, args.hidden, _ndp_config(args))
    config = ReservoirConfig(
        hidden_units=args.hidden,
        rho_target=args.rho,
        omega_in=args.omega_in,
        omega_hid=args.omega_hid,
        epsilon=args.epsilon,
        max_iter=args.max_iter,
        seed=args.seed,
    )
    pyramids, _ = build_pyramids(bundle, arch, args.seed, _cache(args))
    layers = init_layers(config, bundle.feature_dim, args.levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    embeddings = np.empty((len(bundle), args.hidden))
    start = time.perf_counter()
    for g, (graph, pyramid) in enumerate(zip(bundle.graphs, pyramids)):
        embeddings[g], results = embed_stack(layers, pyramid, graph.features, config)
        rows.extend(analysis_rows(g, pyramid, layers, graph.features, results, config.epsilon))
    elapsed = time.perf_counter() - start
    write_embeddings_csv(out / "embeddings.csv", embeddings, bundle.labels)
    write_analysis_csv(out / "analysis.csv", rows)
    print(f"embedded {len(bundle)} graphs in {elapsed:.2f} s; wrote {out / 'embeddings.csv'} and {out / 'analysis.csv'}")
    return EXIT_OK


def write_embeddings_csv(path, embeddings, labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["graph_id", "label"] + [f"e{j}" for j in range(embeddings.shape[1])])
        for g, (row, label) in enumerate(zip(embeddings, labels)):
            writer.writerow([g, int(label)] + [repr(float(v)) for v in row])


def read_embeddings_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["graph_id", "label"]:
            raise DataError(f"{path}: expected a header starting with graph_id,label")
        ids, labels, rows = [], [], []
        for lineno, rec in enumerate(reader, 2):
            try:
                ids.append(int(rec[0]))
                labels.append(int(rec[1]))
                rows.append([float(v) for v in rec[2:]])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return np.array(ids), np.array(labels), np.array(rows)


def _smoke_bundle(seed):
    return generate_synthetic(SyntheticConfig.preset("easy", SMOKE_GRAPHS, seed))


def cmd_classify(args) -> int:
    if args.dataset:
        bundle = load_dataset(args.dataset, args.name)
    elif args.smoke:
        bundle = _smoke_bundle(args.seed)
    else:
        raise UsageError("classify needs --dataset (or --smoke)")
    arch = Architecture(args.method, args.levels, args.hidden, _ndp_config(args))
    fields = dict(
        n_external=args.folds,
        val_fraction=args.val_fraction,
        n_configs=args.configs,
        n_seeds=args.seeds,
        alpha_grid=tuple(args.alphas),
        epsilon=args.epsilon,
        max_iter=args.max_iter,
    )
    if args.smoke:
        fields.update(n_external=2, n_configs=2, n_seeds=1)
    protocol = Protocol(**fields)
    report = nested_cv(bundle, arch, protocol, seed=args.seed, jobs=args.jobs, cache=_cache(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cv_report.json").write_text(report.to_json())
    (out / "cv_timing.json").write_text(report.to_json(timing=True))
    report.write_csv(out / "cv_report.csv", ratio=args.ratio_report)
    print(
        f"{report.dataset} {report.method} L={report.levels} H={report.hidden_units}: "
        f"accuracy {100 * report.mean:.1f} +- {100 * report.std:.1f}  "
        f"t_tr {report.train_time_s:.2f} s  t_ts {report.test_time_s:.2f} s"
    )
    if args.ratio_report:
        ratio = accuracy_time_ratio(report.mean, report.train_time_s, report.test_time_s)
        print(f"accuracy / (t_tr + t_ts) = {ratio:.4f} per s")
    return EXIT_OK


def cmd_project(args) -> int:
    ids, labels, embeddings = read_embeddings_csv(args.embeddings)
    if args.labels:
        labels = np.loadtxt(args.labels, dtype=np.int64, ndmin=1)
        if len(labels) != len(embeddings):
            raise DataError(f"{args.labels}: {len(labels)} labels for {len(embeddings)} embeddings")
    coords = lda_project(embeddings, labels, args.out_dim)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["graph_id", "label"] + [f"dim{j + 1}" for j in range(args.out_dim)])
        for g, label, row in zip(ids, labels, coords):
            writer.writerow([int(g), int(label)] + [repr(float(v)) for v in row])
    print(f"wrote {len(coords)} projected rows to {args.out}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "embed": cmd_embed, "classify": cmd_classify, "project": cmd_project}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"pyrgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, PreconditionViolated, ValueError) as exc:
        if isinstance(exc, DataError):
            print(f"pyrgnn: data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"pyrgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"pyrgnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"pyrgnn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
