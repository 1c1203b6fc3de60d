"""Synthetic point-cloud graph benchmark, TUD-format text I/O and fold construction."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist
from sklearn.datasets import make_circles, make_moons
from sklearn.model_selection import StratifiedKFold, train_test_split

from .errors import DegenerateGeometry, ParseError, PreconditionViolated, TooFewSamples, VertexIndexError
from .graph import Graph
from .rng import derive_int, derive_rng

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

N_CLUSTERS = 5
N_CLASSES = 3


def load_geometry() -> dict:
    with resources.files("pyrgnn").joinpath("data/synthetic.toml").open("rb") as fh:
        return tomllib.load(fh)


@dataclass(frozen=True)
class Fold:
    """Index sets of one external fold: train/validation hold-out plus the test part."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @property
    def train_full(self) -> np.ndarray:
        return np.sort(np.concatenate([self.train, self.val]))


@dataclass(frozen=True)
class DatasetBundle:
    graphs: tuple
    labels: np.ndarray
    name: str
    feature_dim: int
    splits: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if len(labels) != len(self.graphs):
            raise PreconditionViolated("graphs and labels differ in length")
        if labels.size and (labels.min() < 0 or not np.array_equal(np.unique(labels), np.arange(labels.max() + 1))):
            raise PreconditionViolated("class ids must be contiguous from 0")
        labels.flags.writeable = False
        object.__setattr__(self, "graphs", tuple(self.graphs))
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.graphs)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def stats(self) -> dict:
        ns = np.array([g.n_vertices for g in self.graphs])
        ms = np.array([g.n_edges for g in self.graphs])
        return {
            "samples": len(self.graphs),
            "classes": self.n_classes,
            "avg_vertices": float(ns.mean()),
            "avg_edges": float(ms.mean()),
        }


# --- synthetic benchmark -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    difficulty: str = "easy"
    n_graphs: int = 1800
    knn_k: int = 5
    cluster_spread: float = 0.05
    points_per_cluster_range: tuple = (20, 39)
    seed: int = 0

    def __post_init__(self):
        if self.difficulty not in ("easy", "hard"):
            raise PreconditionViolated(f"difficulty must be 'easy' or 'hard', got {self.difficulty!r}")
        if self.knn_k < 1:
            raise PreconditionViolated("knn_k must be at least 1")
        if self.n_graphs < N_CLASSES:
            raise PreconditionViolated("need at least one graph per class")
        lo, hi = self.points_per_cluster_range
        if not 1 <= lo <= hi:
            raise PreconditionViolated("invalid points-per-cluster range")
        object.__setattr__(self, "points_per_cluster_range", (int(lo), int(hi)))

    @classmethod
    def preset(cls, difficulty="easy", n_graphs=1800, seed=0, small=False) -> "SyntheticConfig":
        geometry = load_geometry()
        if small:
            n_graphs = geometry["small"]["n_graphs"]
        section = geometry[difficulty]
        return cls(
            difficulty=difficulty,
            n_graphs=n_graphs,
            knn_k=section["knn_k"],
            cluster_spread=section["cluster_spread"],
            points_per_cluster_range=tuple(geometry["points_per_cluster"]),
            seed=seed,
        )


def _cluster_points(shape, n, spread, rng, geometry):
    if shape == "blob":
        return rng.normal(scale=spread * geometry["blob_std_per_spread"], size=(n, 2))
    sub_seed = int(rng.integers(2**31 - 1))
    if shape == "moons":
        points, _ = make_moons(n, noise=spread, random_state=sub_seed)
        return (points - np.asarray(geometry["moons_offset"])) * geometry["moons_scale"]
    if shape == "circles":
        points, _ = make_circles(n, noise=spread, factor=geometry["circles_factor"], random_state=sub_seed)
        return points * geometry["circles_scale"]
    raise ValueError(f"unknown cluster shape {shape!r}")


def knn_adjacency(points, k) -> sp.csr_matrix:
    """Union-symmetrized k-nearest-neighbour graph under Euclidean distance.

    Equidistant candidates are ranked by point index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n <= k:
        raise DegenerateGeometry(f"{n} points cannot have {k} distinct neighbours each")
    dist = cdist(points, points)
    np.fill_diagonal(dist, np.inf)
    nbrs = np.argsort(dist, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    directed = sp.coo_matrix((np.ones(n * k), (rows, nbrs.ravel())), shape=(n, n))
    return sp.csr_matrix(((directed + directed.T) > 0).astype(np.float64))


def synthetic_graph(config: SyntheticConfig, index: int, geometry=None) -> Graph:
    """Graph ``index`` of the corpus; its class is ``index % 3``."""
    geometry = geometry or load_geometry()
    rng = derive_rng(config.seed, f"synthetic-{config.difficulty}", index)
    label = index % N_CLASSES
    lo, hi = config.points_per_cluster_range
    points, colours = [], []
    for position, shape in enumerate(geometry["arrangements"][label]):
        n = int(rng.integers(lo, hi + 1))
        cloud = _cluster_points(shape, n, config.cluster_spread, rng, geometry)
        points.append(cloud + [position * geometry["gap"], 0.0])
        colours.extend([position] * n)
    adjacency = knn_adjacency(np.vstack(points), config.knn_k)
    features = np.eye(N_CLUSTERS)[colours]
    return Graph(adjacency, features, label)


def generate_synthetic(config: SyntheticConfig) -> DatasetBundle:
    geometry = load_geometry()
    graphs = [synthetic_graph(config, i, geometry) for i in range(config.n_graphs)]
    labels = [g.label for g in graphs]
    name = f"b-{config.difficulty}"
    meta = {"difficulty": config.difficulty, "seed": config.seed, "config": _config_echo(config)}
    return DatasetBundle(tuple(graphs), labels, name, N_CLUSTERS, metadata=meta)


def _config_echo(config):
    echo = asdict(config)
    echo["points_per_cluster_range"] = list(config.points_per_cluster_range)
    return echo


# --- TUD text format ---------------------------------------------------------


def _read_rows(path, parse, width=None):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            parts = [p.strip() for p in text.split(",")]
            if width is not None and len(parts) != width:
                raise ParseError(path, lineno, f"expected {width} comma-separated values, got {len(parts)}")
            try:
                rows.append([parse(p) for p in parts])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return rows


def _parse_int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def load_tud(dir_path, name: str) -> DatasetBundle:
    """Read a dataset in the TUD text layout.

    Files are ``{name}_A.txt`` (1-based global vertex pairs),
    ``{name}_graph_indicator.txt``, ``{name}_graph_labels.txt`` and optionally
    ``{name}_node_labels.txt`` and ``{name}_node_attributes.txt``. Vertex
    features concatenate the one-hot node label with the attributes; without
    either, the vertex degree is used. Graphs with no vertices are skipped.
    """
    root = Path(dir_path)
    path = lambda suffix: root / f"{name}_{suffix}.txt"  # noqa: E731
    for required in ("A", "graph_indicator", "graph_labels"):
        if not path(required).exists():
            raise FileNotFoundError(f"missing {path(required)}")

    indicator = np.array([r[0] for r in _read_rows(path("graph_indicator"), _parse_int, 1)], dtype=np.int64)
    graph_labels = np.array([r[0] for r in _read_rows(path("graph_labels"), _parse_int, 1)], dtype=np.int64)
    n_nodes = len(indicator)
    n_graphs = len(graph_labels)
    if n_nodes and (indicator.min() < 1 or indicator.max() > n_graphs):
        bad = int(np.flatnonzero((indicator < 1) | (indicator > n_graphs))[0])
        raise ParseError(path("graph_indicator"), bad + 1, f"graph id {indicator[bad]} outside 1..{n_graphs}")
    if np.any(np.diff(indicator) < 0):
        bad = int(np.flatnonzero(np.diff(indicator) < 0)[0]) + 1
        raise ParseError(path("graph_indicator"), bad + 1, "vertices must be grouped by graph id")

    edges = np.array(_read_rows(path("A"), _parse_int, 2), dtype=np.int64).reshape(-1, 2) - 1
    if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
        bad = int(np.flatnonzero((edges < 0).any(axis=1) | (edges >= n_nodes).any(axis=1))[0])
        raise VertexIndexError(f"{path('A')}:{bad + 1}: vertex id outside 1..{n_nodes}")
    if edges.size:
        cross = indicator[edges[:, 0]] != indicator[edges[:, 1]]
        if cross.any():
            bad = int(np.flatnonzero(cross)[0])
            raise VertexIndexError(f"{path('A')}:{bad + 1}: edge joins vertices of different graphs")

    blocks = []
    if path("node_labels").exists():
        node_labels = np.array(
            [r[0] for r in _read_rows(path("node_labels"), _parse_int)], dtype=np.int64
        )
        if len(node_labels) != n_nodes:
            raise ParseError(path("node_labels"), len(node_labels), f"expected {n_nodes} lines")
        values, codes = np.unique(node_labels, return_inverse=True)
        blocks.append(np.eye(len(values))[codes])
    if path("node_attributes").exists():
        attrs = np.array(_read_rows(path("node_attributes"), float), dtype=np.float64)
        if len(attrs) != n_nodes:
            raise ParseError(path("node_attributes"), len(attrs), f"expected {n_nodes} lines")
        blocks.append(attrs.reshape(n_nodes, -1))
    node_features = np.hstack(blocks) if blocks else None

    starts = np.searchsorted(indicator, np.arange(1, n_graphs + 2))
    edge_graph = indicator[edges[:, 0]] if edges.size else np.zeros(0, dtype=np.int64)
    edge_order = np.argsort(edge_graph, kind="stable")
    edges, edge_graph = edges[edge_order], edge_graph[edge_order]
    edge_starts = np.searchsorted(edge_graph, np.arange(1, n_graphs + 2))

    _, class_ids = np.unique(graph_labels, return_inverse=True)
    graphs, labels = [], []
    for g in range(n_graphs):
        lo, hi = starts[g], starts[g + 1]
        n = hi - lo
        if n == 0:
            log.warning("%s: graph %d has no vertices, skipped", name, g + 1)
            continue
        local = edges[edge_starts[g]:edge_starts[g + 1]] - lo
        local = local[local[:, 0] != local[:, 1]]
        adjacency = sp.coo_matrix((np.ones(len(local)), (local[:, 0], local[:, 1])), shape=(n, n))
        adjacency = ((adjacency + adjacency.T) > 0).astype(np.float64)
        if node_features is None:
            features = np.asarray(adjacency.sum(axis=1), dtype=np.float64).reshape(n, 1)
        else:
            features = node_features[lo:hi]
        graphs.append(Graph(adjacency, features, int(class_ids[g])))
        labels.append(int(class_ids[g]))
    labels = np.asarray(labels)
    # skipping graphs can leave gaps in the class ids
    _, labels = np.unique(labels, return_inverse=True)
    graphs = [replace(g, label=int(c)) for g, c in zip(graphs, labels)]
    feature_dim = graphs[0].feature_dim if graphs else 0
    return DatasetBundle(tuple(graphs), labels, name, feature_dim)


def _is_one_hot(features):
    return bool(np.all((features == 0) | (features == 1)) and np.all(features.sum(axis=1) == 1))


def write_tud(bundle: DatasetBundle, dir_path, name: Optional[str] = None) -> Path:
    """Write ``bundle`` in the TUD text layout (inverse of :func:`load_tud`).

    One-hot features are stored as node labels, anything else as node
    attributes. Each undirected edge is written in both directions.
    """
    name = name or bundle.name
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    all_features = np.vstack([g.features for g in bundle.graphs])
    one_hot = _is_one_hot(all_features)
    offset = 0
    with open(root / f"{name}_A.txt", "w") as fa, open(root / f"{name}_graph_indicator.txt", "w") as fi:
        for gid, graph in enumerate(bundle.graphs, 1):
            coo = graph.adjacency.tocoo()
            order = np.lexsort((coo.col, coo.row))
            for i, j in zip(coo.row[order], coo.col[order]):
                fa.write(f"{i + 1 + offset}, {j + 1 + offset}\n")
            fi.write(f"{gid}\n" * graph.n_vertices)
            offset += graph.n_vertices
    with open(root / f"{name}_graph_labels.txt", "w") as fh:
        fh.writelines(f"{int(c)}\n" for c in bundle.labels)
    if one_hot:
        with open(root / f"{name}_node_labels.txt", "w") as fh:
            fh.writelines(f"{int(c)}\n" for c in np.argmax(all_features, axis=1))
    else:
        with open(root / f"{name}_node_attributes.txt", "w") as fh:
            for row in all_features:
                fh.write(", ".join(repr(float(v)) for v in row) + "\n")
    return root


def write_manifest(bundle: DatasetBundle, dir_path, extra=None) -> Path:
    manifest = {"name": bundle.name, "feature_dim": bundle.feature_dim, **bundle.stats(), **bundle.metadata}
    if extra:
        manifest.update(extra)
    path = Path(dir_path) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(dir_path, name: Optional[str] = None) -> DatasetBundle:
    """Load a TUD-layout directory; the name defaults to the manifest's or the directory's."""
    root = Path(dir_path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    if name is None:
        manifest = root / "manifest.json"
        if manifest.exists():
            name = json.loads(manifest.read_text())["name"]
        else:
            candidates = sorted(root.glob("*_graph_indicator.txt"))
            if len(candidates) != 1:
                raise FileNotFoundError(f"cannot infer the dataset name in {root}")
            name = candidates[0].name[: -len("_graph_indicator.txt")]
    return load_tud(root, name)


# --- folds -------------------------------------------------------------------


def make_folds(bundle: DatasetBundle, n_external=5, val_fraction=0.1, seed=0) -> DatasetBundle:
    """Stratified external folds, each with a stratified train/validation hold-out."""
    if n_external < 2:
        raise PreconditionViolated("need at least two external folds")
    if not 0 < val_fraction < 1:
        raise PreconditionViolated("val_fraction must lie in (0, 1)")
    labels = bundle.labels
    counts = np.bincount(labels)
    if counts.min() < n_external:
        raise TooFewSamples(
            f"class {int(np.argmin(counts))} has {counts.min()} samples, fewer than {n_external} folds"
        )
    outer = StratifiedKFold(n_splits=n_external, shuffle=True, random_state=derive_int(seed, "folds") % 2**32)
    folds = []
    for k, (train_full, test) in enumerate(outer.split(np.zeros(len(labels)), labels)):
        rs = derive_int(seed, "holdout", k) % 2**32
        try:
            train, val = train_test_split(
                train_full, test_size=val_fraction, stratify=labels[train_full], random_state=rs
            )
        except ValueError:
            # too few samples per class for a stratified hold-out
            train, val = train_test_split(train_full, test_size=val_fraction, random_state=rs)
        folds.append(Fold(np.sort(train), np.sort(val), np.sort(test)))
    return replace(bundle, splits=tuple(folds))
