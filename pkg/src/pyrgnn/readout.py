"""Ridge readout, nested model selection and LDA projection of graph embeddings."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .cache import PyramidCache, cache_key
from .datasets import DatasetBundle, make_folds
from .errors import PreconditionViolated
from .pooling import NdpConfig, PoolMethod, build_pyramid
from .reservoir import ReservoirConfig, embed_stack, init_layers
from .rng import derive_int, derive_rng

log = logging.getLogger(__name__)

ALPHA_GRID = (1e2, 1e1, 1e0, 1e-1, 1e-2)
LDA_REGULARIZATION = 1e-6
REPORT_COLUMNS = (
    "dataset",
    "method",
    "L",
    "H",
    "fold",
    "accuracy",
    "t_tr_s",
    "t_ts_s",
    "best_rho",
    "best_omega_in",
    "best_omega_hid",
    "best_alpha",
)


# --- ridge -------------------------------------------------------------------


@dataclass(frozen=True)
class RidgeModel:
    """Linear one-vs-all ridge classifier over standardized embeddings.

    Scores are ``((E - mean) / scale) @ weights + bias``; the prediction is the
    first class with the highest score.
    """

    weights: np.ndarray
    bias: np.ndarray
    alpha: float
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if not self.alpha > 0:
            raise PreconditionViolated("alpha must be positive")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def standardize(self, embeddings):
        return (np.asarray(embeddings, dtype=np.float64) - self.mean) / self.scale

    def design(self, embeddings):
        """Bias-augmented standardized design matrix Z."""
        Z = self.standardize(embeddings)
        return np.hstack([Z, np.ones((Z.shape[0], 1))])

    def decision_function(self, embeddings):
        return self.standardize(embeddings) @ self.weights + self.bias

    def predict(self, embeddings):
        return np.argmax(self.decision_function(embeddings), axis=1)

    def score(self, embeddings, labels) -> float:
        return float(np.mean(self.predict(embeddings) == np.asarray(labels)))


def standardization(embeddings):
    mean = embeddings.mean(axis=0)
    scale = embeddings.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


def one_hot(labels, n_classes):
    return np.eye(n_classes)[np.asarray(labels)]


def fit_ridge(embeddings, labels, alpha: float, n_classes: Optional[int] = None) -> RidgeModel:
    """Closed-form ridge regression onto one-hot targets.

    Solves ``(Z^T Z + alpha I) B = Z^T Y`` where Z is the standardized embedding
    matrix with a trailing column of ones; the bias row is regularized too.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if alpha <= 0:
        raise PreconditionViolated("alpha must be positive")
    if labels.min() < 0:
        raise PreconditionViolated("labels must be non-negative class ids")
    n_classes = n_classes or int(labels.max()) + 1
    if len(E) < n_classes:
        raise PreconditionViolated(f"{len(E)} samples for {n_classes} classes")
    mean, scale = standardization(E)
    Z = np.hstack([(E - mean) / scale, np.ones((len(E), 1))])
    Y = one_hot(labels, n_classes)
    gram = Z.T @ Z
    gram[np.diag_indices_from(gram)] += alpha
    B = scipy.linalg.solve(gram, Z.T @ Y, assume_a="pos")
    return RidgeModel(B[:-1], B[-1], float(alpha), mean, scale)


def normal_equation_residual(model: RidgeModel, embeddings, labels) -> float:
    """``||(Z^T Z + alpha I) B - Z^T Y|| / ||Z^T Y||`` on the training data."""
    Z = model.design(embeddings)
    Y = one_hot(labels, model.n_classes)
    B = np.vstack([model.weights, model.bias])
    lhs = Z.T @ Z @ B + model.alpha * B
    rhs = Z.T @ Y
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))


def ridge_path_accuracy(E_train, y_train, E_eval, y_eval, alphas, n_classes) -> np.ndarray:
    """Evaluation accuracy of the ridge readout for every alpha in ``alphas``.

    Shares one eigendecomposition of the Gram matrix across the grid; the
    solutions coincide with :func:`fit_ridge`.
    """
    mean, scale = standardization(E_train)
    Z = np.hstack([(E_train - mean) / scale, np.ones((len(E_train), 1))])
    Z_eval = np.hstack([(E_eval - mean) / scale, np.ones((len(E_eval), 1))])
    lam, U = np.linalg.eigh(Z.T @ Z)
    proj = U.T @ (Z.T @ one_hot(y_train, n_classes))
    out = np.empty(len(alphas))
    for i, alpha in enumerate(alphas):
        B = U @ (proj / (lam + alpha)[:, None])
        out[i] = np.mean(np.argmax(Z_eval @ B, axis=1) == y_eval)
    return out


# --- LDA ---------------------------------------------------------------------


def lda_project(embeddings, labels, out_dim: int = 2) -> np.ndarray:
    """Project onto the leading discriminant directions.

    Solves ``S_b v = lambda (S_w + 1e-6 I) v`` and maps the centred embeddings
    onto the ``out_dim`` eigenvectors with the largest eigenvalues. Each
    direction is signed so that its first non-negligible entry is positive.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    C = len(classes)
    if out_dim < 1:
        raise PreconditionViolated("out_dim must be at least 1")
    if out_dim > C - 1:
        raise PreconditionViolated(
            f"LDA yields at most {C - 1} dimension(s) for {C} classes; use out_dim={C - 1}"
        )
    mu = E.mean(axis=0)
    d = E.shape[1]
    Sw = np.zeros((d, d))
    Sb = np.zeros((d, d))
    for c in classes:
        Ec = E[labels == c]
        mc = Ec.mean(axis=0)
        centred = Ec - mc
        Sw += centred.T @ centred
        diff = (mc - mu)[:, None]
        Sb += len(Ec) * (diff @ diff.T)
    Sw[np.diag_indices(d)] += LDA_REGULARIZATION
    _, vecs = scipy.linalg.eigh(Sb, Sw, subset_by_index=[d - out_dim, d - 1])
    vecs = vecs[:, ::-1]
    for j in range(out_dim):
        big = np.flatnonzero(np.abs(vecs[:, j]) > 1e-12 * np.abs(vecs[:, j]).max())
        if big.size and vecs[big[0], j] < 0:
            vecs[:, j] = -vecs[:, j]
    return (E - mu) @ vecs


# --- model selection ---------------------------------------------------------


@dataclass(frozen=True)
class HyperConfig:
    rho_target: float
    omega_in: float
    omega_hid: float
    alpha: float = 1.0


@dataclass(frozen=True)
class Architecture:
    method: PoolMethod = PoolMethod.NOPOOL
    levels: int = 2
    hidden_units: int = 50
    ndp: NdpConfig = field(default_factory=NdpConfig)

    def __post_init__(self):
        object.__setattr__(self, "method", PoolMethod.parse(self.method))
        if self.levels < 1 or self.hidden_units < 1:
            raise PreconditionViolated("levels and hidden_units must be positive")


@dataclass(frozen=True)
class Protocol:
    """Nested cross-validation settings."""

    n_external: int = 5
    val_fraction: float = 0.1
    n_configs: int = 100
    n_seeds: int = 3
    alpha_grid: tuple = ALPHA_GRID
    rho_range: tuple = (0.1, 0.9)
    omega_in_range: tuple = (0.1, 0.8)
    omega_hid_range: tuple = (0.1, 0.8)
    epsilon: float = 1e-5
    max_iter: int = 50

    @classmethod
    def smoke(cls, **overrides) -> "Protocol":
        base = dict(n_external=2, n_configs=2, n_seeds=1)
        base.update(overrides)
        return cls(**base)

    def sample_configs(self, seed) -> list[HyperConfig]:
        rng = derive_rng(seed, "hyperparameters")
        draws = rng.uniform(
            [self.rho_range[0], self.omega_in_range[0], self.omega_hid_range[0]],
            [self.rho_range[1], self.omega_in_range[1], self.omega_hid_range[1]],
            size=(self.n_configs, 3),
        )
        return [HyperConfig(float(r), float(a), float(b)) for r, a, b in draws]


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    val_accuracy: float
    best: HyperConfig
    t_tr_s: float
    t_ts_s: float


@dataclass
class CvReport:
    dataset: str
    method: str
    levels: int
    hidden_units: int
    folds: list

    @property
    def per_fold_accuracy(self) -> list[float]:
        return [f.accuracy for f in self.folds]

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_fold_accuracy))

    @property
    def std(self) -> float:
        return float(np.std(self.per_fold_accuracy))

    @property
    def best_configs(self) -> list[HyperConfig]:
        return [f.best for f in self.folds]

    @property
    def train_time_s(self) -> float:
        return float(np.mean([f.t_tr_s for f in self.folds]))

    @property
    def test_time_s(self) -> float:
        return float(np.mean([f.t_ts_s for f in self.folds]))

    def rows(self, timing=True) -> list[dict]:
        out = []
        for f in self.folds:
            row = {
                "dataset": self.dataset,
                "method": self.method,
                "L": self.levels,
                "H": self.hidden_units,
                "fold": f.fold,
                "accuracy": f.accuracy,
                "t_tr_s": f.t_tr_s,
                "t_ts_s": f.t_ts_s,
                "best_rho": f.best.rho_target,
                "best_omega_in": f.best.omega_in,
                "best_omega_hid": f.best.omega_hid,
                "best_alpha": f.best.alpha,
            }
            if not timing:
                del row["t_tr_s"], row["t_ts_s"]
            out.append(row)
        return out

    def to_json(self, timing=False) -> str:
        """JSON report; wall-clock fields are left out unless ``timing`` is set
        so that reruns with the same seed produce identical files."""
        payload = {
            "dataset": self.dataset,
            "method": self.method,
            "L": self.levels,
            "H": self.hidden_units,
            "mean_accuracy": self.mean,
            "std_accuracy": self.std,
            "folds": self.rows(timing=timing),
        }
        if timing:
            payload["train_time_s"] = self.train_time_s
            payload["test_time_s"] = self.test_time_s
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def write_csv(self, path, ratio=False) -> None:
        columns = list(REPORT_COLUMNS) + (["accuracy_per_s"] if ratio else [])
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for row in self.rows():
                if ratio:
                    row["accuracy_per_s"] = accuracy_time_ratio(row["accuracy"], row["t_tr_s"], row["t_ts_s"])
                writer.writerow(row)


def accuracy_time_ratio(accuracy, t_tr, t_ts) -> float:
    total = t_tr + t_ts
    return float(accuracy / total) if total > 0 else float("inf")


# worker state for process pools: the pyramids and features of the corpus
_WORK = {}


def _init_worker(pyramids, features, arch, protocol):
    _WORK.update(pyramids=pyramids, features=features, arch=arch, protocol=protocol)


def _embed_unit(task):
    config_index, seed_index, reservoir_seed, hyper = task
    return embed_corpus(
        _WORK["pyramids"], _WORK["features"], _WORK["arch"], _WORK["protocol"], hyper, reservoir_seed
    )


def reservoir_config(arch: Architecture, protocol: Protocol, hyper: HyperConfig, seed: int) -> ReservoirConfig:
    return ReservoirConfig(
        hidden_units=arch.hidden_units,
        rho_target=hyper.rho_target,
        omega_in=hyper.omega_in,
        omega_hid=hyper.omega_hid,
        epsilon=protocol.epsilon,
        max_iter=protocol.max_iter,
        seed=seed,
    )


def embed_corpus(pyramids, features, arch, protocol, hyper, seed):
    """Embed every graph with one reservoir draw; returns ``(embeddings, seconds per graph)``."""
    config = reservoir_config(arch, protocol, hyper, seed)
    layers = init_layers(config, features[0].shape[1], arch.levels)
    E = np.empty((len(pyramids), arch.hidden_units))
    seconds = np.empty(len(pyramids))
    for g, (pyramid, X) in enumerate(zip(pyramids, features)):
        start = time.perf_counter()
        E[g], _ = embed_stack(layers, pyramid, X, config)
        seconds[g] = time.perf_counter() - start
    return E, seconds


def build_pyramids(bundle, arch: Architecture, seed=0, cache: Optional[PyramidCache] = None):
    """Pyramid of every graph plus its construction time in seconds (0 for cache hits)."""
    pyramids, seconds = [], np.zeros(len(bundle))
    pool_seed = derive_int(seed, "pooling") % 2**31
    for g, graph in enumerate(bundle.graphs):
        key = None
        if cache is not None and cache.enabled:
            key = cache_key(bundle.name, g, arch.method, arch.levels, arch.ndp.delta, pool_seed)
            hit = cache.get(key)
            if hit is not None:
                pyramids.append(hit)
                continue
        start = time.perf_counter()
        pyramid = build_pyramid(graph, arch.method, arch.levels, arch.ndp, seed=pool_seed)
        pyramid.normalized  # normalization is part of the pre-computation
        seconds[g] = time.perf_counter() - start
        if key is not None:
            cache.put(key, pyramid)
        pyramids.append(pyramid)
    return pyramids, seconds


def nested_cv(
    bundle: DatasetBundle,
    arch: Architecture,
    protocol: Protocol = Protocol(),
    seed: int = 0,
    jobs: int = 1,
    cache: Optional[PyramidCache] = None,
    progress: Optional[Callable[[int, int], None]] = None,
) -> CvReport:
    """Nested cross-validated accuracy of the reservoir embedding plus ridge readout.

    Hyper-parameter configurations are drawn once and shared by all external
    folds, so each (configuration, reservoir seed) pair embeds the corpus once.
    For every fold the configuration and alpha with the best validation
    accuracy (averaged over reservoir seeds) are kept; the readout is then
    refit on the whole training portion and scored on the test fold, averaging
    the test accuracy over the reservoir seeds.
    """
    if not bundle.splits or len(bundle.splits) != protocol.n_external:
        bundle = make_folds(bundle, protocol.n_external, protocol.val_fraction, seed)
    folds = bundle.splits
    n_classes = bundle.n_classes
    # model selection only ever sees this view, with test labels hidden
    selection_labels = [_mask_test(bundle.labels, f) for f in folds]

    pyramids, pyramid_seconds = build_pyramids(bundle, arch, seed, cache)
    features = [g.features for g in bundle.graphs]
    configs = protocol.sample_configs(seed)
    tasks = [
        (c, s, derive_int(seed, "reservoir-seed", c, s) % 2**31, configs[c])
        for c in range(len(configs))
        for s in range(protocol.n_seeds)
    ]

    best_score = [-np.inf] * len(folds)
    best = [None] * len(folds)  # (config index, alpha index, embeddings per seed, seconds per seed)
    pending = {}
    for done, (task, result) in enumerate(zip(tasks, _run_tasks(tasks, pyramids, features, arch, protocol, jobs)), 1):
        c, s = task[0], task[1]
        pending.setdefault(c, []).append(result)
        if progress is not None:
            progress(done, len(tasks))
        if len(pending[c]) < protocol.n_seeds:
            continue
        runs = pending.pop(c)
        for k, fold in enumerate(folds):
            y = selection_labels[k]
            acc = np.mean(
                [
                    ridge_path_accuracy(E[fold.train], y[fold.train], E[fold.val], y[fold.val], protocol.alpha_grid, n_classes)
                    for E, _ in runs
                ],
                axis=0,
            )
            a = int(np.argmax(acc))
            if acc[a] > best_score[k]:
                best_score[k] = float(acc[a])
                best[k] = (c, a, runs)

    fold_results = []
    for k, fold in enumerate(folds):
        c, a, runs = best[k]
        alpha = protocol.alpha_grid[a]
        hyper = replace(configs[c], alpha=float(alpha))
        train, test = fold.train_full, fold.test
        accs, t_tr, t_ts = [], [], []
        for E, seconds in runs:
            start = time.perf_counter()
            model = fit_ridge(E[train], bundle.labels[train], alpha, n_classes)
            t_fit = time.perf_counter() - start
            start = time.perf_counter()
            # test labels are read only here, after selection is finished
            accs.append(model.score(E[test], bundle.labels[test]))
            t_pred = time.perf_counter() - start
            t_tr.append(pyramid_seconds[train].sum() + seconds[train].sum() + t_fit)
            t_ts.append(pyramid_seconds[test].sum() + seconds[test].sum() + t_pred)
        fold_results.append(
            FoldResult(k, float(np.mean(accs)), best_score[k], hyper, float(np.mean(t_tr)), float(np.mean(t_ts)))
        )
    return CvReport(bundle.name, arch.method.value, arch.levels, arch.hidden_units, fold_results)


def _mask_test(labels, fold):
    masked = np.array(labels, copy=True)
    masked[fold.test] = -1
    return masked


def _run_tasks(tasks, pyramids, features, arch, protocol, jobs):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(tasks) <= 1:
        for c, s, rseed, hyper in tasks:
            yield embed_corpus(pyramids, features, arch, protocol, hyper, rseed)
        return
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(pyramids, features, arch, protocol)
    ) as pool:
        yield from pool.map(_embed_unit, tasks, chunksize=1)
