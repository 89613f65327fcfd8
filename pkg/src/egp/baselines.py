"""Single-tree GP and M3GP (multi-dimensional GP with Mahalanobis centroids)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egp import expr
from egp.dataset import DataSplit, Dataset, split
from egp.forest import nearest_label
from egp.treepop import double_tournament, scaled_rmse


@dataclass
class GPConfig:
    population: int = 500
    generations: int = 100
    cx_prob: float = 0.95
    tournament_k: int = 5
    parsimony_prob: float = 0.7
    init_depth: tuple[int, int] = expr.DEFAULT_INIT_DEPTH
    mutation_depth: int = expr.DEFAULT_MUTATION_DEPTH
    seed: int = 0


@dataclass(eq=False)
class _GPInd:
    tree: expr.ExpressionTree
    outputs: np.ndarray
    rmse: float


@dataclass
class GPModel:
    tree: expr.ExpressionTree
    train_accuracy: float
    split: DataSplit
    trace: list[dict] = field(default_factory=list)

    @property
    def total_nodes(self) -> int:
        return len(self.tree.nodes)

    def to_dict(self) -> dict:
        return {"model": "gp", "tree": expr.to_prefix(self.tree), "train_accuracy": self.train_accuracy}


def gp_train(ds: Dataset, cfg: GPConfig, seed: int | None = None) -> GPModel:
    """Generational GP on RMSE over the whole training partition, 1-elite."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    sp = split(ds, rng)
    train = sp.train_indices
    y = ds.labels[train]
    all_feats = tuple(range(ds.n_feat))

    def make(tree):
        out = expr.evaluate(tree, ds.features[train])
        return _GPInd(tree, out, scaled_rmse(out, y))

    def key(ind):
        return ind.rmse

    def size(ind):
        return len(ind.tree.nodes)

    def select():
        return double_tournament(pop, rng, key, size, cfg.tournament_k, cfg.parsimony_prob)

    pop = [make(expr.ramped_half_and_half(all_feats, cfg.init_depth, rng)) for _ in range(cfg.population)]
    trace = []

    def record(g):
        best = min(pop, key=key)
        trace.append({"generation": g, "best_rmse": best.rmse,
                      "best_acc": float(np.mean(nearest_label(best.outputs) == y)),
                      "best_size": len(best.tree.nodes)})

    record(0)
    for g in range(1, cfg.generations + 1):
        nxt = [min(pop, key=key)]
        while len(nxt) < cfg.population:
            if rng.random() < cfg.cx_prob:
                c1, c2 = expr.subtree_crossover(select().tree, select().tree, rng)
                nxt.append(make(c1))
                if len(nxt) < cfg.population:
                    nxt.append(make(c2))
            else:
                nxt.append(make(expr.subtree_mutation(select().tree, rng, cfg.mutation_depth)))
        pop = nxt
        record(g)
    best = min(pop, key=key)
    return GPModel(best.tree, float(np.mean(nearest_label(best.outputs) == y)), sp, trace)


def gp_predict(model: GPModel, rows: np.ndarray) -> np.ndarray:
    return nearest_label(expr.evaluate(model.tree, rows)).astype(np.int64)


# -- M3GP ----------------------------------------------------------------------

@dataclass
class ClassModel:
    """Per-class centroid and covariance in the mapped space.

    ``inverses[c]`` is None when the class falls back to Euclidean distance,
    and ``centroids[c]`` is None when the class had no training points.
    """

    centroids: list[np.ndarray | None]
    covariances: list[np.ndarray | None]
    inverses: list[np.ndarray | None]

    @classmethod
    def from_covariances(cls, centroids, covariances) -> "ClassModel":
        invs = []
        for cov in covariances:
            invs.append(_safe_inverse(np.asarray(cov, dtype=np.float64)))
        return cls([np.asarray(c, dtype=np.float64) for c in centroids],
                   [np.asarray(c, dtype=np.float64) for c in covariances], invs)


def _safe_inverse(cov: np.ndarray) -> np.ndarray | None:
    if not np.all(np.isfinite(cov)):
        return None
    try:
        inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        return None
    return inv if np.all(np.isfinite(inv)) else None


def regularize(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    eps = 1e-8 * max(float(np.trace(cov)) / d, 1.0)
    return cov + eps * np.eye(d)


def fit_class_model(Z: np.ndarray, y: np.ndarray) -> ClassModel:
    Z = np.asarray(Z, dtype=np.float64)
    centroids, covs, invs = [], [], []
    with np.errstate(all="ignore"):
        for c in (0, 1):
            Zc = Z[y == c]
            if len(Zc) == 0:
                centroids.append(None)
                covs.append(None)
                invs.append(None)
                continue
            mu = Zc.mean(axis=0)
            if len(Zc) > 1:
                cov = np.atleast_2d(np.cov(Zc, rowvar=False))
            else:
                cov = np.zeros((Z.shape[1], Z.shape[1]))
            cov = regularize(cov) if np.all(np.isfinite(cov)) else cov
            centroids.append(mu)
            covs.append(cov)
            invs.append(_safe_inverse(cov))
    return ClassModel(centroids, covs, invs)


def class_distances(cm: ClassModel, Z: np.ndarray) -> np.ndarray:
    """Distance of every row to every class centroid, shape (rows, 2); nan -> inf."""
    Z = np.asarray(Z, dtype=np.float64)
    D = np.full((Z.shape[0], 2), np.inf)
    with np.errstate(all="ignore"):
        for c in (0, 1):
            mu = cm.centroids[c]
            if mu is None:
                continue
            diff = Z - mu
            inv = cm.inverses[c]
            if inv is None:
                sq = np.sum(diff * diff, axis=1)
            else:
                sq = np.sum((diff @ inv) * diff, axis=1)
            d = np.sqrt(np.maximum(sq, 0.0))
            D[:, c] = np.where(np.isnan(d), np.inf, d)
    return D


def mahalanobis_classify(cm: ClassModel, Z: np.ndarray) -> np.ndarray:
    D = class_distances(cm, Z)
    return np.where(D[:, 1] < D[:, 0], 1, 0).astype(np.int64)


@dataclass
class M3GPConfig:
    population: int = 500
    generations: int = 100
    cx_prob: float = 0.5
    tournament_k: int = 5
    parsimony_prob: float = 0.7
    init_depth: tuple[int, int] = expr.DEFAULT_INIT_DEPTH
    mutation_depth: int = expr.DEFAULT_MUTATION_DEPTH
    seed: int = 0


@dataclass(eq=False)
class M3GPIndividual:
    dimensions: tuple[expr.ExpressionTree, ...]
    columns: tuple[np.ndarray, ...]  # each dimension evaluated on the training rows
    accuracy: float = 0.0
    class_model: ClassModel | None = None

    @property
    def total_nodes(self) -> int:
        return sum(len(t.nodes) for t in self.dimensions)


def m3gp_map(ind: M3GPIndividual | tuple, rows: np.ndarray) -> np.ndarray:
    dims = ind.dimensions if isinstance(ind, M3GPIndividual) else ind
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return np.column_stack([expr.evaluate(t, rows) for t in dims])


@dataclass
class M3GPModel:
    dimensions: tuple[expr.ExpressionTree, ...]
    class_model: ClassModel
    train_accuracy: float
    split: DataSplit
    trace: list[dict] = field(default_factory=list)

    @property
    def total_nodes(self) -> int:
        return sum(len(t.nodes) for t in self.dimensions)

    def to_dict(self) -> dict:
        return {"model": "m3gp", "dimensions": [expr.to_prefix(t) for t in self.dimensions],
                "train_accuracy": self.train_accuracy}


def m3gp_predict(model: M3GPModel, rows: np.ndarray) -> np.ndarray:
    return mahalanobis_classify(model.class_model, m3gp_map(model.dimensions, rows))


class _M3GPRun:
    def __init__(self, ds: Dataset, cfg: M3GPConfig, seed: int):
        self.ds, self.cfg = ds, cfg
        self.rng = np.random.default_rng(seed)
        self.split = split(ds, self.rng)
        self.train = self.split.train_indices
        self.y = ds.labels[self.train]
        self.feats = tuple(range(ds.n_feat))
        self._cols: dict[tuple, np.ndarray] = {}

    def column(self, tree: expr.ExpressionTree) -> np.ndarray:
        col = self._cols.get(tree.nodes)
        if col is None:
            col = expr.evaluate(tree, self.ds.features[self.train])
            self._cols[tree.nodes] = col
        return col

    def make(self, dims) -> M3GPIndividual:
        dims = tuple(dims)
        cols = tuple(self.column(t) for t in dims)
        Z = np.column_stack(cols)
        cm = fit_class_model(Z, self.y)
        acc = float(np.mean(mahalanobis_classify(cm, Z) == self.y))
        return M3GPIndividual(dims, cols, acc, cm)

    def select(self, pop):
        return double_tournament(pop, self.rng, lambda i: -i.accuracy, lambda i: i.total_nodes,
                                 self.cfg.tournament_k, self.cfg.parsimony_prob)

    def random_dim(self):
        return expr.grow(self.feats, self.cfg.mutation_depth, self.rng)

    def offspring(self, pop) -> list[M3GPIndividual]:
        rng = self.rng
        if rng.random() < self.cfg.cx_prob:
            a, b = self.select(pop), self.select(pop)
            da, db = list(a.dimensions), list(b.dimensions)
            i, j = int(rng.integers(len(da))), int(rng.integers(len(db)))
            if rng.random() < 0.5:
                da[i], db[j] = expr.subtree_crossover(da[i], db[j], rng)
            else:
                da[i], db[j] = db[j], da[i]
            return [self.make(da), self.make(db)]
        p = self.select(pop)
        dims = list(p.dimensions)
        op = int(rng.integers(3))
        if op == 0:
            i = int(rng.integers(len(dims)))
            dims[i] = expr.subtree_mutation(dims[i], rng, self.cfg.mutation_depth)
        elif op == 1:
            dims.append(self.random_dim())
        elif len(dims) > 1:
            del dims[int(rng.integers(len(dims)))]
        return [self.make(dims)]

    def prune(self, ind: M3GPIndividual) -> M3GPIndividual:
        dims = list(ind.dimensions)
        best = ind
        k = 0
        while k < len(dims) and len(dims) > 1:
            trial = self.make(dims[:k] + dims[k + 1:])
            if trial.accuracy >= best.accuracy:
                best, dims = trial, list(trial.dimensions)
            else:
                k += 1
        return best

    @staticmethod
    def best(pop):
        return min(pop, key=lambda i: (-i.accuracy, i.total_nodes))

    def run(self) -> M3GPModel:
        cfg = self.cfg
        pop = [self.make([expr.ramped_half_and_half(self.feats, cfg.init_depth, self.rng)])
               for _ in range(cfg.population)]
        trace = []

        def record(g):
            b = self.best(pop)
            trace.append({"generation": g, "best_acc": b.accuracy,
                          "best_dims": len(b.dimensions), "best_size": b.total_nodes})

        record(0)
        for g in range(1, cfg.generations + 1):
            nxt = [self.best(pop)]
            while len(nxt) < cfg.population:
                nxt.extend(self.offspring(pop))
            pop = nxt[: cfg.population]
            b = self.best(pop)
            pop[pop.index(b)] = self.prune(b)
            record(g)
            # the column cache only needs trees that are still alive
            alive = {t.nodes for ind in pop for t in ind.dimensions}
            self._cols = {k: v for k, v in self._cols.items() if k in alive}
        b = self.best(pop)
        return M3GPModel(b.dimensions, b.class_model, b.accuracy, self.split, trace)


def m3gp_train(ds: Dataset, cfg: M3GPConfig, seed: int | None = None) -> M3GPModel:
    return _M3GPRun(ds, cfg, cfg.seed if seed is None else seed).run()
