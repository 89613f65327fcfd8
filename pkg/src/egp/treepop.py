"""Tree subpopulation: bag-restricted RMSE fitness, tournament selection and
generational breeding on top of an append-only archive."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from egp import expr
from egp.dataset import Bag, Dataset, FeatureSimilarity

T = TypeVar("T")


def scaled_rmse(pred: np.ndarray, target: np.ndarray) -> float:
    """RMSE that stays finite when predictions sit near the float limit."""
    err = np.abs(np.asarray(pred, dtype=np.float64) - target)
    m = float(err.max()) if err.size else 0.0
    if m == 0.0:
        return 0.0
    if not np.isfinite(m):
        return expr.MAX_REAL
    return m * float(np.sqrt(np.mean((err / m) ** 2)))


@dataclass(eq=False)
class TreeIndividual:
    tree: expr.ExpressionTree
    bag: Bag
    outputs: np.ndarray  # tree evaluated on every dataset row
    fitness_rmse: float

    @property
    def node_count(self) -> int:
        return len(self.tree.nodes)


def make_individual(tree: expr.ExpressionTree, bag: Bag, ds: Dataset) -> TreeIndividual:
    out = expr.evaluate(tree, ds.features)
    out.setflags(write=False)
    rows = bag.obs_indices
    return TreeIndividual(tree, bag, out, scaled_rmse(out[rows], ds.labels[rows]))


def rmse_fitness(ind: TreeIndividual, ds: Dataset) -> float:
    rows = ind.bag.obs_indices
    return scaled_rmse(expr.evaluate(ind.tree, ds.features[rows]), ds.labels[rows])


@dataclass
class TreeArchive:
    """Every tree that may still be referenced, keyed by a never-reused id."""

    entries: dict[int, TreeIndividual] = field(default_factory=dict)
    live_ids: list[int] = field(default_factory=list)
    _next_id: int = 0

    def add(self, ind: TreeIndividual) -> int:
        i = self._next_id
        self._next_id += 1
        self.entries[i] = ind
        return i

    def __getitem__(self, i: int) -> TreeIndividual:
        return self.entries[i]

    def __contains__(self, i: int) -> bool:
        return i in self.entries

    def __len__(self):
        return len(self.entries)

    def live(self) -> list[TreeIndividual]:
        return [self.entries[i] for i in self.live_ids]

    def best_live_id(self) -> int:
        return min(self.live_ids, key=lambda i: self.entries[i].fitness_rmse)

    def collect(self, referenced: Iterable[int]) -> int:
        """Drop entries that are neither live nor in ``referenced``; returns how many."""
        keep = set(self.live_ids) | set(referenced)
        dead = [i for i in self.entries if i not in keep]
        for i in dead:
            del self.entries[i]
        return len(dead)


def tournament(pop: Sequence[T], k: int, rng: np.random.Generator,
               key: Callable[[T], float]) -> T:
    """``k`` draws with replacement; the lowest ``key`` wins, first drawn on ties."""
    if k < 1 or not pop:
        raise ValueError("tournament needs k >= 1 and a nonempty population")
    best = None
    best_key = None
    for idx in rng.integers(len(pop), size=k):
        cand = pop[idx]
        ck = key(cand)
        if best is None or ck < best_key:
            best, best_key = cand, ck
    return best


def double_tournament(pop: Sequence[T], rng: np.random.Generator, key: Callable[[T], float],
                      size: Callable[[T], int], k_fitness: int = 5,
                      parsimony_prob: float = 0.7) -> T:
    """Fitness-first double tournament: two fitness tournaments pick finalists,
    then the smaller one wins with probability ``parsimony_prob``."""
    a = tournament(pop, k_fitness, rng, key)
    b = tournament(pop, k_fitness, rng, key)
    fitter = b if key(b) < key(a) else a
    other = a if fitter is b else b
    if rng.random() < parsimony_prob:
        sa, sb = size(fitter), size(other)
        if sb < sa:
            return other
        return fitter
    return fitter


def rmse_key(ind: TreeIndividual) -> float:
    return ind.fitness_rmse


@dataclass
class BreedReport:
    crossovers: int = 0
    mutations: int = 0
    repairs: int = 0


def breed_generation(archive: TreeArchive, ds: Dataset, cx_prob: float,
                     select: Callable[[Sequence[TreeIndividual], np.random.Generator], TreeIndividual],
                     sim: FeatureSimilarity | None, rng: np.random.Generator,
                     mutation_depth: int = expr.DEFAULT_MUTATION_DEPTH,
                     max_depth: int | None = None) -> BreedReport:
    """Replace the live generation with offspring, keeping the best tree as is.

    Crossover children inherit the bag of the parent that provides their root;
    mutants keep their parent's bag. When ``max_depth`` is set, offspring deeper
    than it are discarded in favour of a copy of the parent.
    """
    parents = archive.live()
    n = len(parents)
    elite = archive.best_live_id()
    new_ids = [elite]
    report = BreedReport()

    def admit(tree: expr.ExpressionTree, parent: TreeIndividual):
        if max_depth is not None and expr.depth_of(tree.nodes) > max_depth:
            tree = parent.tree
        new_ids.append(archive.add(make_individual(tree, parent.bag, ds)))

    while len(new_ids) < n:
        if rng.random() < cx_prob:
            p1 = select(parents, rng)
            p2 = select(parents, rng)
            c1, c2, fixed = expr.e_crossover_counted(p1.tree, p2.tree, sim, rng)
            report.crossovers += 1
            report.repairs += fixed
            admit(c1, p1)
            if len(new_ids) < n:
                admit(c2, p2)
        else:
            p = select(parents, rng)
            report.mutations += 1
            admit(expr.e_mutation(p.tree, rng, mutation_depth), p)
    archive.live_ids = new_ids
    return report
