"""Co-evolution of trees and forests, and prediction with the evolved forest."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from egp import expr
from egp.dataset import DataSplit, Dataset, SamplingMode, feature_similarity, sample_bag, split
from egp.forest import (
    Forest,
    Voting,
    best_forest,
    ensemble_predict,
    evaluated,
    forest_crossover_swap,
    forest_key,
    forest_mutation_add,
    forest_mutation_remove,
    prune_best,
)
from egp.treepop import TreeArchive, breed_generation, make_individual, rmse_key, tournament

log = logging.getLogger(__name__)

# variant -> (observation/feature sampling, voting, default subpopulation size)
VARIANTS = {
    "eGP-N": (SamplingMode.RANDOM_OBS_FEAT, Voting.NORMAL, 250),
    "eGP-W": (SamplingMode.RANDOM_OBS_FEAT, Voting.WEIGHTED, 250),
    "eGP-N5": (SamplingMode.RANDOM_OBS_FEAT, Voting.NORMAL, 500),
    "eGP-W5": (SamplingMode.RANDOM_OBS_FEAT, Voting.WEIGHTED, 500),
    "eGPn": (SamplingMode.FIXED_OBS, Voting.NORMAL, 250),
    "eGPw": (SamplingMode.FIXED_OBS, Voting.WEIGHTED, 250),
}


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    """An internal guarantee (elitism, pruning, mask closure) was broken."""


@dataclass
class EngineConfig:
    variant: str = "eGP-N"
    generations: int = 100
    subpop_size: int | None = None  # None: 250, or 500 for the *5 variants
    cx_prob: float = 0.5
    tournament_k: int = 5
    seed: int = 0
    init_depth: tuple[int, int] = expr.DEFAULT_INIT_DEPTH
    mutation_depth: int = expr.DEFAULT_MUTATION_DEPTH
    max_tree_depth: int | None = None  # bloat cap, off by default
    sampling: SamplingMode | None = None  # must agree with the variant when given
    voting: Voting | None = None
    check_invariants: bool = True

    def resolved(self) -> tuple[SamplingMode, Voting, int]:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        sampling, voting, size = VARIANTS[self.variant]
        if self.sampling is not None and self.sampling is not sampling:
            raise ConfigError(f"{self.variant} uses {sampling.value} sampling, not {self.sampling.value}")
        if self.voting is not None and self.voting is not voting:
            raise ConfigError(f"{self.variant} uses {voting.value} voting, not {self.voting.value}")
        size = self.subpop_size if self.subpop_size is not None else size
        if size < 1 or self.generations < 0 or self.tournament_k < 1:
            raise ConfigError("subpop_size and tournament_k must be >= 1, generations >= 0")
        if not 0.0 <= self.cx_prob <= 1.0:
            raise ConfigError(f"cx_prob must be in [0, 1], got {self.cx_prob}")
        return sampling, voting, size


@dataclass
class TrainedModel:
    members: list[expr.ExpressionTree]
    voting: Voting
    tie_seed: int
    n_features: int
    train_accuracy: float
    split: DataSplit
    variant: str = ""
    trace: list[dict] = field(default_factory=list)
    repairs: int = 0

    @property
    def total_nodes(self) -> int:
        return sum(len(t.nodes) for t in self.members)

    def to_dict(self) -> dict:
        return {
            "model": "forest",
            "variant": self.variant,
            "voting": self.voting.value,
            "tie_seed": self.tie_seed,
            "n_features": self.n_features,
            "train_accuracy": self.train_accuracy,
            "members": [
                {"tree": expr.to_prefix(t), "feature_mask": list(t.mask)} for t in self.members
            ],
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_trace(self, path) -> None:
        write_trace(self.trace, path)


TRACE_FIELDS = ("generation", "best_tree_rmse", "best_forest_acc", "best_forest_size")


def write_trace(trace: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(trace)


def load_model(path) -> dict:
    """Read a model dump back; trees are parsed into ExpressionTree objects."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    doc["members"] = [expr.parse_prefix(m["tree"], m["feature_mask"]) for m in doc["members"]]
    return doc


class Engine:
    """One training run. Not safe to share between threads while training."""

    def __init__(self, ds: Dataset, cfg: EngineConfig):
        self.ds = ds
        self.cfg = cfg
        self.sampling, self.voting, self.size = cfg.resolved()
        self.rng = np.random.default_rng(cfg.seed)
        self.tie_seed = int(np.random.SeedSequence(cfg.seed).generate_state(1)[0])
        self.split = split(ds, self.rng)
        self.sim = feature_similarity(ds, self.split) if self.sampling is SamplingMode.RANDOM_OBS_FEAT else None
        self.archive = TreeArchive()
        self.forests: list[Forest] = []
        self.trace: list[dict] = []
        self.repairs = 0

    # -- pieces of the loop --------------------------------------------------

    def _fitness(self, f: Forest) -> Forest:
        return evaluated(f, self.archive, self.ds, self.split, self.voting, self.tie_seed)

    def init_trees(self) -> None:
        for _ in range(self.size):
            bag = sample_bag(self.split, self.ds.n_feat, self.sampling, self.rng)
            tree = expr.ramped_half_and_half(bag.feature_mask, self.cfg.init_depth, self.rng)
            self.archive.live_ids.append(self.archive.add(make_individual(tree, bag, self.ds)))

    def init_forests(self) -> None:
        live = self.archive.live_ids
        self.forests = [self._fitness(Forest((live[int(self.rng.integers(len(live)))],)))
                        for _ in range(self.size)]

    def breed_trees(self) -> None:
        cfg = self.cfg
        report = breed_generation(
            self.archive, self.ds, cfg.cx_prob,
            lambda pop, rng: tournament(pop, cfg.tournament_k, rng, rmse_key),
            self.sim, self.rng, cfg.mutation_depth, cfg.max_tree_depth,
        )
        self.repairs += report.repairs

    def breed_forests(self) -> None:
        rng, k = self.rng, self.cfg.tournament_k
        parents = self.forests
        elite = best_forest(parents, self.archive)
        live = self.archive.live_ids
        out = [elite]
        while len(out) < self.size:
            if rng.random() < self.cfg.cx_prob:
                a = tournament(parents, k, rng, forest_key)
                b = tournament(parents, k, rng, forest_key)
                out.extend(forest_crossover_swap(a, b, rng))
            else:
                p = tournament(parents, k, rng, forest_key)
                if rng.random() < 0.5:
                    out.append(forest_mutation_add(p, live, rng))
                else:
                    out.append(forest_mutation_remove(p, rng))
        self.forests = [self._fitness(f) for f in out[: self.size]]

    def prune(self) -> None:
        best = best_forest(self.forests, self.archive)
        pos = self.forests.index(best)
        pruned = prune_best(best, self.archive, self.ds, self.split, self.voting, self.tie_seed)
        if self.cfg.check_invariants:
            if pruned.fitness_acc < best.fitness_acc:
                raise InvariantViolation("pruning lowered training accuracy")
            if len(pruned) < 1:
                raise InvariantViolation("pruning emptied a forest")
        self.forests[pos] = pruned

    def record(self, generation: int) -> None:
        best_tree = self.archive[self.archive.best_live_id()]
        best = best_forest(self.forests, self.archive)
        row = {
            "generation": generation,
            "best_tree_rmse": best_tree.fitness_rmse,
            "best_forest_acc": best.fitness_acc,
            "best_forest_size": len(best),
        }
        if self.cfg.check_invariants and self.trace:
            prev = self.trace[-1]
            if row["best_tree_rmse"] > prev["best_tree_rmse"]:
                raise InvariantViolation(f"best tree RMSE rose at generation {generation}")
            if row["best_forest_acc"] < prev["best_forest_acc"]:
                raise InvariantViolation(f"best forest accuracy fell at generation {generation}")
        self.trace.append(row)

    def gc(self) -> None:
        self.archive.collect(i for f in self.forests for i in f.member_ids)

    # -- driver ----------------------------------------------------------------

    def run(self) -> TrainedModel:
        self.init_trees()
        self.init_forests()
        self.record(0)
        for g in range(1, self.cfg.generations + 1):
            self.breed_trees()
            self.breed_forests()
            self.prune()
            self.gc()
            self.record(g)
            log.debug("gen %d: %s", g, self.trace[-1])
        if self.cfg.check_invariants and self.sampling is not SamplingMode.RANDOM_OBS_FEAT and self.repairs:
            raise InvariantViolation("terminal repairs happened without feature sampling")
        best = best_forest(self.forests, self.archive)
        return TrainedModel(
            members=[self.archive[i].tree for i in best.member_ids],
            voting=self.voting,
            tie_seed=self.tie_seed,
            n_features=self.ds.n_feat,
            train_accuracy=best.fitness_acc,
            split=self.split,
            variant=self.cfg.variant,
            trace=self.trace,
            repairs=self.repairs,
        )


def train(ds: Dataset, cfg: EngineConfig) -> TrainedModel:
    return Engine(ds, cfg).run()


def predict(model: TrainedModel, rows: np.ndarray, tie_seed: int | None = None) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} columns, got {rows.shape[1]}")
    outputs = np.column_stack([expr.evaluate(t, rows) for t in model.members])
    return ensemble_predict(outputs, model.voting, model.tie_seed if tie_seed is None else tie_seed)


def accuracy(model: TrainedModel, ds: Dataset, rows: np.ndarray) -> float:
    rows = np.asarray(rows)
    return float(np.mean(predict(model, ds.features[rows]) == ds.labels[rows]))
