"""Forests: ensembles of archived trees, their voting rules and operators."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from egp.dataset import DataSplit, Dataset
from egp.treepop import TreeArchive


class Voting(enum.Enum):
    NORMAL = "normal"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class Forest:
    member_ids: tuple[int, ...]
    fitness_acc: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "member_ids", tuple(int(i) for i in self.member_ids))
        if not self.member_ids:
            raise ValueError("a forest needs at least one member")

    def __len__(self):
        return len(self.member_ids)

    def total_nodes(self, archive: TreeArchive) -> int:
        return sum(archive[i].node_count for i in self.member_ids)


def member_outputs(f: Forest, archive: TreeArchive, rows: np.ndarray) -> np.ndarray:
    """Raw member predictions, shape (len(rows), len(f))."""
    return np.column_stack([archive[i].outputs[rows] for i in f.member_ids])


def nearest_label(outputs: np.ndarray) -> np.ndarray:
    """Vote 1 only when strictly closer to 1 than to 0 (0.5 votes 0)."""
    # |o - 1| < |o| is exactly o > 0.5, and stays right where o - 1 rounds to o
    return (np.asarray(outputs, dtype=np.float64) > 0.5).astype(np.int8)


def member_votes(f: Forest, archive: TreeArchive, ds: Dataset, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows)
    if rows.size == 0:
        raise ValueError("no rows to vote on")
    return nearest_label(member_outputs(f, archive, rows))


def majority_vote(votes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise majority; exact ties get a fair coin.

    One coin is drawn per row whether or not it is tied, so the tie pattern
    depends only on the generator state and the number of rows.
    """
    votes = np.asarray(votes)
    ones = votes.sum(axis=1)
    twice = 2 * ones
    m = votes.shape[1]
    coins = rng.integers(0, 2, size=votes.shape[0])
    return np.where(twice == m, coins, (twice > m).astype(np.int64)).astype(np.int64)


def certainty_row(predictions: Sequence[float], votes: Sequence[int]) -> np.ndarray:
    return certainty_matrix(np.asarray(predictions, dtype=np.float64)[None, :],
                            np.asarray(votes)[None, :])[0]


def certainty_matrix(predictions: np.ndarray, votes: np.ndarray) -> np.ndarray:
    """Per-member certainty: one minus the member's residual (distance of its
    raw output to the label it voted for) divided by the L2 norm of all the
    residuals on that row. Rows with zero residual norm are fully certain."""
    P = np.asarray(predictions, dtype=np.float64)
    V = np.asarray(votes, dtype=np.float64)
    R = np.abs(P - V)
    # normalise each row by its max before squaring to avoid overflow
    rmax = R.max(axis=1, keepdims=True)
    safe = np.where(rmax > 0, rmax, 1.0)
    S = R / safe
    norm = np.sqrt((S * S).sum(axis=1, keepdims=True))
    with np.errstate(invalid="ignore", divide="ignore"):
        C = np.where(rmax > 0, 1.0 - S / np.where(norm > 0, norm, 1.0), 1.0)
    return np.clip(C, 0.0, 1.0)


def weighted_vote(votes: np.ndarray, certainties: np.ndarray) -> np.ndarray:
    """Certainty-weighted vote; ties (and all-zero certainty) go to class 0."""
    V = np.asarray(votes)
    C = np.asarray(certainties, dtype=np.float64)
    if V.shape != C.shape:
        raise ValueError(f"shape mismatch {V.shape} vs {C.shape}")
    # sorting first makes equal multisets of certainties sum to the same
    # float, so exact ties are recognised regardless of member order
    ones = np.sort(np.where(V == 1, C, 0.0), axis=1).sum(axis=1)
    zeros = np.sort(np.where(V == 1, 0.0, C), axis=1).sum(axis=1)
    return (ones > zeros).astype(np.int64)


def ensemble_predict(outputs: np.ndarray, mode: Voting, tie_seed: int = 0) -> np.ndarray:
    """Combine a (rows x members) matrix of raw outputs into class labels.

    Normal-voting ties are broken by a generator freshly seeded with
    ``tie_seed``, so a forest scores the same on the same rows every time.
    """
    votes = nearest_label(outputs)
    if mode is Voting.WEIGHTED:
        return weighted_vote(votes, certainty_matrix(outputs, votes))
    return majority_vote(votes, np.random.default_rng(tie_seed))


def accuracy_fitness(f: Forest, archive: TreeArchive, ds: Dataset, sp: DataSplit,
                     mode: Voting, tie_seed: int = 0) -> float:
    rows = sp.train_indices
    pred = ensemble_predict(member_outputs(f, archive, rows), mode, tie_seed)
    return float(np.mean(pred == ds.labels[rows]))


def evaluated(f: Forest, archive: TreeArchive, ds: Dataset, sp: DataSplit,
              mode: Voting, tie_seed: int = 0) -> Forest:
    if f.fitness_acc is not None:
        return f
    return replace(f, fitness_acc=accuracy_fitness(f, archive, ds, sp, mode, tie_seed))


# -- operators ---------------------------------------------------------------

def forest_mutation_add(f: Forest, live_ids: Sequence[int], rng: np.random.Generator) -> Forest:
    new = live_ids[int(rng.integers(len(live_ids)))]
    return Forest(f.member_ids + (new,))


def forest_mutation_remove(f: Forest, rng: np.random.Generator) -> Forest:
    if len(f) < 2:
        return f
    k = int(rng.integers(len(f)))
    return Forest(f.member_ids[:k] + f.member_ids[k + 1:])


def forest_crossover_swap(f1: Forest, f2: Forest, rng: np.random.Generator,
                          points: tuple[int, int] | None = None) -> tuple[Forest, Forest]:
    i, j = points if points is not None else (int(rng.integers(len(f1))), int(rng.integers(len(f2))))
    a, b = list(f1.member_ids), list(f2.member_ids)
    a[i], b[j] = b[j], a[i]
    return Forest(a), Forest(b)


def forest_key(f: Forest) -> float:
    """Selection key (lower is better) for tournaments over forests."""
    return -f.fitness_acc


def best_forest(forests: Sequence[Forest], archive: TreeArchive) -> Forest:
    """Highest accuracy, then fewest total nodes, then earliest position."""
    return min(forests, key=lambda f: (-f.fitness_acc, f.total_nodes(archive)))


def prune_best(f: Forest, archive: TreeArchive, ds: Dataset, sp: DataSplit,
               mode: Voting, tie_seed: int = 0) -> Forest:
    """One left-to-right pass removing members whose removal does not lower
    training accuracy. Never empties the forest."""
    f = evaluated(f, archive, ds, sp, mode, tie_seed)
    members = list(f.member_ids)
    acc = f.fitness_acc
    k = 0
    while k < len(members) and len(members) > 1:
        trial = Forest(members[:k] + members[k + 1:])
        trial_acc = accuracy_fitness(trial, archive, ds, sp, mode, tie_seed)
        if trial_acc >= acc:
            members, acc = list(trial.member_ids), trial_acc
        else:
            k += 1
    return Forest(tuple(members), acc)
