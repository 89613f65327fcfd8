"""Expression trees over protected arithmetic, stored as prefix token tuples.

Function tokens are the strings in ``ARITY``; terminals are integer feature
indices. Subtrees are contiguous slices of the prefix sequence, which keeps
crossover and mutation to a couple of slice operations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from egp.dataset import FeatureSimilarity

ARITY = {"+": 2, "-": 2, "*": 2, "/": 2, "log": 1, "sqrt": 1}
FUNCTIONS = tuple(ARITY)
MAX_REAL = float(np.finfo(np.float64).max)

DEFAULT_INIT_DEPTH = (2, 6)
DEFAULT_MUTATION_DEPTH = 4

Token = str | int


@dataclass(frozen=True)
class ExpressionTree:
    """A program plus the feature mask it is confined to (its bag's features)."""

    nodes: tuple[Token, ...]
    mask: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "mask", tuple(sorted(set(int(f) for f in self.mask))))

    def __len__(self):
        return len(self.nodes)

    def __str__(self):
        return to_prefix(self)

    def terminals(self) -> list[int]:
        return [t for t in self.nodes if not isinstance(t, str)]

    def is_closed(self) -> bool:
        """True when every terminal is a feature from the mask."""
        allowed = set(self.mask)
        return all(t in allowed for t in self.terminals())


class TreeMetrics(NamedTuple):
    node_count: int
    depth: int


def subtree_end(nodes: Sequence[Token], start: int) -> int:
    """Index one past the subtree rooted at ``start``."""
    need = 1
    i = start
    while need:
        tok = nodes[i]
        need += ARITY[tok] - 1 if isinstance(tok, str) else -1
        i += 1
    return i


def depth_of(nodes: Sequence[Token]) -> int:
    stack: list[int] = []
    for tok in reversed(nodes):
        if isinstance(tok, str):
            kids = [stack.pop() for _ in range(ARITY[tok])]
            stack.append(1 + max(kids))
        else:
            stack.append(0)
    return stack[0]


def metrics(tree: ExpressionTree) -> TreeMetrics:
    return TreeMetrics(len(tree.nodes), depth_of(tree.nodes))


def validate(tree: ExpressionTree, n_feat: int | None = None) -> None:
    nodes = tree.nodes
    if not nodes:
        raise ValueError("empty tree")
    for tok in nodes:
        if isinstance(tok, str):
            if tok not in ARITY:
                raise ValueError(f"unknown function {tok!r}")
        elif not isinstance(tok, (int, np.integer)) or tok < 0 or (n_feat is not None and tok >= n_feat):
            raise ValueError(f"bad terminal {tok!r}")
    need = 1
    for k, tok in enumerate(nodes):
        if need == 0:
            raise ValueError(f"trailing tokens after position {k}")
        need += ARITY[tok] - 1 if isinstance(tok, str) else -1
    if need:
        raise ValueError("prefix sequence ends before the tree is complete")
    if not tree.is_closed():
        raise ValueError("terminal outside the tree's feature mask")


# -- evaluation --------------------------------------------------------------

def _apply(op: str, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    if op == "+":
        out = a + b
    elif op == "-":
        out = a - b
    elif op == "*":
        out = a * b
    elif op == "/":
        zero = b == 0
        out = np.where(zero, a, a / np.where(zero, 1.0, b))
    elif op == "log":
        pos = a > 0
        out = np.where(pos, np.log(np.where(pos, a, 1.0)), a)
    else:  # sqrt
        neg = a < 0
        out = np.where(neg, a, np.sqrt(np.where(neg, 0.0, a)))
    # overflow saturates instead of producing inf (and later nan)
    return np.clip(out, -MAX_REAL, MAX_REAL, out=out)


def evaluate(tree: ExpressionTree | Sequence[Token], X: np.ndarray) -> np.ndarray:
    """Evaluate on every row of ``X`` at once; returns a float vector."""
    nodes = tree.nodes if isinstance(tree, ExpressionTree) else tree
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if len(nodes) == 1:
        return X[:, nodes[0]].copy()
    stack: list[np.ndarray] = []
    with np.errstate(all="ignore"):
        for tok in reversed(nodes):
            if isinstance(tok, str):
                if ARITY[tok] == 2:
                    a = stack.pop()
                    b = stack.pop()
                    stack.append(_apply(tok, a, b))
                else:
                    stack.append(_apply(tok, stack.pop()))
            else:
                stack.append(X[:, tok])
    return stack[0]


def eval_row(tree: ExpressionTree, row: Sequence[float]) -> float:
    return float(evaluate(tree, np.asarray(row, dtype=np.float64)[None, :])[0])


# -- construction ------------------------------------------------------------

def _random_tree(mask: Sequence[int], depth: int, full: bool, rng: np.random.Generator) -> list[Token]:
    n_func = len(FUNCTIONS)
    n_term = len(mask)
    out: list[Token] = []
    # iterative build: stack of remaining node depths
    pending = [0]
    while pending:
        d = pending.pop()
        if d >= depth:
            choose_func = False
        elif full:
            choose_func = True
        else:
            choose_func = rng.integers(n_func + n_term) < n_func
        if choose_func:
            op = FUNCTIONS[rng.integers(n_func)]
            out.append(op)
            pending.extend([d + 1] * ARITY[op])
        else:
            out.append(int(mask[rng.integers(n_term)]))
    return out


def grow(mask: Sequence[int], max_depth: int, rng: np.random.Generator) -> ExpressionTree:
    return ExpressionTree(tuple(_random_tree(mask, max_depth, False, rng)), tuple(mask))


def full(mask: Sequence[int], depth: int, rng: np.random.Generator) -> ExpressionTree:
    return ExpressionTree(tuple(_random_tree(mask, depth, True, rng)), tuple(mask))


def ramped_half_and_half(mask: Sequence[int], depth_range: tuple[int, int] = DEFAULT_INIT_DEPTH,
                         rng: np.random.Generator | None = None) -> ExpressionTree:
    d_min, d_max = depth_range
    if not mask:
        raise ValueError("empty feature mask")
    if not 0 <= d_min <= d_max:
        raise ValueError(f"bad depth range {depth_range}")
    rng = rng if rng is not None else np.random.default_rng()
    depth = int(rng.integers(d_min, d_max + 1))
    if rng.random() < 0.5:
        return grow(mask, depth, rng)
    return full(mask, depth, rng)


# -- variation ---------------------------------------------------------------

def _swap(p1: ExpressionTree, p2: ExpressionTree, rng: np.random.Generator,
          points: tuple[int, int] | None):
    a, b = p1.nodes, p2.nodes
    if points is None:
        i, j = int(rng.integers(len(a))), int(rng.integers(len(b)))
    else:
        i, j = points
    ie, je = subtree_end(a, i), subtree_end(b, j)
    c1 = a[:i] + b[j:je] + a[ie:]
    c2 = b[:j] + a[i:ie] + b[je:]
    # (start, end) of the received branch inside each child
    return c1, (i, i + je - j), c2, (j, j + ie - i)


def subtree_crossover(p1: ExpressionTree, p2: ExpressionTree, rng: np.random.Generator,
                      points: tuple[int, int] | None = None) -> tuple[ExpressionTree, ExpressionTree]:
    """Swap uniformly chosen subtrees. Each child keeps the mask of the parent
    that supplies its root; no repair is done."""
    c1, _, c2, _ = _swap(p1, p2, rng, points)
    return ExpressionTree(c1, p1.mask), ExpressionTree(c2, p2.mask)


def fix_terminals(nodes: Sequence[Token], span: tuple[int, int], mask: Sequence[int],
                  sim: FeatureSimilarity | None) -> tuple[tuple[Token, ...], int]:
    """Replace illegal terminals inside ``nodes[span[0]:span[1]]`` by the most
    similar legal feature. Returns the new nodes and the number of repairs."""
    allowed = set(mask)
    out = list(nodes)
    repaired = 0
    cache: dict[int, int] = {}
    for k in range(*span):
        tok = out[k]
        if isinstance(tok, str) or tok in allowed:
            continue
        if sim is None:
            raise ValueError("feature similarity required to repair restricted offspring")
        if tok not in cache:
            cache[tok] = sim.most_similar(tok, mask)
        out[k] = cache[tok]
        repaired += 1
    return tuple(out), repaired


def e_crossover_counted(p1: ExpressionTree, p2: ExpressionTree, sim: FeatureSimilarity | None,
                        rng: np.random.Generator, points: tuple[int, int] | None = None):
    """Like :func:`e_crossover` but also returns the number of terminals repaired."""
    c1, s1, c2, s2 = _swap(p1, p2, rng, points)
    c1, r1 = fix_terminals(c1, s1, p1.mask, sim)
    c2, r2 = fix_terminals(c2, s2, p2.mask, sim)
    return ExpressionTree(c1, p1.mask), ExpressionTree(c2, p2.mask), r1 + r2


def e_crossover(p1: ExpressionTree, p2: ExpressionTree, sim: FeatureSimilarity | None,
                rng: np.random.Generator,
                points: tuple[int, int] | None = None) -> tuple[ExpressionTree, ExpressionTree]:
    """Subtree crossover that keeps each child inside its inherited mask.

    Terminals arriving with the foreign branch that the receiving child is not
    allowed to see are swapped for the legal feature most similar to them.
    With unrestricted masks this is plain subtree crossover.
    """
    c1, c2, _ = e_crossover_counted(p1, p2, sim, rng, points)
    return c1, c2


def e_mutation(p: ExpressionTree, rng: np.random.Generator, max_depth: int = DEFAULT_MUTATION_DEPTH,
               point: int | None = None) -> ExpressionTree:
    """Replace a uniformly chosen branch with a grown subtree over ``p.mask``."""
    i = int(rng.integers(len(p.nodes))) if point is None else point
    ie = subtree_end(p.nodes, i)
    new = _random_tree(p.mask, max_depth, False, rng)
    return ExpressionTree(p.nodes[:i] + tuple(new) + p.nodes[ie:], p.mask)


subtree_mutation = e_mutation


# -- text form ---------------------------------------------------------------

def to_prefix(tree: ExpressionTree | Sequence[Token]) -> str:
    nodes = tree.nodes if isinstance(tree, ExpressionTree) else tuple(tree)
    out: list[str] = []
    closers: list[int] = []  # remaining children per open paren
    for tok in nodes:
        if isinstance(tok, str):
            out.append(f"({tok}")
            closers.append(ARITY[tok])
            continue
        out.append(f"x{tok}")
        while closers:
            closers[-1] -= 1
            if closers[-1]:
                break
            closers.pop()
            out[-1] += ")"
    return " ".join(out)


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_prefix(text: str, mask: Iterable[int] | None = None) -> ExpressionTree:
    """Inverse of :func:`to_prefix`. Without ``mask`` the tree's own features are used."""
    nodes: list[Token] = []
    for tok in _TOKEN.findall(text):
        if tok in "()":
            continue
        if tok in ARITY:
            nodes.append(tok)
        elif tok.startswith("x") and tok[1:].isdigit():
            nodes.append(int(tok[1:]))
        else:
            raise ValueError(f"unexpected token {tok!r}")
    tree = ExpressionTree(tuple(nodes), tuple(mask) if mask is not None else
                          tuple(t for t in nodes if isinstance(t, int)))
    validate(tree)
    return tree
