"""Quick invariant checks behind ``egp selftest``."""

from __future__ import annotations

import math

import numpy as np

from egp import baselines, engine, expr, forest
from egp.dataset import two_gaussians, magnitude_cosine, FeatureSimilarity
from egp.stats import kruskal_wallis


def check_closure(rng, n=2000):
    n_feat = 8
    sim = FeatureSimilarity(magnitude_cosine(rng.normal(size=(50, n_feat))))
    for _ in range(n):
        masks = [tuple(rng.choice(n_feat, size=rng.integers(1, n_feat + 1), replace=False)) for _ in range(2)]
        a = expr.ramped_half_and_half(masks[0], (0, 4), rng)
        b = expr.ramped_half_and_half(masks[1], (0, 4), rng)
        for child in (*expr.e_crossover(a, b, sim, rng), expr.e_mutation(a, rng)):
            if not child.is_closed():
                return f"terminal outside mask in {child}"
    return None


def check_totality(rng, n_trees=200, n_rows=100):
    X = rng.normal(scale=10.0 ** rng.integers(-300, 300, size=(n_rows, 5)), size=(n_rows, 5))
    X[rng.random(X.shape) < 0.1] = 0.0
    for _ in range(n_trees):
        t = expr.ramped_half_and_half(range(5), (1, 7), rng)
        if not np.all(np.isfinite(expr.evaluate(t, X))):
            return f"non-finite output from {t}"
    for tree, row, want in (("(/ x0 x1)", (5.0, 0.0), 5.0), ("(log x0)", (-2.0,), -2.0),
                            ("(sqrt x0)", (-4.0,), -4.0)):
        if expr.eval_row(expr.parse_prefix(tree), row) != want:
            return f"protected operator {tree} wrong"
    return None


def check_voting(rng, n=200):
    for _ in range(n):
        rows, m = rng.integers(1, 20), rng.integers(1, 9)
        V = rng.integers(0, 2, size=(rows, m))
        C = np.full(V.shape, rng.random())
        w = forest.weighted_vote(V, C)
        ones = V.sum(axis=1)
        tie = 2 * ones == m
        if np.any(w[~tie] != (2 * ones > m)[~tie]) or np.any(w[tie] != 0):
            return "weighted vote disagrees with majority under equal certainty"
        P = rng.normal(size=(rows, m)) * 3
        c = forest.certainty_matrix(P, forest.nearest_label(P))
        if c.min() < 0 or c.max() > 1:
            return "certainty out of [0, 1]"
    return None


def check_kw(rng, n=50):
    for _ in range(n):
        groups = [rng.integers(0, 5, size=rng.integers(1, 8)).astype(float) for _ in range(rng.integers(2, 5))]
        if sum(map(len, groups)) < 3:
            continue
        pooled = np.concatenate(groups)
        N = len(pooled)
        ranks = [1 + sum(v < x for v in pooled) + (sum(v == x for v in pooled) - 1) / 2 for x in pooled]
        pos, h = 0, 0.0
        for g in groups:
            h += sum(ranks[pos:pos + len(g)]) ** 2 / len(g)
            pos += len(g)
        h = 12 / (N * (N + 1)) * h - 3 * (N + 1)
        ties = sum(c ** 3 - c for c in np.unique(pooled, return_counts=True)[1])
        corr = 1 - ties / (N ** 3 - N)
        want = 0.0 if corr == 0 else h / corr
        if not math.isclose(kruskal_wallis(groups).H, want, abs_tol=1e-9):
            return "Kruskal-Wallis H mismatch"
    return None


def check_mahalanobis(rng, n=500):
    mus = [rng.normal(size=3), rng.normal(size=3)]
    cm = baselines.ClassModel.from_covariances(mus, [np.eye(3), np.eye(3)])
    Z = rng.normal(size=(n, 3)) * 2
    eu = np.argmin([np.sum((Z - m) ** 2, axis=1) for m in mus], axis=0)
    if np.any(baselines.mahalanobis_classify(cm, Z) != eu):
        return "identity-covariance Mahalanobis differs from Euclidean"
    return None


def check_engine(rng):
    ds = two_gaussians(120, 4, seed=int(rng.integers(1 << 31)))
    engine.train(ds, engine.EngineConfig("eGPn", generations=5, subpop_size=20, seed=1))
    engine.train(ds, engine.EngineConfig("eGP-W", generations=5, subpop_size=20, seed=2))
    return None


CHECKS = {
    "closure": check_closure,
    "totality": check_totality,
    "voting": check_voting,
    "kruskal-wallis": check_kw,
    "mahalanobis": check_mahalanobis,
    "engine-invariants": check_engine,
}


def run_all(seed: int = 0) -> dict[str, str | None]:
    """Run every check; value is None on success, else a failure message."""
    out = {}
    for name, fn in CHECKS.items():
        try:
            out[name] = fn(np.random.default_rng(seed))
        except engine.InvariantViolation as exc:
            out[name] = str(exc)
    return out
