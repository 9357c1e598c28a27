"""Independent reference implementations shared by the tests."""

import itertools

import numpy as np


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def penalized_nll(beta, X, y, C):
    """Plain-loop penalised mean NLL, written without the package's helpers."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    z = beta[0] + X @ np.asarray(beta[1:])
    nll = np.mean(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - y * z)
    return nll + float(np.sum(np.asarray(beta[1:]) ** 2)) / (2 * C * len(y))


def grid_minimizer(X, y, C, center, half_width=4.0, points=21, rounds=24):
    """Brute-force zooming grid search over every coefficient (intercept included).

    Each round keeps four grid steps either side of the best point, which keeps
    the minimiser of a well-conditioned convex objective inside the window.
    """
    center = np.asarray(center, dtype=float)
    width = np.full(len(center), half_width)
    for _ in range(rounds):
        axes = [np.linspace(c - w, c + w, points) for c, w in zip(center, width)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(center))
        Xa = np.column_stack([np.ones(len(y)), np.atleast_2d(np.asarray(X, dtype=float).T).T])
        z = grid @ Xa.T
        vals = np.mean(np.logaddexp(0, z) - y * z, axis=1) + np.sum(grid[:, 1:] ** 2, axis=1) / (2 * C * len(y))
        center = grid[int(np.argmin(vals))]
        width = width * 8.0 / (points - 1)
    return center


def recount_selective_risk(risks, correct, ids, alpha):
    """Sort by hand and count errors in the accepted prefix."""
    n = len(risks)
    order = sorted(range(n), key=lambda i: (risks[i], ids[i]))
    k = 0
    while k < n and k < alpha * n - 1e-9:
        k += 1
    accepted = order[:k]
    return sum(1 for i in accepted if not correct[i]) / k
