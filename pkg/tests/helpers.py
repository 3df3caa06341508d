"""Independent oracles shared by the test modules."""

import math

import numpy as np


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale))


def brute_topk(rankings, relevant, k):
    """Plain-python per-user metrics, written independently of the package."""
    sums = [0.0, 0.0, 0.0, 0.0]
    users = 0
    for ranked, rel in zip(rankings, relevant):
        if len(rel) == 0:
            continue
        users += 1
        dcg = 0.0
        hits = 0
        for pos in range(k):
            if ranked[pos] in rel:
                hits += 1
                dcg += 1.0 / math.log2(pos + 2)
        idcg = 0.0
        for pos in range(min(len(rel), k)):
            idcg += 1.0 / math.log2(pos + 2)
        sums[0] += dcg / idcg
        sums[1] += hits / len(rel)
        sums[2] += 1.0 if hits else 0.0
        sums[3] += hits / k
    if users == 0:
        return (0.0, 0.0, 0.0, 0.0)
    return tuple(s / users for s in sums)
