"""Independent oracles shared by the test modules."""
import itertools
import math

import numpy as np


def central_diff(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn`` at ``x`` (which is perturbed in place and restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        up = fn()
        x[i] = old - step
        down = fn()
        x[i] = old
        grad[i] = (up - down) / (2 * step)
    return grad


def rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def brute_force_hard_triplet(x: np.ndarray, ids, margin: float) -> float:
    """Enumerate every (anchor, positive, negative) triple; keep the worst per anchor."""
    ids = list(ids)
    n = len(ids)

    def dist(i, j):
        return math.sqrt(sum((x[i][k] - x[j][k]) ** 2 for k in range(len(x[i]))))

    per_anchor = []
    for a in range(n):
        worst = -math.inf
        for p, q in itertools.product(range(n), range(n)):
            if p != a and ids[p] == ids[a] and ids[q] != ids[a]:
                worst = max(worst, dist(a, p) - dist(a, q) + margin)
        per_anchor.append(max(worst, 0.0))
    return sum(per_anchor) / n


def sort_oracle_top_b(s, b: int) -> list[int]:
    """Python sorted() on (-value, index) pairs: largest first, lower index wins ties."""
    ranked = sorted(range(len(s)), key=lambda i: (-s[i], i))
    return sorted(ranked[:b])
