"""Slow reference implementations used as independent test oracles."""
import itertools
import math
from collections import Counter


def purity_count(assign, labels):
    n = len(assign)
    total = 0
    for c in set(assign):
        members = [labels[i] for i in range(n) if assign[i] == c]
        total += Counter(members).most_common(1)[0][1]
    return total / n


def mi_sum(assign, labels):
    n = len(assign)
    pa, pb = Counter(assign), Counter(labels)
    joint = Counter(zip(assign, labels))
    return sum(c / n * math.log((c / n) / (pa[a] / n * pb[b] / n)) for (a, b), c in joint.items())


def ari_pairs(assign, labels):
    """Adjusted Rand index from explicit pair agreement counts."""
    n = len(assign)
    same_a = same_b = both = 0
    for i, j in itertools.combinations(range(n), 2):
        sa, sb = assign[i] == assign[j], labels[i] == labels[j]
        same_a += sa
        same_b += sb
        both += sa and sb
    pairs = n * (n - 1) / 2
    expected = same_a * same_b / pairs
    top = 0.5 * (same_a + same_b)
    if top == expected:
        return 1.0
    return (both - expected) / (top - expected)


def from_contingency(table):
    """Expand a contingency table into (assign, labels) lists."""
    a, b = [], []
    for i, row in enumerate(table):
        for j, cnt in enumerate(row):
            a += [i] * cnt
            b += [j] * cnt
    return a, b
