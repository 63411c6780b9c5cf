"""Array-backed disjoint-set forest (union by size, path halving)."""

import numpy as np


class UnionFind:
    """Disjoint sets over the integers ``0 .. n-1``."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n
        self.n_components = n

    def find(self, a):
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.n_components -= 1
        return True

    def union_edges(self, i, j):
        for a, b in zip(np.asarray(i).tolist(), np.asarray(j).tolist()):
            self.union(a, b)
        return self

    def labels(self):
        """Root label of every element."""
        return np.array([self.find(a) for a in range(len(self.parent))], dtype=np.int64)

    def component_sizes(self):
        """Sizes of all components, in decreasing order."""
        roots = self.labels()
        if roots.size == 0:
            return np.zeros(0, dtype=np.int64)
        counts = np.bincount(roots)
        return np.sort(counts[counts > 0])[::-1]
