"""Pure-Python versions of the hot kernels (fallback for ``_kernels``)."""

from collections import OrderedDict

import numpy as np


class SetAssocLRU:
    """Tag store of a set-associative LRU cache indexed by line number."""

    def __init__(self, n_sets, ways):
        if n_sets <= 0 or ways <= 0:
            raise ValueError("n_sets and ways must be positive")
        self.n_sets = n_sets
        self.ways = ways
        self._sets = [OrderedDict() for _ in range(n_sets)]
        self.count = 0

    def access(self, line, write):
        """Look up ``line``; allocate on miss.

        Returns ``(hit, victim_line, victim_dirty)`` with ``victim_line == -1``
        when nothing was evicted.
        """
        s = self._sets[line % self.n_sets]
        dirty = s.get(line)
        if dirty is not None:
            s.move_to_end(line)
            if write and not dirty:
                s[line] = True
            return True, -1, False
        victim, victim_dirty = -1, False
        if len(s) >= self.ways:
            victim, victim_dirty = s.popitem(last=False)
            self.count -= 1
        s[line] = bool(write)
        self.count += 1
        return False, victim, victim_dirty

    def probe(self, line):
        """Hit test without updating recency."""
        return line in self._sets[line % self.n_sets]

    def is_dirty(self, line):
        return bool(self._sets[line % self.n_sets].get(line, False))

    def set_dirty(self, line, dirty):
        s = self._sets[line % self.n_sets]
        if line in s:
            s[line] = bool(dirty)

    def remove(self, line):
        """Drop ``line``; returns -1 if absent, else 1 if it was dirty, 0 if clean."""
        s = self._sets[line % self.n_sets]
        if line not in s:
            return -1
        self.count -= 1
        return 1 if s.pop(line) else 0

    def lru_order(self, set_index):
        return list(self._sets[set_index])

    def resident(self):
        return [line for s in self._sets for line in s]


def lru_fetch_count(lines, capacity):
    """Number of misses of a fully associative LRU cache of ``capacity`` lines."""
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    cache = OrderedDict()
    misses = 0
    for line in lines:
        line = int(line)
        if line in cache:
            cache.move_to_end(line)
            continue
        misses += 1
        cache[line] = None
        if len(cache) > capacity:
            cache.popitem(last=False)
    return misses


def segment_sum_f32(offsets, targets, values):
    """Per-segment float32 sums of ``values[targets]``, added strictly left to right."""
    offsets = np.asarray(offsets, dtype=np.int64)
    gathered = np.asarray(values, dtype=np.float32)[np.asarray(targets, dtype=np.int64)]
    n = len(offsets) - 1
    out = np.zeros(max(n, 0), dtype=np.float32)
    for u in np.flatnonzero(offsets[1:] > offsets[:-1]):
        # cumsum accumulates sequentially, unlike sum's pairwise reduction
        out[u] = np.cumsum(gathered[offsets[u]:offsets[u + 1]], dtype=np.float32)[-1]
    return out
