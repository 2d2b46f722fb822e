# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; semantics match ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()


cdef class SetAssocLRU:
    cdef public Py_ssize_t n_sets
    cdef public Py_ssize_t ways
    cdef public Py_ssize_t count
    cdef int64_t[:, :] tags
    cdef unsigned char[:, :] dirty
    cdef uint64_t[:, :] stamp
    cdef uint64_t clock

    def __init__(self, Py_ssize_t n_sets, Py_ssize_t ways):
        if n_sets <= 0 or ways <= 0:
            raise ValueError("n_sets and ways must be positive")
        self.n_sets = n_sets
        self.ways = ways
        self.count = 0
        self.clock = 0
        self.tags = np.full((n_sets, ways), -1, dtype=np.int64)
        self.dirty = np.zeros((n_sets, ways), dtype=np.uint8)
        self.stamp = np.zeros((n_sets, ways), dtype=np.uint64)

    cdef inline Py_ssize_t _find(self, Py_ssize_t s, int64_t line):
        cdef Py_ssize_t w
        for w in range(self.ways):
            if self.tags[s, w] == line:
                return w
        return -1

    def access(self, int64_t line, bint write):
        cdef Py_ssize_t s = line % self.n_sets
        cdef Py_ssize_t w = self._find(s, line)
        cdef Py_ssize_t best
        cdef uint64_t best_stamp
        cdef int64_t victim = -1
        cdef bint victim_dirty = False
        self.clock += 1
        if w >= 0:
            self.stamp[s, w] = self.clock
            if write:
                self.dirty[s, w] = 1
            return True, -1, False
        best = -1
        for w in range(self.ways):
            if self.tags[s, w] == -1:
                best = w
                break
        if best < 0:
            best = 0
            best_stamp = self.stamp[s, 0]
            for w in range(1, self.ways):
                if self.stamp[s, w] < best_stamp:
                    best_stamp = self.stamp[s, w]
                    best = w
            victim = self.tags[s, best]
            victim_dirty = self.dirty[s, best] != 0
        else:
            self.count += 1
        self.tags[s, best] = line
        self.dirty[s, best] = 1 if write else 0
        self.stamp[s, best] = self.clock
        return False, victim, victim_dirty

    def probe(self, int64_t line):
        return self._find(line % self.n_sets, line) >= 0

    def is_dirty(self, int64_t line):
        cdef Py_ssize_t s = line % self.n_sets
        cdef Py_ssize_t w = self._find(s, line)
        return w >= 0 and self.dirty[s, w] != 0

    def set_dirty(self, int64_t line, bint dirty):
        cdef Py_ssize_t s = line % self.n_sets
        cdef Py_ssize_t w = self._find(s, line)
        if w >= 0:
            self.dirty[s, w] = 1 if dirty else 0

    def remove(self, int64_t line):
        cdef Py_ssize_t s = line % self.n_sets
        cdef Py_ssize_t w = self._find(s, line)
        cdef int was
        if w < 0:
            return -1
        was = 1 if self.dirty[s, w] else 0
        self.tags[s, w] = -1
        self.dirty[s, w] = 0
        self.stamp[s, w] = 0
        self.count -= 1
        return was

    def lru_order(self, Py_ssize_t set_index):
        pairs = [(self.stamp[set_index, w], self.tags[set_index, w])
                 for w in range(self.ways) if self.tags[set_index, w] != -1]
        pairs.sort()
        return [tag for _, tag in pairs]

    def resident(self):
        cdef Py_ssize_t s, w
        out = []
        for s in range(self.n_sets):
            for w in range(self.ways):
                if self.tags[s, w] != -1:
                    out.append(self.tags[s, w])
        return out


def lru_fetch_count(lines, Py_ssize_t capacity):
    """Misses of a fully associative LRU cache of ``capacity`` lines.

    Uses an intrusive doubly linked list over line ids, so ids are assumed
    to be small non-negative integers.
    """
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    cdef int64_t[:] seq = np.ascontiguousarray(lines, dtype=np.int64)
    cdef Py_ssize_t n = seq.shape[0]
    if n == 0:
        return 0
    cdef int64_t universe = int(np.max(seq)) + 1
    if np.min(seq) < 0:
        raise ValueError("line ids must be non-negative")
    cdef int64_t[:] prev = np.full(universe, -1, dtype=np.int64)
    cdef int64_t[:] nxt = np.full(universe, -1, dtype=np.int64)
    cdef unsigned char[:] present = np.zeros(universe, dtype=np.uint8)
    cdef int64_t head = -1, tail = -1   # head = most recent, tail = LRU
    cdef Py_ssize_t size = 0, i
    cdef int64_t line, p, q, misses = 0
    for i in range(n):
        line = seq[i]
        if present[line]:
            if line == head:
                continue
            p = prev[line]
            q = nxt[line]
            if p >= 0:
                nxt[p] = q
            if q >= 0:
                prev[q] = p
            if line == tail:
                tail = p
            prev[line] = -1
            nxt[line] = head
            prev[head] = line
            head = line
            continue
        misses += 1
        present[line] = 1
        prev[line] = -1
        nxt[line] = head
        if head >= 0:
            prev[head] = line
        head = line
        if tail < 0:
            tail = line
        size += 1
        if size > capacity:
            p = prev[tail]
            present[tail] = 0
            prev[tail] = -1
            nxt[tail] = -1
            tail = p
            if tail >= 0:
                nxt[tail] = -1
            size -= 1
    return misses


def segment_sum_f32(offsets, targets, values):
    """Per-segment float32 sums of ``values[targets]``, added strictly left to right."""
    cdef uint64_t[:] off = np.ascontiguousarray(offsets, dtype=np.uint64)
    cdef unsigned int[:] tgt = np.ascontiguousarray(targets, dtype=np.uint32)
    cdef float[:] val = np.ascontiguousarray(values, dtype=np.float32)
    cdef Py_ssize_t n = off.shape[0] - 1, u
    cdef uint64_t e
    cdef float acc
    out = np.zeros(max(n, 0), dtype=np.float32)
    cdef float[:] o = out
    for u in range(n):
        acc = 0.0
        for e in range(off[u], off[u + 1]):
            acc = acc + val[tgt[e]]
        o[u] = acc
    return out
