"""Collapse certificates for 2-complexes built from triadic runs.

The faces that added edges during a propagating run form a complex whose
reverse order is a sequence of elementary collapses ending at the star.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence

import networkx as nx
import numpy as np
from numba import njit

from ._hashing import oracle_key, outcome, triple_code
from .exceptions import InvalidInstance, InvalidProbability, NotPropagated
from .process import HistoryRecord, canonical_pair, canonical_triple

Pair = tuple[int, int]
Face = tuple[int, int, int]


def face_edges(face: Face) -> tuple[Pair, Pair, Pair]:
    a, b, c = face
    return (a, b), (a, c), (b, c)


@dataclass
class TwoComplex:
    n: int
    edges: set = field(default_factory=set)
    faces: set = field(default_factory=set)

    def euler_characteristic(self) -> int:
        return self.n - len(self.edges) + len(self.faces)

    def validate(self) -> None:
        for f in self.faces:
            for e in face_edges(f):
                if e not in self.edges:
                    raise InvalidInstance(f"face {f} has boundary edge {e} outside the complex")


@dataclass
class CollapseCertificate:
    v0: int
    n: int
    steps: list = field(default_factory=list)

    def faces(self) -> list[Face]:
        return [f for f, _ in self.steps]

    def complex(self) -> TwoComplex:
        """Star plus added edges as 1-skeleton, certificate faces as 2-cells."""
        edges = {canonical_pair(self.v0, u) for u in range(self.n) if u != self.v0}
        edges.update(e for _, e in self.steps)
        return TwoComplex(self.n, edges, set(self.faces()))


def extract_certificate(history: Iterable[HistoryRecord], n: int, v0: int = 0) -> CollapseCertificate:
    cert = CollapseCertificate(v0, n)
    seen = set()
    for rec in history:
        if rec.added_edge is None:
            continue
        e = canonical_pair(*rec.added_edge)
        if e in seen:
            continue
        seen.add(e)
        cert.steps.append((canonical_triple(*rec.triple), e))
    if len(seen) + n - 1 != n * (n - 1) // 2:
        raise NotPropagated(f"history adds {len(seen)} edges; {n * (n - 1) // 2 - n + 1} needed")
    return cert


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    failed_step: Optional[int] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_certificate(cert: CollapseCertificate, n: Optional[int] = None) -> VerifyResult:
    """Replay the certificate forward from the star."""
    n = cert.n if n is None else n
    if not 0 <= cert.v0 < n:
        return VerifyResult(False, None, "v0 out of range")
    edges = {canonical_pair(cert.v0, u) for u in range(n) if u != cert.v0}
    for k, (face, e) in enumerate(cert.steps):
        face = tuple(face)
        if len(set(face)) != 3 or min(face) < 0 or max(face) >= n:
            return VerifyResult(False, k, "malformed face")
        e = tuple(e)
        if e not in face_edges(tuple(sorted(face))):
            return VerifyResult(False, k, "edge is not a side of the face")
        if e in edges:
            return VerifyResult(False, k, "edge already present")
        support = [s for s in face_edges(tuple(sorted(face))) if s != e]
        if not all(s in edges for s in support):
            return VerifyResult(False, k, "support edge missing")
        edges.add(e)
    if len(edges) != n * (n - 1) // 2:
        return VerifyResult(False, None, "final graph is not complete")
    return VerifyResult(True)


@dataclass
class CollapseResult:
    sequence: list
    residual_faces: set
    residual_graph: set
    is_hypertree: bool
    spanning: bool


@njit(cache=True)
def _collapse_kernel(n, faces):
    # per pair code a*n+b: coface count and sum of coface ids
    m = faces.shape[0]
    cnt = np.zeros(n * n, np.int64)
    fsum = np.zeros(n * n, np.int64)
    for i in range(m):
        a, b, c = faces[i, 0], faces[i, 1], faces[i, 2]
        for e in (a * n + b, a * n + c, b * n + c):
            cnt[e] += 1
            fsum[e] += i
    heap = [-1]
    for e in range(n * n):
        if cnt[e] == 1:
            heap.append(e)
    heapq.heapify(heap)
    seq_e = np.empty(m, np.int64)
    seq_f = np.empty(m, np.int64)
    k = 0
    while len(heap) > 0:
        e = heapq.heappop(heap)
        if e < 0 or cnt[e] != 1:
            continue
        f = fsum[e]
        seq_e[k] = e
        seq_f[k] = f
        k += 1
        cnt[e] = 0
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        for o in (a * n + b, a * n + c, b * n + c):
            if o == e:
                continue
            cnt[o] -= 1
            fsum[o] -= f
            if cnt[o] == 1:
                heapq.heappush(heap, o)
    return seq_e[:k], seq_f[:k]


def greedy_collapse(complex_: TwoComplex) -> CollapseResult:
    """Collapse the lexicographically smallest free edge until none is left."""
    n = complex_.n
    face_list = sorted(canonical_triple(*f) for f in complex_.faces)
    arr = np.array(face_list, np.int64).reshape(-1, 3)
    seq_e, seq_f = _collapse_kernel(n, arr)
    edges = set(complex_.edges)
    for f in face_list:
        edges.update(face_edges(f))
    sequence = [(divmod(int(e), n), face_list[int(f)]) for e, f in zip(seq_e, seq_f)]
    edges.difference_update(e for e, _ in sequence)
    removed = set(seq_f.tolist())
    faces = {f for i, f in enumerate(face_list) if i not in removed}
    g = nx.Graph()
    g.add_nodes_from(range(complex_.n))
    g.add_edges_from(edges)
    support = g.subgraph([v for v in g if g.degree(v) > 0])
    tree = not faces and (support.number_of_nodes() == 0 or nx.is_tree(support))
    spanning = tree and nx.is_connected(g)
    return CollapseResult(sequence, faces, edges, tree, spanning)


@njit(cache=True)
def _accepted_codes(n, key, p):
    out = np.empty(n * (n - 1) * (n - 2) // 6, np.int64)
    k = 0
    for a in range(n):
        for b in range(a + 1, n):
            for c in range(b + 1, n):
                code = triple_code(a, b, c)
                if outcome(key, code, p):
                    out[k] = code
                    k += 1
    return out[:k]


def sample_Y2(n: int, p: float, seed: int) -> TwoComplex:
    """Complete 1-skeleton with the faces the process oracle for ``seed`` accepts."""
    if n < 3:
        raise InvalidInstance(f"need n >= 3, got {n}")
    if not 0.0 <= p <= 1.0:
        raise InvalidProbability(f"p must lie in [0, 1], got {p}")
    key = np.uint64(oracle_key(np.uint64(int(seed) & ((1 << 64) - 1))))
    codes = _accepted_codes(n, key, float(p))
    mask = (1 << 21) - 1
    faces = {(int(x >> 42) & mask, int(x >> 21) & mask, int(x) & mask) for x in codes}
    return TwoComplex(n, set(combinations(range(n), 2)), faces)


def write_certificate(path, cert: CollapseCertificate) -> None:
    with open(path, "w") as fh:
        fh.write(f"{cert.v0} {cert.n}\n")
        for (a, b, c), (e1, e2) in cert.steps:
            fh.write(f"{a} {b} {c} {e1} {e2}\n")


def read_certificate(path) -> CollapseCertificate:
    with open(path) as fh:
        v0, n = (int(x) for x in fh.readline().split())
        steps = []
        for line in fh:
            if not line.strip():
                continue
            a, b, c, e1, e2 = (int(x) for x in line.split())
            steps.append(((a, b, c), (e1, e2)))
    return CollapseCertificate(v0, n, steps)


def collapse_replay_euler(complex_: TwoComplex, sequence: Sequence) -> list[int]:
    """Euler characteristic after each collapse in ``sequence``."""
    edges, faces = set(complex_.edges), set(complex_.faces)
    chis = [complex_.n - len(edges) + len(faces)]
    for e, f in sequence:
        edges.discard(e)
        faces.discard(f)
        chis.append(complex_.n - len(edges) + len(faces))
    return chis
