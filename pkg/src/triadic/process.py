"""The triadic process: graph state, open-triple registry, and both phases.

Phase 1 samples one uniformly random open triple per step. Phase 2 samples
every open triple at once per round, either at the native probability or,
in sprinkling mode, with a fresh draw for every two-edge triple from the
second round on.
"""

from __future__ import annotations

import gc
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Iterator, NamedTuple, Optional

import numpy as np

from . import _kernels as K
from ._hashing import derive_seed, oracle_key, triple_code, uniform_of
from .exceptions import (
    IllegalEdge,
    InvalidInstance,
    InvalidPair,
    InvalidProbability,
    PhaseError,
    RefusedScale,
    Stalled,
)

BRUTE_FORCE_CAP = 64

_HIST_MODES = {"none": K.HIST_NONE, "success": K.HIST_SUCCESS, "all": K.HIST_ALL}


def canonical_triple(a: int, b: int, c: int) -> tuple[int, int, int]:
    if len({a, b, c}) != 3:
        raise InvalidInstance(f"triple needs three distinct vertices, got {(a, b, c)}")
    return tuple(sorted((int(a), int(b), int(c))))


def canonical_pair(u: int, v: int) -> tuple[int, int]:
    if u == v:
        raise InvalidPair(f"pair needs two distinct vertices, got {u}")
    return (int(u), int(v)) if u < v else (int(v), int(u))


@dataclass(frozen=True, order=True)
class OpenTriple:
    apex: int
    missing: tuple[int, int]

    @property
    def triple(self) -> tuple[int, int, int]:
        return canonical_triple(self.apex, *self.missing)


class OutcomeOracle:
    """Lazily realised H(n, p): a keyed pure function of (seed, triple)."""

    def __init__(self, seed: int, p: float):
        if not 0.0 <= p <= 1.0 or math.isnan(p):
            raise InvalidProbability(f"p must lie in [0, 1], got {p}")
        self.seed = int(seed) & ((1 << 64) - 1)
        self.p = float(p)
        self.key = np.uint64(oracle_key(np.uint64(self.seed)))

    def uniform(self, triple) -> float:
        a, b, c = canonical_triple(*triple)
        return float(uniform_of(self.key, triple_code(a, b, c)))

    def outcome(self, triple) -> bool:
        return self.uniform(triple) < self.p

    __call__ = outcome

    def accepted(self, n: int) -> list[tuple[int, int, int]]:
        """All triples of ``[n]`` the oracle accepts, in lexicographic order."""
        return [t for t in combinations(range(n), 3) if self.outcome(t)]


class GraphState:
    """Bitset-row adjacency with degree counts.

    Views constructed by :class:`ProcessState` share its arrays.
    """

    def __init__(self, adj: np.ndarray, deg: np.ndarray, v0: int = 0):
        self.adj = adj
        self.deg = deg
        self.v0 = int(v0)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], v0: int = 0) -> "GraphState":
        W = (n + 63) >> 6
        adj = np.zeros((n, W), np.uint64)
        deg = np.zeros(n, np.int64)
        g = cls(adj, deg, v0)
        for u, v in edges:
            u, v = canonical_pair(u, v)
            if not g.has_edge(u, v):
                K.set_edge(adj, u, v)
                deg[u] += 1
                deg[v] += 1
        return g

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def edge_count(self) -> int:
        return int(self.deg.sum()) // 2

    def is_complete(self) -> bool:
        return self.edge_count == self.n * (self.n - 1) // 2

    def has_edge(self, u: int, v: int) -> bool:
        return bool(K.has_edge(self.adj, int(u), int(v)))

    def row_mask(self, u: int) -> np.ndarray:
        """Boolean neighbourhood indicator of ``u``."""
        bits = np.unpackbits(self.adj[u].view(np.uint8), bitorder="little")
        return bits[: self.n].astype(bool)

    def neighbors(self, u: int) -> np.ndarray:
        return np.flatnonzero(self.row_mask(u))

    def dense(self) -> np.ndarray:
        bits = np.unpackbits(self.adj.view(np.uint8), axis=1, bitorder="little")
        return bits[:, : self.n].astype(bool)

    def edges(self) -> Iterator[tuple[int, int]]:
        for u in range(self.n):
            for v in self.neighbors(u):
                if u < v:
                    yield (u, int(v))

    def copy(self) -> "GraphState":
        return GraphState(self.adj.copy(), self.deg.copy(), self.v0)


class Registry:
    """Read-only view of the open triples of a :class:`ProcessState`."""

    def __init__(self, state: "ProcessState"):
        self._s = state

    def __len__(self) -> int:
        return int(self._s._meta[K.M_Q])

    @property
    def explicit(self) -> bool:
        return int(self._s._meta[K.M_MODE]) == K.MODE_EXPLICIT

    def _packed(self) -> np.ndarray:
        s = self._s
        if self.explicit:
            raw = s._items[: s._meta[K.M_NITEMS]]
            lo, hi = (raw >> 42) & 0x1FFFFF, (raw >> 21) & 0x1FFFFF
            live = ~((s._adj[lo, hi >> 6] >> (hi & 63).astype(np.uint64)) & np.uint64(1)).astype(bool)
            return raw[live]
        return K.open_items_fresh(s._adj, s._fresh)

    def __iter__(self) -> Iterator[OpenTriple]:
        for it in self._packed():
            lo, hi, apex = K.dec_item(it)
            yield OpenTriple(int(apex), (int(lo), int(hi)))

    def as_set(self) -> set[OpenTriple]:
        return set(self)

    def __contains__(self, item: OpenTriple) -> bool:
        return item in self.as_set()

    @property
    def f_count(self) -> np.ndarray:
        """F_v: open triples whose missing edge touches v."""
        s = self._s
        if self.explicit:
            return s._fcnt.copy()
        return K.f_counts_fresh(s._adj, s._fresh)


class HistoryRecord(NamedTuple):
    step_index: int
    triple: tuple[int, int, int]
    success: bool
    added_edge: Optional[tuple[int, int]]

    def to_line(self) -> str:
        edge = "-" if self.added_edge is None else f"{self.added_edge[0]}-{self.added_edge[1]}"
        a, b, c = self.triple
        return f"{self.step_index} {a} {b} {c} {int(self.success)} {edge}"

    @classmethod
    def from_line(cls, line: str) -> "HistoryRecord":
        i, a, b, c, ok, edge = line.split()
        added = None if edge == "-" else tuple(int(x) for x in edge.split("-"))
        return cls(int(i), (int(a), int(b), int(c)), ok == "1", added)


@dataclass(frozen=True)
class StepOutcome:
    sampled: tuple[int, int, int]
    success: bool
    added_edge: Optional[tuple[int, int]]
    triples_closed: int
    triples_opened: int


@dataclass(frozen=True)
class RoundOutcome:
    q_before: int
    sampled_count: int
    success_count: int
    new_edges: int
    q_after: int


@dataclass(frozen=True)
class Phase1Summary:
    steps: int
    stalled: bool
    complete: bool


@dataclass
class FinalReport:
    propagated: bool
    final_edges: int
    phase1_steps: int
    phase2_rounds: int
    stall_reason: str
    truncated: bool = False
    mode: str = "standard"
    rounds: list = field(default_factory=list)
    certificate: Optional[object] = None

    def to_dict(self) -> dict:
        return {
            "propagated": self.propagated,
            "final_edges": self.final_edges,
            "phase1_steps": self.phase1_steps,
            "phase2_rounds": self.phase2_rounds,
            "stall_reason": self.stall_reason,
            "truncated": self.truncated,
            "mode": self.mode,
            "rounds": [r.__dict__ for r in self.rounds],
        }


class ProcessState:
    """Evolving graph, open-triple registry, oracle and counters.

    Single-owner: the arrays are mutated in place by the compiled kernels.
    """

    def __init__(
        self,
        n: int,
        p: float,
        seed: int,
        v0: int = 0,
        *,
        order_seed: Optional[int] = None,
        history: str = "none",
        track_sampled: Optional[bool] = None,
    ):
        if n < 3:
            raise InvalidInstance(f"need n >= 3, got {n}")
        if not 0 <= v0 < n:
            raise InvalidInstance(f"v0={v0} outside [0, {n})")
        if n >= 1 << 21:
            raise InvalidInstance("vertex ids must fit in 21 bits")
        self.oracle = OutcomeOracle(seed, p)
        if history not in _HIST_MODES:
            raise ValueError(f"history must be one of {sorted(_HIST_MODES)}")
        if track_sampled is None:
            track_sampled = n <= BRUTE_FORCE_CAP
        self.n = int(n)
        self.v0 = int(v0)
        self.order_seed = derive_seed(self.oracle.seed, "order") if order_seed is None else int(order_seed)
        self.history_mode = history
        (
            self._adj,
            self._deg,
            self._fcnt,
            self._xt,
            self._items,
            self._meta,
            self._rng,
            self._fresh,
            self._sampled,
            self._hist,
        ) = K.init_arrays(self.n, self.v0, np.uint64(self.order_seed), bool(track_sampled), _HIST_MODES[history])
        self.graph = GraphState(self._adj, self._deg, self.v0)
        self.registry = Registry(self)

    @property
    def p(self) -> float:
        return self.oracle.p

    @property
    def c(self) -> float:
        return self.oracle.p * math.sqrt(self.n)

    @property
    def step_index(self) -> int:
        return int(self._meta[K.M_STEP])

    @property
    def round_index(self) -> int:
        return int(self._meta[K.M_ROUND])

    @property
    def samples_taken(self) -> int:
        return int(self._meta[K.M_SAMPLES])

    @property
    def edge_count(self) -> int:
        return int(self._meta[K.M_EDGES])

    @property
    def in_phase1(self) -> bool:
        return int(self._meta[K.M_MODE]) == K.MODE_EXPLICIT

    def is_complete(self) -> bool:
        return self.edge_count == self.n * (self.n - 1) // 2

    @property
    def tracks_sampled(self) -> bool:
        return self._sampled.shape[0] > 0

    def sampled_triples(self) -> set[tuple[int, int, int]]:
        if not self.tracks_sampled:
            raise RefusedScale("sampled-set tracking is disabled for this state")
        n = self.n
        out = set()
        for code in np.flatnonzero(self._sampled):
            a, rest = divmod(int(code), n * n)
            b, c = divmod(rest, n)
            out.add((a, b, c))
        return out

    def history(self) -> list[HistoryRecord]:
        rows = self._hist[: self._meta[K.M_HLEN]]
        # records are acyclic; cyclic GC passes during the build only cost time
        paused = gc.isenabled()
        gc.disable()
        try:
            return [
                HistoryRecord(i, (a, b, c), ok == 1, None if e1 < 0 else (e1, e2))
                for i, a, b, c, ok, e1, e2 in rows.tolist()
            ]
        finally:
            if paused:
                gc.enable()

    def tilde_row(self, u: int) -> np.ndarray:
        return K.tilde_row(self._adj, self._fresh, self._xt, self._meta, int(u))

    def force_outcome_query(self, triple) -> bool:
        """Query the oracle directly without touching the process (test hook)."""
        return self.oracle.outcome(triple)

    def copy(self) -> "ProcessState":
        new = object.__new__(ProcessState)
        new.__dict__.update(self.__dict__)
        for name in ("_adj", "_deg", "_fcnt", "_xt", "_items", "_meta", "_rng", "_fresh", "_sampled", "_hist"):
            setattr(new, name, getattr(self, name).copy())
        new.graph = GraphState(new._adj, new._deg, new.v0)
        new.registry = Registry(new)
        return new


def init_process(n: int, p: float, seed: int, v0: int = 0, **kwargs) -> ProcessState:
    """Star at ``v0`` with every leaf pair registered as an open triple."""
    return ProcessState(n, p, seed, v0, **kwargs)


def _require_phase1(state: ProcessState) -> None:
    if not state.in_phase1:
        raise PhaseError("phase 2 has started; the registry is no longer explicit")


def step(state: ProcessState) -> StepOutcome:
    _require_phase1(state)
    s = state
    status, ok, lo, hi, apex, closed, opened, s._items, s._hist = K.step(
        s._adj, s._deg, s._fcnt, s._xt, s._items, s._meta, s._rng,
        s.oracle.key, s.oracle.p, s._sampled, s._hist,
    )
    if status == 1:
        raise Stalled("no open triple left to sample")
    triple = canonical_triple(int(lo), int(hi), int(apex))
    edge = (int(lo), int(hi)) if ok else None
    return StepOutcome(triple, bool(ok), edge, int(closed), int(opened))


def apply_edge(state: ProcessState, u: int, v: int) -> tuple[int, int]:
    """Add ``uv`` and update the registry; returns (closed, opened)."""
    _require_phase1(state)
    u, v = canonical_pair(u, v)
    if state.graph.has_edge(u, v):
        raise IllegalEdge(f"edge {u}-{v} is already present")
    s = state
    closed, opened, s._items = K.apply_edge(s._adj, s._deg, s._fcnt, s._xt, s._items, s._meta, u, v)
    return int(closed), int(opened)


def run_phase1(
    state: ProcessState,
    max_steps: int,
    *,
    every: Optional[int] = None,
    callback: Optional[Callable[[ProcessState], None]] = None,
) -> Phase1Summary:
    """Step until ``max_steps``, an empty registry, or the complete graph.

    With ``every`` and ``callback``, the callback runs whenever the step index
    is a multiple of ``every`` (including the starting state).
    """
    _require_phase1(state)
    s = state
    max_steps = int(max_steps)
    taken = 0
    stalled = False

    def advance(k):
        nonlocal taken, stalled
        got, st, s._items, s._hist = K.run_steps(
            s._adj, s._deg, s._fcnt, s._xt, s._items, s._meta, s._rng,
            s.oracle.key, s.oracle.p, s._sampled, s._hist, k,
        )
        taken += got
        stalled = stalled or bool(st)
        return got == k and not st and not s.is_complete()

    if callback is None or not every:
        advance(max_steps)
    else:
        if s.step_index % every == 0:
            callback(s)
        while taken < max_steps:
            chunk = min(every - s.step_index % every, max_steps - taken)
            if not advance(chunk):
                break
            if s.step_index % every == 0:
                callback(s)
    return Phase1Summary(taken, stalled and not s.is_complete(), s.is_complete())


def run_round(state: ProcessState, override_p: Optional[float] = None) -> RoundOutcome:
    """Query every open triple simultaneously, then add the successful edges.

    ``override_p`` switches to a sprinkling round: every triple spanning two
    edges gets a fresh draw at that probability.
    """
    s = state
    if override_p is not None and not 0.0 <= override_p <= 1.0:
        raise InvalidProbability(f"override_p must lie in [0, 1], got {override_p}")
    q_before, n_sampled, n_success, new_edges, q_after, s._items, s._hist = K.do_round(
        s._adj, s._deg, s._fcnt, s._xt, s._items, s._meta, s._fresh,
        s.oracle.key, s.oracle.p, -1.0 if override_p is None else float(override_p),
        s._sampled, s._hist,
    )
    if s._xt.size and not s.in_phase1:
        # per-pair counts are only maintained while the registry is explicit
        s._xt = np.zeros((0, 0), np.int32)
        s._items = np.empty(0, np.int64)
    return RoundOutcome(int(q_before), int(n_sampled), int(n_success), int(new_edges), int(q_after))


def sprinkle_probability(n: int) -> float:
    return min(1.0, 4.0 / math.sqrt(n * math.log(n)))


def default_max_rounds(n: int) -> int:
    return 10 * math.ceil(math.log2(n))


def run_phase2(
    state: ProcessState,
    mode: str = "standard",
    max_rounds: Optional[int] = None,
    *,
    callback: Optional[Callable[[ProcessState, RoundOutcome], None]] = None,
) -> FinalReport:
    if mode not in ("standard", "sprinkling"):
        raise ValueError(f"unknown phase-2 mode {mode!r}")
    if max_rounds is None:
        max_rounds = default_max_rounds(state.n)
    q = sprinkle_probability(state.n)
    rounds: list[RoundOutcome] = []
    truncated = False
    if len(state.registry) > 0 or not state.in_phase1:
        while not state.is_complete():
            if len(state.registry) == 0 and (mode == "standard" or not rounds):
                break
            if len(rounds) >= max_rounds:
                truncated = True
                break
            override = q if (mode == "sprinkling" and rounds) else None
            out = run_round(state, override)
            rounds.append(out)
            if callback is not None:
                callback(state, out)
            if override is not None and out.sampled_count == 0:
                break
    complete = state.is_complete()
    if complete:
        reason = "complete"
    elif truncated:
        reason = "max_rounds"
    else:
        reason = "registry_empty"
    return FinalReport(
        propagated=complete,
        final_edges=state.edge_count,
        phase1_steps=state.step_index,
        phase2_rounds=len(rounds),
        stall_reason=reason,
        truncated=truncated,
        mode=mode,
        rounds=rounds,
    )


def brute_force_open_set(graph: GraphState, sampled: Iterable, cap: int = BRUTE_FORCE_CAP) -> set[OpenTriple]:
    """Enumerate every triple spanning exactly two edges and not in ``sampled``."""
    n = graph.n
    if n > cap:
        raise RefusedScale(f"brute force refused for n={n} > {cap}")
    dense = graph.dense()
    done = {canonical_triple(*t) for t in sampled}
    out = set()
    for a, b, c in combinations(range(n), 3):
        present = [(a, b) if dense[a, b] else None, (a, c) if dense[a, c] else None, (b, c) if dense[b, c] else None]
        if sum(e is not None for e in present) != 2 or (a, b, c) in done:
            continue
        if not dense[a, b]:
            out.add(OpenTriple(c, (a, b)))
        elif not dense[a, c]:
            out.add(OpenTriple(b, (a, c)))
        else:
            out.add(OpenTriple(a, (b, c)))
    return out


def write_history(path, records: Iterable[HistoryRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_line() + "\n")


def read_history(path) -> list[HistoryRecord]:
    with open(path) as fh:
        return [HistoryRecord.from_line(line) for line in fh if line.strip()]
