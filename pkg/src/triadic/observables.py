"""Exact tracked variables by graph traversal, and checkpoint snapshots.

X is the codegree, X~ the number of open triples on a missing pair, Y the
open 3-walk count and Z the open 4-walk count. Pairs containing v0 are
never monitored.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .exceptions import InvalidPair
from .process import GraphState, ProcessState
from .trajectory import OdeParams, closed_form, envelopes, x_bound

DEFAULT_MONITORED = 20


def _check_pair(u: int, v: int) -> None:
    if u == v:
        raise InvalidPair(f"pair needs two distinct vertices, got {u}")


def codegree(graph: GraphState, u: int, v: int) -> int:
    _check_pair(u, v)
    return int(np.bitwise_count(graph.adj[u] & graph.adj[v]).sum())


def tilde_codegree(state: ProcessState, u: int, v: int) -> int:
    _check_pair(u, v)
    if state.graph.has_edge(u, v):
        return 0
    if state.in_phase1:
        return int(state._xt[u, v])
    adj, fresh = state._adj, state._fresh
    return int(np.bitwise_count((fresh[u] & adj[v]) | (adj[u] & fresh[v])).sum())


def open_three_walks(state: ProcessState, u: int, v: int) -> int:
    """Y_{u,v}: sum of X~(u, w') over the neighbours w' of v."""
    _check_pair(u, v)
    row = state.tilde_row(u)
    return int(row[state.graph.row_mask(v)].sum())


def open_four_walks(state: ProcessState, u: int, v: int) -> int:
    """Z_{u,v}: sum over w outside {u, v} of X~(u, w) X~(v, w)."""
    _check_pair(u, v)
    ru, rv = state.tilde_row(u), state.tilde_row(v)
    prod = ru * rv
    return int(prod.sum() - prod[u] - prod[v])


@dataclass(frozen=True)
class PairStats:
    u: int
    v: int
    X: int
    X_tilde: int
    Y_uv: int
    Y_vu: int
    Z: int
    y_uv_scaled: float
    y_vu_scaled: float
    z_scaled: float


def pair_stats(state: ProcessState, u: int, v: int) -> PairStats:
    _check_pair(u, v)
    n = state.n
    ru, rv = state.tilde_row(u), state.tilde_row(v)
    mu, mv = state.graph.row_mask(u), state.graph.row_mask(v)
    y_uv = int(ru[mv].sum())
    y_vu = int(rv[mu].sum())
    prod = ru * rv
    z = int(prod.sum() - prod[u] - prod[v])
    xt = 0 if state.graph.has_edge(u, v) else int(ru[v])
    root = math.sqrt(n)
    return PairStats(
        u, v, codegree(state.graph, u, v), xt, y_uv, y_vu, z, y_uv / root, y_vu / root, z / n
    )


def choose_monitored_pairs(n: int, v0: int, count: int = DEFAULT_MONITORED, seed: int = 0) -> list[tuple[int, int]]:
    """``count`` distinct pairs avoiding ``v0``, uniform without replacement."""
    m = n - 1
    total = m * (m - 1) // 2
    count = min(count, total)
    rng = np.random.default_rng(seed)
    picks = sorted(int(r) for r in rng.choice(total, size=count, replace=False))
    labels = [x for x in range(n) if x != v0]
    out = []
    for r in picks:
        # unrank r in the colex order of pairs (a < b) over m labels
        b = int((1 + math.isqrt(1 + 8 * r)) // 2)
        while b * (b - 1) // 2 > r:
            b -= 1
        while (b + 1) * b // 2 <= r:
            b += 1
        a = r - b * (b - 1) // 2
        out.append((labels[a], labels[b]))
    return out


@dataclass
class Checkpoint:
    i: int
    t: float
    n: int
    c: float
    d_min: float
    d_mean: float
    d_max: float
    f_min: float
    f_mean: float
    f_max: float
    x_max: int
    pairs: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    phase: int = 1

    @property
    def y_mean_scaled(self) -> float:
        vals = [p.y_uv_scaled for p in self.pairs] + [p.y_vu_scaled for p in self.pairs]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def z_mean_scaled(self) -> float:
        vals = [p.z_scaled for p in self.pairs]
        return float(np.mean(vals)) if vals else math.nan


def envelope_flags(
    params: OdeParams, t: float, D: np.ndarray, F: np.ndarray, x_max: int, pairs: Sequence[PairStats]
) -> dict:
    n = params.n
    d, f, y, z = closed_form(params.c, t)
    g1, g2 = envelopes(params, t)
    D, F = np.asarray(D, float) / math.sqrt(n), np.asarray(F, float) / n
    ys = np.array([p.y_uv_scaled for p in pairs] + [p.y_vu_scaled for p in pairs])
    zs = np.array([p.z_scaled for p in pairs])
    return {
        "a": bool(np.all(np.abs(D - d) <= g1)),
        "b": bool(np.all(np.abs(F - f) <= g1)),
        "c": bool(x_max <= x_bound(n)),
        "d": bool(np.all(np.abs(ys - y) <= g2)),
        "e": bool(np.all(np.abs(zs - z) <= g2)),
    }


def take_checkpoint(
    state: ProcessState,
    monitored: Sequence[tuple[int, int]],
    params: OdeParams,
    *,
    x_scope: str = "all",
) -> Checkpoint:
    """Snapshot of the scaled observables with envelope flags at ``t = i/n^2``.

    ``x_scope="all"`` takes the maximum codegree over every pair avoiding v0;
    ``"monitored"`` restricts it to the monitored pairs.
    """
    n, v0 = state.n, state.v0
    i = state.step_index
    t = i / (n * n)
    keep = np.ones(n, bool)
    keep[v0] = False
    D = state.graph.deg[keep]
    F = state.registry.f_count[keep]
    pairs = [pair_stats(state, u, v) for u, v in monitored]
    if x_scope == "all":
        x_max = int(K.max_codegree(state._adj, v0))
    else:
        x_max = max((p.X for p in pairs), default=0)
    root = math.sqrt(n)
    return Checkpoint(
        i=i,
        t=t,
        n=n,
        c=params.c,
        d_min=float(D.min()) / root,
        d_mean=float(D.mean()) / root,
        d_max=float(D.max()) / root,
        f_min=float(F.min()) / n,
        f_mean=float(F.mean()) / n,
        f_max=float(F.max()) / n,
        x_max=x_max,
        pairs=pairs,
        flags=envelope_flags(params, t, D, F, x_max, pairs),
        phase=1 if state.in_phase1 else 2,
    )


CHECKPOINT_COLUMNS = (
    "i", "t", "d_min", "d_mean", "d_max", "f_min", "f_mean", "f_max",
    "x_max", "y_mean_scaled", "z_mean_scaled",
    "flag_a", "flag_b", "flag_c", "flag_d", "flag_e",
)


def checkpoint_row(cp: Checkpoint) -> list:
    row = [cp.i, repr(cp.t)]
    for name in CHECKPOINT_COLUMNS[2:11]:
        v = getattr(cp, name)
        row.append(v if isinstance(v, int) else repr(float(v)))
    row.extend(int(cp.flags[k]) for k in "abcde")
    return row


def write_checkpoints_csv(path, checkpoints: Sequence[Checkpoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CHECKPOINT_COLUMNS)
        for cp in checkpoints:
            w.writerow(checkpoint_row(cp))


def read_checkpoints_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def default_checkpoint_interval(n: int) -> int:
    return -(-n * n // 100)
