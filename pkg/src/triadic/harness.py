"""Experiment drivers: single runs, scans, threshold bisection, exact oracle."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import _kernels as K
from ._hashing import derive_seed, oracle_key
from .exceptions import ConfigMismatch, InvalidInstance, InvalidProbability, NotPropagated, RefusedScale
from .observables import (
    Checkpoint,
    choose_monitored_pairs,
    default_checkpoint_interval,
    take_checkpoint,
    write_checkpoints_csv,
)
from .process import FinalReport, default_max_rounds, init_process, run_phase1, run_phase2, sprinkle_probability
from .topology import (
    CollapseCertificate,
    extract_certificate,
    greedy_collapse,
    verify_certificate,
    write_certificate,
)
from .trajectory import OdeParams, compare, ode_params, write_comparison_json, write_trajectory_csv

MODES = ("full", "sprinkle", "phase2-only")
ORACLE_CAP = 6


def _p_from(n: int, c: Optional[float], p: Optional[float]) -> float:
    if (c is None) == (p is None):
        raise ConfigMismatch("give exactly one of c and p")
    prob = c / math.sqrt(n) if p is None else p
    if not 0.0 <= prob <= 1.0:
        raise InvalidProbability(f"derived p={prob} outside [0, 1]")
    return float(prob)


@dataclass
class RunConfig:
    n: int
    c: Optional[float] = None
    p: Optional[float] = None
    seed: int = 0
    mode: str = "full"
    horizon: Optional[float] = None
    checkpoint_interval: Optional[int] = None
    monitored_pairs: int = 20
    max_rounds: Optional[int] = None
    out_dir: Optional[str] = None
    v0: int = 0
    x_scope: str = "all"
    history: bool = False
    checkpoints: bool = True

    def __post_init__(self):
        if self.n < 3:
            raise InvalidInstance(f"need n >= 3, got {self.n}")
        if self.mode not in MODES:
            raise ConfigMismatch(f"mode must be one of {MODES}, got {self.mode!r}")
        self.prob = _p_from(self.n, self.c, self.p)

    @property
    def c_value(self) -> float:
        return self.prob * math.sqrt(self.n)


@dataclass
class RunResult:
    config: RunConfig
    params: OdeParams
    report: FinalReport
    checkpoints: list
    comparison: object
    state: object = None


def phase1_budget(params: OdeParams) -> int:
    return int(math.floor(params.T * params.n * params.n))


def run_single(config: RunConfig, keep_state: bool = False) -> RunResult:
    n = config.n
    params = ode_params(config.c_value, n, T=config.horizon)
    state = init_process(n, config.prob, config.seed, config.v0, history="success" if config.history else "none")
    monitored = choose_monitored_pairs(n, config.v0, config.monitored_pairs, derive_seed(config.seed, "monitor"))
    checkpoints: list[Checkpoint] = []
    if config.mode != "phase2-only":
        every = config.checkpoint_interval or default_checkpoint_interval(n)
        run_phase1(
            state,
            phase1_budget(params),
            every=every if config.checkpoints else None,
            callback=lambda s: checkpoints.append(take_checkpoint(s, monitored, params, x_scope=config.x_scope)),
        )
    report = run_phase2(state, "sprinkling" if config.mode == "sprinkle" else "standard", config.max_rounds)
    report.mode = config.mode
    comparison = compare(checkpoints, params)
    result = RunResult(config, params, report, checkpoints, comparison, state if keep_state else None)
    if config.out_dir:
        write_run_artifacts(result, Path(config.out_dir))
    return result


def _report_dict(result: RunResult) -> dict:
    out = result.report.to_dict()
    out.update(n=result.config.n, p=result.config.prob, c=result.config.c_value, seed=result.config.seed)
    out["horizon_T"] = result.params.T
    out["K"] = result.params.K
    out["regime"] = result.params.regime
    return out


def write_run_artifacts(result: RunResult, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w") as fh:
            json.dump(_report_dict(result), fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_checkpoints_csv(out_dir / "checkpoints.csv", result.checkpoints)
        write_comparison_json(out_dir / "comparison.json", result.comparison)
        write_trajectory_csv(out_dir / "trajectory.csv", result.params, [cp.t for cp in result.checkpoints])
        with open(out_dir / "rounds.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "q_before", "sampled_count", "success_count", "new_edges", "q_after"])
            for k, r in enumerate(result.report.rounds, 1):
                w.writerow([k, r.q_before, r.sampled_count, r.success_count, r.new_edges, r.q_after])
    except OSError as exc:
        raise OSError(f"cannot write run artifacts under {out_dir}: {exc}") from exc


def cmd_run(config: RunConfig) -> RunResult:
    return run_single(config)


# trials ---------------------------------------------------------------------


def trial_seed(master: int, n: int, c: float, trial: int) -> int:
    return derive_seed(master, n, float(c), trial)


def order_seed_for(seed: int) -> int:
    """Order-stream seed used by default for an oracle seed."""
    return derive_seed(seed, "order")


@dataclass(frozen=True)
class TrialOutcome:
    edges: int
    steps: int
    rounds: int
    stalled: bool
    truncated: bool

    def propagated(self, n: int) -> bool:
        return self.edges == n * (n - 1) // 2


def _batch(args):
    n, p, seeds, orders, v0, steps, sprinkle, max_rounds = args
    return K.run_batch(
        n, p, np.asarray(seeds, np.uint64), np.asarray(orders, np.uint64), v0, steps, sprinkle, max_rounds
    )


def run_trials(
    n: int,
    p: float,
    seeds: Sequence[int],
    *,
    mode: str = "full",
    phase1_steps: Optional[int] = None,
    max_rounds: Optional[int] = None,
    workers: int = 1,
    v0: int = 0,
) -> np.ndarray:
    """Full runs without checkpoints; rows are (edges, steps, rounds, stalled, truncated).

    Rows come back in seed order whatever the worker count.
    """
    if mode not in MODES:
        raise ConfigMismatch(f"unknown mode {mode!r}")
    if phase1_steps is None:
        phase1_steps = phase1_budget(ode_params(p * math.sqrt(n), n))
    if mode == "phase2-only":
        phase1_steps = 0
    sprinkle = sprinkle_probability(n) if mode == "sprinkle" else -1.0
    max_rounds = default_max_rounds(n) if max_rounds is None else max_rounds
    seeds = [int(s) for s in seeds]
    orders = [order_seed_for(s) for s in seeds]
    if workers <= 1 or len(seeds) <= 1:
        return _batch((n, p, seeds, orders, v0, phase1_steps, sprinkle, max_rounds))
    chunks = np.array_split(np.arange(len(seeds)), min(workers, len(seeds)))
    jobs = [
        (n, p, [seeds[i] for i in idx], [orders[i] for i in idx], v0, phase1_steps, sprinkle, max_rounds)
        for idx in chunks
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_batch, jobs))
    return np.concatenate(parts, axis=0)


# scans ----------------------------------------------------------------------


@dataclass
class ScanConfig:
    n_values: Sequence[int]
    c_values: Sequence[float] = ()
    trials: int = 20
    workers: int = 1
    master_seed: int = 0
    c_lo: float = 0.2
    c_hi: float = 1.0
    tol: float = 0.05
    mode: str = "full"
    max_rounds: Optional[int] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigMismatch("trials must be >= 1")
        if not self.c_lo < self.c_hi:
            raise ConfigMismatch(f"need c_lo < c_hi, got ({self.c_lo}, {self.c_hi})")


def propagation_frequency(n: int, c: float, cfg: ScanConfig) -> dict:
    seeds = [trial_seed(cfg.master_seed, n, c, k) for k in range(cfg.trials)]
    # uncensored by default: every round without a new edge empties the registry
    max_rounds = n * (n - 1) // 2 + 1 if cfg.max_rounds is None else cfg.max_rounds
    rows = run_trials(n, c / math.sqrt(n), seeds, mode=cfg.mode, max_rounds=max_rounds, workers=cfg.workers)
    full = n * (n - 1) // 2
    hits = int(np.sum(rows[:, 0] == full))
    return {
        "n": n,
        "c": c,
        "trials": cfg.trials,
        "propagated": hits,
        "freq": hits / cfg.trials,
        "mean_edges": float(rows[:, 0].mean()),
        "mean_rounds": float(rows[:, 2].mean()),
    }


FREQUENCY_COLUMNS = ("n", "c", "trials", "propagated", "freq", "mean_edges", "mean_rounds")


def write_frequency_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FREQUENCY_COLUMNS)
        for r in rows:
            w.writerow([r[k] if isinstance(r[k], int) else repr(float(r[k])) for k in FREQUENCY_COLUMNS])


def cmd_scan(cfg: ScanConfig) -> list[dict]:
    rows = [propagation_frequency(n, float(c), cfg) for n in cfg.n_values for c in cfg.c_values]
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        write_frequency_csv(Path(cfg.out_dir) / "frequency.csv", rows)
    return rows


@dataclass
class ThresholdEstimate:
    n: int
    c_hat: Optional[float]
    bracket: tuple
    width: float
    trials: int
    probes: list = field(default_factory=list)
    bracket_failure: bool = False
    note: str = "the asymptotic threshold is c = 1/2"

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_threshold(n: int, cfg: ScanConfig) -> ThresholdEstimate:
    """Bisection on c for the point where propagation frequency crosses 1/2."""
    lo, hi = float(cfg.c_lo), float(cfg.c_hi)
    probes = []

    def probe(c):
        freq = propagation_frequency(n, c, cfg)["freq"]
        probes.append({"c": c, "freq": freq})
        return freq

    f_lo, f_hi = probe(lo), probe(hi)
    if f_lo > 0.5 or f_hi < 0.5:
        return ThresholdEstimate(n, None, (lo, hi), hi - lo, cfg.trials, probes, True)
    while hi - lo > cfg.tol:
        mid = (lo + hi) / 2
        if probe(mid) >= 0.5:
            hi = mid
        else:
            lo = mid
    return ThresholdEstimate(n, (lo + hi) / 2, (lo, hi), hi - lo, cfg.trials, probes)


def cmd_threshold(cfg: ScanConfig) -> list[ThresholdEstimate]:
    out = [estimate_threshold(int(n), cfg) for n in cfg.n_values]
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(cfg.out_dir) / "threshold.json", "w") as fh:
            json.dump([e.to_dict() for e in out], fh, indent=2, sort_keys=True)
            fh.write("\n")
    return out


# exact oracle ---------------------------------------------------------------


@njit(cache=True)
def _closure_counts(n, v0, tri_edges, n_edges):
    # tri_edges[t] = the three pair indices of triple t
    m = tri_edges.shape[0]
    counts = np.zeros(m + 1, np.int64)
    full = (1 << n_edges) - 1
    star_mask = 0
    pair_index = np.full((n, n), -1, np.int64)
    k = 0
    for a in range(n):
        for b in range(a + 1, n):
            pair_index[a, b] = k
            pair_index[b, a] = k
            k += 1
    for u in range(n):
        if u != v0:
            star_mask |= 1 << pair_index[u, v0]
    for h in range(1 << m):
        edges = star_mask
        changed = True
        while changed:
            changed = False
            for t in range(m):
                if (h >> t) & 1:
                    e0, e1, e2 = tri_edges[t, 0], tri_edges[t, 1], tri_edges[t, 2]
                    have = ((edges >> e0) & 1) + ((edges >> e1) & 1) + ((edges >> e2) & 1)
                    if have == 2:
                        edges |= (1 << e0) | (1 << e1) | (1 << e2)
                        changed = True
        if edges == full:
            size = 0
            x = h
            while x:
                x &= x - 1
                size += 1
            counts[size] += 1
    return counts


@dataclass
class OracleResult:
    n: int
    p: object
    probability: object
    counts: list

    def to_dict(self) -> dict:
        return {"n": self.n, "p": float(self.p), "probability": float(self.probability), "counts": self.counts}


def propagation_polynomial(n: int, v0: int = 0) -> list[int]:
    """``counts[k]``: hypergraphs with ``k`` triples whose closure from the star is complete."""
    if n > ORACLE_CAP:
        raise RefusedScale(f"exact enumeration refused for n={n} > {ORACLE_CAP}")
    if n < 3:
        raise InvalidInstance(f"need n >= 3, got {n}")
    pairs = {pr: k for k, pr in enumerate(combinations(range(n), 2))}
    tri = np.array(
        [[pairs[(a, b)], pairs[(a, c)], pairs[(b, c)]] for a, b, c in combinations(range(n), 3)], np.int64
    )
    return [int(x) for x in _closure_counts(n, v0, tri, len(pairs))]


def cmd_oracle(n: int, p) -> OracleResult:
    """Exact propagation probability by enumerating every hypergraph on ``[n]``."""
    if not 0 <= p <= 1:
        raise InvalidProbability(f"p must lie in [0, 1], got {p}")
    counts = propagation_polynomial(n)
    m = len(counts) - 1
    q = 1 - p
    prob = sum(cnt * p**k * q ** (m - k) for k, cnt in enumerate(counts) if cnt)
    if not isinstance(p, Fraction):
        prob = float(prob)
    return OracleResult(n, p, prob, counts)


# collapse -------------------------------------------------------------------


@dataclass
class CollapseReport:
    n: int
    p: float
    seed: int
    propagated: bool
    verified: Optional[bool] = None
    failed_step: Optional[int] = None
    is_hypertree: Optional[bool] = None
    spanning: Optional[bool] = None
    collapses: Optional[int] = None
    faces: Optional[int] = None
    oracle_coherent: Optional[bool] = None
    certificate: Optional[CollapseCertificate] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("certificate")
        return out


def cmd_collapse(
    n: int,
    seed: int,
    *,
    c: Optional[float] = None,
    p: Optional[float] = None,
    mode: str = "full",
    max_rounds: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> CollapseReport:
    cfg = RunConfig(n=n, c=c, p=p, seed=seed, mode=mode, max_rounds=max_rounds, monitored_pairs=0, history=True,
                    checkpoints=False)
    res = run_single(cfg, keep_state=True)
    state = res.state
    report = CollapseReport(n, cfg.prob, seed, res.report.propagated)
    if res.report.propagated:
        cert = extract_certificate(state.history(), n, cfg.v0)
        check = verify_certificate(cert)
        result = greedy_collapse(cert.complex())
        report.certificate = cert
        report.verified = check.ok
        report.failed_step = check.failed_step
        report.is_hypertree = result.is_hypertree
        report.spanning = result.spanning
        report.collapses = len(result.sequence)
        report.faces = len(cert.steps)
        # sprinkled rounds draw outside the native oracle
        if mode != "sprinkle":
            report.oracle_coherent = all(state.oracle.outcome(f) for f in cert.faces())
    if out_dir:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        if report.certificate is not None:
            write_certificate(d / "certificate.txt", report.certificate)
        with open(d / "collapse.json", "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
