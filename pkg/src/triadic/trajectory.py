"""Closed-form trajectories of the scaled observables and their error envelopes.

With ``p = c / sqrt(n)`` and ``t = i / n**2``::

    d(t) = 2ct        f(t) = 1 - 2t + 4c^2 t^2
    y(t) = d(t) f(t)  z(t) = f(t)^2

Envelopes are ``g1 = exp(K t) n^(-1/6)`` and ``g2 = (1 + d) g1``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import AbortNearSingularity, ConfigMismatch, HorizonTooLate, NoRoot

K_PITCH = 1e-3
# f values this close to zero count as touching the root
F_FLOOR = 1e-12
CRITICAL_EPS = 0.05
X_BOUND_FACTOR = 50.0


def closed_form(c, t):
    """Return ``(d, f, y, z)`` at time ``t``; works on floats, arrays and Fractions."""
    d = 2 * c * t
    f = 1 - 2 * t + 4 * c * c * t * t
    return d, f, d * f, f * f


def closed_form_derivatives(c, t):
    d, f, y, z = closed_form(c, t)
    dd = 2 * c + 0 * t
    df = -2 + 8 * c * c * t
    return (d, f, y, z), (dd, df, dd * f + d * df, 2 * f * df)


def ode_rhs(c, d, f, y, z):
    return (
        2 * c,
        4 * c * d - 2,
        (2 / f) * ((2 * c * d - 1) * y + c * z),
        (4 / f) * (2 * c * y * f - z),
    )


def _regime(c: float) -> str:
    if math.isclose(c, 0.5, rel_tol=0, abs_tol=1e-12):
        return "critical"
    return "subcritical" if c < 0.5 else "supercritical"


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    return Fraction(repr(float(c)))


def _rational_sqrt(q: Fraction) -> Optional[Fraction]:
    if q < 0:
        return None
    a, b = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if a * a == q.numerator and b * b == q.denominator:
        return Fraction(a, b)
    return None


def f_root_T0(c):
    """Smallest positive root of ``f`` for ``0 < c <= 1/2``.

    Exact when ``1 - 4c^2`` is a rational square (``c`` taken as its decimal
    literal for floats); a Fraction argument gives a Fraction result.
    """
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    if c > 0.5:
        raise NoRoot(f"f has no real root for c={c} > 1/2")
    q = _as_fraction(c)
    s = _rational_sqrt(1 - 4 * q * q)
    if s is not None:
        root = (1 - s) / (4 * q * q)
        return root if isinstance(c, Fraction) else float(root)
    # rationalised form, stable as c -> 0
    return 1.0 / (1.0 + math.sqrt(1.0 - 4.0 * float(c) ** 2))


def _maximand(c: float, t):
    d, f, _, _ = closed_form(c, t)
    return 1 + d / f + 1 / f


def compute_K(c: float, T: float, pitch: float = K_PITCH) -> float:
    """``100 * max_{[0, T]} (1 + d/f + 1/f)`` on a grid of pitch ``pitch``.

    The interior critical point of ``(1 + d)/f`` (a root of
    ``4c^3 t^2 + 4c^2 t - (1 + c) = 0``) and the argmin of ``f`` are added to
    the grid when they fall inside ``[0, T]``.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    grid = np.linspace(0.0, T, max(2, int(math.ceil(T / pitch)) + 1))
    extra = []
    if c > 0:
        extra.append(1.0 / (4 * c * c))
        a, b, k = 4 * c**3, 4 * c * c, -(1 + c)
        extra.append((-b + math.sqrt(b * b - 4 * a * k)) / (2 * a))
    extra = [t for t in extra if 0 <= t <= T]
    grid = np.concatenate([grid, extra])
    _, f, _, _ = closed_form(c, grid)
    if np.any(f <= F_FLOOR):
        raise HorizonTooLate(f"f <= 0 inside [0, {T}] for c={c}")
    return float(100.0 * np.max(_maximand(c, grid)))


@dataclass(frozen=True)
class OdeParams:
    c: float
    n: int
    T: float
    K: float
    regime: str = ""
    delta: Optional[float] = None
    eps: Optional[float] = None

    def __post_init__(self):
        if not self.regime:
            object.__setattr__(self, "regime", _regime(self.c))


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    d: float
    f: float
    y: float
    z: float
    g1: float
    g2: float


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def envelopes(params: OdeParams, t: float) -> tuple[float, float]:
    g1 = _safe_exp(params.K * t) * params.n ** (-1.0 / 6.0)
    d = 2 * params.c * t
    return g1, (1 + d) * g1


def trajectory_point(params: OdeParams, t: float) -> TrajectoryPoint:
    d, f, y, z = closed_form(params.c, t)
    g1, g2 = envelopes(params, t)
    return TrajectoryPoint(t, d, f, y, z, g1, g2)


def _subcritical_T(c: float, eps: float) -> float:
    # smaller root of 4c^2 T^2 - 2T + (1 - eps/2) = 0, rationalised
    rhs = 1.0 - eps / 2.0
    disc = 1.0 - 4.0 * c * c * rhs
    return rhs / (1.0 + math.sqrt(max(disc, 0.0)))


def subcritical_constants(c: float, delta: Optional[float] = None, eps: Optional[float] = None):
    """Default ``(T0, delta, eps)`` for ``c <= 1/2``."""
    T0 = 0.5 if c == 0 else f_root_T0(c)
    if delta is None:
        delta = (1.0 - 2.0 * c * T0) / 2.0
    if eps is None:
        eps = min(delta * (1 - 2 * c) / c, 1.0) / 2.0 if c > 0 else 0.5
        if eps <= 0:
            eps = CRITICAL_EPS
    return T0, delta, eps


def select_phase1_horizon(
    c: float, n: int, *, delta: Optional[float] = None, eps: Optional[float] = None
) -> tuple[float, float]:
    """Phase-1 stopping time ``T`` and envelope constant ``K``."""
    params = ode_params(c, n, delta=delta, eps=eps)
    return params.T, params.K


def ode_params(
    c: float,
    n: int,
    *,
    T: Optional[float] = None,
    delta: Optional[float] = None,
    eps: Optional[float] = None,
) -> OdeParams:
    """Parameters for ``(c, n)`` with the default horizon unless ``T`` is given."""
    if c < 0:
        raise ValueError(f"c must be non-negative, got {c}")
    regime = _regime(c)
    if regime == "supercritical":
        horizon = math.sqrt(math.log(n))
    else:
        _, delta, eps = subcritical_constants(c, delta, eps)
        horizon = _subcritical_T(c, eps)
    if T is not None:
        horizon = float(T)
    return OdeParams(c, n, horizon, compute_K(c, horizon), regime, delta, eps)


def verify_ode(
    c: float,
    t_grid: Sequence[float],
    solution: Optional[Callable] = None,
) -> float:
    """Maximum absolute residual of the four ODEs along ``t_grid``.

    ``solution(c, t)`` must return ``((d, f, y, z), (d', f', y', z'))``; the
    closed forms with their exact derivatives are the default.
    """
    solution = solution or closed_form_derivatives
    t = np.asarray(t_grid, dtype=float)
    (d, f, y, z), derivs = solution(c, t)
    if np.any(np.asarray(f) <= 0):
        raise HorizonTooLate("f <= 0 on the requested grid")
    rhs = ode_rhs(c, d, f, y, z)
    return float(max(np.max(np.abs(np.asarray(lhs) - np.asarray(r))) for lhs, r in zip(derivs, rhs)))


def rk4_integrate(c: float, t_end: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Classical fixed-step RK4 from ``(0, 1, 0, 1)``; returns ``(t, states)``."""
    steps = int(round(t_end / h))
    ts = np.empty(steps + 1)
    out = np.empty((steps + 1, 4))
    state = (0.0, 1.0, 0.0, 1.0)
    ts[0] = 0.0
    out[0] = state

    def rhs(s):
        if s[1] <= 10 * h:
            raise AbortNearSingularity(f"f={s[1]:.3g} within 10h of the singularity")
        return ode_rhs(c, *s)

    for k in range(steps):
        k1 = rhs(state)
        k2 = rhs(tuple(s + 0.5 * h * v for s, v in zip(state, k1)))
        k3 = rhs(tuple(s + 0.5 * h * v for s, v in zip(state, k2)))
        k4 = rhs(tuple(s + h * v for s, v in zip(state, k3)))
        state = tuple(s + h / 6.0 * (a + 2 * b + 2 * e + g) for s, a, b, e, g in zip(state, k1, k2, k3, k4))
        ts[k + 1] = (k + 1) * h
        out[k + 1] = state
    return ts, out


@dataclass
class ComparisonReport:
    c: float
    n: int
    checkpoints: int
    max_abs_dev: dict = field(default_factory=dict)
    max_rel_dev: dict = field(default_factory=dict)
    pass_rate: dict = field(default_factory=dict)
    first_failure_t: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


BOUNDS = ("a", "b", "c", "d", "e")


def compare(checkpoints: Sequence, params: OdeParams) -> ComparisonReport:
    """Deviation of checkpoints from the closed forms plus envelope pass rates."""
    for cp in checkpoints:
        if cp.n != params.n or not math.isclose(cp.c, params.c, rel_tol=1e-12, abs_tol=1e-12):
            raise ConfigMismatch(f"checkpoint (n={cp.n}, c={cp.c}) vs params (n={params.n}, c={params.c})")
    absd = {k: 0.0 for k in "dfyz"}
    reld = {k: 0.0 for k in "dfyz"}
    passed = {k: 0 for k in BOUNDS}
    first = None
    for cp in checkpoints:
        d, f, y, z = closed_form(params.c, cp.t)
        obs = {
            "d": [cp.d_min, cp.d_max],
            "f": [cp.f_min, cp.f_max],
            "y": [ps.y_uv_scaled for ps in cp.pairs] + [ps.y_vu_scaled for ps in cp.pairs],
            "z": [ps.z_scaled for ps in cp.pairs],
        }
        ref = {"d": d, "f": f, "y": y, "z": z}
        for k, values in obs.items():
            for v in values:
                dev = abs(v - ref[k])
                absd[k] = max(absd[k], dev)
                if ref[k] != 0:
                    reld[k] = max(reld[k], dev / abs(ref[k]))
        flags = cp.flags
        for k in BOUNDS:
            passed[k] += bool(flags[k])
        if first is None and not all(flags.values()):
            first = cp.t
    m = len(checkpoints)
    rates = {k: (passed[k] / m if m else 1.0) for k in BOUNDS}
    return ComparisonReport(params.c, params.n, m, absd, reld, rates, first)


def write_comparison_json(path, report: ComparisonReport) -> None:
    with open(path, "w") as fh:
        fh.write(report.to_json() + "\n")


TRAJECTORY_COLUMNS = ("t", "d", "f", "y", "z", "g1", "g2")


def write_trajectory_csv(path, params: OdeParams, t_grid: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for t in t_grid:
            pt = trajectory_point(params, float(t))
            w.writerow([repr(float(getattr(pt, k))) for k in TRAJECTORY_COLUMNS])


def subcritical_round_cap(c: float, n: int) -> float:
    """``4 log_{1/(2c)} n``: the phase-2 round budget below the threshold."""
    if not 0 < c < 0.5:
        raise ValueError("round cap is defined for 0 < c < 1/2")
    return 4.0 * math.log(n) / math.log(1.0 / (2.0 * c))


def subcritical_edge_bound(n: int) -> float:
    return n**1.5 / 2.0


def sprinkling_round_bound(n: int) -> int:
    return math.ceil(3 * math.log2(math.log2(n))) + 3


def x_bound(n: int) -> float:
    return X_BOUND_FACTOR * math.log(n)
