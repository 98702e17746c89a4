"""Subjective and true detection probability, mean time to find, and pointwise
comparison of two plans' true detection curves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    Allocation,
    ExponentialDetection,
    ExponentialPerLocation,
    Scenario,
    ScenarioError,
    SearchPlan,
)
from .planner import SearchPlanner

TAIL_TOL = 1e-8
HORIZON_CAP = 1e6
STRICT_TOL = 1e-12
GRID_MISS = 1e-6
CHUNK = 256


class MissingTrueLocation(ScenarioError):
    pass


class CurveError(ValueError):
    """A probability curve decreased, which upstream contracts forbid."""


def geometric_grid(t_min: float = 1e-3, t_max: float = 1e3, n: int = 64) -> np.ndarray:
    return np.geomspace(t_min, t_max, n)


DEFAULT_TIMES = geometric_grid()


def _check_support(s: Scenario, f: Allocation):
    if f.cells is not s.cells and len(f.cells) != len(s.cells):
        raise ScenarioError("allocation is not defined on the scenario's cells")


def subjective_probability(s: Scenario, f: Allocation) -> float:
    """Expected detection probability under the scenario's own distribution."""
    _check_support(s, f)
    cells = s.cells
    d = cells.detection.d(f.efforts)
    return float(math.fsum(d * cells.mass))


def detect_at(detection, x0, y) -> np.ndarray:
    """d(x0, y) for an array of efforts at one location."""
    y = np.asarray(y, dtype=float)
    if isinstance(detection, ExponentialDetection):
        return -np.expm1(-detection.rate * y)
    if isinstance(detection, ExponentialPerLocation):
        return -np.expm1(-detection.rate_at(x0) * y)
    xs = np.asarray([x0] * max(1, y.size))
    return np.asarray(detection.d(xs, np.atleast_1d(y)), dtype=float).reshape(y.shape)


def true_probability(s: Scenario, f: Allocation) -> float:
    """Detection probability given the target really is at ``s.true_location``."""
    if s.true_location is None:
        raise MissingTrueLocation("scenario has no true location")
    i = f.cells.locate(s.true_location)
    if i is None:
        return 0.0
    y = float(f.efforts[i])
    if y == 0.0:
        return 0.0
    return float(detect_at(s.detection, s.true_location, y))


# --------------------------------------------------------------------------
# Curves over time
# --------------------------------------------------------------------------


def true_curve(s: Scenario, planner: SearchPlanner) -> Callable[[np.ndarray], np.ndarray]:
    """t -> P#[plan(., t)], vectorized over t.

    ``planner`` may be built for a different distribution than ``s``; the true
    location and detection function always come from ``s``.
    """
    if s.true_location is None:
        raise MissingTrueLocation("scenario has no true location")
    idx = planner.cells.locate(s.true_location)
    x0 = s.true_location

    def curve(t):
        t = np.asarray(t, dtype=float)
        if idx is None:
            return np.zeros(t.shape)
        budgets = np.asarray(planner.scenario.effort(t), dtype=float)
        y = planner.efforts_for_budgets(budgets, index=idx)
        return detect_at(s.detection, x0, y)

    return curve


def subjective_curve(planner: SearchPlanner) -> Callable[[np.ndarray], np.ndarray]:
    cells = planner.cells
    mass = cells.mass
    d = cells.detection.d

    def curve(t):
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        out = np.empty(flat.size)
        budgets = np.atleast_1d(np.asarray(planner.scenario.effort(flat), dtype=float))
        for lo in range(0, flat.size, CHUNK):
            eff = planner.efforts_for_budgets(budgets[lo : lo + CHUNK])
            out[lo : lo + CHUNK] = [float(np.dot(d(row), mass)) for row in eff]
        return out.reshape(t.shape)

    return curve


# --------------------------------------------------------------------------
# Mean time to find
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanTime:
    """Integral of 1 - P over [0, horizon].

    ``converged`` means the miss probability at the horizon fell below the
    tail tolerance; ``tail`` then bounds what was cut off, as (1 - P(T)) T.
    Otherwise the mean time diverged (at least to the cap) and ``value`` is
    only the partial integral.
    """

    value: float
    converged: bool
    horizon: float
    tail: float | None = None

    def __str__(self):
        return f"{self.value:.9g}" if self.converged else "diverged"


def _vectorize(prob):
    def f(x):
        x = np.asarray(x, dtype=float)
        out = None
        if x.size > 1:
            try:
                out = prob(x)
            except TypeError:
                pass
        if out is None or np.shape(out) != x.shape:
            out = np.array([float(prob(float(v))) for v in x.ravel()]).reshape(x.shape)
        return np.asarray(out, dtype=float)

    return f


def _segment(f, a: float, b: float, max_level: int = 17) -> float:
    """Trapezoid on [a, b] with interval doubling and a Richardson correction."""
    n = 64
    x = np.linspace(a, b, n + 1)
    p = f(x)
    _check_monotone(p)
    h = (b - a) / n
    trap = h * (np.sum(1 - p) - 0.5 * (2 - p[0] - p[-1]))
    best = None
    tol = 1e-11 * (b - a)
    for _ in range(max_level - 6):
        mid = x[:-1] + h / 2
        pm = f(mid)
        merged_x = np.empty(x.size + mid.size)
        merged_p = np.empty_like(merged_x)
        merged_x[0::2], merged_x[1::2] = x, mid
        merged_p[0::2], merged_p[1::2] = p, pm
        x, p = merged_x, merged_p
        _check_monotone(p)
        h /= 2
        new = 0.5 * trap + h * np.sum(1 - pm)
        rich = new + (new - trap) / 3
        trap = new
        if best is not None and abs(rich - best) <= tol + 1e-10 * abs(rich):
            return float(rich)
        best = rich
    return float(best)


def _check_monotone(p):
    if np.any(np.diff(p) < -1e-12):
        raise CurveError("probability curve decreases; plans must be monotone in time")


def _segments(horizon: float):
    edges = [0.0]
    t = min(1.0, horizon)
    while True:
        edges.append(t)
        if t >= horizon:
            return edges
        t = min(2 * t, horizon)


def truncated_mean_time(prob, horizon: float) -> float:
    """Integral of 1 - P(t) over [0, horizon]."""
    f = _vectorize(prob)
    edges = _segments(horizon)
    return math.fsum(_segment(f, a, b) for a, b in zip(edges[:-1], edges[1:]))


def cumulative_mean_time(prob, times) -> np.ndarray:
    """Integral of 1 - P over [0, t] at each of the increasing ``times``."""
    times = np.asarray(times, dtype=float)
    f = _vectorize(prob)
    out = np.empty(times.size)
    acc, prev = 0.0, 0.0
    for i, t in enumerate(times):
        if t < prev:
            raise ValueError("times must be non-decreasing")
        if t > prev:
            acc += truncated_mean_time(f, t) if prev == 0.0 else _segment(f, prev, t)
        out[i] = acc
        prev = t
    return out


def mean_time(prob, tail_tol: float = TAIL_TOL, cap: float = HORIZON_CAP) -> MeanTime:
    """Mean time to detection, integral of 1 - P(t), for a non-decreasing P.

    The horizon doubles from 1 until the miss probability drops below
    ``tail_tol``; reaching ``cap`` first reports divergence.
    """
    f = _vectorize(prob)
    total = 0.0
    a, b = 0.0, 1.0
    while True:
        total += _segment(f, a, b)
        miss = 1.0 - float(f(np.array([b]))[0])
        if miss < tail_tol:
            return MeanTime(total, True, b, miss * b)
        if b >= cap:
            return MeanTime(total, False, b)
        a, b = b, min(2 * b, cap)


# --------------------------------------------------------------------------
# Reports and comparisons
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvaluationReport:
    times: np.ndarray
    budgets: np.ndarray
    subjective: np.ndarray
    true: np.ndarray | None
    subjective_mean: MeanTime
    true_mean: MeanTime | None

    def rows(self):
        for i, t in enumerate(self.times):
            yield (
                float(t),
                float(self.budgets[i]),
                float(self.subjective[i]),
                None if self.true is None else float(self.true[i]),
            )


def evaluate(s: Scenario, times=None, planner: SearchPlanner | None = None,
             subjective_only: bool = False) -> EvaluationReport:
    planner = planner or SearchPlanner(s)
    times = DEFAULT_TIMES if times is None else np.asarray(times, dtype=float)
    subj = subjective_curve(planner)
    budgets = np.atleast_1d(np.asarray(s.effort(times), dtype=float))
    p_true = mu_true = None
    if not subjective_only:
        tc = true_curve(s, planner)
        p_true = tc(times)
        mu_true = mean_time(tc)
    return EvaluationReport(
        times=times,
        budgets=budgets,
        subjective=subj(times),
        true=p_true,
        subjective_mean=mean_time(subj),
        true_mean=mu_true,
    )


def verification_grid(s: Scenario, planner: SearchPlanner, n: int = 64,
                      t_min: float = 1e-3, cap: float = 1e3,
                      miss_floor: float = GRID_MISS) -> np.ndarray:
    """Geometric grid on [t_min, T] for dominance checks.

    T is the last power of two at which ``planner``'s true miss probability is
    still at least ``miss_floor`` (at most ``cap``). Past that point both
    curves sit within rounding of 1 and strict comparisons carry no signal.
    """
    curve = true_curve(s, planner)

    def miss(T):
        return 1.0 - float(curve(np.array([T]))[0])

    T = 1.0
    if miss(T) < miss_floor:
        while T / 2 > 10 * t_min and miss(T) < miss_floor:
            T /= 2
    else:
        while 2 * T <= cap and miss(2 * T) >= miss_floor:
            T *= 2
    return geometric_grid(t_min, T, n)


@dataclass(frozen=True)
class PlanComparison:
    verdict: str
    times: np.ndarray
    p_a: np.ndarray
    p_b: np.ndarray
    mu_a: float
    mu_b: float
    horizon: float
    horizon_dependent: bool

    @property
    def delta_mu(self) -> float:
        return self.mu_a - self.mu_b

    @property
    def strict(self) -> bool:
        return self.verdict == "strictly-dominates"


def dominance_verdict(p_a, p_b, tol: float = STRICT_TOL) -> str:
    p_a, p_b = np.asarray(p_a), np.asarray(p_b)
    if np.all(p_a > p_b + tol):
        return "strictly-dominates"
    if np.all(p_a >= p_b - tol):
        return "dominates-with-ties"
    if np.all(p_b >= p_a - tol):
        return "dominated"
    return "incomparable"


def compare_plans(s: Scenario, plan_a, plan_b, times=None) -> PlanComparison:
    """Compare true detection of two plans (planners or gridded plans) at ``x0``."""
    if isinstance(plan_a, SearchPlan) or isinstance(plan_b, SearchPlan):
        return _compare_gridded(s, plan_a, plan_b, times)
    # default grid stops before plan_b saturates, see verification_grid
    times = verification_grid(s, plan_b) if times is None else np.asarray(times, dtype=float)
    ca, cb = true_curve(s, plan_a), true_curve(s, plan_b)
    pa, pb = ca(times), cb(times)
    ma, mb = mean_time(ca), mean_time(cb)
    horizon = max(ma.horizon, mb.horizon)
    mu_a = ma.value if ma.horizon == horizon else truncated_mean_time(ca, horizon)
    mu_b = mb.value if mb.horizon == horizon else truncated_mean_time(cb, horizon)
    return PlanComparison(
        verdict=dominance_verdict(pa, pb),
        times=times,
        p_a=pa,
        p_b=pb,
        mu_a=mu_a,
        mu_b=mu_b,
        horizon=horizon,
        horizon_dependent=not (ma.converged or mb.converged),
    )


def _compare_gridded(s, plan_a, plan_b, times):
    if not (isinstance(plan_a, SearchPlan) and isinstance(plan_b, SearchPlan)):
        raise TypeError("compare either two planners or two gridded plans")
    if plan_a.times.shape != plan_b.times.shape or not np.allclose(plan_a.times, plan_b.times):
        raise ValueError("plans are on different time grids")
    if times is not None and not np.allclose(np.asarray(times, dtype=float), plan_a.times):
        raise ValueError("requested grid does not match the plans' grid")
    x0 = s.true_location
    if x0 is None:
        raise MissingTrueLocation("scenario has no true location")
    pa = detect_at(s.detection, x0, plan_a.effort_at(x0))
    pb = detect_at(s.detection, x0, plan_b.effort_at(x0))
    t = plan_a.times
    mu_a = float(np.trapezoid(1 - pa, t)) if t.size > 1 else 0.0
    mu_b = float(np.trapezoid(1 - pb, t)) if t.size > 1 else 0.0
    return PlanComparison(dominance_verdict(pa, pb), t, pa, pb, mu_a, mu_b,
                          float(t[-1]) if t.size else 0.0, True)
