"""Alternative target distributions whose optimal plans detect the real target
sooner: support extension for misspecified models, mass swap and mass
concentration for discrete models, and density increases for continuous ones.

Every construction is checked by planning both distributions and comparing
true detection curves pointwise on a sampled time grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import (
    MIN_MASS,
    CircularNormal,
    DiscreteDistribution,
    ExponentialPerLocation,
    GridDensity,
    Scenario,
    ScenarioError,
    Uniform1D,
)
from .evaluation import PlanComparison, compare_plans, geometric_grid, verification_grid
from .planner import SearchPlanner

IMPROVED = "improved"
NO_GUARANTEE = "no-improvement-guaranteed"
NOT_VERIFIED = "not-verified"


class ImprovementError(ScenarioError):
    pass


@dataclass(frozen=True)
class ImprovementResult:
    outcome: str
    construction: str | None
    original: Scenario
    scenario: Scenario | None = None
    comparison: PlanComparison | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def verified(self) -> bool:
        return self.outcome == IMPROVED

    @property
    def new_distribution(self):
        return None if self.scenario is None else self.scenario.distribution

    @property
    def times(self):
        return None if self.comparison is None else self.comparison.times


def _require_x0(s: Scenario):
    if s.true_location is None:
        raise ImprovementError("improvement needs a true location")


def _verify(s: Scenario, base: SearchPlanner, candidate: Scenario, times) -> PlanComparison:
    return compare_plans(s, SearchPlanner(candidate), base, times)


def _is_improvement(cmp: PlanComparison) -> bool:
    return cmp.strict and cmp.delta_mu < 0


# --------------------------------------------------------------------------
# Misspecified models
# --------------------------------------------------------------------------


def repair_misspecified(s: Scenario, epsilon: float = 0.01, times=None) -> ImprovementResult:
    """Extend the support to the true location, giving it mass ``epsilon``
    taken proportionally from every other location."""
    _require_x0(s)
    if s.true_location_in_support():
        raise ImprovementError("true location is already in the support")
    if not MIN_MASS <= epsilon < 1:
        raise ImprovementError(f"epsilon must lie in [{MIN_MASS:g}, 1), got {epsilon}")
    x0 = s.true_location
    if s.discrete:
        if isinstance(x0, bool) or not isinstance(x0, (int, np.integer)) or x0 < 1:
            raise ImprovementError(f"true location {x0!r} is not a valid cell id")
        det = s.detection
        if isinstance(det, ExponentialPerLocation) and det.rates is not None and x0 not in det.rates:
            raise ImprovementError(f"no detection rate known for cell {x0}")
        masses = {c: m * (1 - epsilon) for c, m in s.distribution.masses.items()}
        masses[int(x0)] = epsilon
        area = None if s.area is None else frozenset(set(s.area) | {int(x0)})
        new = s.replace(distribution=DiscreteDistribution(masses), area=area)
    else:
        new = s.replace(distribution=_grid_with_cell(s.grid, x0, epsilon), area=None)
    base = SearchPlanner(s)
    planner = SearchPlanner(new)
    t_fund = funding_time(new, planner)
    diag = {"epsilon": epsilon, "funding_time": t_fund}
    if times is None:
        if not np.isfinite(t_fund):
            return ImprovementResult(NOT_VERIFIED, "support-extension", s, new, diagnostics=diag)
        grid = verification_grid(s, planner)
        lo = max(grid[0], 1.01 * t_fund)
        times = geometric_grid(lo, max(grid[-1], 2 * lo), grid.size)
    times = np.asarray(times, dtype=float)
    cmp = compare_plans(s, planner, base, times)
    ok = bool(np.all(cmp.p_a > 0) and np.all(cmp.p_b == 0))
    return ImprovementResult(IMPROVED if ok else NOT_VERIFIED, "support-extension", s, new, cmp, diag)


def funding_time(s: Scenario, planner: SearchPlanner, cap: float = 1e6) -> float:
    """First time at which ``planner`` puts effort on ``s.true_location``.

    Zero if funded from the start, inf if not funded before ``cap``.
    """
    i = planner.cells.locate(s.true_location)
    if i is None:
        return np.inf
    # budget at which the common rate falls to this cell's initial rate
    k_star = planner.curve(float(planner.curve.initial_rates[i]))
    E = s.effort
    if float(E(0.0)) > k_star:
        return 0.0
    if float(E(cap)) <= k_star:
        return np.inf
    lo, hi = 0.0, cap
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(E(mid)) > k_star:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


def _grid_with_cell(grid: GridDensity, x0, epsilon: float) -> GridDensity:
    pt = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if pt.shape != (grid.dim,):
        raise ImprovementError(f"true location {x0!r} has the wrong dimension")
    width = np.median(grid.upper - grid.lower, axis=0)
    if grid.coords == "polar":
        pt[1] %= 2 * np.pi
        width[1] = min(width[1], 2 * np.pi - pt[1])
    for _ in range(60):
        lo, hi = pt, pt + width
        overlap = np.all((grid.lower < hi) & (lo < grid.upper), axis=1)
        if not overlap.any():
            break
        width = width / 2
    else:
        raise ImprovementError("could not fit a new cell at the true location")
    new_area = GridDensity(lo[None, :], hi[None, :], [1.0], grid.coords).areas[0]
    density = np.concatenate([grid.density * (1 - epsilon), [epsilon / new_area]])
    labels = None if grid.labels is None else grid.labels + ("x0",)
    return GridDensity(
        np.vstack([grid.lower, lo]),
        np.vstack([grid.upper, hi]),
        density,
        grid.coords,
        labels,
    )


# --------------------------------------------------------------------------
# Discrete models
# --------------------------------------------------------------------------


def concentration_threshold(s: Scenario) -> float:
    """Effort up to which the optimal plan keeps everything on the true cell:
    the inverse rate at the true cell evaluated at the best competing initial
    rate (computed with the scenario's own masses)."""
    planner = SearchPlanner(s)
    curve = planner.curve
    i0 = planner.cells.locate(s.true_location)
    others = np.delete(curve.initial_rates, i0)
    if others.size == 0:
        return np.inf
    return curve.rates()[i0].inverse(float(others.max()))


def concentrate(dist: DiscreteDistribution, cell: int, theta: float) -> DiscreteDistribution:
    """Move a fraction ``theta`` of the remaining mass onto ``cell``."""
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    m0 = dist.masses[cell]
    masses = {c: m * (1 - theta) for c, m in dist.masses.items()}
    masses[cell] = m0 + theta * (1 - m0)
    return DiscreteDistribution(masses)


def swap(dist: DiscreteDistribution, a: int, b: int) -> DiscreteDistribution:
    masses = dict(dist.masses)
    masses[a], masses[b] = masses[b], masses[a]
    return DiscreteDistribution(masses)


def improve_discrete(s: Scenario, theta: float = 0.5, times=None,
                     max_halvings: int = 8) -> ImprovementResult:
    """Swap masses with a heavier cell, or, when the true cell is already the
    heaviest, concentrate mass on it provided the effort clears the threshold."""
    _require_x0(s)
    if not s.discrete:
        raise ImprovementError("improve_discrete needs a discrete scenario")
    if not s.true_location_in_support():
        raise ImprovementError("model is misspecified; use repair_misspecified")
    x0 = int(s.true_location)
    dist = s.distribution
    base = SearchPlanner(s)
    times = verification_grid(s, base) if times is None else np.asarray(times, dtype=float)
    budgets = np.atleast_1d(np.asarray(s.effort(times), dtype=float))
    m0 = dist.masses[x0]
    heavier = sorted((c for c, m in dist.masses.items() if m > m0),
                     key=lambda c: (-dist.masses[c], c))

    if not heavier:
        threshold = concentration_threshold(s)
        diag = {"threshold": threshold, "min_effort": float(budgets.min())}
        if not budgets.min() > threshold:
            return ImprovementResult(NO_GUARANTEE, "mass-concentration", s, diagnostics=diag)

    i0 = base.cells.locate(x0)
    on_x0 = base.efforts_for_budgets(budgets, index=i0)
    if np.any(on_x0 >= budgets):
        return ImprovementResult(
            NO_GUARANTEE,
            "mass-swap" if heavier else "mass-concentration",
            s,
            diagnostics={"reason": "plan already puts all effort on the true cell"},
        )

    cmp = None
    if heavier:
        for x1 in heavier:
            cand = s.replace(distribution=swap(dist, x0, x1))
            cmp = _verify(s, base, cand, times)
            if _is_improvement(cmp):
                return ImprovementResult(IMPROVED, "mass-swap", s, cand, cmp, {"swapped_with": x1})
        return ImprovementResult(NOT_VERIFIED, "mass-swap", s, comparison=cmp)

    th = theta
    for _ in range(max_halvings + 1):
        cand = s.replace(distribution=concentrate(dist, x0, th))
        cmp = _verify(s, base, cand, times)
        if _is_improvement(cmp):
            diag.update(theta=th)
            return ImprovementResult(IMPROVED, "mass-concentration", s, cand, cmp, diag)
        th /= 2
    return ImprovementResult(NOT_VERIFIED, "mass-concentration", s, comparison=cmp, diagnostics=diag)


@dataclass(frozen=True)
class Witness:
    cell: int
    threshold_dependent: bool
    threshold: float | None = None


def find_witness_location(s: Scenario) -> Witness:
    """A cell that, were it the true one, admits a strictly better distribution."""
    dist = s.distribution
    if not isinstance(dist, DiscreteDistribution):
        raise ImprovementError("witness search needs a discrete distribution")
    top = max(dist.masses.values())
    for c, m in dist.masses.items():
        if m < top:
            return Witness(c, False)
    cell = dist.cells[0]
    return Witness(cell, True, concentration_threshold(s.replace(true_location=cell)))


# --------------------------------------------------------------------------
# Continuous models
# --------------------------------------------------------------------------


def bump_density(grid: GridDensity, index: int, factor: float) -> GridDensity:
    if factor == 1.0:
        raise ImprovementError("bump factor 1 leaves the distribution unchanged")
    if not factor > 0:
        raise ImprovementError(f"bump factor must be > 0, got {factor}")
    dens = grid.density.copy()
    dens[index] *= factor
    dens /= np.sum(dens * grid.areas)
    if dens[index] * grid.areas[index] >= 1 - 1e-12:
        raise ImprovementError("bump would put all probability on one cell")
    return grid.with_density(dens)


def improve_continuous(s: Scenario, method: str = "auto", factor: float = 1.5,
                       times=None, max_halvings: int = 30) -> ImprovementResult:
    """Raise the target density at the true location.

    ``method="bump"`` scales the density of the true location's cell by
    ``factor`` and renormalizes. ``method="shrink"`` narrows the analytic
    family instead (``b`` for a uniform target, ``sigma`` for a circular
    normal one), trying ``value * (1 - 2**-k)`` for k = 1, 2, ... until the
    new plan verifiably dominates.
    """
    _require_x0(s)
    if s.discrete:
        raise ImprovementError("improve_continuous needs a continuous scenario")
    if not s.true_location_in_support():
        raise ImprovementError("model is misspecified; use repair_misspecified")
    dist = s.distribution
    if method == "auto":
        method = "shrink" if isinstance(dist, (Uniform1D, CircularNormal)) else "bump"
    base = SearchPlanner(s)
    times = verification_grid(s, base) if times is None else np.asarray(times, dtype=float)

    if method == "bump":
        i = s.cells.locate(s.true_location)
        cand = s.replace(distribution=bump_density(s.grid, i, factor))
        cmp = _verify(s, base, cand, times)
        return ImprovementResult(
            IMPROVED if _is_improvement(cmp) else NOT_VERIFIED,
            "density-bump", s, cand, cmp, {"factor": factor, "cell": s.cells.labels[i]},
        )
    if method != "shrink":
        raise ValueError(f"unknown method {method!r}")

    if isinstance(dist, Uniform1D):
        x0 = float(np.ravel(s.true_location)[0])
        tag, value = "support-shrink", dist.b
        make = lambda v: Uniform1D(dist.a, v, dist.n_cells)  # noqa: E731
        fits = lambda v: dist.a < x0 < v  # noqa: E731
    elif isinstance(dist, CircularNormal):
        r0 = float(np.ravel(s.true_location)[0])
        tag, value = "sigma-shrink", dist.sigma
        make = lambda v: CircularNormal(v, dist.n_radial, dist.n_angular, dist.truncation)  # noqa: E731
        fits = lambda v: r0 < v * dist.truncation  # noqa: E731
    else:
        raise ImprovementError("shrink construction needs a uniform or circular normal target")

    # halve the reduction, not the parameter: a mild shrink already lifts
    # effort at x0 once the search disc covers it, while a deep one can pull
    # the disc back inside x0 at early times
    cmp = None
    for k in range(1, max_halvings + 1):
        cand_value = value * (1 - 0.5**k)
        if not fits(cand_value):
            continue
        cand = s.replace(distribution=make(cand_value), area=None)
        cmp = _verify(s, base, cand, times)
        if _is_improvement(cmp):
            return ImprovementResult(IMPROVED, tag, s, cand, cmp, {"parameter": cand_value})
    return ImprovementResult(NOT_VERIFIED, tag, s, comparison=cmp)


def improve(s: Scenario, **kwargs) -> ImprovementResult:
    """Pick the applicable construction for ``s``."""
    _require_x0(s)
    if not s.true_location_in_support():
        return repair_misspecified(s, **{k: v for k, v in kwargs.items() if k in ("epsilon", "times")})
    if s.discrete:
        return improve_discrete(s, **{k: v for k, v in kwargs.items() if k in ("theta", "times")})
    return improve_continuous(s, **{k: v for k, v in kwargs.items() if k in ("method", "factor", "times")})
