"""Scenario building blocks: target distributions, detection models, effort
schedules, and the validation that a scenario must pass before planning.

Continuous distributions are carried to computation as a finite set of cells
(:class:`GridDensity`); :class:`CellModel` is the flattened view every other
module works with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Mapping, Sequence

import numpy as np

MASS_TOL = 1e-12
DENSITY_TOL = 1e-6
TRUNCATION_TOL = 1e-7
MAX_CELLS = 10**6
MIN_MASS = 1e-6


class ScenarioError(ValueError):
    """Raised when a scenario cannot be used for the requested operation."""


# --------------------------------------------------------------------------
# Target distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability masses over a finite set of positive integer cells."""

    masses: Mapping[int, float]

    def __post_init__(self):
        items = sorted((int(k), float(v)) for k, v in dict(self.masses).items())
        object.__setattr__(self, "masses", dict(items))

    @property
    def cells(self) -> tuple[int, ...]:
        return tuple(self.masses)

    def mass(self, cell) -> float:
        return self.masses.get(cell, 0.0)

    def violations(self) -> list[str]:
        out = []
        if not self.masses:
            return ["distribution has no cells"]
        if len(self.masses) > MAX_CELLS:
            out.append(f"cell count {len(self.masses)} exceeds cap {MAX_CELLS}")
        bad = [c for c in self.masses if c < 1]
        if bad:
            out.append(f"cell ids must be positive integers, got {bad[:5]}")
        total = math.fsum(self.masses.values())
        if abs(total - 1.0) > MASS_TOL:
            out.append(f"masses sum to {total:.12g} != 1")
        nonpos = [c for c, m in self.masses.items() if not m > 0]
        if nonpos:
            out.append(f"masses must be strictly positive on the support, cells {nonpos[:5]}")
        degenerate = [c for c, m in self.masses.items() if m >= 1.0]
        if degenerate:
            out.append(f"degenerate distribution: mass at cell {degenerate[0]} is not < 1")
        return out


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Piecewise-constant density on box cells ``lower <= x < upper``.

    With ``coords="polar"`` the two coordinates are (r, theta) and cell areas
    are annular sectors.
    """

    lower: np.ndarray
    upper: np.ndarray
    density: np.ndarray
    coords: str = "cartesian"
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        lower = np.atleast_2d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_2d(np.asarray(self.upper, dtype=float))
        if lower.shape[0] == 1 and lower.shape[1] != 1 and np.ndim(self.lower) == 1:
            lower, upper = lower.T, upper.T
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "density", np.asarray(self.density, dtype=float).ravel())

    @property
    def dim(self) -> int:
        return self.lower.shape[1]

    @cached_property
    def areas(self) -> np.ndarray:
        if self.coords == "polar":
            r0, r1 = self.lower[:, 0], self.upper[:, 0]
            return 0.5 * (r1**2 - r0**2) * (self.upper[:, 1] - self.lower[:, 1])
        return np.prod(self.upper - self.lower, axis=1)

    @cached_property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.areas

    def total_probability(self) -> float:
        return math.fsum(self.masses)

    def locate(self, x) -> int | None:
        """Index of the cell containing ``x``; None when outside every cell."""
        pt = np.atleast_1d(np.asarray(x, dtype=float))
        if pt.shape != (self.dim,):
            raise ScenarioError(f"location {x!r} does not have dimension {self.dim}")
        if self.coords == "polar":
            pt = pt.copy()
            if pt[0] < 0:
                return None
            pt[1] = pt[1] % (2 * math.pi)
        inside = np.all((self.lower <= pt) & (pt < self.upper), axis=1)
        hits = np.flatnonzero(inside)
        if hits.size == 0:
            return None
        if hits.size == 1:
            return int(hits[0])
        # overlapping user cells: nearest center, ties to the lower index
        dist = np.linalg.norm(self.centers[hits] - pt, axis=1)
        return int(hits[np.argmin(dist)])

    def violations(self) -> list[str]:
        out = []
        n = self.density.size
        if self.lower.shape != self.upper.shape or self.lower.shape[0] != n:
            return ["grid bounds and densities have mismatched shapes"]
        if n == 0:
            return ["grid has no cells"]
        if n > MAX_CELLS:
            out.append(f"cell count {n} exceeds cap {MAX_CELLS}")
        if self.coords not in ("cartesian", "polar"):
            out.append(f"unknown grid coordinates {self.coords!r}")
        if np.any(self.upper <= self.lower):
            out.append("grid cells must have upper > lower in every coordinate")
        if np.any(self.density < 0) or not np.all(np.isfinite(self.density)):
            out.append("grid densities must be finite and nonnegative")
        total = self.total_probability()
        if abs(total - 1.0) > DENSITY_TOL:
            out.append(f"total probability {total:.9g} != 1 (tolerance {DENSITY_TOL:g})")
        if np.any(self.masses >= 1.0):
            out.append("degenerate distribution: one cell carries all probability")
        return out

    def with_density(self, density) -> "GridDensity":
        return GridDensity(self.lower, self.upper, density, self.coords, self.labels)


@dataclass(frozen=True, eq=False)
class CircularNormal:
    """Centered circular normal density, discretized on polar cells."""

    sigma: float
    n_radial: int = 300
    n_angular: int = 64
    truncation: float = 6.0

    def violations(self) -> list[str]:
        out = []
        if not self.sigma > 0:
            out.append(f"sigma must be > 0, got {self.sigma}")
        if self.n_radial < 1 or self.n_angular < 1:
            out.append("polar grid needs at least one radial and one angular cell")
        if math.exp(-0.5 * self.truncation**2) >= TRUNCATION_TOL:
            out.append(
                f"truncation at {self.truncation} sigma loses >= {TRUNCATION_TOL:g} probability"
            )
        return out

    def density_at(self, r):
        r = np.asarray(r, dtype=float)
        s2 = self.sigma**2
        return np.exp(-0.5 * r**2 / s2) / (2 * math.pi * s2)

    def discretize(self) -> GridDensity:
        s = self.sigma
        r_edges = np.linspace(0.0, self.truncation * s, self.n_radial + 1)
        t_edges = np.linspace(0.0, 2 * math.pi, self.n_angular + 1)
        ri, ti = np.meshgrid(np.arange(self.n_radial), np.arange(self.n_angular), indexing="ij")
        ri, ti = ri.ravel(), ti.ravel()
        lower = np.column_stack([r_edges[ri], t_edges[ti]])
        upper = np.column_stack([r_edges[ri + 1], t_edges[ti + 1]])
        # exact cell-average density, so cell masses integrate the true law
        ring = np.exp(-0.5 * (r_edges[:-1] / s) ** 2) - np.exp(-0.5 * (r_edges[1:] / s) ** 2)
        mass = ring[ri] / self.n_angular
        area = 0.5 * (upper[:, 0] ** 2 - lower[:, 0] ** 2) * (upper[:, 1] - lower[:, 1])
        lost = math.exp(-0.5 * self.truncation**2)
        assert lost < TRUNCATION_TOL, f"truncation loses {lost:.3g} probability"
        labels = tuple(f"r{i}:th{j}" for i, j in zip(ri, ti))
        return GridDensity(lower, upper, mass / area, "polar", labels)


@dataclass(frozen=True, eq=False)
class Uniform1D:
    """Uniform density on the open interval (a, b)."""

    a: float
    b: float
    n_cells: int = 2000

    def violations(self) -> list[str]:
        out = []
        if not self.a < self.b:
            out.append(f"uniform support needs a < b, got ({self.a}, {self.b})")
        if self.n_cells < 1:
            out.append("uniform grid needs at least one cell")
        return out

    def discretize(self, breaks: Sequence[float] = ()) -> GridDensity:
        """Uniform cells on (a, b); interior ``breaks`` always fall on cell edges."""
        a, b, n = self.a, self.b, self.n_cells
        cuts = [a] + sorted(x for x in set(breaks) if a < x < b) + [b]
        lengths = np.diff(cuts)
        counts = np.maximum(1, np.round(n * lengths / (b - a)).astype(int))
        counts[np.argmax(lengths)] += n - counts.sum()
        edges = np.concatenate(
            [np.linspace(lo, hi, k + 1)[:-1] for lo, hi, k in zip(cuts[:-1], cuts[1:], counts)]
            + [[b]]
        )
        labels = tuple(f"x{i}" for i in range(edges.size - 1))
        density = np.full(edges.size - 1, 1.0 / (b - a))
        return GridDensity(edges[:-1, None], edges[1:, None], density, "cartesian", labels)


ContinuousDensity = CircularNormal | Uniform1D | GridDensity
Distribution = DiscreteDistribution | ContinuousDensity


# --------------------------------------------------------------------------
# Detection models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CellDetection:
    """A detection model bound to a fixed array of cell locations.

    ``rates`` is set when every cell is exponential, which lets the planner
    use the exact piecewise-log inverse instead of bisection.
    """

    d: Callable[[np.ndarray], np.ndarray]
    dprime: Callable[[np.ndarray], np.ndarray]
    dprime_inv: Callable[[np.ndarray], np.ndarray]
    rates: np.ndarray | None = None


def _exponential_cells(rates: np.ndarray) -> CellDetection:
    rates = np.asarray(rates, dtype=float)
    return CellDetection(
        d=lambda y: -np.expm1(-rates * y),
        dprime=lambda y: rates * np.exp(-rates * y),
        dprime_inv=lambda g: np.log(rates / g) / rates,
        rates=rates,
    )


@dataclass(frozen=True)
class ExponentialDetection:
    """Homogeneous exponential detection ``1 - exp(-rate * y)``."""

    rate: float

    def bind(self, locations) -> CellDetection:
        return _exponential_cells(np.full(len(locations), float(self.rate)))

    def prob(self, x, y) -> float:
        return float(-math.expm1(-self.rate * y))

    def violations(self, locations) -> list[str]:
        if not (self.rate > 0 and math.isfinite(self.rate)):
            return [f"detection rate must be > 0, got {self.rate}"]
        return []


@dataclass(frozen=True, eq=False)
class ExponentialPerLocation:
    """Exponential detection whose rate depends on the location.

    Either ``rates`` maps discrete cells to rates, or ``breaks``/``levels``
    define a piecewise-constant rate on the line: ``levels[k]`` applies on
    ``[breaks[k-1], breaks[k])`` so a point on a break takes the right level.
    """

    rates: Mapping[Any, float] | None = None
    breaks: tuple[float, ...] = ()
    levels: tuple[float, ...] = ()

    def __post_init__(self):
        if self.rates is not None:
            object.__setattr__(self, "rates", {int(k): float(v) for k, v in dict(self.rates).items()})
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))

    @classmethod
    def piecewise(cls, breaks, levels) -> "ExponentialPerLocation":
        return cls(None, tuple(breaks), tuple(levels))

    def rate_at(self, x) -> float:
        if self.rates is not None:
            try:
                return self.rates[int(x)]
            except KeyError:
                raise ScenarioError(f"no detection rate for cell {x!r}") from None
        coord = float(np.ravel(x)[0])
        return self.levels[int(np.searchsorted(self.breaks, coord, side="right"))]

    def bind(self, locations) -> CellDetection:
        return _exponential_cells(np.array([self.rate_at(x) for x in locations]))

    def prob(self, x, y) -> float:
        return float(-math.expm1(-self.rate_at(x) * y))

    def violations(self, locations) -> list[str]:
        out = []
        if self.rates is None:
            if len(self.levels) != len(self.breaks) + 1:
                return ["piecewise detection needs len(levels) == len(breaks) + 1"]
            if list(self.breaks) != sorted(self.breaks):
                out.append("piecewise detection breaks must be increasing")
            vals = self.levels
        else:
            missing = [c for c in locations if int(c) not in self.rates]
            if missing:
                out.append(f"no detection rate for cells {list(missing)[:5]}")
            vals = tuple(self.rates.values())
        if any(not (v > 0 and math.isfinite(v)) for v in vals):
            out.append("detection rates must be > 0")
        return out


@dataclass(frozen=True, eq=False)
class GenericRegularDetection:
    """User-supplied regular detection function.

    Each callable takes ``(x, y)`` where ``x`` is an array of locations aligned
    with ``y`` along the first axis and must broadcast elementwise.
    ``dprime_inv(x, g)`` inverts ``y -> dprime(x, y)`` on ``(0, dprime(x, 0)]``.
    """

    d: Callable
    dprime: Callable
    dprime_inv: Callable
    name: str = "generic"
    family: tuple[str, dict] | None = None
    probe_max_effort: float = 10.0
    probe_points: int = 33

    def bind(self, locations) -> CellDetection:
        return _generic_cells(self, np.asarray(locations))

    def prob(self, x, y) -> float:
        return float(np.asarray(self.d(np.asarray([x]), np.asarray([float(y)])))[0])

    def violations(self, locations) -> list[str]:
        locs = np.asarray(locations)
        if locs.shape[0] > 50:
            locs = locs[np.linspace(0, locs.shape[0] - 1, 50).astype(int)]
        y = np.linspace(0.0, self.probe_max_effort, self.probe_points)
        out: set[str] = set()
        for x in locs:
            xs = np.repeat(x[None, ...] if np.ndim(x) else np.asarray([x]), y.size, axis=0)
            try:
                d = np.asarray(self.d(xs, y), dtype=float)
                dp = np.asarray(self.dprime(xs, y), dtype=float)
                inv = np.asarray(self.dprime_inv(xs, dp), dtype=float)
            except Exception as exc:  # user callables
                out.add(f"detection callables failed on probe grid: {exc}")
                continue
            if abs(d[0]) > 1e-12:
                out.add("d(x, 0) != 0")
            if np.any(d < -1e-12) or np.any(d > 1 + 1e-12):
                out.add("detection probability outside [0, 1]")
            if np.any(np.diff(d) < -1e-12):
                out.add("detection function not increasing in effort")
            if not np.all(dp > 0):
                out.add("derivative not positive")
            if np.any(np.diff(dp) >= 0):
                out.add("derivative not strictly decreasing")
            if np.any(np.abs(inv - y) > 1e-6 * np.maximum(1.0, y)):
                out.add("derivative inverse inconsistent with derivative")
        return sorted(out)


def _generic_cells(model: GenericRegularDetection, locs: np.ndarray) -> CellDetection:
    return CellDetection(
        d=lambda y: np.asarray(model.d(locs, _fit(y, locs)), dtype=float),
        dprime=lambda y: np.asarray(model.dprime(locs, _fit(y, locs)), dtype=float),
        dprime_inv=lambda g: np.asarray(model.dprime_inv(locs, _fit(g, locs)), dtype=float),
    )


def _fit(v, locs):
    return np.broadcast_to(np.asarray(v, dtype=float), (locs.shape[0],))


# Named regular families usable from scenario files.
def _rational(kappa: float) -> GenericRegularDetection:
    k = float(kappa)
    return GenericRegularDetection(
        d=lambda x, y: k * y / (1 + k * y),
        dprime=lambda x, y: k / (1 + k * y) ** 2,
        dprime_inv=lambda x, g: (np.sqrt(k / g) - 1) / k,
        name=f"rational(kappa={k:g})",
        family=("rational", {"kappa": k}),
    )


def _generic_exponential(rate: float) -> GenericRegularDetection:
    a = float(rate)
    return GenericRegularDetection(
        d=lambda x, y: -np.expm1(-a * y),
        dprime=lambda x, y: a * np.exp(-a * y),
        dprime_inv=lambda x, g: np.log(a / g) / a,
        name=f"exponential(rate={a:g})",
        family=("exponential", {"rate": a}),
    )


GENERIC_FAMILIES: dict[str, Callable[..., GenericRegularDetection]] = {
    "rational": _rational,
    "exponential": _generic_exponential,
}


DetectionModel = ExponentialDetection | ExponentialPerLocation | GenericRegularDetection


def detection_probability_of_effort(model: DetectionModel, x, y: float) -> float:
    """d(x, y) for a single location and effort (or effort density)."""
    if y < 0:
        raise ValueError(f"effort must be >= 0, got {y}")
    return model.prob(x, y)


# --------------------------------------------------------------------------
# Effort schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearEffort:
    """E(t) = offset + rate * t (rate = sweep width x speed, say)."""

    rate: float
    offset: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.offset + self.rate * t
        return float(out) if out.ndim == 0 else out

    def violations(self) -> list[str]:
        out = []
        if self.rate < 0:
            out.append("effort schedule must be non-decreasing (rate >= 0)")
        if self.offset < 0:
            out.append("effort at t=0 must be >= 0")
        if not (self.rate > 0 or self.offset > 0):
            out.append("effort must be > 0 for t > 0")
        return out


@dataclass(frozen=True, eq=False)
class TableEffort:
    """Effort from (t, E) knots, linear in between and held flat outside."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "knots", tuple((float(t), float(e)) for t, e in self.knots))

    def __call__(self, t):
        ts, es = zip(*self.knots)
        out = np.interp(np.asarray(t, dtype=float), ts, es)
        return float(out) if np.ndim(out) == 0 else out

    def violations(self) -> list[str]:
        if not self.knots:
            return ["effort table is empty"]
        ts = np.array([k[0] for k in self.knots])
        es = np.array([k[1] for k in self.knots])
        out = []
        if np.any(ts < 0):
            out.append("effort table times must be >= 0")
        if np.any(np.diff(ts) <= 0):
            out.append("effort table times must be strictly increasing")
        if np.any(np.diff(es) < 0):
            out.append("effort schedule must be non-decreasing")
        if np.any(es < 0):
            out.append("effort values must be >= 0")
        if np.any(es[ts > 0] <= 0) or (ts[0] > 0 and es[0] <= 0):
            out.append("effort must be > 0 for t > 0")
        return out


EffortSchedule = LinearEffort | TableEffort


# --------------------------------------------------------------------------
# Scenario and its cell view
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CellModel:
    """Flattened cells of a scenario: what the planner actually iterates over.

    For discrete scenarios ``density`` holds the masses and ``area`` is 1, so
    area-weighted sums reduce to plain sums.
    """

    locations: np.ndarray
    labels: tuple[str, ...]
    density: np.ndarray
    area: np.ndarray
    detection: CellDetection
    grid: GridDensity | None = None

    @property
    def discrete(self) -> bool:
        return self.grid is None

    @property
    def mass(self) -> np.ndarray:
        return self.density * self.area

    def __len__(self):
        return self.density.size

    @cached_property
    def _index(self) -> dict[int, int]:
        return {int(c): i for i, c in enumerate(self.locations)}

    def locate(self, x) -> int | None:
        if x is None:
            return None
        if self.grid is None:
            try:
                return self._index.get(int(x))
            except (TypeError, ValueError):
                return None
        return self.grid.locate(x)


@dataclass(frozen=True, eq=False)
class Scenario:
    distribution: Distribution
    detection: DetectionModel
    effort: EffortSchedule
    true_location: Any = None
    area: Any = None
    cost: str = "identity"

    @property
    def discrete(self) -> bool:
        return isinstance(self.distribution, DiscreteDistribution)

    @property
    def has_true_location(self) -> bool:
        return self.true_location is not None

    def detection_breaks(self) -> tuple[float, ...]:
        det = self.detection
        if isinstance(det, ExponentialPerLocation) and det.rates is None:
            return det.breaks
        return ()

    @cached_property
    def grid(self) -> GridDensity | None:
        dist = self.distribution
        if isinstance(dist, DiscreteDistribution):
            return None
        if isinstance(dist, Uniform1D):
            return dist.discretize(self.detection_breaks())
        if isinstance(dist, CircularNormal):
            return dist.discretize()
        return dist

    @cached_property
    def cells(self) -> CellModel:
        dist = self.distribution
        if isinstance(dist, DiscreteDistribution):
            locs = np.array(dist.cells, dtype=int)
            return CellModel(
                locations=locs,
                labels=tuple(str(c) for c in dist.cells),
                density=np.array(list(dist.masses.values()), dtype=float),
                area=np.ones(locs.size),
                detection=self.detection.bind(locs),
            )
        grid = self.grid
        centers = grid.centers
        labels = grid.labels or tuple(f"c{i}" for i in range(centers.shape[0]))
        return CellModel(
            locations=centers,
            labels=labels,
            density=grid.density,
            area=grid.areas,
            detection=self.detection.bind(centers),
            grid=grid,
        )

    def true_location_in_support(self) -> bool:
        return self.cells.locate(self.true_location) is not None

    def replace(self, **changes) -> "Scenario":
        fields = dict(
            distribution=self.distribution,
            detection=self.detection,
            effort=self.effort,
            true_location=self.true_location,
            area=self.area,
            cost=self.cost,
        )
        fields.update(changes)
        return Scenario(**fields)


def check_existence(s: Scenario) -> tuple[bool, str]:
    """Whether the classical sufficient conditions for a uniformly optimal plan hold.

    Discrete: d(x, .) continuous, concave, increasing with d(x, 0) = 0.
    Continuous: d(x, .) increasing and right-continuous with d(x, 0) = 0.
    Exponential models satisfy both; generic models are judged by the
    regularity probe (a positive, strictly decreasing derivative gives
    concavity and continuity).
    """
    det = s.detection
    if isinstance(det, (ExponentialDetection, ExponentialPerLocation)):
        return True, "exponential detection is regular"
    probs = det.violations(_probe_locations(s))
    if probs:
        return False, "regularity probe failed: " + "; ".join(probs)
    return True, "generic detection passed the regularity probe"


def _probe_locations(s: Scenario):
    return s.cells.locations


def validate_scenario(s: Scenario) -> list[str]:
    """Every violated invariant of ``s`` as a message; empty means valid."""
    out: list[str] = []
    if s.cost != "identity":
        out.append(f"only the identity cost c(x, y) = y is supported, got {s.cost!r}")
    dist = s.distribution
    out.extend(dist.violations())
    out.extend(s.effort.violations())
    if out and any("shapes" in v or "no cells" in v for v in out):
        return out
    if isinstance(dist, (CircularNormal, Uniform1D)) and not dist.violations():
        out.extend(v for v in s.grid.violations() if v not in out)
    if isinstance(dist, DiscreteDistribution):
        if s.area is not None and set(int(c) for c in s.area) != set(dist.cells):
            out.append("distribution support does not match the possibility area")
    elif s.area is not None:
        out.extend(_continuous_area_violations(s))
    if not any("sigma" in v or "a < b" in v for v in out):
        try:
            locs = s.cells.locations
        except ScenarioError as exc:
            out.append(str(exc))
        else:
            det_v = s.detection.violations(locs)
            out.extend(det_v)
            if not det_v:
                ok, why = check_existence(s)
                if not ok:
                    out.append("existence conditions not established: " + why)
    return out


def _continuous_area_violations(s: Scenario) -> list[str]:
    area = s.area
    kind = area.get("type") if isinstance(area, Mapping) else None
    dist = s.distribution
    if kind == "plane":
        if isinstance(dist, Uniform1D):
            return ["a 1-D density cannot live on the plane"]
        return []
    if kind == "interval":
        lo, hi = area["bounds"]
        if isinstance(dist, Uniform1D):
            if dist.a < lo or dist.b > hi:
                return ["distribution support does not match the possibility area"]
            return []
        if isinstance(dist, GridDensity) and dist.dim == 1:
            if dist.lower.min() < lo or dist.upper.max() > hi:
                return ["distribution support does not match the possibility area"]
            return []
        return ["an interval area needs a 1-D density"]
    return [f"unknown continuous area descriptor {area!r}"]


def require_valid(s: Scenario) -> None:
    problems = validate_scenario(s)
    if problems:
        raise ScenarioError("invalid scenario: " + "; ".join(problems))


# --------------------------------------------------------------------------
# Allocations and plans
# --------------------------------------------------------------------------


def budget_tolerance(budget: float) -> float:
    return 1e-9 * max(1.0, abs(budget))


@dataclass(frozen=True, eq=False)
class Allocation:
    """Effort per cell (discrete) or effort density per cell (continuous)."""

    cells: CellModel
    efforts: np.ndarray
    budget: float

    @property
    def total(self) -> float:
        return math.fsum(self.efforts * self.cells.area)

    def at(self, x) -> float:
        """Effort at location ``x``; zero off the support."""
        i = self.cells.locate(x)
        return 0.0 if i is None else float(self.efforts[i])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.cells.labels, map(float, self.efforts)))

    def violations(self) -> list[str]:
        out = []
        if np.any(self.efforts < 0):
            out.append("allocation has negative effort")
        gap = abs(self.total - self.budget)
        if gap > budget_tolerance(self.budget):
            out.append(f"allocation total {self.total:.12g} != budget {self.budget:.12g}")
        return out


@dataclass(frozen=True, eq=False)
class SearchPlan:
    """A plan materialized on a time grid: one allocation per grid time."""

    cells: CellModel
    times: np.ndarray
    budgets: np.ndarray
    efforts: np.ndarray

    def __len__(self):
        return self.times.size

    def allocation(self, i: int) -> Allocation:
        return Allocation(self.cells, self.efforts[i], float(self.budgets[i]))

    def __iter__(self):
        return (self.allocation(i) for i in range(len(self)))

    def effort_at(self, x) -> np.ndarray:
        i = self.cells.locate(x)
        if i is None:
            return np.zeros(len(self))
        return self.efforts[:, i]
