"""Uniformly optimal search plans by the rate-of-return construction.

Every location is funded until its marginal rate of return
``q_x(y) = pi(x) * dd/dy(x, y)`` falls to a common level ``lam``; the level is
picked so the total effort ``Q(lam)`` equals the budget ``E(t)``.

For all-exponential models ``Q`` is piecewise ``C_k - S_k * log(lam)`` and is
inverted exactly. Otherwise ``Q`` is inverted by bisection on ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .core import (
    Allocation,
    CellDetection,
    CellModel,
    Scenario,
    SearchPlan,
    _exponential_cells,
    require_valid,
)

BISECTION_MAX_ITER = 200
BRACKET_MAX_HALVINGS = 1100


class PlannerError(RuntimeError):
    pass


class BracketError(PlannerError):
    """Q stays below the budget however small the rate: Q saturates."""


class ConsistencyError(PlannerError):
    """A planner result violated its own invariants (a root-finder problem)."""


@dataclass(frozen=True)
class RateOfReturn:
    """Marginal detection gain per unit effort at one location.

    ``dprime`` and ``dprime_inv`` are the location's detection-derivative and
    its inverse; ``density`` is the probability mass (discrete) or density.
    """

    density: float
    dprime: Callable[[float], float]
    dprime_inv: Callable[[float], float]
    location: Any = None
    rate: float | None = None

    @classmethod
    def exponential(cls, density: float, rate: float, location=None) -> "RateOfReturn":
        return cls(
            density=float(density),
            dprime=lambda y: rate * math.exp(-rate * y),
            dprime_inv=lambda g: math.log(rate / g) / rate,
            location=location,
            rate=float(rate),
        )

    def __call__(self, y: float) -> float:
        return self.density * self.dprime(y)

    @property
    def initial_rate(self) -> float:
        return self(0.0)

    def inverse(self, lam: float) -> float:
        """Effort at which the rate of return has fallen to ``lam`` (0 if it starts below)."""
        if not lam > 0:
            raise ValueError(f"rate must be > 0, got {lam}")
        if lam >= self.initial_rate:
            return 0.0
        if self.rate is not None:
            return math.log(self.density * self.rate / lam) / self.rate
        return float(self.dprime_inv(lam / self.density))


def inverse_rate(r: RateOfReturn, lam: float) -> float:
    return r.inverse(lam)


class AggregateCurve:
    """Q(lam): total effort when every location is funded down to rate ``lam``.

    Parameters
    ----------
    density, area : arrays over cells
        ``area`` is 1 for discrete cells, so Q is a plain sum there.
    detection : CellDetection
        Detection model bound to the same cells.
    method : {"auto", "exact", "bisection"}
        ``auto`` uses the exact inverse whenever every cell is exponential.
    """

    def __init__(self, density, area, detection: CellDetection, method: str = "auto"):
        self.density = np.asarray(density, dtype=float)
        self.area = np.asarray(area, dtype=float)
        self.detection = detection
        if method not in ("auto", "exact", "bisection"):
            raise ValueError(f"unknown method {method!r}")
        if method == "exact" and detection.rates is None:
            raise ValueError("exact inversion needs exponential detection")
        self.exact = detection.rates is not None and method != "bisection"
        self._dp0 = np.asarray(detection.dprime(np.zeros(self.density.size)), dtype=float)
        self.initial_rates = self.density * self._dp0
        self.lambda_max = float(self.initial_rates.max())
        if self.exact:
            self._prepare_exact()

    @classmethod
    def from_cells(cls, cells: CellModel, method: str = "auto") -> "AggregateCurve":
        return cls(cells.density, cells.area, cells.detection, method)

    @classmethod
    def from_rates(cls, rates: Sequence[RateOfReturn], areas=None) -> "AggregateCurve":
        rates = list(rates)
        area = np.ones(len(rates)) if areas is None else np.asarray(areas, dtype=float)
        density = np.array([r.density for r in rates])
        if all(r.rate is not None for r in rates):
            det = _exponential_cells(np.array([r.rate for r in rates]))
        else:
            det = CellDetection(
                d=lambda y: np.full(len(rates), np.nan),
                dprime=lambda y: np.array([r.dprime(v) for r, v in zip(rates, _vec(y, rates))]),
                dprime_inv=lambda g: np.array(
                    [r.dprime_inv(v) for r, v in zip(rates, _vec(g, rates))]
                ),
            )
        return cls(density, area, det)

    # exact path ---------------------------------------------------------

    def _prepare_exact(self):
        a = self.detection.rates
        live = np.flatnonzero(self.initial_rates > 0)
        lnq0 = np.log(self.initial_rates[live])
        order = live[np.argsort(-lnq0, kind="stable")]
        self._order = order
        self._lnq0 = np.log(self.initial_rates[order])
        w = self.area[order] / a[order]
        self._S = np.cumsum(w)
        self._C = np.cumsum(w * self._lnq0)
        kb = np.empty(order.size)
        kb[:-1] = self._C[:-1] - self._S[:-1] * self._lnq0[1:]
        kb[-1] = np.inf
        self._Kb = kb

    def _log_rate_exact(self, K):
        K = np.asarray(K, dtype=float)
        j = np.searchsorted(self._Kb, K, side="left")
        return (self._C[j] - K) / self._S[j]

    # common -------------------------------------------------------------

    def efforts_at_rate(self, lam: float) -> np.ndarray:
        """q_x^{-1}(lam) for every cell."""
        if not lam > 0:
            raise ValueError(f"rate must be > 0, got {lam}")
        if self.exact:
            return self._efforts_at_log_rate(math.log(lam))
        live = lam < self.initial_rates
        out = np.zeros(self.density.size)
        if live.any():
            g = np.where(live, lam / np.where(live, self.density, 1.0), self._dp0)
            inv = np.asarray(self.detection.dprime_inv(g), dtype=float)
            out[live] = np.maximum(inv[live], 0.0)
        return out

    def _efforts_at_log_rate(self, log_lam: float) -> np.ndarray:
        out = np.zeros(self.density.size)
        rates = self.detection.rates
        with np.errstate(divide="ignore"):
            lnq0 = np.log(self.initial_rates)
        y = (lnq0 - log_lam) / rates
        live = y > 0
        out[live] = y[live]
        return out

    def __call__(self, lam: float) -> float:
        return math.fsum(self.efforts_at_rate(lam) * self.area)

    def rate_at_budget(self, K: float) -> float:
        """Q^{-1}(K): the common rate of return that spends exactly ``K``."""
        if not K > 0:
            raise ValueError(f"budget must be > 0, got {K}")
        if self.exact:
            return float(math.exp(self._log_rate_exact(K)))
        return self._bisect(K)

    def _bisect(self, K: float) -> float:
        hi = self.lambda_max
        lo = hi / 2
        halvings = 0
        while self(lo) < K:
            lo /= 2
            halvings += 1
            if halvings > BRACKET_MAX_HALVINGS or lo == 0.0:
                raise BracketError(
                    f"aggregate effort saturates below the budget {K:g}; "
                    "the detection model is not regular"
                )
        for _ in range(BISECTION_MAX_ITER):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if self(mid) >= K:
                lo = mid
            else:
                hi = mid
        lam = lo if abs(self(lo) - K) <= abs(self(hi) - K) else hi
        if abs(self(lam) - K) > 1e-10 * max(1.0, K):
            raise ConsistencyError(f"bisection left |Q - K| = {abs(self(lam) - K):.3g}")
        return lam

    def efforts_for_budget(self, K: float) -> np.ndarray:
        if K <= 0:
            return np.zeros(self.density.size)
        if self.exact:
            y = self._efforts_at_log_rate(float(self._log_rate_exact(K)))
        else:
            y = self.efforts_at_rate(self._bisect(K))
        funded = np.flatnonzero(y > 0)
        if funded.size == 1:
            # a single funded cell takes the whole budget, with no rounding
            y[:] = 0.0
            y[funded[0]] = K / self.area[funded[0]]
        return y

    def rates(self) -> list[RateOfReturn]:
        """Per-cell rate-of-return objects (mainly for inspection and tests)."""
        out = []
        det = self.detection
        n = self.density.size
        for i in range(n):
            if det.rates is not None:
                out.append(RateOfReturn.exponential(self.density[i], det.rates[i], i))
                continue

            def one(f, i=i):
                def g(v):
                    arr = np.full(n, float(v))
                    return float(np.asarray(f(arr))[i])
                return g

            out.append(RateOfReturn(self.density[i], one(det.dprime), one(det.dprime_inv), i))
        return out


def _vec(v, items):
    return np.broadcast_to(np.asarray(v, dtype=float), (len(items),))


def aggregate(rates: Sequence[RateOfReturn], lam: float, areas=None) -> float:
    """Q(lam) summed (area-weighted) over the given rate-of-return functions."""
    if not lam > 0:
        raise ValueError(f"rate must be > 0, got {lam}")
    area = [1.0] * len(rates) if areas is None else list(areas)
    return math.fsum(r.inverse(lam) * w for r, w in zip(rates, area))


def rate_at_budget(curve: AggregateCurve, K: float) -> float:
    return curve.rate_at_budget(K)


class SearchPlanner:
    """Uniformly optimal plan for one scenario.

    The plan depends on time only through ``E(t)``, so everything is driven by
    :meth:`allocation_for_budget`.
    """

    def __init__(self, scenario: Scenario, method: str = "auto", validate: bool = True):
        if validate:
            require_valid(scenario)
        self.scenario = scenario
        self.cells = scenario.cells
        self.curve = AggregateCurve.from_cells(self.cells, method)

    def allocation_for_budget(self, K: float) -> Allocation:
        y = self.curve.efforts_for_budget(float(K))
        return Allocation(self.cells, y, float(K))

    def plan_at_time(self, t: float) -> Allocation:
        if t < 0:
            raise ValueError(f"time must be >= 0, got {t}")
        alloc = self.allocation_for_budget(float(self.scenario.effort(t)))
        problems = alloc.violations()
        if problems:
            raise ConsistencyError("; ".join(problems))
        return alloc

    def efforts_for_budgets(self, budgets, index: int | None = None) -> np.ndarray:
        """Efforts for many budgets: shape (n,) at one cell or (n, cells) for all."""
        budgets = np.asarray(budgets, dtype=float)
        curve = self.curve
        n = self.cells.density.size
        if curve.exact and index is not None:
            out = np.zeros(budgets.shape)
            pos = budgets > 0
            if pos.any():
                log_lam = curve._log_rate_exact(budgets[pos])
                lnq0 = math.log(curve.initial_rates[index]) if curve.initial_rates[index] > 0 else -np.inf
                y = np.maximum((lnq0 - log_lam) / curve.detection.rates[index], 0.0)
                # reproduce the single-funded-cell rule of efforts_for_budget
                solo = log_lam >= _second_log_rate(curve)
                if curve._order.size and curve._order[0] == index:
                    y = np.where(solo, budgets[pos] / curve.area[index], y)
                else:
                    y = np.where(solo, 0.0, y)
                out[pos] = y
            return out
        if curve.exact:
            flat = budgets.ravel()
            full = np.zeros((flat.size, n))
            pos = flat > 0
            if pos.any():
                log_lam = curve._log_rate_exact(flat[pos])
                with np.errstate(divide="ignore"):
                    lnq0 = np.log(curve.initial_rates)
                y = np.maximum((lnq0[None, :] - log_lam[:, None]) / curve.detection.rates, 0.0)
                solo = log_lam >= _second_log_rate(curve)
                if solo.any():
                    top = curve._order[0]
                    y[solo] = 0.0
                    y[solo, top] = flat[pos][solo] / curve.area[top]
                full[pos] = y
            full = full.reshape(budgets.shape + (n,))
            return full if index is None else full[..., index]
        rows = [curve.efforts_for_budget(K) for K in budgets.ravel()]
        full = np.array(rows).reshape(budgets.shape + (n,))
        return full if index is None else full[..., index]

    def build_plan(self, times) -> SearchPlan:
        times = np.asarray(times, dtype=float).ravel()
        if times.size and (np.any(np.diff(times) <= 0) or times[0] < 0):
            raise ValueError("time grid must be increasing and start at t >= 0")
        budgets = np.atleast_1d(np.asarray(self.scenario.effort(times), dtype=float))
        if times.size == 0:
            budgets = np.zeros(0)
        efforts = np.zeros((times.size, self.cells.density.size))
        for i, K in enumerate(budgets):
            alloc = self.allocation_for_budget(K)
            problems = alloc.violations()
            if problems:
                raise ConsistencyError(f"t={times[i]:g}: " + "; ".join(problems))
            efforts[i] = alloc.efforts
        if times.size > 1:
            drop = np.diff(efforts, axis=0)
            tol = 1e-9 * np.maximum(1.0, budgets[1:])[:, None]
            if np.any(drop < -tol):
                raise ConsistencyError("plan effort decreased over time at some location")
        return SearchPlan(self.cells, times, budgets, efforts)


def _second_log_rate(curve: AggregateCurve) -> float:
    """log q(0) of the second-best cell: above it only one cell is funded."""
    if curve._lnq0.size < 2:
        return -np.inf
    return float(curve._lnq0[1])


def plan_at_time(s: Scenario, t: float) -> Allocation:
    return SearchPlanner(s).plan_at_time(t)


def build_plan(s: Scenario, times) -> SearchPlan:
    return SearchPlanner(s).build_plan(times)


# --------------------------------------------------------------------------
# Closed forms: two cells, centered circular normal, piecewise-rate uniform
# --------------------------------------------------------------------------


def closed_form_two_cell(p: float, alpha1: float, alpha2: float, E: float) -> tuple[float, float]:
    """Optimal (effort at cell 1, effort at cell 2) for masses (p, 1-p) and
    exponential rates alpha1, alpha2 under budget E."""
    if not (0 < p < 1 and alpha1 > 0 and alpha2 > 0):
        raise ValueError("need 0 < p < 1 and positive rates")
    if E <= 0:
        return 0.0, 0.0
    log_ratio = math.log(p * alpha1 / ((1 - p) * alpha2))
    if log_ratio > 0:
        if E <= log_ratio / alpha1:
            return float(E), 0.0
    elif E <= -log_ratio / alpha2:
        return 0.0, float(E)
    y1 = (alpha2 * E + log_ratio) / (alpha1 + alpha2)
    return y1, E - y1


@dataclass(frozen=True)
class CircularNormalPlan:
    """Optimal plan for a centered circular normal target under homogeneous
    exponential detection and linear effort E(t) = W v t."""

    sigma: float
    alpha: float
    sweep: float  # W * v
    t: float

    @property
    def growth(self) -> float:
        """H = sqrt(alpha W v / (pi sigma^2))."""
        return math.sqrt(self.alpha * self.sweep / (math.pi * self.sigma**2))

    @property
    def radius(self) -> float:
        """Radius of the searched disc, R(t) = sigma * sqrt(2 H sqrt(t))."""
        return self.sigma * math.sqrt(2 * self.growth * math.sqrt(self.t))

    def effort(self, r):
        """Effort density at radius r."""
        r = np.asarray(r, dtype=float)
        h = self.growth * math.sqrt(self.t)
        out = np.maximum(h - r**2 / (2 * self.sigma**2), 0.0) / self.alpha
        return float(out) if out.ndim == 0 else out

    @property
    def probability(self) -> float:
        h = self.growth * math.sqrt(self.t)
        return -math.expm1(-h) - h * math.exp(-h)

    def true_probability(self, r0: float) -> float:
        return float(-np.expm1(-self.alpha * self.effort(r0)))


def closed_form_circular_normal(sigma, alpha, W, v, t) -> CircularNormalPlan:
    if not (sigma > 0 and alpha > 0 and W > 0 and v > 0 and t >= 0):
        raise ValueError("circular normal plan needs positive parameters and t >= 0")
    return CircularNormalPlan(float(sigma), float(alpha), float(W) * float(v), float(t))


def closed_form_piecewise_uniform(a, b, beta1, beta2, E) -> Callable:
    """Effort density of the optimal plan for a uniform target on (a, b) with
    detection rate beta1 on [0, b) and beta2 on (a, 0).

    Returns a vectorized function of x.
    """
    if not (a < 0 < b and beta1 > beta2 > 0):
        raise ValueError("need a < 0 < b and beta1 > beta2 > 0")
    threshold = b / beta1 * math.log(beta1 / beta2)
    span = b / beta1 - a / beta2
    right = (E / span - (a / beta2) / span * math.log(beta1) + (a / beta2) / span * math.log(beta2)) / beta1
    left = (E / span - (b / beta1) / span * math.log(beta1) + (b / beta1) / span * math.log(beta2)) / beta2

    def density(x):
        x = np.asarray(x, dtype=float)
        if E <= 0:
            out = np.zeros_like(x)
        elif E <= threshold:
            out = np.where((x >= 0) & (x < b), E / b, 0.0)
        else:
            out = np.where((x >= 0) & (x < b), right, np.where((x > a) & (x < 0), left, 0.0))
        return float(out) if out.ndim == 0 else out

    density.threshold = threshold
    return density
