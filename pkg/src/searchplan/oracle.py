"""Independent checks for the planner: exhaustive lattice search, greedy
marginal allocation and Monte Carlo detection."""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass

import numpy as np

from .core import Allocation, DiscreteDistribution, Scenario, ScenarioError
from .evaluation import detect_at, subjective_probability

MAX_CELLS = 6
MAX_LATTICE = 10**7


class OracleSizeError(ScenarioError):
    """Instance too large for exhaustive search."""


@dataclass(frozen=True)
class OracleConfig:
    effort_step: float = 0.01
    greedy_increment: float = 1e-4
    mc_samples: int = 100_000
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.effort_step > 0 and self.greedy_increment > 0):
            raise ValueError("effort_step and greedy_increment must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


def _require_discrete(s: Scenario):
    if not s.discrete:
        raise ScenarioError("oracle needs a discrete scenario")


def lattice_size(n_cells: int, n_steps: int) -> int:
    """Number of compositions of ``n_steps`` into ``n_cells`` non-negative parts."""
    return math.comb(n_steps + n_cells - 1, n_cells - 1)


def brute_force_best_allocation(s: Scenario, K: float, cfg: OracleConfig = OracleConfig()):
    """Maximize subjective detection over every lattice allocation summing to K.

    Efforts are multiples of ``K / N`` with ``N = round(K / effort_step)``, so
    the budget holds exactly on the lattice. The last three coordinates are
    enumerated as one vectorized triangle per prefix.

    Returns
    -------
    (Allocation, float)
        The maximizer (ties to the first in lexicographic order) and its value.
    """
    _require_discrete(s)
    cells = s.cells
    n = len(cells)
    if K < 0:
        raise ValueError(f"budget must be >= 0, got {K}")
    if n > MAX_CELLS:
        raise OracleSizeError(f"{n} cells exceeds the exhaustive limit of {MAX_CELLS}")
    N = int(round(K / cfg.effort_step))
    if K > 0 and N == 0:
        N = 1
    if N + 1 > MAX_LATTICE or lattice_size(n, N) > 5 * MAX_LATTICE:
        raise OracleSizeError(
            f"{lattice_size(n, N)} lattice points (K/step = {N}) is too many for exhaustive search"
        )
    if K == 0:
        return Allocation(cells, np.zeros(n), 0.0), 0.0

    unit = K / N
    mass = cells.mass
    d = cells.detection.d
    # per-cell detection value at every lattice level, shape (n, N+1)
    levels = np.arange(N + 1) * unit
    gain = np.stack([mass * d(np.full(n, v)) for v in levels], axis=1)

    best_val, best = -np.inf, None
    tail = min(n, 3)
    head = n - tail
    tri = _triangle(N, tail)
    for prefix in _compositions(N, head):
        used = sum(prefix)
        rest = N - used
        base = math.fsum(gain[i, k] for i, k in enumerate(prefix))
        parts = tri[rest]
        vals = base + sum(gain[head + j, parts[:, j]] for j in range(tail))
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val = float(vals[j])
            best = list(prefix) + list(parts[j])
    efforts = np.asarray(best, dtype=float) * unit
    alloc = Allocation(cells, efforts, K)
    return alloc, subjective_probability(s, alloc)


def _compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative ints with sum at most ``total``."""
    if parts == 0:
        yield ()
        return
    for k in range(total + 1):
        for rest in _compositions(total - k, parts - 1):
            yield (k,) + rest


def _triangle(N: int, parts: int) -> list[np.ndarray]:
    """tri[r] lists every split of r into ``parts`` non-negative ints."""
    out = []
    for r in range(N + 1):
        if parts == 1:
            out.append(np.array([[r]]))
        elif parts == 2:
            a = np.arange(r + 1)
            out.append(np.column_stack([a, r - a]))
        else:
            a, b = np.triu_indices(r + 1)
            # a <= b: split r into (a, b - a, r - b)
            out.append(np.column_stack([a, b - a, r - b]))
    return out


def greedy_incremental_allocation(s: Scenario, K: float, cfg: OracleConfig = OracleConfig()) -> Allocation:
    """Hand out K in small increments, each to the cell with the highest
    current rate of return (ties to the lowest index)."""
    _require_discrete(s)
    cells = s.cells
    n = len(cells)
    if K < 0:
        raise ValueError(f"budget must be >= 0, got {K}")
    efforts = np.zeros(n)
    if K == 0:
        return Allocation(cells, efforts, 0.0)
    dprime = cells.detection.dprime
    mass = cells.mass

    def rate(i):
        y = np.zeros(n)
        y[i] = efforts[i]
        return float(mass[i] * dprime(y)[i])

    steps = int(K // cfg.greedy_increment)
    remainder = K - steps * cfg.greedy_increment
    heap = [(-rate(i), i) for i in range(n)]
    heapq.heapify(heap)
    incs = [cfg.greedy_increment] * steps
    if remainder > 1e-15 * K:
        incs.append(remainder)
    for inc in incs:
        _, i = heapq.heappop(heap)
        efforts[i] += inc
        heapq.heappush(heap, (-rate(i), i))
    return Allocation(cells, efforts, K)


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    stderr: float
    samples: int
    seed: int


def monte_carlo_true_detection(s: Scenario, allocation: Allocation, truth=None,
                               cfg: OracleConfig = OracleConfig()) -> MonteCarloEstimate:
    """Simulate searches: draw the target's location from ``truth`` and
    detect it with probability d(x, effort at x).

    ``truth`` is a discrete distribution, a single location, or None for the
    scenario's own distribution. Uses NumPy's PCG64 generator seeded with
    ``cfg.rng_seed``.
    """
    _require_discrete(s)
    rng = np.random.default_rng(cfg.rng_seed)
    cells = allocation.cells
    truth = s.distribution if truth is None else truth
    if isinstance(truth, DiscreteDistribution):
        locs = list(truth.cells)
        probs = np.array([truth.masses[c] for c in locs])
        probs = probs / probs.sum()
        draws = rng.choice(len(locs), size=cfg.mc_samples, p=probs)
        p_loc = np.array([_detect_prob(s, cells, allocation, c) for c in locs])
        p = p_loc[draws]
    else:
        p = np.full(cfg.mc_samples, _detect_prob(s, cells, allocation, truth))
    hits = rng.random(cfg.mc_samples) < p
    est = float(hits.mean())
    se = math.sqrt(est * (1 - est) / cfg.mc_samples)
    return MonteCarloEstimate(est, se, cfg.mc_samples, cfg.rng_seed)


def _detect_prob(s, cells, allocation, x) -> float:
    i = cells.locate(x)
    if i is None or allocation.efforts[i] == 0:
        return 0.0
    return float(detect_at(s.detection, x, allocation.efforts[i]))


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleRow:
    scenario_hash: str
    budget: float
    method: str
    planner_value: float
    oracle_value: float
    slack: float
    allowed: float

    @property
    def ok(self) -> bool:
        return self.slack <= self.allowed


def lipschitz_slack(s: Scenario, cfg: OracleConfig) -> float:
    """Lattice slack: step times the largest initial rate of return."""
    cells = s.cells
    q0 = cells.mass * cells.detection.dprime(np.zeros(len(cells)))
    return cfg.effort_step * float(q0.max())


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_hash", "K", "method", "planner_value", "oracle_value", "slack", "allowed", "ok"])
    for r in rows:
        w.writerow([
            r.scenario_hash,
            f"{r.budget:.9g}",
            r.method,
            f"{r.planner_value:.9g}",
            f"{r.oracle_value:.9g}",
            f"{r.slack:.9g}",
            f"{r.allowed:.9g}",
            "true" if r.ok else "false",
        ])
    return buf.getvalue()
