"""Choosing the time points at which collisions are checked."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from fdmc.errors import DegeneratePopulationError, DimensionError, DomainError
from fdmc.linalg import Ellipsoid, chi2_quantile, dist_point_to_ellipsoid
from fdmc.process import ChannelSet, as_model

log = logging.getLogger(__name__)

EPS_TARGET = 1e-4


class PlanMode(str, enum.Enum):
    EQUITIME = "equitime"
    ROOTSOLVE = "equidistant-rootsolve"
    ROULETTE = "equidistant-roulette"
    FILTERED = "importance-filtered"


@dataclass(frozen=True, eq=False)
class SamplingPlan:
    times: np.ndarray
    mode: PlanMode
    parent_count: int = 0
    # filtered plans only: positions of the kept times within the parent plan
    parent_index: np.ndarray | None = None
    alpha: float | None = None

    def __len__(self) -> int:
        return self.times.size

    def retained_intervals(self, parent: SamplingPlan) -> list[tuple[float, float]]:
        """Maximal runs of consecutive parent points kept by the filter."""
        if self.parent_index is None or self.parent_index.size == 0:
            return []
        idx = self.parent_index
        breaks = np.flatnonzero(np.diff(idx) > 1)
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks, [idx.size - 1]])
        return [(float(parent.times[idx[a]]), float(parent.times[idx[b]])) for a, b in zip(starts, ends)]


@dataclass(frozen=True, eq=False)
class ObstacleTrack:
    """Sphere of ``radius`` whose center moves as ``center0 + velocity * t``."""

    center0: np.ndarray
    velocity: np.ndarray
    radius: float

    def __post_init__(self):
        c0 = np.atleast_1d(np.asarray(self.center0, dtype=float))
        v = np.atleast_1d(np.asarray(self.velocity, dtype=float))
        if v.shape != c0.shape:
            raise DimensionError("obstacle center and velocity must have the same dimension")
        if not self.radius > 0:
            raise DomainError(f"obstacle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center0", c0)
        object.__setattr__(self, "velocity", v)

    @property
    def dim(self) -> int:
        return self.center0.size

    def center(self, t):
        """Center at time(s) ``t``; shape ``(d,)`` for a scalar, ``(k, d)`` for a vector."""
        t = np.asarray(t, dtype=float)
        return self.center0 + t[..., None] * self.velocity


@dataclass(frozen=True, eq=False)
class Population:
    """Individuals with nonnegative fitness, laid out on ``[lo, hi]``."""

    individuals: np.ndarray
    fitness: np.ndarray
    lo: float | None = None
    hi: float | None = None
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        ind = np.atleast_1d(np.asarray(self.individuals, dtype=float))
        fit = np.atleast_1d(np.asarray(self.fitness, dtype=float))
        if ind.shape != fit.shape:
            raise DimensionError("individuals and fitness must have the same length")
        if np.any(fit < 0) or not np.all(np.isfinite(fit)):
            raise DomainError("fitness must be finite and nonnegative")
        total = fit.sum()
        if not total > 0:
            raise DegeneratePopulationError("total fitness is zero")
        cum = np.cumsum(fit) / total
        cum[-1] = 1.0
        object.__setattr__(self, "individuals", ind)
        object.__setattr__(self, "fitness", fit)
        object.__setattr__(self, "cumulative", cum)
        object.__setattr__(self, "lo", float(ind[0] if self.lo is None else self.lo))
        object.__setattr__(self, "hi", float(ind[-1] if self.hi is None else self.hi))


def roulette_index(pop: Population, r: float) -> int:
    """Index ``i`` of the bin with ``CF[i-1] <= r < CF[i]`` (``CF[-1] = 0``)."""
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"roulette draw must lie in [0, 1), got {r}")
    i = int(np.searchsorted(pop.cumulative, r, side="right"))
    if i == pop.cumulative.size:
        # r == 1: last bin with positive width
        i = int(np.flatnonzero(pop.fitness > 0)[-1])
    return i


def roulette_select(pop: Population, r: float) -> float:
    """Continuous roulette draw.

    The winning bin spans from the midpoint with its left neighbour to the
    midpoint with its right neighbour, and ``r`` is mapped linearly across
    it, so repeated draws never return the same value. The outermost bins
    extend to ``pop.lo`` and ``pop.hi``.
    """
    i = roulette_index(pop, r)
    ind, cum = pop.individuals, pop.cumulative
    left = pop.lo if i == 0 else 0.5 * (ind[i - 1] + ind[i])
    right = pop.hi if i == ind.size - 1 else 0.5 * (ind[i] + ind[i + 1])
    cf_prev = 0.0 if i == 0 else cum[i - 1]
    frac = (r - cf_prev) / (cum[i] - cf_prev)
    return float(left + frac * (right - left))


def equitime_plan(T: float, N: int) -> SamplingPlan:
    if not T > 0:
        raise DomainError(f"horizon must be positive, got {T}")
    if N < 1 or int(N) != N:
        raise DomainError(f"point count must be a positive integer, got {N}")
    return SamplingPlan(np.arange(1, int(N) + 1) * (T / N), PlanMode.EQUITIME)


def equidistant_plan(
    model,
    T: float,
    N_ed: int,
    variant: PlanMode | str = PlanMode.ROOTSOLVE,
    rng: np.random.Generator | None = None,
    population_size: int | None = None,
) -> SamplingPlan:
    """Times whose expected positions are (probabilistically) equally spaced.

    ``rootsolve`` solves ``E[x(t_k)] = x_k`` on the axis with the largest
    expected displacement, for ``x_k`` an arithmetic grid from ``E[x(0)]`` to
    ``E[x(T)]``; it falls back to ``roulette`` if that axis is not monotone.
    ``roulette`` draws ``N_ed`` times from a fine equitime population weighted
    by expected speed, then sorts and merges draws closer than ``T/(10 N_ed)``.
    """
    model = as_model(model)
    variant = PlanMode(variant)
    if variant not in (PlanMode.ROOTSOLVE, PlanMode.ROULETTE):
        raise DomainError(f"not an equidistant variant: {variant.value}")
    if not T > 0 or N_ed < 1:
        raise DomainError("need T > 0 and N_ed >= 1")

    if variant is PlanMode.ROOTSOLVE:
        times = _rootsolve_times(model, T, int(N_ed))
        if times is not None:
            return SamplingPlan(times, PlanMode.ROOTSOLVE)
        log.warning("expected position is not monotone on [0, %g]; using roulette sampling", T)

    if rng is None:
        raise DomainError("the roulette variant needs a random generator")
    size = population_size or max(10 * int(N_ed), 1000)
    grid = equitime_plan(T, size).times
    speed = np.linalg.norm(model.velocity_mean(grid), axis=-1)
    if not speed.sum() > 0:
        log.warning("expected speed is zero on [0, %g]; using equitime sampling", T)
        return equitime_plan(T, N_ed)
    pop = Population(grid, speed, lo=0.0, hi=T)
    draws = np.sort([roulette_select(pop, r) for r in rng.random(int(N_ed))])
    return SamplingPlan(_merge_close(draws, T / (10.0 * N_ed)), PlanMode.ROULETTE)


def _rootsolve_times(model, T: float, N_ed: int) -> np.ndarray | None:
    grid = np.linspace(0.0, T, max(20 * N_ed, 2001))
    pos = model.position_mean(grid)
    axis = int(np.argmax(np.abs(pos[-1] - pos[0])))
    x = pos[:, axis]
    span = x[-1] - x[0]
    scale = max(np.abs(x).max(), 1.0)
    if abs(span) <= 1e-12 * scale:
        log.warning("no expected displacement on [0, %g]; using equitime sampling", T)
        return equitime_plan(T, N_ed).times
    sign = np.sign(span)
    if np.any(sign * np.diff(x) < -1e-12 * scale):
        return None

    levels = x[0] + np.arange(1, N_ed + 1) * (span / N_ed)
    # bracket each level on the grid, then bisect all levels together
    hi_idx = np.clip(np.searchsorted(sign * x, sign * levels, side="left"), 1, grid.size - 1)
    lo_t, hi_t = grid[hi_idx - 1], grid[hi_idx]

    def position(t):
        if isinstance(model, ChannelSet):
            return model.channels[axis].mean(t)
        return model.position_mean(t)[:, axis]

    for _ in range(64):
        mid = 0.5 * (lo_t + hi_t)
        below = sign * (position(mid) - levels) < 0
        lo_t = np.where(below, mid, lo_t)
        hi_t = np.where(below, hi_t, mid)
    times = hi_t
    times[-1] = T
    return _merge_close(times, 0.0)


def _merge_close(times: np.ndarray, tol: float) -> np.ndarray:
    """Keep the first of any run of points within ``tol`` of the last kept one."""
    kept = []
    for t in times:
        if not kept or t - kept[-1] > tol:
            kept.append(t)
    return np.asarray(kept, dtype=float)


def default_filter_alpha(n_points: int, eps_target: float = EPS_TARGET) -> float:
    """Per-point level whose union bound over ``n_points`` is ``eps_target``."""
    return eps_target / max(int(n_points), 1)


def importance_filter(
    plan: SamplingPlan,
    model,
    obstacles,
    r: float,
    alpha: float | None = None,
) -> SamplingPlan:
    """Keep the times at which some augmented obstacle touches the error ellipsoid.

    At each time the position marginal defines the ellipsoid with confidence
    ``1 - alpha``; a time is dropped only if every obstacle sphere inflated by
    ``r`` is disjoint from it, which bounds the per-point collision
    probability by ``alpha``.
    """
    model = as_model(model)
    if alpha is None:
        alpha = default_filter_alpha(len(plan))
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    obstacles = list(obstacles)
    for ob in obstacles:
        if ob.dim != model.dim:
            raise DimensionError(f"obstacle dimension {ob.dim} != model dimension {model.dim}")
    times = plan.times
    if not obstacles or times.size == 0:
        return SamplingPlan(times[:0], PlanMode.FILTERED, len(plan), np.arange(0), alpha)

    q = chi2_quantile(alpha, model.dim)
    means, covs = model.position_marginals(times)
    reach = np.sqrt(q * np.linalg.eigvalsh(covs)[:, -1])
    keep = np.zeros(times.size, dtype=bool)
    for ob in obstacles:
        gap = np.linalg.norm(ob.center(times) - means, axis=-1)
        margin = r + ob.radius
        keep |= gap <= margin
        # the ellipsoid lies inside the ball of radius `reach`; only in-between cases need the exact distance
        unsure = ~keep & (gap - reach <= margin)
        for k in np.flatnonzero(unsure):
            ell = Ellipsoid(means[k], covs[k], q)
            if dist_point_to_ellipsoid(ob.center(times[k]), ell) <= margin:
                keep[k] = True
    idx = np.flatnonzero(keep)
    return SamplingPlan(times[idx], PlanMode.FILTERED, len(plan), idx, alpha)
