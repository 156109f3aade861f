"""Collision-probability estimators: path-propagation MC and FDD-sampling FDMC.

Trials are split into fixed blocks. Block ``b`` draws from its own Philox
stream keyed by ``(seed, b)``, so the collision count depends only on the
seed and the block size, never on how blocks are spread across workers.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from fdmc.errors import DomainError
from fdmc.linalg import GaussianDist, chol, normal_quantile
from fdmc.process import FddGaussian, as_sde
from fdmc.sampling import ObstacleTrack

MC_BLOCK = 16384
FDMC_BLOCK = 4096


@dataclass(frozen=True)
class EstimateResult:
    method: str
    cp: float
    ci_halfwidth: float
    confidence: float
    trials: int
    points_used: int
    wall_time_s: float
    seed: int
    hits: int
    epsilon_bound: float = 0.0
    filtered_everything: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class TrialOutcome:
    collided: bool
    first_hit_index: int | None = None
    first_hit_obstacle: int | None = None

    def __post_init__(self):
        if self.collided != (self.first_hit_index is not None) or self.collided != (
            self.first_hit_obstacle is not None
        ):
            raise ValueError("first-hit fields must be set exactly when the trial collided")


def confidence_halfwidth(freq: float, M: int, confidence: float = 0.95) -> float:
    """Normal-approximation half-width ``z_{(1-c)/2} sqrt(freq (1 - freq) / M)``."""
    if not 0.0 <= freq <= 1.0:
        raise DomainError(f"frequency must lie in [0, 1], got {freq}")
    if M < 1:
        raise DomainError(f"trial count must be positive, got {M}")
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"confidence must lie in (0, 1), got {confidence}")
    z = normal_quantile((1.0 - confidence) / 2.0)
    return z * math.sqrt(freq * (1.0 - freq) / M)


# stream ids keep the two estimators' draws independent under a shared seed
MC_STREAM = 0
FDMC_STREAM = 1


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one trial block, keyed by ``(seed, stream, block)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream, block))
    return np.random.Generator(np.random.Philox(ss))


def _blocks(M: int, size: int) -> list[tuple[int, int]]:
    return [(b, min(size, M - b * size)) for b in range(math.ceil(M / size))]


def _run_blocks(
    kernel: Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]],
    M: int,
    seed: int,
    block_size: int,
    workers: int,
    stream: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Run ``kernel(rng, n)`` over all blocks; concatenate per-trial first hits in trial order."""

    def one(job):
        b, n = job
        return kernel(block_rng(seed, b, stream), n)

    jobs = _blocks(M, block_size)
    if workers <= 1:
        parts = [one(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, jobs))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _outcomes(hit_index: np.ndarray, hit_obstacle: np.ndarray) -> list[TrialOutcome]:
    return [
        TrialOutcome(True, int(i), int(j)) if i >= 0 else TrialOutcome(False)
        for i, j in zip(hit_index, hit_obstacle)
    ]


def _check_common(obstacles, dim: int, r: float, M: int) -> list[ObstacleTrack]:
    if M < 1:
        raise DomainError(f"trial count must be positive, got {M}")
    if not r > 0:
        raise DomainError(f"vehicle radius must be positive, got {r}")
    obstacles = list(obstacles)
    for ob in obstacles:
        if ob.dim != dim:
            raise DomainError(f"obstacle dimension {ob.dim} != model dimension {dim}")
    return obstacles


def _centers(obstacles: Sequence[ObstacleTrack], times: np.ndarray, dim: int) -> np.ndarray:
    """Obstacle centers shaped ``(len(times), n_obstacles, dim)``."""
    if not obstacles:
        return np.zeros((times.size, 0, dim))
    return np.stack([ob.center(times) for ob in obstacles], axis=1)


def _mc_kernel(model, obstacles, r, T, N, exact_step):
    sde = as_sde(model)
    d, tau = sde.dim, T / N
    if exact_step:
        phi, drift, gram = sde.transition(tau)
        loading = chol(gram)[0]
    else:
        phi = np.eye(sde.n_state) + sde.A * tau
        drift = sde.c * tau
        loading = sde.S * math.sqrt(tau)
    times = np.arange(1, N + 1) * tau
    centers = _centers(obstacles, times, d)
    margin2 = [(r + ob.radius) ** 2 for ob in obstacles]
    # state-major layout: x has shape (n_state, trials)
    drift = drift[:, None]
    tp, init = sde.Tp, sde.init
    selector = _row_selector(tp)
    n_noise = loading.shape[1]

    def kernel(rng: np.random.Generator, n: int):
        x = init.mean[:, None] + init.factor @ rng.standard_normal((init.dim, n))
        hit_index = np.full(n, -1)
        hit_obstacle = np.full(n, -1)
        alive = np.ones(n, dtype=bool)
        n_alive = n
        for k in range(N):
            x = phi @ x + drift + loading @ rng.standard_normal((n_noise, n))
            p = x[selector] if selector is not None else tp @ x
            for j, m2 in enumerate(margin2):
                c = centers[k, j]
                d2 = (p[0] - c[0]) ** 2
                for a in range(1, d):
                    d2 += (p[a] - c[a]) ** 2
                new = d2 <= m2
                new &= alive
                if new.any():
                    hit_index[new] = k
                    hit_obstacle[new] = j
                    alive &= ~new
                    n_alive = int(alive.sum())
            if n_alive == 0:
                break
        return hit_index, hit_obstacle

    return kernel


def _row_selector(tp: np.ndarray) -> np.ndarray | None:
    """Row indices if ``tp`` just picks state components, else None."""
    if np.all((tp == 0) | (tp == 1)) and np.all(tp.sum(axis=1) == 1):
        return tp.argmax(axis=1)
    return None


def mc_estimate(
    model,
    obstacles,
    r: float,
    T: float,
    N: int,
    M: int,
    seed: int,
    *,
    confidence: float = 0.95,
    workers: int = 1,
    exact_step: bool = False,
    block_size: int = MC_BLOCK,
) -> EstimateResult:
    """Brute-force estimate by propagating ``M`` sample paths over ``N`` equal steps.

    Each step applies ``x <- (I + A tau) x + tau c + S dB`` with
    ``dB ~ N(0, tau I)`` (``exact_step`` swaps in the exact Gaussian
    transition). A trial collides if at some step ``k = 1..N`` the vehicle
    center lies within ``r + R_j`` of some obstacle center.
    """
    if N < 1 or T <= 0:
        raise DomainError("need N >= 1 and T > 0")
    sde = as_sde(model)
    obstacles = _check_common(obstacles, sde.dim, r, M)
    start = time.perf_counter()
    kernel = _mc_kernel(sde, obstacles, r, T, int(N), exact_step)
    hit_index, _ = _run_blocks(kernel, int(M), seed, block_size, workers, MC_STREAM)
    hits = int(np.count_nonzero(hit_index >= 0))
    elapsed = time.perf_counter() - start
    cp = hits / M
    return EstimateResult(
        method="mc",
        cp=cp,
        ci_halfwidth=confidence_halfwidth(cp, M, confidence),
        confidence=confidence,
        trials=int(M),
        points_used=int(N),
        wall_time_s=elapsed,
        seed=int(seed),
        hits=hits,
    )


def mc_trial_outcomes(model, obstacles, r, T, N, M, seed, *, exact_step=False, block_size=MC_BLOCK):
    """Per-trial indicators of :func:`mc_estimate` for the same seed."""
    sde = as_sde(model)
    obstacles = _check_common(obstacles, sde.dim, r, M)
    kernel = _mc_kernel(sde, obstacles, r, T, int(N), exact_step)
    return _outcomes(*_run_blocks(kernel, int(M), seed, block_size, 1, MC_STREAM))


def _fdmc_kernel(fdd: FddGaussian, obstacles, r):
    centers = _centers(obstacles, fdd.times, fdd.dim)
    margin2 = np.array([(r + ob.radius) ** 2 for ob in obstacles])
    n_pts = fdd.n_points

    def kernel(rng: np.random.Generator, n: int):
        axes = fdd.sample_axes(rng, n)
        first = np.full(n, n_pts)
        first_ob = np.full(n, -1)
        for j in range(centers.shape[1]):
            d2 = (axes[0] - centers[:, j, 0]) ** 2
            for a in range(1, fdd.dim):
                d2 += (axes[a] - centers[:, j, a]) ** 2
            inside = d2 <= margin2[j]
            k = np.where(inside.any(axis=1), inside.argmax(axis=1), n_pts)
            better = k < first
            first[better] = k[better]
            first_ob[better] = j
        return np.where(first < n_pts, first, -1), first_ob

    return kernel


def fdmc_estimate(
    fdd: FddGaussian | None,
    obstacles,
    r: float,
    M: int,
    seed: int,
    *,
    confidence: float = 0.95,
    workers: int = 1,
    epsilon_bound: float = 0.0,
    block_size: int = FDMC_BLOCK,
) -> EstimateResult:
    """Estimate from ``M`` direct draws of the joint positions at the FDD times.

    An empty FDD (every point filtered out) gives ``cp = 0`` with zero width
    and ``filtered_everything`` set.
    """
    start = time.perf_counter()
    if fdd is None or fdd.n_points == 0:
        if M < 1:
            raise DomainError(f"trial count must be positive, got {M}")
        return EstimateResult(
            method="fdmc",
            cp=0.0,
            ci_halfwidth=0.0,
            confidence=confidence,
            trials=int(M),
            points_used=0,
            wall_time_s=time.perf_counter() - start,
            seed=int(seed),
            hits=0,
            epsilon_bound=epsilon_bound,
            filtered_everything=True,
        )
    obstacles = _check_common(obstacles, fdd.dim, r, M)
    kernel = _fdmc_kernel(fdd, obstacles, r)
    hit_index, _ = _run_blocks(kernel, int(M), seed, block_size, workers, FDMC_STREAM)
    hits = int(np.count_nonzero(hit_index >= 0))
    cp = hits / M
    return EstimateResult(
        method="fdmc",
        cp=cp,
        ci_halfwidth=confidence_halfwidth(cp, M, confidence),
        confidence=confidence,
        trials=int(M),
        points_used=fdd.n_points,
        wall_time_s=time.perf_counter() - start,
        seed=int(seed),
        hits=hits,
        epsilon_bound=epsilon_bound,
    )


def fdmc_trial_outcomes(fdd: FddGaussian, obstacles, r, M, seed, *, block_size=FDMC_BLOCK):
    obstacles = _check_common(obstacles, fdd.dim, r, M)
    return _outcomes(*_run_blocks(_fdmc_kernel(fdd, obstacles, r), int(M), seed, block_size, 1, FDMC_STREAM))


def point_fdd(dist: GaussianDist, time_point: float = 1.0) -> FddGaussian:
    """Single-time FDD with the given position law."""
    return FddGaussian(np.array([float(time_point)]), dist, dist.dim)
