"""Gaussian moments of linear stochastic dynamics.

Two model families share one small duck-typed surface (``dim``,
``position_mean``, ``velocity_mean``, ``position_marginals``):

* :class:`LinearSde` -- ``dx = A x dt + c dt + S dB`` with Gaussian ``x(0)``.
* :class:`ChannelSet` -- independent per-axis second-order channels
  ``x'' + kd x' + kp x = c + G dB/dt`` with closed-form moments.

:func:`build_fdd` turns either into the joint position law at a finite set of
times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from fdmc.errors import DimensionError, DomainError, UnsupportedModelError
from fdmc.linalg import GaussianDist, forward_gram, mat_exp, symmetrize

ROOT_RTOL = 1e-10


@dataclass(frozen=True)
class ChannelModel:
    """One independent axis: ``x'' + kd x' + kp x = c + G * white noise``.

    The initial state ``(x(0), x'(0))`` is Gaussian with means ``(mu0, mudot0)``,
    standard deviations ``(sigma_x, sigma_v)`` and correlation ``rho``.
    """

    kd: float
    kp: float
    c: float = 0.0
    G: float = 0.0
    mu0: float = 0.0
    mudot0: float = 0.0
    sigma_x: float = 0.0
    sigma_v: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        disc = self.kd**2 - 4.0 * self.kp
        if self.kp == 0.0 or disc <= 0.0:
            raise UnsupportedModelError(
                f"channel needs two distinct nonzero real roots (kd^2 - 4 kp > 0, kp != 0); "
                f"got kd={self.kd}, kp={self.kp}"
            )
        if self.sigma_x < 0 or self.sigma_v < 0:
            raise DomainError("initial standard deviations must be nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError(f"rho must lie in [-1, 1], got {self.rho}")

    @property
    def lambda1(self) -> float:
        return 0.5 * (-self.kd - math.sqrt(self.kd**2 - 4.0 * self.kp))

    @property
    def lambda2(self) -> float:
        return 0.5 * (-self.kd + math.sqrt(self.kd**2 - 4.0 * self.kp))

    def _basis(self, t):
        """Impulse responses of position to x(0) and to x'(0)."""
        l1, l2 = self.lambda1, self.lambda2
        d = l2 - l1
        e1, e2 = np.exp(l1 * t), np.exp(l2 * t)
        return (l2 * e1 - l1 * e2) / d, (e2 - e1) / d

    def mean(self, t):
        l1, l2 = self.lambda1, self.lambda2
        a, b = self._basis(t)
        forced = (l1 * np.exp(l2 * t) - l2 * np.exp(l1 * t) + l2 - l1) / (self.kp * (l2 - l1))
        return a * self.mu0 + b * self.mudot0 + self.c * forced

    def velocity_mean(self, t):
        l1, l2 = self.lambda1, self.lambda2
        d = l2 - l1
        _, b = self._basis(t)
        bdot = (l2 * np.exp(l2 * t) - l1 * np.exp(l1 * t)) / d
        return -self.kp * b * self.mu0 + bdot * self.mudot0 + self.c * b

    def cov(self, s, t):
        """Closed-form ``Cov[x(s), x(t)]``, broadcasting over ``s`` and ``t``."""
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        s, t = np.minimum(s, t), np.maximum(s, t)
        l1, l2, kd, kp = self.lambda1, self.lambda2, self.kd, self.kp
        d = l2 - l1
        a_s, b_s = self._basis(s)
        a_t, b_t = self._basis(t)
        c_x = a_s * a_t * self.sigma_x**2
        c_v = b_s * b_t * self.sigma_v**2
        c_xv = (a_s * b_t + a_t * b_s) * self.rho * self.sigma_x * self.sigma_v
        c_u = self.G**2 * (
            (l1 * np.exp(l2 * (t - s)) - l2 * np.exp(l1 * (t - s))) / (-2.0 * kp * kd * d)
            + (l1 * np.exp(l2 * (s + t)) + l2 * np.exp(l1 * (s + t))) / (2.0 * kp * d**2)
            + (np.exp(l2 * s + l1 * t) + np.exp(l2 * t + l1 * s)) / (kd * d**2)
        )
        return c_x + c_v + c_xv + c_u

    def to_sde(self) -> LinearSde:
        """The equivalent two-state system ``x = (position, velocity)``."""
        return ChannelSet((self,)).to_sde()


def channel_moments(ch: ChannelModel, s: float, t: float) -> tuple[float, float]:
    """Return ``(E[x(t)], Cov[x(s), x(t)])`` from the closed-form channel solution."""
    if s < 0 or t < 0:
        raise DomainError("times must be nonnegative")
    return float(ch.mean(t)), float(ch.cov(s, t))


@dataclass(frozen=True, eq=False)
class LinearSde:
    """``dx = A x dt + c dt + S dB`` with ``x(0) ~ init``.

    ``Tp`` and ``Tv`` extract position and velocity from the state.
    """

    A: np.ndarray
    c: np.ndarray
    S: np.ndarray
    init: GaussianDist
    Tp: np.ndarray
    Tv: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        c = np.asarray(self.c, dtype=float).reshape(-1)
        S = np.asarray(self.S, dtype=float).reshape(n, -1)
        Tp = np.atleast_2d(np.asarray(self.Tp, dtype=float))
        Tv = np.atleast_2d(np.asarray(self.Tv, dtype=float))
        if c.size != n or self.init.dim != n:
            raise DimensionError("c and the initial state must match the size of A")
        if Tp.shape[1] != n or Tv.shape != Tp.shape:
            raise DimensionError("Tp and Tv must both be d x n")
        for name, value in (("A", A), ("c", c), ("S", S), ("Tp", Tp), ("Tv", Tv)):
            object.__setattr__(self, name, value)

    @property
    def n_state(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.Tp.shape[0]

    @property
    def Q(self) -> np.ndarray:
        return self.S @ self.S.T

    def transition(self, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Exact one-step law over ``h``: ``x' = Phi x + drift + N(0, Qd)``."""
        key = float(h)
        if key not in self._cache:
            n = self.n_state
            aug = np.zeros((n + 1, n + 1))
            aug[:n, :n] = self.A
            aug[:n, n] = self.c
            e = mat_exp(aug, h)
            self._cache[key] = (e[:n, :n], e[:n, n], forward_gram(self.A, self.Q, h))
        return self._cache[key]

    def mean(self, t: float) -> np.ndarray:
        phi, drift, _ = self.transition(t)
        return phi @ self.init.mean + drift

    def marginal_cov(self, t: float) -> np.ndarray:
        phi, _, gram = self.transition(t)
        return symmetrize(phi @ self.init.cov @ phi.T + gram)

    def position_mean(self, times) -> np.ndarray:
        return np.array([self.Tp @ self.mean(t) for t in np.atleast_1d(times)])

    def velocity_mean(self, times) -> np.ndarray:
        return np.array([self.Tv @ self.mean(t) for t in np.atleast_1d(times)])

    def state_marginals(self, times) -> tuple[np.ndarray, np.ndarray]:
        """State means ``(k, n)`` and covariances ``(k, n, n)`` along increasing ``times``.

        Propagated step by step so repeated step lengths reuse one transition.
        """
        times = _increasing(times, strict=False)
        means = np.empty((times.size, self.n_state))
        covs = np.empty((times.size, self.n_state, self.n_state))
        m, p, prev = self.init.mean, self.init.cov, 0.0
        for k, t in enumerate(times):
            h = _round_step(t - prev)
            if h > 0:
                phi, drift, gram = self.transition(h)
                m = phi @ m + drift
                p = symmetrize(phi @ p @ phi.T + gram)
            means[k], covs[k], prev = m, p, t
        return means, covs

    def position_marginals(self, times) -> tuple[np.ndarray, np.ndarray]:
        means, covs = self.state_marginals(times)
        return means @ self.Tp.T, self.Tp @ covs @ self.Tp.T


def sde_moments(model: LinearSde, s: float, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(E[x(t)], Cov[x(s), x(t)])`` for the general linear model.

    The covariance is ``exp(A s) (Sigma0 + int_0^min(s,t) exp(-A u) Q exp(-A^T u) du)
    exp(A^T t)``, evaluated in the equivalent forward form
    ``P(s) exp(A^T (t - s))`` for ``s <= t`` with ``P`` the marginal covariance.
    """
    if s < 0 or t < 0:
        raise DomainError("times must be nonnegative")
    mean_t = model.mean(t)
    if s <= t:
        cov = model.marginal_cov(s) @ mat_exp(model.A, t - s).T
    else:
        cov = mat_exp(model.A, s - t) @ model.marginal_cov(t)
    return mean_t, cov


@dataclass(frozen=True)
class ChannelSet:
    """Independent channels, one per spatial axis."""

    channels: tuple[ChannelModel, ...]

    def __post_init__(self):
        chans = tuple(self.channels)
        if not 1 <= len(chans) <= 3:
            raise DimensionError(f"need 1 to 3 channels, got {len(chans)}")
        object.__setattr__(self, "channels", chans)

    @property
    def dim(self) -> int:
        return len(self.channels)

    def position_mean(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.stack([ch.mean(times) for ch in self.channels], axis=-1)

    def velocity_mean(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.stack([ch.velocity_mean(times) for ch in self.channels], axis=-1)

    def position_marginals(self, times) -> tuple[np.ndarray, np.ndarray]:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        var = np.stack([ch.cov(times, times) for ch in self.channels], axis=-1)
        covs = np.zeros((times.size, self.dim, self.dim))
        idx = np.arange(self.dim)
        covs[:, idx, idx] = var
        return self.position_mean(times), covs

    def to_sde(self) -> LinearSde:
        """Stack the channels as ``x = (p_1..p_d, v_1..v_d)``."""
        d = self.dim
        ch = self.channels
        eye = np.eye(d)
        A = np.block([[np.zeros((d, d)), eye], [-np.diag([c.kp for c in ch]), -np.diag([c.kd for c in ch])]])
        c = np.concatenate([np.zeros(d), [k.c for k in ch]])
        S = np.vstack([np.zeros((d, d)), np.diag([k.G for k in ch])])
        mean0 = np.concatenate([[k.mu0 for k in ch], [k.mudot0 for k in ch]])
        sx = np.array([k.sigma_x for k in ch])
        sv = np.array([k.sigma_v for k in ch])
        xv = np.diag([k.rho for k in ch]) * np.outer(sx, sv)
        cov0 = np.block([[np.diag(sx**2), xv], [xv.T, np.diag(sv**2)]])
        Tp = np.hstack([eye, np.zeros((d, d))])
        Tv = np.hstack([np.zeros((d, d)), eye])
        return LinearSde(A, c, S, GaussianDist(mean0, cov0), Tp, Tv)


ProcessModel = Union[LinearSde, ChannelSet]


def as_model(model) -> ProcessModel:
    """Accept a model, a single channel, or a sequence of channels."""
    if isinstance(model, (LinearSde, ChannelSet)):
        return model
    if isinstance(model, ChannelModel):
        return ChannelSet((model,))
    if isinstance(model, Sequence) and model and all(isinstance(m, ChannelModel) for m in model):
        return ChannelSet(tuple(model))
    raise TypeError(f"unsupported process model: {type(model).__name__}")


def as_sde(model) -> LinearSde:
    model = as_model(model)
    return model if isinstance(model, LinearSde) else model.to_sde()


@dataclass(frozen=True, eq=False)
class FddGaussian:
    """Joint law of the positions at ``times``.

    ``dist`` stacks point-major: all ``dim`` coordinates at ``times[0]``, then
    ``times[1]`` and so on. ``channel_blocks`` holds the per-axis ``n x n``
    laws when the axes are independent; sampling then factors per axis.
    """

    times: np.ndarray
    dist: GaussianDist
    dim: int
    channel_blocks: tuple[GaussianDist, ...] | None = None

    @property
    def n_points(self) -> int:
        return self.times.size

    @property
    def mean_positions(self) -> np.ndarray:
        return self.dist.mean.reshape(self.n_points, self.dim)

    def sample_axes(self, rng: np.random.Generator, size: int) -> list[np.ndarray]:
        """Draw ``size`` joint samples as one ``(size, n_points)`` array per axis."""
        if self.channel_blocks is not None:
            return [
                blk.mean + rng.standard_normal((size, self.n_points)) @ blk.factor.T
                for blk in self.channel_blocks
            ]
        z = rng.standard_normal((size, self.dist.dim))
        flat = (self.dist.mean + z @ self.dist.factor.T).reshape(size, self.n_points, self.dim)
        return [np.ascontiguousarray(flat[..., a]) for a in range(self.dim)]

    def sample_positions(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` joint samples shaped ``(size, n_points, dim)``."""
        return np.stack(self.sample_axes(rng, size), axis=-1)

    def drop(self, k: int) -> FddGaussian:
        """Marginalize out the ``k``-th time point."""
        keep = np.delete(np.arange(self.n_points), k)
        idx = (keep[:, None] * self.dim + np.arange(self.dim)).reshape(-1)
        blocks = None
        if self.channel_blocks is not None:
            blocks = tuple(b.marginal(keep) for b in self.channel_blocks)
        return FddGaussian(self.times[keep], self.dist.marginal(idx), self.dim, blocks)


def build_fdd(model, times, horizon: float | None = None) -> FddGaussian:
    """Joint Gaussian of the positions at strictly increasing ``times``."""
    model = as_model(model)
    times = _increasing(times, strict=True)
    if times.size and horizon is not None and times[-1] > horizon * (1 + 1e-12):
        raise DomainError(f"time {times[-1]} exceeds the horizon {horizon}")
    n, d = times.size, model.dim

    if isinstance(model, ChannelSet):
        blocks = tuple(
            GaussianDist(ch.mean(times), symmetrize(ch.cov(times[:, None], times[None, :])))
            for ch in model.channels
        )
        mean = np.stack([b.mean for b in blocks], axis=-1).reshape(-1)
        cov = np.zeros((n, d, n, d))
        for axis, blk in enumerate(blocks):
            cov[:, axis, :, axis] = blk.cov
        return FddGaussian(times, GaussianDist(mean, cov.reshape(n * d, n * d)), d, blocks)

    means, covs = model.state_marginals(times)
    # cross[i, j] = Tp Cov[x(s_i), x(s_j)] for i <= j, built column by column:
    # Cov[x(s_i), x(s_j)] = Cov[x(s_i), x(s_{j-1})] Phi_j^T
    ns = model.n_state
    state_cross = np.empty((n, ns, ns))
    pos_cov = np.zeros((n, d, n, d))
    for j in range(n):
        if j > 0:
            phi = model.transition(_round_step(times[j] - times[j - 1]))[0]
            state_cross[:j] = state_cross[:j] @ phi.T
        state_cross[j] = covs[j]
        blocks = model.Tp @ state_cross[: j + 1] @ model.Tp.T
        pos_cov[: j + 1, :, j, :] = blocks
        pos_cov[j, :, : j + 1, :] = np.swapaxes(blocks, 1, 2).transpose(1, 0, 2)
    mean = (means @ model.Tp.T).reshape(-1)
    return FddGaussian(times, GaussianDist(mean, symmetrize(pos_cov.reshape(n * d, n * d))), d)


def _increasing(times, strict: bool) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.ndim != 1:
        raise DimensionError("times must be a vector")
    if times.size and times[0] < 0:
        raise DomainError("times must be nonnegative")
    steps = np.diff(times)
    if np.any(steps <= 0) if strict else np.any(steps < 0):
        raise DomainError("times must be " + ("strictly increasing" if strict else "nondecreasing"))
    return times


def _round_step(h: float) -> float:
    # merge step lengths that differ only by float noise so transitions are reused
    return float(np.round(h, 12))
