"""Numerical kernel: matrix exponentials, Gramians, Gaussian machinery, ellipsoids.

Everything here is a pure function of its inputs except the samplers, which
advance the caller's ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.stats

from fdmc.errors import DimensionError, DomainError, NotPSDError

SYM_RTOL = 1e-10
PSD_RTOL = 1e-8
JITTER_SCALE = 1e-12


def _square(a, name: str = "matrix") -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def mat_exp(a, t: float = 1.0) -> np.ndarray:
    """Return ``exp(a * t)``; the identity is returned exactly for ``t == 0``."""
    a = _square(a, "A")
    if t == 0:
        return np.eye(a.shape[0])
    return scipy.linalg.expm(a * t)


def forward_gram(a, q, t: float) -> np.ndarray:
    """Return ``int_0^t exp(a u) q exp(a^T u) du``.

    Van Loan's block exponential is evaluated on a step short enough that the
    block matrix stays well scaled, then the interval is doubled up to ``t``
    with ``W(2h) = W(h) + exp(a h) W(h) exp(a h)^T``. Every doubling adds PSD
    terms, so the result stays accurate for stable ``a`` over long horizons
    where the backward form ``int exp(-a u) ...`` overflows.
    """
    a = _square(a, "A")
    q = _square(q, "Q")
    n = a.shape[0]
    if q.shape != a.shape:
        raise DimensionError(f"Q shape {q.shape} does not match A shape {a.shape}")
    if t < 0:
        raise DomainError(f"integration horizon must be nonnegative, got {t}")
    if t == 0:
        return np.zeros((n, n))

    norm = np.linalg.norm(a, 1)
    doublings = max(0, math.ceil(math.log2(norm * t / 0.5))) if norm * t > 0.5 else 0
    h = t / 2.0**doublings

    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -a
    block[:n, n:] = q
    block[n:, n:] = a.T
    e = scipy.linalg.expm(block * h)
    phi = e[n:, n:].T
    gram = phi @ e[:n, n:]
    for _ in range(doublings):
        gram = gram + phi @ gram @ phi.T
        phi = phi @ phi
    return symmetrize(gram)


def gram_integral(a, s, t: float) -> np.ndarray:
    """Return ``int_0^t exp(-a u) s s^T exp(-a^T u) du`` (symmetric PSD)."""
    a = _square(a, "A")
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if s.shape[0] != a.shape[0]:
        raise DimensionError(f"S has {s.shape[0]} rows, A has {a.shape[0]}")
    return forward_gram(-a, s @ s.T, t)


def chol(p) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a PSD matrix.

    Returns ``(L, jitter)``. ``jitter`` is 0.0 when ``p`` factorizes as given;
    otherwise ``L`` factors ``p + jitter * I`` where jitter starts at
    ``1e-12 * trace(p) / n`` and grows tenfold until the factorization succeeds.
    A zero matrix yields a zero factor.

    Raises:
        NotPSDError: if an eigenvalue lies below ``-1e-8 * max eigenvalue``.
    """
    p = symmetrize(_square(p, "P"))
    n = p.shape[0]
    try:
        return np.linalg.cholesky(p), 0.0
    except np.linalg.LinAlgError:
        pass

    eig = np.linalg.eigvalsh(p)
    top = max(eig.max(), 0.0)
    if eig.min() < -PSD_RTOL * top or (top == 0.0 and eig.min() < 0.0):
        raise NotPSDError(
            f"matrix is not positive semi-definite: min eigenvalue {eig.min():.3e}, "
            f"max {top:.3e}"
        )
    trace = float(np.trace(p))
    if trace == 0.0:
        return np.zeros_like(p), 0.0

    jitter = JITTER_SCALE * trace / n
    for _ in range(7):
        try:
            return np.linalg.cholesky(p + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPSDError(f"Cholesky failed even with jitter {jitter / 10.0:.3e}")


def chi2_quantile(alpha: float, dof: int) -> float:
    """Upper ``alpha`` quantile ``q`` of chi-square(dof): ``P(X > q) = alpha``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if dof < 1 or int(dof) != dof:
        raise DomainError(f"dof must be a positive integer, got {dof}")
    return float(scipy.stats.chi2.isf(alpha, int(dof)))


def normal_quantile(alpha: float) -> float:
    """Upper ``alpha`` quantile ``z`` of N(0, 1): ``P(X > z) = alpha``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return float(scipy.stats.norm.isf(alpha))


@dataclass(frozen=True, eq=False)
class GaussianDist:
    """Multivariate normal ``N(mean, cov)``. ``cov`` may be singular."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1:
            raise DimensionError("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise DomainError("mean and cov must be finite")
        scale = max(np.abs(cov).max(), np.finfo(float).tiny)
        if np.abs(cov - cov.T).max() > SYM_RTOL * scale:
            raise DomainError("cov is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def _factor(self) -> tuple[np.ndarray, float]:
        return chol(self.cov)

    @property
    def factor(self) -> np.ndarray:
        return self._factor[0]

    @property
    def jitter(self) -> float:
        return self._factor[1]

    def marginal(self, idx) -> GaussianDist:
        idx = np.asarray(idx, dtype=int)
        return GaussianDist(self.mean[idx], self.cov[np.ix_(idx, idx)])


def mvn_sample(dist: GaussianDist, rng: np.random.Generator) -> np.ndarray:
    """Draw one vector ``mean + L z`` with ``z`` standard normal from ``rng``."""
    return dist.mean + dist.factor @ rng.standard_normal(dist.dim)


def mvn_samples(dist: GaussianDist, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` rows; row ``i`` has the same law as :func:`mvn_sample`."""
    z = rng.standard_normal((size, dist.dim))
    return dist.mean + z @ dist.factor.T


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Solid ellipsoid ``{x : (x - center)^T shape^{-1} (x - center) <= threshold}``."""

    center: np.ndarray
    shape: np.ndarray
    threshold: float
    _eig: tuple = field(init=False, repr=False)

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        shape = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if shape.shape != (center.size, center.size):
            raise DimensionError(f"shape {shape.shape} does not match center size {center.size}")
        if not self.threshold > 0:
            raise DomainError(f"threshold must be positive, got {self.threshold}")
        w, v = np.linalg.eigh(symmetrize(shape))
        if w.min() < -PSD_RTOL * max(w.max(), 0.0):
            raise NotPSDError("ellipsoid shape matrix is not positive semi-definite")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", symmetrize(shape))
        object.__setattr__(self, "_eig", (np.clip(w, 0.0, None), v))

    @property
    def semi_axes(self) -> np.ndarray:
        return np.sqrt(self.threshold * self._eig[0])

    def contains(self, p) -> bool:
        """Membership via the quadratic form, evaluated in the eigenbasis."""
        y = self._eig[1].T @ (np.asarray(p, dtype=float) - self.center)
        a = self.semi_axes
        flat = a == 0.0
        if np.any(np.abs(y[flat]) > 0.0):
            return False
        return float(np.sum((y[~flat] / a[~flat]) ** 2)) <= 1.0


def dist_point_to_ellipsoid(p, e: Ellipsoid) -> float:
    """Euclidean distance from ``p`` to the solid ellipsoid ``e`` (0 inside).

    In the principal frame the nearest boundary point is
    ``x_i = a_i^2 y_i / (a_i^2 + mu)`` with ``mu > 0`` the unique root of
    ``sum_i (a_i y_i / (a_i^2 + mu))^2 = 1``, which is monotone in ``mu``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != e.center.shape:
        raise DimensionError(f"point dimension {p.size} != ellipsoid dimension {e.center.size}")
    if e.contains(p):
        return 0.0
    y = e._eig[1].T @ (p - e.center)
    a2 = e.semi_axes**2
    live = a2 > 0.0
    ay = np.sqrt(a2[live]) * np.abs(y[live])

    def secular(mu: float) -> float:
        return float(np.sum((ay / (a2[live] + mu)) ** 2)) - 1.0

    x = np.zeros_like(y)
    if secular(0.0) <= 0.0:
        # only the zero-length axes separate p from e: project onto them
        x[live] = y[live]
    else:
        hi = float(np.sqrt(a2.max()) * np.linalg.norm(y))
        lo = 0.0
        while secular(hi) > 0.0:
            lo, hi = hi, 2.0 * hi
        mu = scipy.optimize.brentq(
            secular, lo, hi, xtol=1e-15 * max(hi, 1.0), rtol=4 * np.finfo(float).eps, maxiter=500
        )
        x[live] = a2[live] * y[live] / (a2[live] + mu)
    return float(np.linalg.norm(y - x))
