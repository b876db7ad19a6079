"""Random-field primitives and the localized quantities built on them.

A quasi-log-likelihood field ``H_T`` lives on a bounded open box ``Theta``.
Around the true value ``theta*`` it is viewed through a scaling matrix
``a_T``; the local parameter is ``u = a_T^{-1} (theta - theta*)``.

All evaluators accept a single point of shape ``(p,)`` or a batch of shape
``(m, p)``; batched calls return arrays with the leading ``m`` axis.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, EvaluationError

_BOX_SLACK = 1e-12


def _vec(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


def _sym_sqrt(m):
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


@dataclass(frozen=True)
class ParameterSpace:
    """Open hyperrectangle ``prod(lower_i, upper_i)`` with a true point.

    ``r0`` is the radius of a closed ball around ``theta_star`` that stays
    inside the box. When omitted it is half the distance to the boundary.
    """

    lower: np.ndarray
    upper: np.ndarray
    theta_star: np.ndarray
    r0: Optional[float] = None

    def __post_init__(self):
        lo, hi, ts = _vec(self.lower), _vec(self.upper), _vec(self.theta_star)
        if not (lo.shape == hi.shape == ts.shape):
            raise DomainError("lower, upper and theta_star must have the same length")
        if not np.all(lo < hi):
            raise DomainError(f"empty box: lower={lo} upper={hi}")
        if not np.all((lo < ts) & (ts < hi)):
            raise DomainError(f"theta_star={ts} is not inside the box")
        dist = float(np.min(np.minimum(ts - lo, hi - ts)))
        r0 = 0.5 * dist if self.r0 is None else float(self.r0)
        if not 0 < r0 < dist:
            raise DomainError(f"r0={r0} must be positive and below the boundary distance {dist}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "theta_star", ts)
        object.__setattr__(self, "r0", r0)

    @property
    def dim(self):
        return self.lower.size

    def contains(self, theta, closed=False):
        """Membership of ``theta`` (or each row of a batch) in the box."""
        t = np.asarray(theta, dtype=float)
        if closed:
            inside = (t >= self.lower - _BOX_SLACK) & (t <= self.upper + _BOX_SLACK)
        else:
            inside = (t > self.lower) & (t < self.upper)
        return np.all(inside, axis=-1)

    def require_closed(self, theta):
        t = _vec(theta)
        if not np.all(self.contains(t, closed=True)):
            raise DomainError(f"theta={t} lies outside the closure of the parameter box")
        return t

    def translated(self, shift):
        s = _vec(shift)
        return ParameterSpace(self.lower + s, self.upper + s, self.theta_star + s, self.r0)


@dataclass(frozen=True)
class ScalingSchedule:
    """Index values ``T`` with scaling ``a_T = T^{-1/2} Q`` for a fixed invertible ``Q``.

    With this form ``b_T = T / lambda_min(Q^T Q)`` and the eigenvalue sandwich
    holds with ``C0 = cond(Q^T Q)`` exactly.
    """

    times: tuple
    q: Optional[np.ndarray] = None
    dim: int = 1

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) == 0 or any(t <= 0 for t in times):
            raise ValueError("schedule times must be positive")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"schedule times must be strictly increasing: {times}")
        q = np.eye(self.dim) if self.q is None else np.atleast_2d(np.asarray(self.q, dtype=float))
        if q.shape[0] != q.shape[1] or abs(np.linalg.det(q)) < 1e-300:
            raise ValueError("Q must be square and invertible")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "dim", q.shape[0])

    @property
    def c0(self):
        w = np.linalg.eigvalsh(self.q.T @ self.q)
        return float(w[-1] / w[0])

    def a(self, t):
        return self.q / np.sqrt(float(t))

    def b(self, t):
        return scale_b(self.a(t))

    def sandwich_holds(self, t):
        a = self.a(t)
        w = np.linalg.eigvalsh(a.T @ a)
        b = 1.0 / w[0]
        tol = 1e-12 * w[-1]
        return bool(1.0 / b <= w[-1] + tol and w[-1] <= self.c0 / b + tol)


def scale_b(a):
    """``b_T = 1 / lambda_min(a^T a)``."""
    a = np.atleast_2d(a)
    return float(1.0 / np.linalg.eigvalsh(a.T @ a)[0])


@dataclass(frozen=True)
class FieldSample:
    """One realization of ``H_T`` with analytic first and second derivatives.

    ``extras`` carries model-specific data (sufficient statistics, the stored
    path, the realized random information matrix, ...).
    """

    value: Callable
    gradient: Callable
    hessian: Callable
    space: ParameterSpace
    index: float
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LocalChart:
    sample: FieldSample
    a: np.ndarray
    b: float = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        p = self.sample.space.dim
        if a.shape != (p, p):
            raise ValueError(f"scaling matrix must be {p}x{p}, got {a.shape}")
        if abs(np.linalg.det(a)) < 1e-300:
            raise np.linalg.LinAlgError("scaling matrix is singular")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", scale_b(a))

    @property
    def space(self):
        return self.sample.space

    @property
    def theta_star(self):
        return self.sample.space.theta_star

    def to_theta(self, u):
        return self.theta_star + np.asarray(u, dtype=float) @ self.a.T


def delta(chart):
    """``Delta_T = dH_T(theta*) a_T`` (row vector convention)."""
    g = np.asarray(chart.sample.gradient(chart.theta_star), dtype=float)
    if not np.all(np.isfinite(g)):
        raise EvaluationError(f"non-finite gradient at theta*={chart.theta_star}")
    return g @ chart.a


def gamma_at(chart, theta):
    """``Gamma_T(theta) = -a_T^T d^2H_T(theta) a_T``."""
    t = chart.space.require_closed(theta)
    h = np.atleast_2d(chart.sample.hessian(t))
    g = -chart.a.T @ h @ chart.a
    return 0.5 * (g + g.T)


def y_field(chart, theta):
    """``Y_T(theta) = b_T^{-1} (H_T(theta) - H_T(theta*))``."""
    t = np.asarray(theta, dtype=float)
    if not np.all(chart.space.contains(t, closed=True)):
        raise DomainError(f"theta={t} lies outside the closure of the parameter box")
    ts = chart.theta_star
    if t.ndim == 1 and np.array_equal(t, ts):
        return 0.0
    return (chart.sample.value(t) - chart.sample.value(ts)) / chart.b


def u_domain_contains(chart, u):
    """Whether ``theta* + a_T u`` lies strictly inside the box."""
    return chart.space.contains(chart.to_theta(u))


def log_z(chart, u):
    """``H_T(theta* + a_T u) - H_T(theta*)`` without domain checks (batched)."""
    u = np.asarray(u, dtype=float)
    return chart.sample.value(chart.to_theta(u)) - chart.sample.value(chart.theta_star)


def z_field(chart, u):
    """``Z_T(u) = exp(H_T(theta* + a_T u) - H_T(theta*))`` on ``U_T``."""
    u = _vec(u)
    if not u_domain_contains(chart, u):
        raise DomainError(f"u={u} is outside the local parameter domain")
    if not np.any(u):
        return 1.0
    return float(np.exp(log_z(chart, u)))


@lru_cache(maxsize=32)
def gauss_legendre(n):
    """Cached Gauss-Legendre nodes and weights on [-1, 1] (read-only arrays)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _quad_form(gamma, u):
    return float(u @ np.atleast_2d(gamma) @ u)


def laq_remainder(chart, u, gamma):
    """LAQ remainder ``r_T(u)``; defined as 1 outside ``U_T``."""
    u = _vec(u)
    if not u_domain_contains(chart, u):
        return 1.0
    return float(log_z(chart, u)) - (float(delta(chart) @ u) - 0.5 * _quad_form(gamma, u))


def laq_remainder_integral(chart, u, gamma, quad_nodes=256):
    """``-int_0^1 (1-s) {Gamma_T(theta* + s a_T u) - Gamma}[u, u] ds`` by Gauss-Legendre."""
    if quad_nodes < 8:
        raise ValueError("quad_nodes must be at least 8")
    u = _vec(u)
    end = chart.to_theta(u)
    if not chart.space.contains(end, closed=True):
        raise DomainError(f"segment to theta={end} leaves the parameter box")
    x, w = gauss_legendre(int(quad_nodes))
    s, w = 0.5 * (x + 1.0), 0.5 * w
    gam = np.atleast_2d(gamma)
    vals = np.array([_quad_form(gamma_at(chart, chart.theta_star + si * (end - chart.theta_star)) - gam, u)
                     for si in s])
    return float(-np.sum(w * (1.0 - s) * vals))


@dataclass(frozen=True)
class LimitLaw:
    """Law of the limit pair ``(Delta, Gamma)`` with ``Delta = Gamma^{1/2} zeta``.

    ``gamma_sampler(rng)`` returns one symmetric positive-definite matrix; in
    deterministic mode it must ignore ``rng`` and return a constant.
    """

    mode: str
    gamma_sampler: Callable
    dim: int = 1
    y_limit: Optional[Callable] = None
    chi0: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("deterministic-gamma", "random-gamma"):
            raise ValueError(f"unknown limit mode {self.mode!r}")

    @classmethod
    def deterministic(cls, gamma, y_limit=None, chi0=None):
        g = np.atleast_2d(np.asarray(gamma, dtype=float))
        return cls("deterministic-gamma", lambda rng: g, g.shape[0], y_limit, chi0)

    def draw(self, rng, size):
        """Draw ``size`` pairs; returns ``(deltas (size, p), gammas (size, p, p))``."""
        p = self.dim
        gammas = np.empty((size, p, p))
        deltas = np.empty((size, p))
        for k in range(size):
            g = np.atleast_2d(self.gamma_sampler(rng))
            if np.linalg.eigvalsh(g)[0] <= 0:
                raise ValueError("gamma sampler produced a matrix that is not positive-definite")
            gammas[k] = g
            deltas[k] = _sym_sqrt(g) @ rng.standard_normal(p)
        return deltas, gammas


def limit_z(law, delta_, gamma, u):
    """``Z(u) = exp(Delta[u] - Gamma[u, u] / 2)`` for a positive-definite ``gamma``."""
    g = np.atleast_2d(np.asarray(gamma, dtype=float))
    if np.linalg.eigvalsh(0.5 * (g + g.T))[0] <= 0:
        raise ValueError("gamma must be positive-definite")
    u = _vec(u)
    if not np.any(u):
        return 1.0
    return float(np.exp(_vec(delta_) @ u - 0.5 * u @ g @ u))


def limit_u_hat(delta_, gamma):
    """Maximizer ``Gamma^{-1} Delta`` of the limit field."""
    return np.linalg.solve(np.atleast_2d(gamma), _vec(delta_))


@dataclass(frozen=True)
class Prior:
    """Prior density on the box, bounded away from zero and infinity.

    ``density`` takes a batch ``(m, p)`` and returns ``(m,)``. It need not be
    normalized.
    """

    density: Callable
    lower_bound: float
    upper_bound: float
    name: str = "custom"

    def __post_init__(self):
        if not 0 < self.lower_bound <= self.upper_bound < np.inf:
            raise ValueError("prior bounds must satisfy 0 < lower <= upper < inf")

    def check(self, space, per_dim=101):
        """Grid check of the density bounds; returns the max oscillation between neighbours."""
        axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(space.lower, space.upper)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.asarray(self.density(grid.reshape(-1, space.dim))).reshape(grid.shape[:-1])
        if np.any(vals < self.lower_bound * (1 - 1e-12)) or np.any(vals > self.upper_bound * (1 + 1e-12)):
            raise ValueError(f"prior {self.name} leaves its declared bounds on the grid")
        return max(float(np.max(np.abs(np.diff(vals, axis=i)))) for i in range(space.dim))

    def scaled(self, c):
        return Prior(lambda th: c * self.density(th), c * self.lower_bound, c * self.upper_bound, self.name)


def uniform_prior(space):
    return Prior(lambda th: np.ones(np.atleast_2d(th).shape[0]), 1.0, 1.0, "uniform")


def linear_prior(space, slope):
    """Density ``1 + slope * sum(theta)``; must stay positive on the box."""
    corners = np.array(np.meshgrid(*zip(space.lower, space.upper), indexing="ij")).reshape(space.dim, -1).T
    vals = 1.0 + slope * corners.sum(axis=1)
    lo, hi = float(vals.min()), float(vals.max())
    if lo <= 0:
        raise ValueError(f"linear prior with slope {slope} is not positive on the box")
    return Prior(lambda th: 1.0 + slope * np.atleast_2d(th).sum(axis=1), lo, hi, f"linear({slope})")


def truncated_normal_prior(space, mean, sd):
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (space.dim,))
    if sd <= 0:
        raise ValueError("sd must be positive")

    def density(th):
        d = np.atleast_2d(th) - mean
        return np.exp(-0.5 * np.sum(d * d, axis=1) / sd**2)

    near = np.clip(mean, space.lower, space.upper)
    far = np.where(np.abs(space.lower - mean) > np.abs(space.upper - mean), space.lower, space.upper)
    hi = float(density(near[None])[0])
    lo = float(density(far[None])[0])
    return Prior(density, lo, hi, f"truncated-normal({float(mean[0])},{sd})")
