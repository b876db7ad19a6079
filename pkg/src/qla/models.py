"""Concrete quasi-log-likelihood fields with known limits.

Three one-parameter models are bundled:

``ou-drift``
    Drift of ``dX = -theta X dt + dW`` observed on a mesh; the field is the
    discretized continuous-record log-likelihood, exactly quadratic in theta.
``vol-contrast``
    Gaussian contrast for the log-volatility of iid increments; non-quadratic.
``synthetic-laq``
    A quadratic field with random information ``Gamma = exp(c_gamma eta)``
    plus a smooth perturbation of size ``kappa b^gamma``. Mixed-normal limit.

Each field keeps its sufficient statistics, so evaluations cost O(1).
"""
import csv
from dataclasses import dataclass, field, replace
import math
from typing import Callable, Optional

import numpy as np
from scipy.signal import lfilter

from .core import FieldSample, LimitLaw, ParameterSpace
from .errors import ModelError

KINDS = ("ou-drift", "vol-contrast", "synthetic-laq")

DEFAULT_BOX = {
    "ou-drift": (0.1, 3.0),
    "vol-contrast": (-1.5, 1.5),
    "synthetic-laq": (-2.0, 2.0),
}
DEFAULT_THETA = {"ou-drift": 1.0, "vol-contrast": 0.0, "synthetic-laq": 0.0}
DEFAULT_MESH = {"ou-drift": 0.01, "vol-contrast": 0.01, "synthetic-laq": 1.0}
DEFAULT_EXTRAS = {
    "ou-drift": {},
    "vol-contrast": {},
    "synthetic-laq": {"c_gamma": 0.5, "kappa": 0.5, "gamma": 0.25},
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    theta_star: float = None
    horizon: float = 100.0
    mesh: float = None
    extras: dict = field(default_factory=dict)
    lower: float = None
    upper: float = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.theta_star is None:
            object.__setattr__(self, "theta_star", DEFAULT_THETA[self.kind])
        if self.mesh is None:
            object.__setattr__(self, "mesh", DEFAULT_MESH[self.kind])
        lo, hi = DEFAULT_BOX[self.kind]
        if self.lower is None:
            object.__setattr__(self, "lower", lo)
        if self.upper is None:
            object.__setattr__(self, "upper", hi)
        unknown = set(self.extras) - set(DEFAULT_EXTRAS[self.kind])
        if unknown:
            raise ModelError(f"unknown extras for {self.kind}: {sorted(unknown)}")
        object.__setattr__(self, "extras", {**DEFAULT_EXTRAS[self.kind], **self.extras})
        if self.mesh <= 0:
            raise ModelError("mesh must be positive")
        if self.kind == "ou-drift":
            steps = self.horizon / self.mesh
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ModelError(f"horizon/mesh = {steps} is not an integer")
        elif abs(self.horizon - round(self.horizon)) > 1e-9:
            raise ModelError(f"sample count {self.horizon} is not an integer")
        if self.kind == "synthetic-laq":
            if not self.extras["gamma"] < 0.5:
                raise ModelError(f"synthetic-laq needs gamma < 1/2, got {self.extras['gamma']}")
            if self.extras["kappa"] < 0:
                raise ModelError(f"synthetic-laq needs kappa >= 0, got {self.extras['kappa']}")
        if not self.lower < self.theta_star < self.upper:
            raise ModelError(f"theta_star={self.theta_star} is outside ({self.lower}, {self.upper})")

    @property
    def dim(self):
        return 1

    @property
    def space(self):
        return ParameterSpace([self.lower], [self.upper], [self.theta_star])

    def with_horizon(self, horizon):
        return replace(self, horizon=float(horizon))

    def simulate(self, rng, keep_path=True):
        if self.kind == "ou-drift":
            return simulate_ou_field(self, rng, keep_path)
        if self.kind == "vol-contrast":
            return simulate_vol_field(self, rng, keep_path)
        return synth_laq_field(self, rng)

    def limits(self, sample=None):
        return analytic_limits(self, sample)


def _split(theta):
    t = np.asarray(theta, dtype=float)
    return t[..., 0], t.ndim == 1


def _out(v, scalar):
    return float(v) if scalar else v


def _make_sample(spec, value1, grad1, hess1, extras):
    """Wrap scalar-parameter closures into the batched FieldSample interface."""

    def value(theta):
        t, scalar = _split(theta)
        return _out(value1(t), scalar)

    def gradient(theta):
        t, scalar = _split(theta)
        g = np.asarray(grad1(t), dtype=float)
        return g.reshape(1) if scalar else g[:, None]

    def hessian(theta):
        t, scalar = _split(theta)
        h = np.asarray(hess1(t), dtype=float)
        return h.reshape(1, 1) if scalar else h[:, None, None]

    return FieldSample(value, gradient, hessian, spec.space, spec.horizon, extras)


def simulate_ou_field(spec, rng, keep_path=True):
    """Exact-transition OU path and its discretized drift log-likelihood.

    ``H_T(theta) = -theta S1 - theta^2 S2 / 2`` with the left-point Ito sum
    ``S1 = sum X_i (X_{i+1} - X_i)`` and ``S2 = sum X_i^2 delta``.
    """
    th, T, d = float(spec.theta_star), float(spec.horizon), float(spec.mesh)
    if th <= 0:
        raise ModelError("ou-drift requires theta_star > 0")
    if T < 10 or d > 0.05:
        raise ModelError("ou-drift requires horizon >= 10 and mesh <= 0.05")
    n = int(round(T / d))
    phi = math.exp(-th * d)
    sd = math.sqrt((1.0 - phi * phi) / (2.0 * th))
    x0 = rng.standard_normal() / math.sqrt(2.0 * th)
    x = np.empty(n + 1)
    x[0] = x0
    x[1:] = lfilter([1.0], [1.0, -phi], sd * rng.standard_normal(n), zi=[phi * x0])[0]
    left = x[:-1]
    s1 = float(left @ np.diff(x))
    s2 = float(left @ left) * d
    extras = {"S1": s1, "S2": s2, "mesh": d}
    if keep_path:
        extras["path"] = x
    return _make_sample(
        spec,
        lambda t: -t * s1 - 0.5 * t * t * s2,
        lambda t: -s1 - t * s2,
        lambda t: -s2 + 0.0 * t,
        extras,
    )


def simulate_vol_field(spec, rng, keep_path=True):
    """Log-volatility contrast ``H_n(theta) = -sum[dX_i^2 / (2 e^{2 theta} h) + theta]``."""
    n, h, th = int(round(spec.horizon)), float(spec.mesh), float(spec.theta_star)
    if n < 50:
        raise ModelError("vol-contrast requires at least 50 observations")
    dx = math.exp(th) * math.sqrt(h) * rng.standard_normal(n)
    q = float(dx @ dx) / h
    extras = {"Q": q, "n": n, "mesh": h}
    if keep_path:
        extras["increments"] = dx
    return vol_field_from_stat(spec, q, extras)


def vol_field_from_stat(spec, q, extras=None):
    """Volatility field determined by ``Q = sum dX_i^2 / h``."""
    n = int(round(spec.horizon))
    extras = dict(extras or {"Q": q, "n": n, "mesh": spec.mesh})
    return _make_sample(
        spec,
        lambda t: -0.5 * q * np.exp(-2.0 * t) - n * t,
        lambda t: q * np.exp(-2.0 * t) - n,
        lambda t: -2.0 * q * np.exp(-2.0 * t),
        extras,
    )


def synth_laq_field(spec, rng):
    """Quadratic field with random information and a ``sin`` perturbation."""
    ex = spec.extras
    cg, kappa, gam = float(ex["c_gamma"]), float(ex["kappa"]), float(ex["gamma"])
    if gam >= 0.5:
        raise ModelError("synthetic-laq requires gamma < 1/2")
    if kappa < 0:
        raise ModelError("synthetic-laq requires kappa >= 0")
    b, ts = float(spec.horizon), float(spec.theta_star)
    eta, zeta = rng.standard_normal(2)
    g_omega = math.exp(cg * eta)
    lin = math.sqrt(b) * math.sqrt(g_omega) * zeta
    quad = b * g_omega
    amp = kappa * b**gam
    extras = {"gamma": np.array([[g_omega]]), "eta": eta, "zeta": zeta}
    return _make_sample(
        spec,
        lambda t: lin * (t - ts) - 0.5 * quad * (t - ts) ** 2 + amp * np.sin(5.0 * (t - ts)),
        lambda t: lin - quad * (t - ts) + 5.0 * amp * np.cos(5.0 * (t - ts)),
        lambda t: -quad - 25.0 * amp * np.sin(5.0 * (t - ts)),
        extras,
    )


@dataclass(frozen=True)
class AnalyticLimits:
    """Limit objects of a model: ``Gamma``, ``Y``, ``chi0`` and the limit law.

    ``gamma`` is ``None`` when the information is random; the law then samples
    it through ``gamma_sampler``.
    """

    gamma: np.ndarray
    y_limit: object
    chi0: float
    avar: np.ndarray
    law: LimitLaw
    c_gamma: float = None

    @property
    def random(self):
        return self.law.mode == "random-gamma"

    def moment(self, f, weight=None):
        """Closed-form ``E[f(u_hat) Phi]`` for ``f`` in {u, u2, abs3}; ``None`` if unavailable.

        ``weight`` is ``None`` (``Phi = 1``) or ``"gamma"`` (``Phi = Gamma``).
        """
        e_abs3 = 2.0 * math.sqrt(2.0 / math.pi)
        if f == "u":
            return 0.0
        if not self.random:
            v = float(self.avar[0, 0])
            g = float(self.gamma[0, 0]) if weight == "gamma" else 1.0
            if f == "u2":
                return v * g
            if f == "abs3":
                return v**1.5 * e_abs3 * g
            return None
        c = self.c_gamma
        # E[Gamma^s] = exp(s^2 c^2 / 2) for Gamma = exp(c eta)
        s = 1.0 if weight == "gamma" else 0.0
        if f == "u2":
            return math.exp((s - 1.0) ** 2 * c * c / 2.0)
        if f == "abs3":
            return e_abs3 * math.exp((s - 1.5) ** 2 * c * c / 2.0)
        return None


def _chi0_by_grid(y_limit, lower, upper, theta_star, n=100_000):
    grid = np.linspace(lower, upper, n)
    d2 = (grid - theta_star) ** 2
    keep = d2 > 1e-12
    return float(np.min(-y_limit(grid[keep]) / d2[keep]))


def analytic_limits(spec, sample=None):
    """Analytic ``Gamma``, ``Y``, ``chi0`` for a bundled model.

    For ``synthetic-laq`` pass the realized ``sample`` to get limits
    conditional on its ``Gamma_omega``; without it the limits are random.
    """
    ts = float(spec.theta_star)
    if spec.kind == "ou-drift":
        gamma = 1.0 / (2.0 * ts)

        def y(t):
            return -((np.asarray(t, dtype=float) - ts) ** 2) / (4.0 * ts)

        g = np.array([[gamma]])
        return AnalyticLimits(g, y, 1.0 / (4.0 * ts), np.linalg.inv(g), LimitLaw.deterministic(g, y, 1.0 / (4.0 * ts)))
    if spec.kind == "vol-contrast":

        def y(t):
            v = np.asarray(t, dtype=float) - ts
            return -(0.5 * (np.exp(-2.0 * v) - 1.0) + v)

        g = np.array([[2.0]])
        chi0 = _chi0_by_grid(y, spec.lower, spec.upper, ts)
        return AnalyticLimits(g, y, chi0, np.linalg.inv(g), LimitLaw.deterministic(g, y, chi0))
    cg = float(spec.extras["c_gamma"])
    if sample is not None:
        g_omega = float(sample.extras["gamma"][0, 0])

        def y(t):
            return -0.5 * g_omega * (np.asarray(t, dtype=float) - ts) ** 2

        g = np.array([[g_omega]])
        return AnalyticLimits(g, y, 0.5 * g_omega, np.linalg.inv(g), LimitLaw.deterministic(g, y, 0.5 * g_omega), cg)
    law = LimitLaw("random-gamma", lambda rng: np.array([[math.exp(cg * rng.standard_normal())]]), 1)
    return AnalyticLimits(None, None, None, None, law, cg)


def write_path_csv(sample, path):
    """Dump the stored path (``t,x``) or increments (``i,dx``) of a sample."""
    ex = sample.extras
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if "path" in ex:
            w.writerow(["t", "x"])
            for i, x in enumerate(ex["path"]):
                w.writerow([repr(i * ex["mesh"]), repr(float(x))])
        elif "increments" in ex:
            w.writerow(["i", "dx"])
            for i, dx in enumerate(ex["increments"], start=1):
                w.writerow([i, repr(float(dx))])
        else:
            raise ValueError("sample carries no path to dump")


@dataclass(frozen=True)
class CustomModel:
    """A user-supplied field family usable wherever a ``ModelSpec`` is.

    ``build(horizon, rng)`` returns a ``FieldSample``; ``limits_fn(sample)``
    returns ``AnalyticLimits`` (``sample`` is ``None`` for unconditional limits).
    """

    build: Callable
    space: ParameterSpace
    limits_fn: Optional[Callable] = None
    horizon: float = 1.0
    kind: str = "custom"

    @property
    def dim(self):
        return self.space.dim

    def with_horizon(self, horizon):
        return replace(self, horizon=float(horizon))

    def simulate(self, rng, keep_path=True):
        return self.build(self.horizon, rng)

    def limits(self, sample=None):
        if self.limits_fn is None:
            raise ModelError("this model has no analytic limits; supply limits_fn (y_limit and Gamma)")
        return self.limits_fn(sample)


def quadratic_field(space, horizon, lin, quad, extras=None):
    """``H(theta) = lin . v - v^T quad v / 2`` with ``v = theta - theta*``; exact Hessian ``-quad``."""
    ts = space.theta_star
    lin = np.atleast_1d(np.asarray(lin, dtype=float))
    quad = np.atleast_2d(np.asarray(quad, dtype=float))

    def value(theta):
        v = np.asarray(theta, dtype=float) - ts
        out = v @ lin - 0.5 * np.einsum("...i,ij,...j->...", v, quad, v)
        return float(out) if v.ndim == 1 else out

    def gradient(theta):
        v = np.asarray(theta, dtype=float) - ts
        return lin - v @ quad

    def hessian(theta):
        t = np.asarray(theta, dtype=float)
        return -quad if t.ndim == 1 else np.broadcast_to(-quad, t.shape[:-1] + quad.shape).copy()

    return FieldSample(value, gradient, hessian, space, horizon, dict(extras or {}))


def deterministic_limits(gamma, y_limit=None, chi0=None):
    g = np.atleast_2d(np.asarray(gamma, dtype=float))
    return AnalyticLimits(g, y_limit, chi0, np.linalg.inv(g), LimitLaw.deterministic(g, y_limit, chi0))
