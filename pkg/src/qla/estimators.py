"""Quasi-maximum likelihood and quasi-Bayesian estimators on a box."""
from dataclasses import dataclass
import warnings

import numpy as np

from .core import delta as _delta
from .core import gamma_at, gauss_legendre, LocalChart
from .errors import OptimizerError, QuadratureError, QuadratureWarning

_EPS = np.finfo(float).eps
BOUNDARY_TOL = 1e-9
QUAD_TOL = 1e-6


@dataclass(frozen=True)
class OptimizerSettings:
    coarse_grid_per_dim: int = 64
    starts: int = 5
    grad_tol: float = 1e-10
    max_iters: int = 100
    step_shrink: float = 0.5

    def __post_init__(self):
        if self.coarse_grid_per_dim < 8:
            raise ValueError("coarse_grid_per_dim must be >= 8")
        if self.starts < 1:
            raise ValueError("starts must be >= 1")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")


@dataclass(frozen=True)
class QuadratureSettings:
    nodes_per_dim: int = 201
    refine_check: bool = True

    def __post_init__(self):
        if self.nodes_per_dim < 33:
            raise ValueError("nodes_per_dim must be >= 33")


@dataclass(frozen=True)
class EstimateRecord:
    theta_m: np.ndarray
    theta_b: np.ndarray
    u_m: np.ndarray
    u_b: np.ndarray
    delta: np.ndarray
    gamma_star: np.ndarray
    at_boundary: bool
    quad_error: float

    def as_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def _box_grid(lower, upper, per_dim):
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(lower, upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lower))


def _lex_order(points, values):
    """Indices sorted by value (descending), ties by lexicographically smallest point."""
    keys = [points[:, i] for i in range(points.shape[1] - 1, -1, -1)] + [-values]
    return np.lexsort(keys)


def _polish(sample, x, f, g, free, lo, hi):
    """One undamped Newton step on the free coordinates, kept only if H does not drop."""
    if not free.any():
        return x, f
    try:
        d = np.zeros_like(x)
        d[free] = np.linalg.solve(-np.atleast_2d(sample.hessian(x))[np.ix_(free, free)], g[free])
    except np.linalg.LinAlgError:
        return x, f
    xn = np.clip(x + d, lo, hi)
    fn = sample.value(xn)
    return (xn, fn) if np.isfinite(fn) and fn >= f else (x, f)


def _projected_newton(sample, x0, settings):
    lo, hi = sample.space.lower, sample.space.upper
    x = np.array(x0, dtype=float)
    f = sample.value(x)
    pg_norm = np.inf
    for it in range(settings.max_iters + 1):
        g = np.asarray(sample.gradient(x), dtype=float)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            return x, f, False, it, np.inf
        active = ((x <= lo + BOUNDARY_TOL) & (g < 0)) | ((x >= hi - BOUNDARY_TOL) & (g > 0))
        free = ~active
        pg = np.where(active, 0.0, g)
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm <= settings.grad_tol:
            return (*_polish(sample, x, f, g, free, lo, hi), True, it, pg_norm)
        if it == settings.max_iters:
            break
        neg_h = -np.atleast_2d(sample.hessian(x))[np.ix_(free, free)]
        d = np.zeros_like(x)
        try:
            chol = np.linalg.cholesky(neg_h)
            d[free] = np.linalg.solve(chol.T, np.linalg.solve(chol, g[free]))
        except np.linalg.LinAlgError:
            d[free] = g[free] / max(1.0, float(np.max(np.abs(neg_h))))
        t, moved = 1.0, False
        slack = 8 * _EPS * (1.0 + abs(f))
        while t > 1e-20:
            xn = np.clip(x + t * d, lo, hi)
            fn = sample.value(xn)
            if fn >= f + 1e-4 * float(g @ (xn - x)) - slack:
                moved = True
                break
            t *= settings.step_shrink
        step = np.linalg.norm(xn - x) if moved else 0.0
        if step <= 4 * _EPS * (1.0 + np.linalg.norm(x)):
            # no representable progress: x is a maximizer to machine precision
            return x, f, True, it, pg_norm
        x, f = xn, fn
    return x, f, False, settings.max_iters, pg_norm


def qmle(sample, settings=OptimizerSettings()):
    """Maximize ``H_T`` over the closed box.

    Grid search picks the best ``starts`` points; each is polished by projected
    Newton with backtracking. Near-ties are broken toward the
    lexicographically smallest parameter.

    Returns
    -------
    theta_hat : ndarray
    at_boundary : bool
        Any coordinate within ``1e-9`` of the box boundary.
    """
    space = sample.space
    grid = _box_grid(space.lower, space.upper, settings.coarse_grid_per_dim)
    if settings.starts > grid.shape[0]:
        raise ValueError("more starts than grid points")
    vals = np.asarray(sample.value(grid), dtype=float)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    starts = grid[_lex_order(grid, vals)[: settings.starts]]
    results, diagnostics = [], []
    for x0 in starts:
        x, f, ok, iters, pg = _projected_newton(sample, x0, settings)
        diagnostics.append({"start": x0.tolist(), "theta": x.tolist(), "value": float(f),
                            "converged": ok, "iterations": iters, "proj_grad": pg})
        if ok:
            results.append((x, float(f)))
    if not results:
        raise OptimizerError("no optimizer start converged", diagnostics)
    best_f = max(f for _, f in results)
    tol = 1e-12 * max(1.0, abs(best_f))
    tied = np.array([x for x, f in results if f >= best_f - tol])
    theta = tied[_lex_order(tied, np.zeros(len(tied)))[0]]
    at_boundary = bool(np.any((theta - space.lower <= BOUNDARY_TOL) | (space.upper - theta <= BOUNDARY_TOL)))
    return theta, at_boundary


def _axis_rule(breaks, n_center, n_outer, center_seg):
    xs, ws = [], []
    for i, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        n = n_center if i == center_seg else n_outer
        x, w = gauss_legendre(n)
        xs.append(0.5 * (b - a) * x + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(xs), np.concatenate(ws)


def _peak_window(sample):
    """Breakpoints per axis isolating a window around the field's peak."""
    space = sample.space
    p = space.dim
    per_dim = {1: 257, 2: 65}.get(p, 33)
    grid = _box_grid(space.lower, space.upper, per_dim)
    vals = np.asarray(sample.value(grid), dtype=float)
    x = grid[int(np.argmax(np.where(np.isfinite(vals), vals, -np.inf)))]
    x, _, _, _, _ = _projected_newton(sample, x, OptimizerSettings(max_iters=30))
    h = np.atleast_2d(sample.hessian(x))
    curv = np.maximum(-np.diag(h), 1e-300)
    cell = (space.upper - space.lower) / (per_dim - 1)
    half = 12.0 / np.sqrt(curv) + cell
    out = []
    for i in range(p):
        lo, hi = space.lower[i], space.upper[i]
        wl, wh = max(lo, x[i] - half[i]), min(hi, x[i] + half[i])
        if wh - wl > (hi - lo) / 3.0:
            out.append(([lo, hi], 0))
            continue
        br = [lo]
        if wl - lo > 1e-12 * (hi - lo):
            br.append(wl)
        center = len(br) - 1
        if hi - wh > 1e-12 * (hi - lo):
            br.append(wh)
        br.append(hi)
        out.append((br, center))
    return out


def _posterior_mean(sample, prior, windows, n_center):
    p = sample.space.dim
    n_outer = max(33, n_center // 4) if p > 1 else n_center
    rules = [_axis_rule(br, n_center, n_outer, c) for br, c in windows]
    mesh = np.stack(np.meshgrid(*[r[0] for r in rules], indexing="ij"), axis=-1).reshape(-1, p)
    wts = np.prod(np.stack(np.meshgrid(*[r[1] for r in rules], indexing="ij"), axis=-1).reshape(-1, p), axis=1)
    h = np.concatenate([np.atleast_1d(sample.value(c)) for c in np.array_split(mesh, max(1, mesh.shape[0] // 65536))])
    dens = np.asarray(prior.density(mesh), dtype=float)
    top = np.max(h)
    w = wts * np.exp(h - top) * dens
    z = w.sum()
    if not (np.isfinite(z) and z > 0):
        raise QuadratureError("posterior normalizer is zero or non-finite")
    return (w @ mesh) / z


def qbe(sample, prior, settings=QuadratureSettings(), strict=False, warn=True):
    """Posterior mean of ``theta`` under ``exp(H_T) * prior`` on the box.

    Each axis is split into at most three panels, one of them a window of
    about twelve local standard deviations around the peak, and every panel
    carries a Gauss-Legendre rule. Exponentials are taken relative to the
    largest node value, which cancels in the ratio.

    Returns ``(theta_hat, quad_error)`` where ``quad_error`` is the max-norm
    change when the node count is doubled (0.0 if the check is disabled).
    An error above ``QUAD_TOL`` warns, raises under ``strict``, and is left
    to the caller when ``warn`` is false.
    """
    if sample.space.dim > 3:
        raise ValueError("tensor quadrature supports dim <= 3")
    windows = _peak_window(sample)
    theta = _posterior_mean(sample, prior, windows, settings.nodes_per_dim)
    err = 0.0
    if settings.refine_check:
        finer = _posterior_mean(sample, prior, windows, 2 * settings.nodes_per_dim)
        err = float(np.max(np.abs(finer - theta)))
        theta = finer
        if err > QUAD_TOL:
            msg = f"quadrature self-check error {err:.3g} exceeds {QUAD_TOL}"
            if strict:
                raise QuadratureError(msg)
            if warn:
                warnings.warn(msg, QuadratureWarning, stacklevel=2)
    return theta, err


def localize(theta_hat, space, a):
    """``u = a^{-1} (theta_hat - theta*)``."""
    return np.linalg.solve(np.atleast_2d(a), np.atleast_1d(theta_hat) - space.theta_star)


def estimate(sample, a, prior, opt=OptimizerSettings(), quad=QuadratureSettings(), strict=False):
    """QMLE and QBE of one sample together with their local coordinates."""
    chart = LocalChart(sample, a)
    theta_m, at_b = qmle(sample, opt)
    theta_b, err = qbe(sample, prior, quad, strict)
    return EstimateRecord(
        theta_m=theta_m,
        theta_b=theta_b,
        u_m=localize(theta_m, sample.space, chart.a),
        u_b=localize(theta_b, sample.space, chart.a),
        delta=_delta(chart),
        gamma_star=gamma_at(chart, sample.space.theta_star),
        at_boundary=at_b,
        quad_error=err,
    )


def maximality_audit(sample, theta_hat, rng, n=1000, slack=1e-9):
    """True iff ``H(theta_hat)`` dominates ``n`` fresh uniform points up to ``slack``."""
    space = sample.space
    pts = space.lower + (space.upper - space.lower) * rng.random((n, space.dim))
    top = sample.value(np.atleast_1d(theta_hat))
    return bool(np.all(sample.value(pts) <= top + slack * (1.0 + abs(top))))
