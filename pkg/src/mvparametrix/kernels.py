"""Frozen Gaussian kernels, the reference heat kernel, and the parametrix series.

The transition density of the decoupled SDE is expanded around the Gaussian
kernel of the coefficient-frozen process: the zeroth term is an explicit
normal density and the corrections are iterated space-time convolutions of
the one-step kernel H.  Everything here is deterministic quadrature; the
time integrals use Gauss-Legendre nodes pushed through u = r + (t-r)sin^2(theta)
so that the integrable (u-r)^{-1/2} and (t-u)^{k/2-1} endpoint behavior is
flattened before the rule is applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .exceptions import CoverageError
from .model import MeasureFlow, ModelSpec

__all__ = [
    "FrozenParams",
    "ReferenceKernel",
    "QuadratureGrid",
    "ParametrixResult",
    "ParametrixEngine",
    "frozen_params",
    "frozen_density",
    "frozen_density_grad",
    "frozen_density_hess",
    "reference_kernel",
    "parametrix_H",
    "parametrix_H_m",
    "parametrix_density",
    "beta_product_identity",
]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrozenParams:
    """Drift and covariance integrals of the coefficient-frozen Gaussian process."""

    s: float
    r: float
    t: float
    anchor: np.ndarray
    mean_shift: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if not (self.s <= self.r < self.t):
            raise ValueError("need s <= r < t")
        cov = np.asarray(self.covariance, dtype=float)
        if np.abs(cov - cov.T).max() > 1e-10 * max(1.0, np.abs(cov).max()):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        object.__setattr__(self, "mean_shift", np.asarray(self.mean_shift, dtype=float))
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean_shift.shape[0]


@dataclass(frozen=True)
class ReferenceKernel:
    """Dominating Gaussian kernel with variance 4*K_T per unit time."""

    horizon: float
    k_bound: float

    def __post_init__(self):
        if self.k_bound <= 0:
            raise ValueError("k_bound must be positive")

    @classmethod
    def for_model(cls, model: ModelSpec, horizon: float) -> "ReferenceKernel":
        return cls(horizon, float(model.bound_fn(horizon)))


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform space box plus time-node and truncation settings."""

    space_lo: np.ndarray
    space_hi: np.ndarray
    n_space: int = 400
    n_time: int = 16
    trunc: int = 2

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.space_lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.space_hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("need space_lo < space_hi componentwise")
        if self.n_space < 16:
            raise ValueError("n_space must be >= 16")
        if self.trunc < 0:
            raise ValueError("truncation order must be >= 0")
        if self.n_time < 2:
            raise ValueError("n_time must be >= 2")
        object.__setattr__(self, "space_lo", lo)
        object.__setattr__(self, "space_hi", hi)

    @property
    def dim(self) -> int:
        return self.space_lo.shape[0]

    @classmethod
    def auto(cls, x, z, k_bound: float, duration: float,
             n_space: int = 400, n_time: int = 16, trunc: int = 2) -> "QuadratureGrid":
        """Box centered on the segment [x, z], half-width 6 sigma + |x-z|."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        center = 0.5 * (x + z)
        half = 6.0 * np.sqrt(k_bound * duration) + np.linalg.norm(x - z)
        return cls(center - half, center + half, n_space=n_space,
                   n_time=n_time, trunc=trunc)

    def axis_points(self) -> list:
        return [np.linspace(self.space_lo[i], self.space_hi[i], self.n_space)
                for i in range(self.dim)]

    def mesh(self):
        """Flattened tensor grid points (n_space^d, d) and trapezoid weights."""
        axes = self.axis_points()
        steps = [(ax[1] - ax[0]) for ax in axes]
        w1d = []
        for ax, h in zip(axes, steps):
            w = np.full(ax.shape, h)
            w[0] *= 0.5
            w[-1] *= 0.5
            w1d.append(w)
        if self.dim == 1:
            return axes[0][:, None], w1d[0]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        wg = np.meshgrid(*w1d, indexing="ij")
        wts = np.prod(np.stack([g.ravel() for g in wg], axis=-1), axis=-1)
        return pts, wts


@dataclass(frozen=True)
class ParametrixResult:
    """Truncated parametrix density with its per-level correction terms."""

    value: float
    base: float
    terms: tuple
    converged: bool

    @property
    def last_term(self) -> float:
        return abs(self.terms[-1]) if self.terms else 0.0


# ---------------------------------------------------------------------------
# Frozen coefficient integrals along a measure flow
# ---------------------------------------------------------------------------


def _cum_segments(times: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid areas of node values, shape (nt,) + vals.shape[1:]."""
    dt = np.diff(times)
    seg = 0.5 * dt.reshape((-1,) + (1,) * (vals.ndim - 1)) * (vals[1:] + vals[:-1])
    out = np.zeros_like(vals)
    out[1:] = np.cumsum(seg, axis=0)
    return out


def _trapz_between(times: np.ndarray, vals: np.ndarray, cum: np.ndarray,
                   r: float, t: float) -> np.ndarray:
    """Integral over [r, t] of the piecewise-linear interpolant of (times, vals)."""

    def antideriv(u):
        k = int(np.clip(np.searchsorted(times, u, side="right") - 1, 0, len(times) - 2))
        t0, t1 = times[k], times[k + 1]
        frac = (u - t0) / (t1 - t0)
        v_u = vals[k] + frac * (vals[k + 1] - vals[k])
        return cum[k] + 0.5 * (u - t0) * (vals[k] + v_u)

    return antideriv(t) - antideriv(r)


class _FrozenIntegrator:
    """Cumulative trapezoid tables for the frozen drift and covariance integrals.

    Anchors are batched: params(r, t) returns mean shifts (nz, d) and
    covariances (nz, d, d) for every anchor at once.  The measure argument
    at each flow node is that node's cloud (piecewise-constant in time).
    """

    def __init__(self, flow: MeasureFlow, model: ModelSpec, anchors: np.ndarray):
        self.flow = flow
        self.model = model
        self.anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
        times = flow.time_grid
        if len(times) == 1:
            # Degenerate single-node flow: treat coefficients as constant.
            times = np.array([times[0], times[0] + 1.0])
            clouds = [flow.clouds[0], flow.clouds[0]]
        else:
            clouds = list(flow.clouds)
        b_nodes = np.stack([model.drift(tk, self.anchors, ck)
                            for tk, ck in zip(times, clouds)])
        a_nodes = np.stack([model.covariance(tk, self.anchors, ck)
                            for tk, ck in zip(times, clouds)])
        self.times = times
        self._b = b_nodes
        self._a = a_nodes
        self._cum_b = _cum_segments(times, b_nodes)
        self._cum_a = _cum_segments(times, a_nodes)

    def params(self, r: float, t: float):
        if r >= t:
            raise ValueError("need r < t")
        m = _trapz_between(self.times, self._b, self._cum_b, r, t)
        a = _trapz_between(self.times, self._a, self._cum_a, r, t)
        return m, a


def frozen_params(flow: MeasureFlow, model: ModelSpec, s: float, r: float,
                  t: float, z, validate: bool = True) -> FrozenParams:
    """Drift/covariance integrals over [r, t] at anchor z along the flow."""
    if r >= t:
        raise ValueError("need r < t")
    if s > r:
        raise ValueError("need s <= r")
    eps = 1e-9
    if r < flow.time_grid[0] - eps or t > flow.end_time + eps:
        raise ValueError("[r, t] is outside the flow range")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not np.all(np.isfinite(z)):
        raise ValueError("anchor must be finite")
    integ = _FrozenIntegrator(flow, model, z[None, :])
    m, a = integ.params(r, t)
    fp = FrozenParams(s, r, t, z, m[0], a[0])
    if validate:
        k_t = float(model.bound_fn(t))
        dur = t - r
        eigs = np.linalg.eigvalsh(fp.covariance)
        if eigs.min() < dur / k_t - 1e-9 or eigs.max() > dur * k_t + 1e-9:
            raise ValueError("frozen covariance violates the ellipticity bounds")
        if np.linalg.norm(fp.mean_shift) > dur * k_t + 1e-9:
            raise ValueError("frozen mean shift exceeds (t-r) K_t")
    return fp


# ---------------------------------------------------------------------------
# Gaussian kernels
# ---------------------------------------------------------------------------


def frozen_density(fp: FrozenParams, x, y):
    """Gaussian density of the frozen process started at x, evaluated at y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = fp.dim
    a_inv = np.linalg.inv(fp.covariance)
    det = np.linalg.det(fp.covariance)
    diff = y - x - fp.mean_shift
    quad = np.einsum("...i,ij,...j->...", diff, a_inv, diff)
    return np.exp(-0.5 * quad) / ((2 * np.pi) ** (d / 2) * np.sqrt(det))


def frozen_density_grad(fp: FrozenParams, x, y):
    """Gradient of frozen_density in its first argument, at (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a_inv = np.linalg.inv(fp.covariance)
    diff = y - x - fp.mean_shift
    p = frozen_density(fp, x, y)
    return p[..., None] * np.einsum("ij,...j->...i", a_inv, diff)


def frozen_density_hess(fp: FrozenParams, x, y):
    """Hessian of frozen_density in its first argument, at (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a_inv = np.linalg.inv(fp.covariance)
    diff = y - x - fp.mean_shift
    u = np.einsum("ij,...j->...i", a_inv, diff)
    p = frozen_density(fp, x, y)
    return p[..., None, None] * (np.einsum("...i,...j->...ij", u, u) - a_inv)


def reference_kernel(rk: ReferenceKernel, s: float, y):
    """Dominating heat kernel: N(0, 4 s K_T Id) density at y."""
    if s <= 0:
        raise ValueError("duration must be positive")
    y = np.asarray(y, dtype=float)
    d = y.shape[-1] if y.ndim else 1
    norm2 = np.sum(np.atleast_1d(y) ** 2, axis=-1) if y.ndim else y**2
    return np.exp(-norm2 / (8 * s * rk.k_bound)) / (8 * np.pi * s * rk.k_bound) ** (d / 2)


def beta_product_identity(m: int):
    """(prod_{i<m} B(i/2, 1/2), Gamma(1/2)^m / Gamma(m/2)), both via log-Gamma."""
    if m < 1:
        raise ValueError("m must be >= 1")
    i = np.arange(1, m)
    log_lhs = np.sum(gammaln(i / 2) + gammaln(0.5) - gammaln((i + 1) / 2))
    log_rhs = m * gammaln(0.5) - gammaln(m / 2)
    return float(np.exp(log_lhs)), float(np.exp(log_rhs))


# ---------------------------------------------------------------------------
# Parametrix series
# ---------------------------------------------------------------------------


def _time_nodes(a: float, b: float, n: int):
    """Nodes/weights for int_a^b via u = a + (b-a) sin^2(theta).

    The Jacobian (b-a) sin(2 theta) cancels square-root singularities at
    both endpoints, which is exactly the endpoint behavior of the level
    kernels.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    theta = (np.pi / 4) * (x + 1.0)
    u = a + (b - a) * np.sin(theta) ** 2
    wu = w * (np.pi / 4) * (b - a) * np.sin(2 * theta)
    return u, wu


def _gauss_batch(diff, a_inv, det, d):
    """exp(-diff' a_inv diff / 2) / ((2 pi)^{d/2} sqrt(det)) with batched a."""
    quad = np.einsum("...i,...ij,...j->...", diff, a_inv, diff)
    return np.exp(-0.5 * quad) / ((2 * np.pi) ** (d / 2) * np.sqrt(det))


def parametrix_H(flow: MeasureFlow, model: ModelSpec, s: float, r: float,
                 t: float, y, z) -> float:
    """One-step parametrix kernel: coefficient increments paired with the
    gradient and Hessian of the frozen Gaussian anchored at z."""
    fp = frozen_params(flow, model, s, r, t, z, validate=False)
    cloud = flow.cloud_at(r)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    db = model.drift(r, z, cloud) - model.drift(r, y, cloud)
    da = model.covariance(r, z, cloud) - model.covariance(r, y, cloud)
    grad = frozen_density_grad(fp, y, z)
    hess = frozen_density_hess(fp, y, z)
    return float(db @ grad + 0.5 * np.einsum("ij,ij->", da, hess))


class ParametrixEngine:
    """Memoized evaluation of the level kernels and the truncated series.

    One engine is bound to (flow, model, grid, s, t, z).  Level tables are
    vectors over the spatial grid; once built they are read-only, so the
    per-point density evaluations may run concurrently.
    """

    def __init__(self, flow: MeasureFlow, model: ModelSpec, grid: QuadratureGrid,
                 s: float, t: float, z):
        if t <= s:
            raise ValueError("need t > s")
        self.flow = flow
        self.model = model
        self.grid = grid
        self.s = float(s)
        self.t = float(t)
        self.z = np.atleast_1d(np.asarray(z, dtype=float))
        self.d = model.dim
        self.k_bound = float(model.bound_fn(t))
        self.pts, self.sw = grid.mesh()
        self._integ = _FrozenIntegrator(flow, model, self.pts)
        self._integ_z = _FrozenIntegrator(flow, model, self.z[None, :])
        m_z, a_full = self._integ_z.params(self.s, self.t)
        lam_max = float(np.linalg.eigvalsh(a_full).max())
        shift = float(np.linalg.norm(m_z[0]))
        self._margin = 6.0 * np.sqrt(lam_max) + shift
        self._check_coverage(self.z)
        self._tables: dict = {}
        self._b_cache: dict = {}
        self._a_cache: dict = {}
        # A model whose one-step kernel vanishes identically (constant
        # coefficients) short-circuits every level.
        self._flat = bool(model.params.get("constant_coefficients", False))

    # -- helpers ----------------------------------------------------------

    def _check_coverage(self, points):
        """Box must hold >= 6 standard deviations of the widest Gaussian
        involved (plus the largest frozen drift shift)."""
        pts = np.atleast_2d(points)
        lo_gap = (pts - self.grid.space_lo).min()
        hi_gap = (self.grid.space_hi - pts).min()
        if lo_gap < self._margin - 1e-12 or hi_gap < self._margin - 1e-12:
            raise CoverageError(
                f"quadrature box leaves less than {self._margin:g} of margin")

    def _coeffs_at(self, r: float):
        key = round(r, 14)
        if key not in self._b_cache:
            cloud = self.flow.cloud_at(r)
            self._b_cache[key] = self.model.drift(r, self.pts, cloud)
            self._a_cache[key] = self.model.covariance(r, self.pts, cloud)
        return self._b_cache[key], self._a_cache[key]

    def _h1_matrix(self, r: float, u: float, y_pts: np.ndarray) -> np.ndarray:
        """H_{s,r,u}(y_i, z'_j) for rows y_pts and columns the grid anchors."""
        m_j, a_j = self._integ.params(r, u)  # (nz, d), (nz, d, d)
        a_inv = np.linalg.inv(a_j)
        det = np.linalg.det(a_j)
        diff = self.pts[None, :, :] - y_pts[:, None, :] - m_j[None, :, :]
        p = _gauss_batch(diff, a_inv[None], det[None], self.d)
        uvec = np.einsum("jab,ijb->ija", a_inv, diff)

        cloud = self.flow.cloud_at(r)
        if y_pts is self.pts:
            b_y, a_y = self._coeffs_at(r)
            b_z, a_z = b_y, a_y
        else:
            b_z, a_z = self._coeffs_at(r)
            b_y = self.model.drift(r, y_pts, cloud)
            a_y = self.model.covariance(r, y_pts, cloud)

        db = b_z[None, :, :] - b_y[:, None, :]
        da = a_z[None, :, :, :] - a_y[:, None, :, :]
        grad_term = np.einsum("ija,ija->ij", db, uvec)
        quad = np.einsum("ijab,ija,ijb->ij", da, uvec, uvec)
        trace = np.einsum("ijab,jba->ij", da, a_inv)
        return p * (grad_term + 0.5 * (quad - trace))

    # -- level tables -------------------------------------------------------

    def table(self, m: int, r: float) -> np.ndarray:
        """H^m_{s,r,t}(y_grid, z) as a vector over the spatial grid."""
        key = (m, round(r, 14))
        if key in self._tables:
            return self._tables[key]
        if self._flat:
            vec = np.zeros(len(self.pts))
        elif m == 1:
            m_z, a_z = self._integ_z.params(r, self.t)
            a_inv = np.linalg.inv(a_z[0])
            det = np.linalg.det(a_z[0])
            diff = self.z[None, :] - self.pts - m_z
            p = _gauss_batch(diff, a_inv[None], det, self.d)
            uvec = np.einsum("ab,ib->ia", a_inv, diff)
            cloud = self.flow.cloud_at(r)
            b_y, a_y = self._coeffs_at(r)
            b_z = self.model.drift(r, self.z, cloud)
            a_zz = self.model.covariance(r, self.z, cloud)
            db = b_z[None, :] - b_y
            da = a_zz[None, :, :] - a_y
            grad_term = np.einsum("ia,ia->i", db, uvec)
            quad = np.einsum("iab,ia,ib->i", da, uvec, uvec)
            trace = np.einsum("iab,ba->i", da, a_inv)
            vec = p * (grad_term + 0.5 * (quad - trace))
        else:
            nodes, wts = _time_nodes(r, self.t, self.grid.n_time)
            vec = np.zeros(len(self.pts))
            for u, w in zip(nodes, wts):
                if u - r < 1e-13 or self.t - u < 1e-13:
                    continue
                inner = self.table(m - 1, u) * self.sw
                vec += w * (self._h1_matrix(r, u, self.pts) @ inner)
        self._tables[key] = vec
        return vec

    def h_m_at(self, m: int, r: float, y) -> float:
        """H^m_{s,r,t}(y, z) at an arbitrary point y."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if m == 1:
            return parametrix_H(self.flow, self.model, self.s, r, self.t,
                                y[0], self.z)
        if self._flat:
            return 0.0
        nodes, wts = _time_nodes(r, self.t, self.grid.n_time)
        total = 0.0
        for u, w in zip(nodes, wts):
            if u - r < 1e-13 or self.t - u < 1e-13:
                continue
            inner = self.table(m - 1, u) * self.sw
            total += w * float((self._h1_matrix(r, u, y) @ inner)[0])
        return total

    # -- density ------------------------------------------------------------

    def density(self, x) -> ParametrixResult:
        """Truncated series for the decoupled transition density p(x, z).

        The level kernels H^m carry the anchor-minus-point orientation of the
        coefficient differences; the convergent expansion of the density pairs
        the frozen kernel with the generator difference applied at the running
        point, so level m enters the sum with weight (-1)^m.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self._check_coverage(np.stack([x, self.z]))
        m_z, a_z = self._integ_z.params(self.s, self.t)
        a_inv = np.linalg.inv(a_z[0])
        det = np.linalg.det(a_z[0])
        diff = self.z - x - m_z[0]
        base = float(_gauss_batch(diff, a_inv, det, self.d))
        terms = []
        value = base
        m_max = self.grid.trunc
        nodes, wts = _time_nodes(self.s, self.t, self.grid.n_time)
        for m in range(1, m_max + 1):
            if self._flat:
                terms.append(0.0)
                continue
            term = 0.0
            for r, w in zip(nodes, wts):
                if r - self.s < 1e-13 or self.t - r < 1e-13:
                    continue
                # Base kernel anchored at its own terminal point (the grid
                # node), matching the anchoring of every H factor.
                m_r, a_r = self._integ.params(self.s, r)
                ainv_r = np.linalg.inv(a_r)
                det_r = np.linalg.det(a_r)
                diff_r = self.pts - x - m_r
                p_r = _gauss_batch(diff_r, ainv_r, det_r, self.d)
                term += w * float(np.sum(self.sw * self.table(m, r) * p_r))
            term *= (-1.0) ** m
            terms.append(term)
            value += term
        mags = [abs(v) for v in terms]
        converged = True
        for lo_m, hi_m in zip(mags[1:], mags[:-1]):
            if lo_m > 0.5 * hi_m + 1e-15:
                converged = False
        return ParametrixResult(value=value, base=base, terms=tuple(terms),
                                converged=converged)


def parametrix_H_m(flow: MeasureFlow, model: ModelSpec, grid: QuadratureGrid,
                   s: float, r: float, t: float, y, z, m: int,
                   engine: Optional[ParametrixEngine] = None) -> float:
    """Level-m parametrix kernel H^m_{s,r,t}(y, z) by nested quadrature."""
    if m < 1:
        raise ValueError("level must be >= 1")
    if r >= t:
        raise ValueError("need r < t")
    if engine is None:
        engine = ParametrixEngine(flow, model, grid, s, t, z)
    return engine.h_m_at(m, r, y)


def parametrix_density(flow: MeasureFlow, model: ModelSpec, grid: QuadratureGrid,
                       s: float, t: float, x, z,
                       engine: Optional[ParametrixEngine] = None) -> ParametrixResult:
    """Truncated parametrix expansion of the decoupled density p(x, z)."""
    if engine is None:
        engine = ParametrixEngine(flow, model, grid, s, t, z)
    return engine.density(x)
