"""Model class, empirical measures, and push-forward perturbations.

A model bundles the drift/diffusion coefficients of a distribution
dependent SDE together with their spatial gradients and their intrinsic
(measure) derivative kernels.  Probability measures are represented
throughout as weighted particle clouds; a continuous initial law enters
only through seeded sampling (see :mod:`mvparametrix.solver`).

Coefficient callables are vectorized over the state argument: ``x`` may be
a single point of shape ``(d,)`` or a batch ``(n, d)``, and the output
carries the same batch shape in front.  The measure-derivative kernels
additionally take a point ``y`` (single or batched); when both ``x`` and
``y`` are batched the result pairs them on two leading axes
``(nx, ny, ...)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import InvalidPerturbationError, ModelValidationError

__all__ = [
    "ModelSpec",
    "ParticleCloud",
    "MeasureFlow",
    "PerturbationMap",
    "push_forward",
    "cloud_mean",
    "cloud_cov",
    "builtin_model",
    "validate_model",
    "save_cloud",
    "load_cloud",
    "BUILTIN_MODELS",
]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParticleCloud:
    """Weighted empirical measure on R^d: N points with weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights disagree on N")
        if pts.shape[0] < 1:
            raise ValueError("cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("cloud has non-finite coordinates")
        if np.any(w < 0):
            raise ValueError("negative weight")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        pts = pts.copy()
        w = w.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points: np.ndarray) -> "ParticleCloud":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, x) -> "ParticleCloud":
        return cls.uniform(np.atleast_2d(np.asarray(x, dtype=float)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class MeasureFlow:
    """Time-grid-indexed clouds approximating the measure flow of the SDE."""

    start_time: float
    time_grid: np.ndarray
    clouds: tuple

    def __post_init__(self):
        tg = np.asarray(self.time_grid, dtype=float)
        if tg.ndim != 1 or len(tg) != len(self.clouds):
            raise ValueError("time_grid and clouds disagree on length")
        if np.any(np.diff(tg) <= 0):
            raise ValueError("time_grid must be strictly increasing")
        if abs(tg[0] - self.start_time) > 1e-12:
            raise ValueError("time_grid must start at start_time")
        n0, d0 = self.clouds[0].n, self.clouds[0].dim
        for c in self.clouds:
            if c.n != n0 or c.dim != d0:
                raise ValueError("all clouds must share N and d")
        tg = tg.copy()
        tg.setflags(write=False)
        object.__setattr__(self, "time_grid", tg)
        object.__setattr__(self, "clouds", tuple(self.clouds))

    @property
    def end_time(self) -> float:
        return float(self.time_grid[-1])

    @property
    def terminal(self) -> ParticleCloud:
        return self.clouds[-1]

    def index_at(self, t: float) -> int:
        """Index of the grid time nearest below ``t`` (piecewise-constant lookup)."""
        k = int(np.searchsorted(self.time_grid, t + 1e-12, side="right") - 1)
        return min(max(k, 0), len(self.clouds) - 1)

    def cloud_at(self, t: float) -> ParticleCloud:
        return self.clouds[self.index_at(t)]

    @classmethod
    def constant(cls, cloud: ParticleCloud, s: float, t: float, n_steps: int = 1) -> "MeasureFlow":
        """Flow that holds a fixed cloud on [s, t] (measure-free models)."""
        grid = np.linspace(s, t, n_steps + 1)
        return cls(s, grid, tuple([cloud] * (n_steps + 1)))


@dataclass(frozen=True)
class PerturbationMap:
    """A perturbation direction phi: R^d -> R^d for push-forward maps."""

    phi: Callable[[np.ndarray], np.ndarray]
    l2_norm_hint: Optional[float] = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.phi(x), dtype=float)

    def l2_norm(self, cloud: ParticleCloud) -> float:
        """||phi||_{L^2(mu)} on the empirical measure."""
        v = self(cloud.points)
        return float(np.sqrt(np.sum(cloud.weights * np.sum(v * v, axis=-1))))

    @classmethod
    def constant(cls, v) -> "PerturbationMap":
        v = np.asarray(v, dtype=float)
        return cls(lambda x, _v=v: np.broadcast_to(_v, np.shape(x)).copy(),
                   l2_norm_hint=float(np.linalg.norm(v)))

    @classmethod
    def identity(cls) -> "PerturbationMap":
        return cls(lambda x: np.asarray(x, dtype=float).copy())


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the distribution dependent SDE plus their derivatives.

    ``drift_grad[..., a, b]`` is the partial of drift component ``a`` in
    ``x_b``; ``drift_lions(t, x, cloud, y)[..., a, b]`` is the measure
    derivative kernel of drift component ``a`` evaluated at ``y``, with the
    derivative acting in ``y_b``.  ``diffusion_lions`` carries one extra
    noise axis: ``(..., d, m, d)``.  ``bound_fn(t)`` returns the admissible
    bound K_t: eigenvalues of the diffusion square lie in [1/K_t, K_t] and
    the drift, gradients, and (squared) diffusion derivative norms stay
    below K_t on the validated range.
    """

    name: str
    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable
    drift_grad: Callable
    diffusion_grad: Callable
    drift_lions: Callable
    diffusion_lions: Callable
    bound_fn: Callable[[float], float]
    params: dict = field(default_factory=dict)

    def covariance(self, t, x, cloud):
        """(sigma sigma*)(t, x, mu), shape (..., d, d)."""
        sig = self.diffusion(t, x, cloud)
        return np.einsum("...ik,...jk->...ij", sig, sig)

    @property
    def measure_free(self) -> bool:
        return bool(self.params.get("measure_free", False))


# ---------------------------------------------------------------------------
# Cloud operations
# ---------------------------------------------------------------------------


def push_forward(cloud: ParticleCloud, phi: PerturbationMap, eps: float) -> ParticleCloud:
    """Empirical push-forward mu o (Id + eps*phi)^{-1}: shift every point."""
    if not np.isfinite(eps):
        raise ValueError("eps must be finite")
    shift = phi(cloud.points)
    new_pts = cloud.points + eps * np.broadcast_to(shift, cloud.points.shape)
    if not np.all(np.isfinite(new_pts)):
        raise InvalidPerturbationError("perturbation produced non-finite coordinates")
    return ParticleCloud(new_pts, cloud.weights)


def cloud_mean(cloud: ParticleCloud) -> np.ndarray:
    return cloud.weights @ cloud.points


def cloud_cov(cloud: ParticleCloud) -> np.ndarray:
    m = cloud_mean(cloud)
    c = cloud.points - m
    return np.einsum("n,ni,nj->ij", cloud.weights, c, c)


def save_cloud(path, cloud: ParticleCloud) -> None:
    """CSV with columns x_1..x_d,weight."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{i + 1}" for i in range(cloud.dim)] + ["weight"])
        for pt, wt in zip(cloud.points, cloud.weights):
            w.writerow([f"{v:.17g}" for v in pt] + [f"{wt:.17g}"])


def load_cloud(path) -> ParticleCloud:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "weight":
        raise ValueError("cloud CSV must end with a weight column")
    data = np.array([[float(v) for v in r] for r in body])
    return ParticleCloud(data[:, :-1], data[:, -1])


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------


def _pairwise(x, y, d):
    """Broadcast shapes for measure-derivative kernels.

    Returns (batch_shape, x_expanded, y_expanded) so that builtins can emit
    kernels of shape batch_shape + trailing matrix axes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    bx, by = x.ndim > 1, y.ndim > 1
    if bx and by:
        return (x.shape[0], y.shape[0]), x[:, None, :], y[None, :, :]
    if bx:
        return (x.shape[0],), x, np.broadcast_to(y, x.shape)
    if by:
        return (y.shape[0],), np.broadcast_to(x, y.shape), y
    return (), x, y


def _const_matrix_kernel(mat):
    """Lions kernel that is a constant matrix in both x and y."""

    def kernel(t, x, cloud, y, _mat=np.asarray(mat, dtype=float)):
        batch, _, _ = _pairwise(x, y, _mat.shape[-1])
        return np.broadcast_to(_mat, batch + _mat.shape).copy()

    return kernel


def _zero_diffusion_lions(d, m):
    def kernel(t, x, cloud, y):
        batch, _, _ = _pairwise(x, y, d)
        return np.zeros(batch + (d, m, d))

    return kernel


def _const_diffusion_model(d, s0):
    sig_mat = s0 * np.eye(d)

    def diffusion(t, x, cloud):
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        return np.broadcast_to(sig_mat, batch + (d, d)).copy()

    def diffusion_grad(t, x, cloud, v):
        x = np.asarray(x, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], np.asarray(v, dtype=float).shape[:-1])
        return np.zeros(batch + (d, d))

    return diffusion, diffusion_grad


def builtin_model(name: str, **params) -> ModelSpec:
    """Construct one of the bundled admissible models.

    Names: ``constant``, ``brownian``, ``ou``, ``meanfield_ou``,
    ``bounded_interaction``.  All use sigma = sigma0 * Id; ``sigma0`` must
    be positive (uniform ellipticity).
    """
    if name not in BUILTIN_MODELS:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}")
    return BUILTIN_MODELS[name](**params)


def _ellipticity_bound(s0: float) -> float:
    if s0 <= 0:
        raise ValueError("sigma0 must be positive (ellipticity)")
    return max(s0 * s0, 1.0 / (s0 * s0))


def _make_constant(dim: int = 1, drift_value=0.0, sigma0: float = 1.0) -> ModelSpec:
    d = int(dim)
    c = np.broadcast_to(np.asarray(drift_value, dtype=float), (d,)).copy()
    diffusion, diffusion_grad = _const_diffusion_model(d, sigma0)

    def drift(t, x, cloud):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(c, x.shape).copy()

    def drift_grad(t, x, cloud):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (d, d))

    k = max(float(np.linalg.norm(c)), _ellipticity_bound(sigma0), 1.0)
    return ModelSpec(
        name="constant", dim=d, noise_dim=d,
        drift=drift, diffusion=diffusion,
        drift_grad=drift_grad, diffusion_grad=diffusion_grad,
        drift_lions=_const_matrix_kernel(np.zeros((d, d))),
        diffusion_lions=_zero_diffusion_lions(d, d),
        bound_fn=lambda t, _k=k: _k,
        params={"dim": d, "drift_value": c.tolist(), "sigma0": sigma0,
                "measure_free": True, "constant_coefficients": True},
    )


def _make_brownian(dim: int = 1, sigma0: float = 1.0) -> ModelSpec:
    m = _make_constant(dim=dim, drift_value=0.0, sigma0=sigma0)
    return ModelSpec(
        name="brownian", dim=m.dim, noise_dim=m.noise_dim,
        drift=m.drift, diffusion=m.diffusion,
        drift_grad=m.drift_grad, diffusion_grad=m.diffusion_grad,
        drift_lions=m.drift_lions, diffusion_lions=m.diffusion_lions,
        bound_fn=m.bound_fn,
        params={"dim": m.dim, "sigma0": sigma0,
                "measure_free": True, "constant_coefficients": True},
    )


def _make_ou(dim: int = 1, alpha: float = 1.0, sigma0: float = 1.0,
             probe_radius: float = 4.0) -> ModelSpec:
    d = int(dim)
    a = float(alpha)
    diffusion, diffusion_grad = _const_diffusion_model(d, sigma0)

    def drift(t, x, cloud):
        return -a * np.asarray(x, dtype=float)

    def drift_grad(t, x, cloud):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-a * np.eye(d), x.shape[:-1] + (d, d)).copy()

    k = max(a * probe_radius, a, _ellipticity_bound(sigma0), 1.0)
    return ModelSpec(
        name="ou", dim=d, noise_dim=d,
        drift=drift, diffusion=diffusion,
        drift_grad=drift_grad, diffusion_grad=diffusion_grad,
        drift_lions=_const_matrix_kernel(np.zeros((d, d))),
        diffusion_lions=_zero_diffusion_lions(d, d),
        bound_fn=lambda t, _k=k: _k,
        params={"dim": d, "alpha": a, "sigma0": sigma0, "measure_free": True},
    )


def _make_meanfield_ou(dim: int = 1, alpha: float = 1.0, sigma0: float = 1.0,
                       probe_radius: float = 4.0) -> ModelSpec:
    d = int(dim)
    a = float(alpha)
    diffusion, diffusion_grad = _const_diffusion_model(d, sigma0)

    def drift(t, x, cloud):
        m = cloud_mean(cloud)
        return -a * (np.asarray(x, dtype=float) - m)

    def drift_grad(t, x, cloud):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-a * np.eye(d), x.shape[:-1] + (d, d)).copy()

    # Derivative of mu -> integral of y mu(dy) along push-forwards is Id,
    # so the kernel of b = -alpha (x - mean) is alpha * Id for every y.
    k = max(2.0 * a * probe_radius, a, _ellipticity_bound(sigma0), 1.0)
    return ModelSpec(
        name="meanfield_ou", dim=d, noise_dim=d,
        drift=drift, diffusion=diffusion,
        drift_grad=drift_grad, diffusion_grad=diffusion_grad,
        drift_lions=_const_matrix_kernel(a * np.eye(d)),
        diffusion_lions=_zero_diffusion_lions(d, d),
        bound_fn=lambda t, _k=k: _k,
        params={"dim": d, "alpha": a, "sigma0": sigma0, "measure_free": False},
    )


def _make_bounded_interaction(dim: int = 1, amp: float = 0.5, coupling: float = 0.5,
                              sigma0: float = 1.0) -> ModelSpec:
    """b(x, mu) = amp*tanh(x) + coupling * int sin(x - y) mu(dy), sigma = sigma0*Id.

    Both pieces and all their derivatives are globally bounded, so the
    admissibility bound is a genuine constant.
    """
    d = int(dim)
    a0 = float(amp)
    cc = float(coupling)
    diffusion, diffusion_grad = _const_diffusion_model(d, sigma0)

    def drift(t, x, cloud):
        x = np.asarray(x, dtype=float)
        inter = np.einsum("n,...ni->...i", cloud.weights,
                          np.sin(x[..., None, :] - cloud.points))
        return a0 * np.tanh(x) + cc * inter

    def drift_grad(t, x, cloud):
        x = np.asarray(x, dtype=float)
        diag_local = a0 / np.cosh(x) ** 2
        diag_inter = cc * np.einsum("n,...ni->...i", cloud.weights,
                                    np.cos(x[..., None, :] - cloud.points))
        out = np.zeros(x.shape[:-1] + (d, d))
        idx = np.arange(d)
        out[..., idx, idx] = diag_local + diag_inter
        return out

    def drift_lions(t, x, cloud, y):
        batch, xe, ye = _pairwise(x, y, d)
        out = np.zeros(batch + (d, d))
        idx = np.arange(d)
        out[..., idx, idx] = -cc * np.cos(xe - ye)
        return out

    k = max(a0 + cc, cc, a0, _ellipticity_bound(sigma0), 1.0)
    return ModelSpec(
        name="bounded_interaction", dim=d, noise_dim=d,
        drift=drift, diffusion=diffusion,
        drift_grad=drift_grad, diffusion_grad=diffusion_grad,
        drift_lions=drift_lions,
        diffusion_lions=_zero_diffusion_lions(d, d),
        bound_fn=lambda t, _k=k: _k,
        params={"dim": d, "amp": a0, "coupling": cc, "sigma0": sigma0,
                "measure_free": False},
    )


BUILTIN_MODELS = {
    "constant": _make_constant,
    "brownian": _make_brownian,
    "ou": _make_ou,
    "meanfield_ou": _make_meanfield_ou,
    "bounded_interaction": _make_bounded_interaction,
}


# ---------------------------------------------------------------------------
# Admissibility audit
# ---------------------------------------------------------------------------


def _lions_pairing(model, t, x, cloud, phi):
    """<phi, D^L b(t,x,.)(mu)(.)>_{L^2(mu)} as a weighted particle sum, per component."""
    ker = model.drift_lions(t, x, cloud, cloud.points)  # (N, d, d)
    vals = phi(cloud.points)  # (N, d)
    return np.einsum("n,nab,nb->a", cloud.weights, ker, vals)


def validate_model(model: ModelSpec, n_probes: int = 120, seed: int = 0,
                   probe_radius: float = 3.0, t_max: float = 1.0) -> None:
    """Audit a model against the admissibility contract on random probes.

    Raises :class:`ModelValidationError` on the first violated clause; a
    model failing this audit must not be used downstream.
    """
    rng = np.random.default_rng(seed)
    d = model.dim
    fd_h = 1e-5

    test_phis = [
        PerturbationMap.constant(np.eye(d)[0]),
        PerturbationMap.identity(),
        PerturbationMap(lambda p: np.sin(p)),
    ]

    for probe in range(max(int(n_probes), 100)):
        t = float(rng.uniform(0.0, t_max))
        x = rng.uniform(-probe_radius, probe_radius, size=d)
        cloud = ParticleCloud.uniform(rng.normal(size=(32, d)))
        k_t = float(model.bound_fn(t))

        cov = model.covariance(t, x, cloud)
        eig = np.linalg.eigvalsh(cov)
        if eig.min() < 1.0 / k_t - 1e-9 or eig.max() > k_t + 1e-9:
            raise ModelValidationError(
                f"ellipticity violated at probe {probe}: eig in [{eig.min():g},"
                f" {eig.max():g}] vs [{1 / k_t:g}, {k_t:g}]")

        b = model.drift(t, x, cloud)
        gb = model.drift_grad(t, x, cloud)
        lions_here = model.drift_lions(t, x, cloud, cloud.points)
        lions_op = max(np.linalg.norm(lions_here[j], 2) for j in range(cloud.n))
        v = rng.normal(size=d)
        v /= np.linalg.norm(v)
        gsig = model.diffusion_grad(t, x, cloud, v)
        dsig_l = model.diffusion_lions(t, x, cloud, cloud.points)
        dsig_l_sq = float(np.max(np.sum(dsig_l**2, axis=(-3, -2, -1))))
        checks = {
            "|drift|": float(np.linalg.norm(b)),
            "||drift_grad||": float(np.linalg.norm(gb, 2)),
            "||drift_lions||": float(lions_op),
            "||diffusion_grad||^2": float(np.sum(gsig**2)),
            "||diffusion_lions||^2": dsig_l_sq,
        }
        for label, val in checks.items():
            if val > k_t + 1e-9:
                raise ModelValidationError(
                    f"bound violated at probe {probe}: {label} = {val:g} > K_t = {k_t:g}")

        # Spatial gradient vs central finite differences, rel tol 1e-4.
        fd = np.empty((d, d))
        for bax in range(d):
            e = np.zeros(d)
            e[bax] = fd_h
            fd[:, bax] = (model.drift(t, x + e, cloud) - model.drift(t, x - e, cloud)) / (2 * fd_h)
        scale = max(np.abs(fd).max(), 1e-8)
        if np.abs(fd - gb).max() > 1e-4 * max(scale, 1.0):
            raise ModelValidationError(
                f"drift_grad disagrees with finite differences at probe {probe}")

        # Lions kernel vs finite-difference push-forward derivative, rel tol 1e-2.
        if probe < 20:
            for phi in test_phis:
                eps = 1e-4
                g0 = model.drift(t, x, cloud)
                g1 = model.drift(t, x, push_forward(cloud, phi, eps))
                fd_l = (g1 - g0) / eps
                pair = _lions_pairing(model, t, x, cloud, phi)
                ref = max(np.abs(pair).max(), np.abs(fd_l).max())
                if ref > 1e-8 and np.abs(fd_l - pair).max() > 1e-2 * ref:
                    raise ModelValidationError(
                        f"drift_lions disagrees with push-forward finite difference "
                        f"at probe {probe}: fd={fd_l}, kernel pairing={pair}")

        # Lipschitz continuity of the Lions kernels in x.
        if probe < 20:
            x2 = rng.uniform(-probe_radius, probe_radius, size=d)
            l1 = model.drift_lions(t, x, cloud, cloud.points)
            l2 = model.drift_lions(t, x2, cloud, cloud.points)
            gap = max(np.linalg.norm(l1[j] - l2[j], 2) for j in range(cloud.n))
            if gap > k_t * np.linalg.norm(x - x2) + 1e-9:
                raise ModelValidationError(
                    f"drift_lions not K_t-Lipschitz in x at probe {probe}")
