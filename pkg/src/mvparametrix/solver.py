"""Euler-Maruyama solvers: interacting particles, decoupled paths, variations.

All randomness flows from a single 64-bit seed through named Philox
substreams, so every output is a deterministic function of (inputs, seed)
and paired runs (a base path plus its variation process) consume exactly
the same Brownian increments.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DivergenceError, PairingError
from .model import MeasureFlow, ModelSpec, ParticleCloud, PerturbationMap

__all__ = [
    "SolverConfig",
    "DecoupledRun",
    "MeanFieldVariationRun",
    "substream",
    "sample_cloud",
    "solve_mckean_vlasov",
    "solve_decoupled",
    "variation_frozen",
    "variation_meanfield",
]


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    n_particles: int = 10_000
    seed: int = 42
    n_mc: int = 100_000
    interaction_cap: Optional[int] = None  # subsampled partners in the mean-field variation

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if self.n_mc < 1:
            raise ValueError("n_mc must be positive")


def _tag_int(tag: str) -> int:
    return int.from_bytes(hashlib.blake2s(tag.encode(), digest_size=8).digest(), "big")


def substream(seed: int, *tags: str) -> np.random.Generator:
    """Named, order-independent random substream derived from one seed."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_int(t) for t in tags]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def sample_cloud(kind: str, n: int, dim: int, seed: int, **params) -> ParticleCloud:
    """Seeded built-in initial laws: dirac, gaussian, uniform, two_point."""
    rng = substream(seed, "init", kind)
    if kind == "dirac":
        point = np.broadcast_to(np.asarray(params.get("point", 0.0), dtype=float), (dim,))
        return ParticleCloud.uniform(np.tile(point, (n, 1)))
    if kind == "gaussian":
        mean = np.broadcast_to(np.asarray(params.get("mean", 0.0), dtype=float), (dim,))
        std = np.broadcast_to(np.asarray(params.get("std", 1.0), dtype=float), (dim,))
        return ParticleCloud.uniform(mean + std * rng.standard_normal((n, dim)))
    if kind == "uniform":
        lo = np.broadcast_to(np.asarray(params.get("lo", -1.0), dtype=float), (dim,))
        hi = np.broadcast_to(np.asarray(params.get("hi", 1.0), dtype=float), (dim,))
        return ParticleCloud.uniform(rng.uniform(lo, hi, size=(n, dim)))
    if kind == "two_point":
        a = np.broadcast_to(np.asarray(params.get("a", -1.0), dtype=float), (dim,))
        b = np.broadcast_to(np.asarray(params.get("b", 1.0), dtype=float), (dim,))
        p = float(params.get("p", 0.5))
        pick = rng.random(n) < p
        return ParticleCloud.uniform(np.where(pick[:, None], a, b))
    raise ValueError(f"unknown initial law {kind!r}")


def _step_grid(s: float, t: float, dt: float):
    if t <= s:
        raise ValueError("need t > s")
    n_steps = max(1, int(np.ceil((t - s) / dt - 1e-12)))
    return n_steps, (t - s) / n_steps


# ---------------------------------------------------------------------------
# Interacting particle system
# ---------------------------------------------------------------------------


def solve_mckean_vlasov(model: ModelSpec, init: ParticleCloud, s: float, t: float,
                        cfg: SolverConfig) -> MeasureFlow:
    """Synchronous interacting-particle Euler-Maruyama for the mean-field SDE.

    Every particle advances using the previous step's full cloud as the
    measure argument; the returned flow holds the cloud at every step.
    """
    if init.dim != model.dim:
        raise ValueError("initial cloud dimension disagrees with the model")
    n_steps, h = _step_grid(s, t, cfg.dt)
    rng = substream(cfg.seed, "mckean_vlasov")
    x = init.points.copy()
    w = init.weights
    n, d = x.shape
    clouds = [init]
    times = s + h * np.arange(n_steps + 1)
    for k in range(n_steps):
        tk = times[k]
        cloud = clouds[-1]
        dw = np.sqrt(h) * rng.standard_normal((n, model.noise_dim))
        b = model.drift(tk, x, cloud)
        sig = model.diffusion(tk, x, cloud)
        x = x + b * h + np.einsum("nim,nm->ni", sig, dw)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(k + 1, float(times[k + 1]))
        clouds.append(ParticleCloud(x, w))
    return MeasureFlow(s, times, tuple(clouds))


# ---------------------------------------------------------------------------
# Decoupled SDE and its variation processes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecoupledRun:
    """Terminal samples of the decoupled SDE plus the pairing metadata."""

    terminal: np.ndarray
    start: np.ndarray
    s: float
    t: float
    seed: int
    variation: Optional[np.ndarray] = None
    bismut_integral: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MeanFieldVariationRun:
    """Per-particle mean-field variation vectors plus their particle flow."""

    v: np.ndarray
    flow: MeasureFlow
    seed: int


def _evolve_decoupled(model: ModelSpec, flow: MeasureFlow, x0: np.ndarray,
                      s: float, t: float, dt: float, rng: np.random.Generator,
                      v0: Optional[np.ndarray] = None, bismut: bool = False):
    """Joint Euler-Maruyama evolution of (path, variation, Bismut integral)."""
    n_steps, h = _step_grid(s, t, dt)
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    n, d = x.shape
    v = None if v0 is None else np.atleast_2d(np.asarray(v0, dtype=float)).copy()
    if v is not None and v.shape[0] == 1 and n > 1:
        v = np.tile(v, (n, 1))
    integral = np.zeros(n) if bismut else None
    for k in range(n_steps):
        tk = s + k * h
        cloud = flow.cloud_at(tk)
        dw = np.sqrt(h) * rng.standard_normal((n, model.noise_dim))
        b = model.drift(tk, x, cloud)
        sig = model.diffusion(tk, x, cloud)
        if bismut:
            cov = np.einsum("nim,njm->nij", sig, sig)
            u = np.linalg.solve(cov, v[..., None])[..., 0]
            integrand = np.einsum("nim,ni->nm", sig, u)
            integral += np.einsum("nm,nm->n", integrand, dw)
        if v is not None:
            gb = model.drift_grad(tk, x, cloud)
            gsig = model.diffusion_grad(tk, x, cloud, v)
            v = v + np.einsum("nab,nb->na", gb, v) * h \
                + np.einsum("nam,nm->na", gsig, dw)
        x = x + b * h + np.einsum("nim,nm->ni", sig, dw)
        if not np.all(np.isfinite(x)) or (v is not None and not np.all(np.isfinite(v))):
            raise DivergenceError(k + 1, tk + h)
    return x, v, integral


def solve_decoupled(model: ModelSpec, flow: MeasureFlow, x, s: float, t: float,
                    cfg: SolverConfig, n_mc: Optional[int] = None) -> DecoupledRun:
    """Monte Carlo paths of the decoupled SDE along a frozen measure flow."""
    if t > flow.end_time + 1e-9 or s < flow.time_grid[0] - 1e-9:
        raise ValueError("flow does not cover [s, t]")
    n = cfg.n_mc if n_mc is None else n_mc
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x0 = np.tile(x, (n, 1))
    rng = substream(cfg.seed, "decoupled")
    xt, _, _ = _evolve_decoupled(model, flow, x0, s, t, cfg.dt, rng)
    return DecoupledRun(terminal=xt, start=x, s=s, t=t, seed=cfg.seed)


def variation_frozen(model: ModelSpec, flow: MeasureFlow, x, v, s: float, t: float,
                     cfg: SolverConfig, base: Optional[DecoupledRun] = None,
                     n_mc: Optional[int] = None) -> np.ndarray:
    """Spatial variation process along paths paired with solve_decoupled.

    The same named substream is replayed, so the variation consumes exactly
    the Brownian increments of its base run; pairing against a run from a
    different seed is rejected.
    """
    if base is not None and base.seed != cfg.seed:
        raise PairingError(f"base run seed {base.seed} != config seed {cfg.seed}")
    n = cfg.n_mc if n_mc is None else n_mc
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    rng = substream(cfg.seed, "decoupled")
    _, vt, _ = _evolve_decoupled(model, flow, np.tile(x, (n, 1)), s, t, cfg.dt,
                                 rng, v0=v[None, :])
    return vt


def variation_meanfield(model: ModelSpec, init: ParticleCloud, phi: PerturbationMap,
                        s: float, t: float, cfg: SolverConfig) -> MeanFieldVariationRun:
    """Mean-field variation process on the interacting particle system.

    Re-simulates the particle system from the same substream as
    solve_mckean_vlasov and co-evolves per-particle direction vectors whose
    measure coupling is the weighted sum of the coefficient measure-derivative
    kernels over all (or a capped, seed-chosen subset of) partners.
    """
    n_steps, h = _step_grid(s, t, cfg.dt)
    rng = substream(cfg.seed, "mckean_vlasov")
    x = init.points.copy()
    w = init.weights
    n = x.shape[0]
    v = np.atleast_2d(phi(x)).copy()
    if v.shape != x.shape:
        v = np.broadcast_to(v, x.shape).copy()
    clouds = [init]
    times = s + h * np.arange(n_steps + 1)

    if cfg.interaction_cap is not None and cfg.interaction_cap < n:
        idx = substream(cfg.seed, "vp_subsample").choice(n, cfg.interaction_cap,
                                                         replace=False)
        idx.sort()
    else:
        idx = np.arange(n)
    w_sub = w[idx] / w[idx].sum()

    sigma_lions_live = True
    for k in range(n_steps):
        tk = times[k]
        cloud = clouds[-1]
        dw = np.sqrt(h) * rng.standard_normal((n, model.noise_dim))
        b = model.drift(tk, x, cloud)
        sig = model.diffusion(tk, x, cloud)
        gb = model.drift_grad(tk, x, cloud)
        gsig = model.diffusion_grad(tk, x, cloud, v)
        drift_v = np.einsum("nab,nb->na", gb, v)
        diff_v = gsig
        if not model.measure_free:
            lb = model.drift_lions(tk, x, cloud, x[idx])
            drift_v = drift_v + np.einsum("ijab,jb,j->ia", lb, v[idx], w_sub)
            if sigma_lions_live:
                ls = model.diffusion_lions(tk, x, cloud, x[idx])
                if np.any(ls):
                    diff_v = diff_v + np.einsum("ijamb,jb,j->iam", ls, v[idx], w_sub)
                elif k == 0:
                    # Identically zero at launch: treat sigma as measure-free.
                    sigma_lions_live = False
        v = v + drift_v * h + np.einsum("nam,nm->na", diff_v, dw)
        x = x + b * h + np.einsum("nim,nm->ni", sig, dw)
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(v)):
            raise DivergenceError(k + 1, float(times[k + 1]))
        clouds.append(ParticleCloud(x, w))
    return MeanFieldVariationRun(v=v, flow=MeasureFlow(s, times, tuple(clouds)),
                                 seed=cfg.seed)
