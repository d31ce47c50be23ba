# src/core/sde_engine.py
"""
src/core/sde_engine.py

Monte Carlo integrator for the projected diffusions.

Base motion (tau, x) takes Ito-Euler steps z <- z + b h + sigma sqrt(h) xi
with sigma sigma^T = 2a. On the sphere the spatial part moves in ambient
form: the chart increment is pushed forward to a tangent vector, added to
the ambient point and projected back to the sphere. The projection supplies
the Laplace-Beltrami drift, so that part of b is left out of the tangent step.

Frames are transported along the realised base increments by the
Stratonovich-Heun rule. For metric-compatible connections a
metric-preserving variant carries the Gram matrix e^T g e exactly.
tau is absorbed at the boundary of [delta, T]: the state is clamped and
frozen from then on.

Paths are simulated in fixed chunks of path indices on a thread pool; every
path uses its own random stream so results do not depend on scheduling.
"""

import csv
import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from src.core.backgrounds import (
    CHART_IDS,
    TAU_TOLERANCE,
    Background,
    ChartPoint,
    FlatTorusBackground,
    ShrinkingSphereBackground,
)
from src.core.errors import ConfigurationError, ContractError, DomainError, IntegratorError
from src.core.finite_differences import orthonormal_frame
from src.core.generators import FrameState, GeneratorCoeffs, coordinate_names, scalar_generator
from src.core.perelman_geometry import perelman_coefficients
from src.utils.config_manager import ConfigManager

logger = logging.getLogger("ricci_lab")

SINGULAR_FRAME_DET = 1e-8
# Relative tolerance for negative eigenvalues of a diffusion matrix.
PSD_TOLERANCE = 1e-12


# ============================================================================
# Options
# ============================================================================

@dataclass
class EngineOptions:
    """Scheduling knobs; none of them changes numerical results."""
    workers: int = 1
    chunk_size: int = 512
    progress: bool = False

    @classmethod
    def from_settings(cls) -> "EngineOptions":
        sim = ConfigManager.get_settings().simulation
        return cls(workers=sim.workers, chunk_size=sim.chunk_size, progress=sim.progress_bars)


# ============================================================================
# Coefficient providers
# ============================================================================

class CoefficientProvider(ABC):
    """Generator coefficients and block connection of a diffusion on (tau, x)."""

    def __init__(self, background: Background):
        self.background = background

    @abstractmethod
    def __call__(self, x: np.ndarray, tau: np.ndarray, chart: np.ndarray) -> GeneratorCoeffs:
        """Batched coefficients at chart coordinates x (chart ids per point)."""

    def connection(self, x: np.ndarray, tau: np.ndarray) -> np.ndarray:
        """Block connection Gamma^k_ij (index 0 = tau) used to transport frames."""
        d = self.background.n + 1
        return np.zeros(np.shape(tau) + (d, d, d))


class ScalarCoefficientProvider(CoefficientProvider):
    """The projected generator of the Laplacian of G at sphere dimension N."""

    def __init__(self, background: Background, N: int):
        super().__init__(background)
        self.N = N

    def __call__(self, x, tau, chart):
        return scalar_generator(self.background.jet(x, tau), tau, self.N)

    def connection(self, x, tau):
        return perelman_coefficients(self.background.jet(x, tau), tau, self.N, derivatives=False).block_gamma


class ParabolicCoefficientProvider(CoefficientProvider):
    """
    Brownian motion of g_tau with deterministic clock: a = diag(0, g^-1),
    b = (1, -g^jk Gamma^i_jk). The connection is the space-time one:
    Gamma^k_ij of g_tau and Gamma^k_{0j} = R^k_j.
    """

    def __call__(self, x, tau, chart):
        jet = self.background.jet(x, tau)
        n = jet.n
        batch = jet.g.shape[:-2]
        a = np.zeros(batch + (n + 1, n + 1))
        a[..., 1:, 1:] = jet.g_inv
        b = np.zeros(batch + (n + 1,))
        b[..., 0] = 1.0
        b[..., 1:] = -np.einsum('...jk,...ijk->...i', jet.g_inv, jet.gamma)
        return GeneratorCoeffs(coordinate_names(n), a, b)

    def connection(self, x, tau):
        jet = self.background.jet(x, tau)
        n = jet.n
        gamma = np.zeros(jet.g.shape[:-2] + (n + 1, n + 1, n + 1))
        gamma[..., 1:, 1:, 1:] = jet.gamma
        gamma[..., 1:, 0, 1:] = jet.ric_mixed
        gamma[..., 1:, 1:, 0] = jet.ric_mixed
        return gamma


class ConstantCoefficientProvider(CoefficientProvider):
    """Fixed (a, b) everywhere; the degenerate configurations of the tests."""

    def __init__(self, background: Background, a: np.ndarray, b: np.ndarray):
        super().__init__(background)
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def __call__(self, x, tau, chart):
        batch = np.shape(tau)
        d = self.b.shape[-1]
        return GeneratorCoeffs(coordinate_names(d - 1),
                               np.broadcast_to(self.a, batch + (d, d)).copy(),
                               np.broadcast_to(self.b, batch + (d,)).copy())


def noise_factor(a: np.ndarray) -> np.ndarray:
    """
    sigma with sigma sigma^T = 2a. Coordinates whose row of a vanishes at
    every point get a zero row; the rest is Cholesky factored, so noise
    component j drives the same coordinate whether or not tau diffuses.
    Falls back to eigh for other semidefinite matrices.
    """
    two_a = 2.0 * np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(two_a)
    except np.linalg.LinAlgError:
        pass
    flat = two_a.reshape((-1,) + two_a.shape[-2:])
    live = np.flatnonzero(np.any(flat != 0.0, axis=(0, 2)))
    if 0 < live.size < two_a.shape[-1]:
        try:
            sigma = np.zeros_like(two_a)
            sub = two_a[..., live[:, None], live[None, :]]
            sigma[..., live[:, None], live[None, :]] = np.linalg.cholesky(sub)
            return sigma
        except np.linalg.LinAlgError:
            pass
    w, V = np.linalg.eigh(0.5 * (two_a + np.swapaxes(two_a, -1, -2)))
    scale = np.maximum(1.0, np.max(np.abs(w), axis=-1, keepdims=True))
    if np.any(w < -PSD_TOLERANCE * scale):
        raise IntegratorError(f"diffusion matrix is not positive semidefinite (min eigenvalue {np.min(w):.3e})")
    return V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


# ============================================================================
# Ensembles
# ============================================================================

@dataclass
class PathEnsemble:
    """
    Saved states of n_paths paths. Arrays are indexed [path, saved time].
    chart holds chart ids (NORTH/SOUTH on the sphere, 0 on the torus).
    stopped_at is NaN for paths that never left [delta, T].
    """
    step: float
    horizon: float
    times: np.ndarray
    tau: np.ndarray
    coords: np.ndarray
    chart: np.ndarray
    stopped_at: np.ndarray
    overshoot: np.ndarray
    frames: Optional[np.ndarray] = None
    singular: Optional[np.ndarray] = None
    path_ids: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.tau.shape[0]

    @property
    def n_saved(self) -> int:
        return self.times.shape[0]

    @property
    def n_stopped(self) -> int:
        return int(np.sum(np.isfinite(self.stopped_at)))

    @property
    def full_resolution(self) -> bool:
        return self.n_saved == int(round(self.horizon / self.step)) + 1

    def time_index(self, s: float) -> int:
        idx = int(np.argmin(np.abs(self.times - s)))
        if abs(self.times[idx] - s) > 1e-9 * max(1.0, abs(s)):
            raise DomainError(f"s = {s} is not a saved time")
        return idx

    def point(self, index: int) -> ChartPoint:
        return ChartPoint(self.coords[:, index], self.tau[:, index], "mixed")

    def frame_state(self, index: int) -> FrameState:
        if self.frames is None:
            raise ContractError("ensemble carries no frames")
        return FrameState(self.point(index), self.frames[:, index])

    def stopped_by(self, index: int) -> np.ndarray:
        return np.isfinite(self.stopped_at) & (self.stopped_at <= self.times[index] + 1e-12)

    @classmethod
    def concat(cls, parts: Sequence["PathEnsemble"]) -> "PathEnsemble":
        first = parts[0]
        stack = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=0)
        return cls(
            step=first.step, horizon=first.horizon, times=first.times,
            tau=stack("tau"), coords=stack("coords"), chart=stack("chart"),
            stopped_at=stack("stopped_at"), overshoot=stack("overshoot"),
            frames=stack("frames") if first.frames is not None else None,
            singular=stack("singular") if first.singular is not None else None,
            path_ids=stack("path_ids") if first.path_ids is not None else None,
            meta=dict(first.meta),
        )


# ============================================================================
# Stepping
# ============================================================================

def _chart_ids(background: Background, start: ChartPoint) -> ChartPoint:
    if isinstance(background, ShrinkingSphereBackground):
        start = background.canonical(start)
        if start.chart_id not in CHART_IDS:
            raise ContractError("start point must lie in a single chart")
        return start
    return background.canonical(start)


def _base_step(background: Background, provider: CoefficientProvider, x, tau, chart, xi, h):
    """One Ito-Euler step for a batch; returns (x_new, tau_new, chart_new, x_new_in_old_chart)."""
    coeffs = provider(x, tau, chart)
    sigma = noise_factor(coeffs.a)
    dz = coeffs.b * h + math.sqrt(h) * np.einsum('...ij,...j->...i', sigma, xi)
    tau_new = tau + dz[..., 0]
    if isinstance(background, ShrinkingSphereBackground):
        jet = background.jet(x, tau)
        lb_drift = -np.einsum('...jk,...ijk->...i', jet.g_inv, jet.gamma)
        tangent = dz[..., 1:] - lb_drift * h
        ambient = background.to_ambient(x, chart)
        ambient_new = background.normalize(
            ambient + np.einsum('...aj,...j->...a', background.ambient_jacobian(x, chart), tangent))
        chart_new = background.preferred_chart(ambient_new)
        x_new = background.from_ambient(ambient_new, chart_new)
        x_old_chart = x_new.copy()
        switched = chart_new != chart
        if np.any(switched):
            x_old_chart[switched] = background.switch_chart(x_new[switched])
        return x_new, tau_new, chart_new.astype(chart.dtype), x_old_chart
    if isinstance(background, FlatTorusBackground):
        x_raw = x + dz[..., 1:]
        return background.wrap(x_raw), tau_new, chart, x_raw
    return x + dz[..., 1:], tau_new, chart, x + dz[..., 1:]


def _apply_connection(gamma: np.ndarray, dz: np.ndarray, e: np.ndarray) -> np.ndarray:
    """(Gamma[dz] e)^k_b = Gamma^k_ij dz^i e^j_b."""
    return np.einsum('...kij,...i,...jb->...kb', gamma, dz, e)


def heun_transport_step(provider: CoefficientProvider, x, tau, x_next, tau_next, e) -> np.ndarray:
    """
    Stratonovich-Heun step of de = -Gamma[dz] e with dz taken in the chart of
    the current point (x_next given in that chart).
    """
    dz = np.concatenate([(tau_next - tau)[..., None], x_next - x], axis=-1)
    gamma_k = provider.connection(x, tau)
    gamma_k1 = provider.connection(x_next, tau_next)
    slope_k = _apply_connection(gamma_k, dz, e)
    predictor = e - slope_k
    return e - 0.5 * (slope_k + _apply_connection(gamma_k1, dz, predictor))


def _polar_factor(m: np.ndarray) -> np.ndarray:
    """Orthogonal factor U V^T of m = U S V^T."""
    left, _, right = np.linalg.svd(m)
    return left @ right


def metric_preserving_transport_step(provider: CoefficientProvider, x, tau, x_next, tau_next,
                                     e) -> np.ndarray:
    """
    Heun step with the spatial block carried in g-orthonormal coordinates.

    The one-step Heun propagator of the spatial block is written in the
    orthonormal frames of g at both end points and replaced by its polar
    factor. e^T g e is then kept to rounding, and so is det(e) sqrt(det g).
    The connection must not move the tau row (Gamma^0 = 0) and the frame's
    tau row must vanish off the diagonal, as for parabolic transport.
    """
    d = e.shape[-1]
    propagator = heun_transport_step(provider, x, tau, x_next, tau_next,
                                     np.broadcast_to(np.eye(d), e.shape))
    e_next = propagator @ e
    background = provider.background
    frame = orthonormal_frame(background.metric(x, tau))
    frame_next = orthonormal_frame(background.metric(x_next, tau_next))
    local = np.linalg.solve(frame_next, propagator[..., 1:, 1:] @ frame)
    e_next[..., 1:, 1:] = frame_next @ _polar_factor(local) @ np.linalg.solve(frame, e[..., 1:, 1:])
    return e_next


TRANSPORT_STEPS = {"heun": heun_transport_step, "metric_preserving": metric_preserving_transport_step}


def _change_frame_chart(background: Background, x_old_chart, switched, e) -> np.ndarray:
    if not np.any(switched):
        return e
    e = e.copy()
    jac = background.transition_jacobian(x_old_chart[switched])
    e[switched, 1:, :] = np.einsum('...ij,...jb->...ib', jac, e[switched, 1:, :])
    return e


def _saved_steps(K: int, save_every: int) -> np.ndarray:
    if save_every < 1:
        raise ConfigurationError("save_every must be at least 1")
    steps = list(range(0, K + 1, save_every))
    if steps[-1] != K:
        steps.append(K)
    return np.asarray(steps)


def _step_count(S: float, h: float) -> int:
    if not h > 0:
        raise ConfigurationError(f"step must be positive, got {h}")
    if S < 0:
        raise ConfigurationError(f"horizon must be non-negative, got {S}")
    K = int(round(S / h))
    if abs(K * h - S) > 1e-9 * max(1.0, S):
        raise ConfigurationError(f"horizon {S} is not a multiple of the step {h}")
    return K


def _simulate_chunk(provider: CoefficientProvider, start: ChartPoint, e0: Optional[np.ndarray],
                    path_ids: np.ndarray, K: int, h: float, rng, saved: np.ndarray) -> PathEnsemble:
    background = provider.background
    config = background.config
    n = background.n
    P = path_ids.shape[0]
    lo, hi = config.delta, config.T

    x = np.broadcast_to(start.coords, (P, n)).astype(float)
    tau = np.full(P, float(start.tau))
    chart_id = CHART_IDS.get(start.chart_id, 0)
    chart = np.full(P, chart_id, dtype=np.int8)
    e = None if e0 is None else np.broadcast_to(e0, (P, n + 1, n + 1)).astype(float)
    noise = rng.chunk_noise(path_ids, K, n + 1)

    stopped_at = np.full(P, np.nan)
    overshoot = np.zeros(P, dtype=bool)
    singular = np.zeros(P, dtype=bool)
    active = np.ones(P, dtype=bool)

    S_saved = saved.shape[0]
    out_tau = np.empty((P, S_saved))
    out_x = np.empty((P, S_saved, n))
    out_chart = np.empty((P, S_saved), dtype=np.int8)
    out_e = None if e is None else np.empty((P, S_saved, n + 1, n + 1))
    slot = 0

    def record(k):
        nonlocal slot
        if slot < S_saved and saved[slot] == k:
            out_tau[:, slot] = tau
            out_x[:, slot] = x
            out_chart[:, slot] = chart
            if out_e is not None:
                out_e[:, slot] = e
            slot += 1

    record(0)
    for k in range(K):
        if not np.any(active):
            for kk in range(k + 1, K + 1):
                record(kk)
            break
        idx = np.flatnonzero(active)
        x_a, tau_a, chart_a = x[idx], tau[idx], chart[idx]
        x_new, tau_new, chart_new, x_old_chart = _base_step(
            background, provider, x_a, tau_a, chart_a, noise[idx, k], h)

        below, above = tau_new < lo - TAU_TOLERANCE, tau_new > hi + TAU_TOLERANCE
        exiting = below | above
        if np.any(exiting):
            beyond = np.where(below, lo - tau_new, tau_new - hi)
            overshoot[idx[exiting & (beyond > h)]] = True
            tau_new = np.clip(tau_new, lo, hi)
            stopped_at[idx[exiting]] = (k + 1) * h
            active[idx[exiting]] = False

        if e is not None:
            e_a = heun_transport_step(provider, x_a, tau_a, x_old_chart, tau_new, e[idx])
            if isinstance(background, ShrinkingSphereBackground):
                e_a = _change_frame_chart(background, x_old_chart, chart_new != chart_a, e_a)
            bad = np.abs(np.linalg.det(e_a)) < SINGULAR_FRAME_DET
            singular[idx[bad]] = True
            e[idx] = e_a

        x[idx], tau[idx], chart[idx] = x_new, tau_new, chart_new
        record(k + 1)

    return PathEnsemble(
        step=h, horizon=K * h, times=saved * h,
        tau=out_tau, coords=out_x, chart=out_chart,
        stopped_at=stopped_at, overshoot=overshoot,
        frames=out_e, singular=singular if e is not None else None,
        path_ids=path_ids.copy(),
    )


def _run_chunks(work: Callable[[np.ndarray], PathEnsemble], n_paths: int, options: EngineOptions,
                desc: str) -> PathEnsemble:
    if n_paths < 1:
        raise DomainError("an ensemble needs at least one path")
    ids = np.arange(n_paths)
    chunks = [ids[i:i + options.chunk_size] for i in range(0, n_paths, options.chunk_size)]
    with ThreadPoolExecutor(max_workers=max(1, options.workers)) as pool:
        futures = [pool.submit(work, chunk) for chunk in chunks]
        for _ in tqdm(as_completed(futures), total=len(futures), desc=desc,
                      disable=not options.progress, leave=False):
            pass
        parts = [f.result() for f in futures]
    return PathEnsemble.concat(parts)


def _check_start(background: Background, start: ChartPoint, boundary_start: bool = False) -> ChartPoint:
    tau0 = float(start.tau)
    cfg = background.config
    if boundary_start:
        if not cfg.delta - TAU_TOLERANCE <= tau0 < cfg.T:
            raise DomainError(f"start tau {tau0} must lie in [{cfg.delta}, {cfg.T})")
    elif not cfg.delta < tau0 < cfg.T:
        raise DomainError(f"start tau {tau0} must lie strictly inside ({cfg.delta}, {cfg.T})")
    return _chart_ids(background, start)


def simulate_base_paths(provider: CoefficientProvider, start: ChartPoint, S: float, h: float,
                        n_paths: int, rng, save_every: int = 1,
                        options: Optional[EngineOptions] = None,
                        boundary_start: bool = False) -> PathEnsemble:
    """
    Euler-Maruyama paths of the diffusion described by provider, absorbed at
    the tau-boundary. boundary_start admits tau0 = delta, for diffusions whose
    tau-drift is positive and deterministic.
    """
    options = options or EngineOptions()
    background = provider.background
    start = _check_start(background, start, boundary_start)
    K = _step_count(S, h)
    saved = _saved_steps(K, save_every)
    ensemble = _run_chunks(
        lambda ids: _simulate_chunk(provider, start, None, ids, K, h, rng, saved),
        n_paths, options, desc="base paths")
    ensemble.meta.update({"background": background.config.label, "kind": "base"})
    _log_ensemble(ensemble)
    return ensemble


def simulate_frame_paths(provider: CoefficientProvider, start: FrameState, S: float, h: float,
                         n_paths: int, rng, save_every: int = 1,
                         options: Optional[EngineOptions] = None) -> PathEnsemble:
    """Base paths with frames transported step by step; only saved states are kept."""
    options = options or EngineOptions()
    background = provider.background
    if start.e.shape != (background.n + 1, background.n + 1):
        raise ContractError(f"start frame must be {(background.n + 1,) * 2}, got {start.e.shape}")
    base = _check_start(background, start.base)
    K = _step_count(S, h)
    saved = _saved_steps(K, save_every)
    ensemble = _run_chunks(
        lambda ids: _simulate_chunk(provider, base, start.e, ids, K, h, rng, saved),
        n_paths, options, desc="frame paths")
    ensemble.meta.update({"background": background.config.label, "kind": "frame"})
    _log_ensemble(ensemble)
    return ensemble


def transport_frame_along_path(ensemble: PathEnsemble, provider: CoefficientProvider,
                               e0: Union[FrameState, np.ndarray], scheme: str = "heun") -> PathEnsemble:
    """
    Transport of e0 along every path of a full-resolution base ensemble.
    scheme is a key of TRANSPORT_STEPS.
    """
    if not ensemble.full_resolution:
        raise ContractError("frame transport needs the base path at every step")
    if scheme not in TRANSPORT_STEPS:
        raise ContractError(f"unknown transport scheme {scheme!r}; expected one of {sorted(TRANSPORT_STEPS)}")
    step = TRANSPORT_STEPS[scheme]
    background = provider.background
    e_start = e0.e if isinstance(e0, FrameState) else np.asarray(e0, dtype=float)
    P, S_saved = ensemble.tau.shape
    frames = np.empty((P, S_saved) + e_start.shape[-2:])
    e = np.broadcast_to(e_start, (P,) + e_start.shape[-2:]).astype(float)
    frames[:, 0] = e
    singular = np.zeros(P, dtype=bool)
    sphere = isinstance(background, ShrinkingSphereBackground)
    for k in range(S_saved - 1):
        x, tau, chart = ensemble.coords[:, k], ensemble.tau[:, k], ensemble.chart[:, k]
        x_next, tau_next, chart_next = ensemble.coords[:, k + 1], ensemble.tau[:, k + 1], ensemble.chart[:, k + 1]
        moving = ~ensemble.stopped_by(k)
        if not np.any(moving):
            frames[:, k + 1:] = e[:, None]
            break
        if sphere:
            switched = chart_next != chart
            x_in_old = x_next.copy()
            if np.any(switched & moving):
                sel = switched & moving
                x_in_old[sel] = background.switch_chart(x_next[sel])
        else:
            switched = np.zeros(P, dtype=bool)
            x_in_old = x + background.periodic_difference(x_next, x)
        m = np.flatnonzero(moving)
        e_m = step(provider, x[m], tau[m], x_in_old[m], tau_next[m], e[m])
        if sphere:
            e_m = _change_frame_chart(background, x_in_old[m], switched[m], e_m)
        singular[m[np.abs(np.linalg.det(e_m)) < SINGULAR_FRAME_DET]] = True
        e = e.copy()
        e[m] = e_m
        frames[:, k + 1] = e
    result = PathEnsemble(
        step=ensemble.step, horizon=ensemble.horizon, times=ensemble.times,
        tau=ensemble.tau, coords=ensemble.coords, chart=ensemble.chart,
        stopped_at=ensemble.stopped_at, overshoot=ensemble.overshoot,
        frames=frames, singular=singular, path_ids=ensemble.path_ids,
        meta=dict(ensemble.meta, kind="frame"),
    )
    if np.any(singular):
        logger.warning("Singular frames during transport", extra={"singular_paths": int(np.sum(singular))})
    return result


def _log_ensemble(ensemble: PathEnsemble) -> None:
    extra = {
        "background": ensemble.meta.get("background"),
        "paths": ensemble.n_paths,
        "step": ensemble.step,
        "horizon": ensemble.horizon,
        "stopped": ensemble.n_stopped,
        "overshoot": int(np.sum(ensemble.overshoot)),
    }
    if ensemble.singular is not None:
        extra["singular"] = int(np.sum(ensemble.singular))
    logger.info("Ensemble simulated", extra=extra)
    if extra["overshoot"]:
        logger.warning("Paths overshot the tau boundary by more than one step", extra=extra)


# ============================================================================
# Statistics
# ============================================================================

@dataclass
class MCEstimate:
    mean: float
    stderr: float
    n_effective: int


@dataclass
class VarianceEstimate:
    variance: float
    stderr: float
    n_effective: int


def _finite_values(values) -> np.ndarray:
    values = np.asarray(values, dtype=float).ravel()
    finite = np.isfinite(values)
    if not np.all(finite):
        logger.warning("Dropping non-finite path values from the estimate",
                       extra={"dropped": int(np.sum(~finite)), "paths": int(values.size)})
    values = values[finite]
    if values.size == 0:
        raise DomainError("empty ensemble: no finite values to average")
    return values


def mc_estimate(ensemble: Union[PathEnsemble, np.ndarray],
                functional: Optional[Callable[[PathEnsemble], np.ndarray]] = None) -> MCEstimate:
    """
    Sample mean and standard error of a per-path functional. Sums are
    compensated and taken in path order, so the result is bit-reproducible.
    """
    values = functional(ensemble) if functional is not None else ensemble
    v = _finite_values(values)
    n = v.size
    mean = math.fsum(v) / n
    if n == 1:
        return MCEstimate(mean, float("nan"), 1)
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return MCEstimate(mean, math.sqrt(var / n), n)


def variance_estimate(values) -> VarianceEstimate:
    """Unbiased sample variance and the standard error of that estimator (from the fourth moment)."""
    v = _finite_values(values)
    n = v.size
    if n < 4:
        raise DomainError("variance estimate needs at least four values")
    mean = math.fsum(v) / n
    centred = v - mean
    m2 = math.fsum(centred ** 2) / n
    m4 = math.fsum(centred ** 4) / n
    variance = m2 * n / (n - 1)
    spread = max(m4 - m2 * m2 * (n - 3) / (n - 1), 0.0)
    return VarianceEstimate(variance, math.sqrt(spread / n), n)


def mc_difference(ensemble_a: PathEnsemble, ensemble_b: PathEnsemble,
                  functional: Callable[[PathEnsemble], np.ndarray],
                  functional_b: Optional[Callable[[PathEnsemble], np.ndarray]] = None) -> MCEstimate:
    """Paired (common random numbers) estimate of E[F_a] - E[F_b]."""
    if ensemble_a.n_paths != ensemble_b.n_paths:
        raise ContractError("paired estimate needs ensembles of equal size")
    fa = np.asarray(functional(ensemble_a), dtype=float)
    fb = np.asarray((functional_b or functional)(ensemble_b), dtype=float)
    return mc_estimate(fa - fb)


def dump_ensemble_csv(ensemble: PathEnsemble, path: str) -> None:
    """One row per (path, saved time): path_id, s, coords, chart, tau, frame entries, stopped."""
    n = ensemble.coords.shape[-1]
    header = ["path_id", "s"] + [f"x{i}" for i in range(1, n + 1)] + ["chart", "tau"]
    if ensemble.frames is not None:
        d = n + 1
        header += [f"e_{k}{b}" for k in range(d) for b in range(d)]
    header.append("stopped")
    ids = ensemble.path_ids if ensemble.path_ids is not None else np.arange(ensemble.n_paths)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for j in range(ensemble.n_saved):
            stopped = ensemble.stopped_by(j)
            for p in range(ensemble.n_paths):
                row = [int(ids[p]), repr(float(ensemble.times[j]))]
                row += [repr(float(c)) for c in ensemble.coords[p, j]]
                row += [int(ensemble.chart[p, j]), repr(float(ensemble.tau[p, j]))]
                if ensemble.frames is not None:
                    row += [repr(float(c)) for c in ensemble.frames[p, j].ravel()]
                row.append(int(stopped[p]))
                writer.writerow(row)


# src/core/sde_engine.py
