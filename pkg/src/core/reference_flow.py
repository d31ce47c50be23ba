# src/core/reference_flow.py
"""
src/core/reference_flow.py

Limit objects the N-indexed simulations are compared with: Brownian motion
of g along the backward clock t_s = t0 - s, stochastic parallel transport
by the space-time connection, and heat-flow expectations.

The backward clock is reverse time tau_s = calT - t_s = tau0 + s.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from src.core.backgrounds import (
    CHART_IDS,
    Background,
    ChartPoint,
    FlatTorusBackground,
    ShrinkingSphereBackground,
    build_background,
)
from src.core.errors import ContractError, DomainError
from src.core.generators import embed_orthonormal
from src.core.rng import RngSpec
from src.core.sde_engine import (
    EngineOptions,
    MCEstimate,
    ParabolicCoefficientProvider,
    PathEnsemble,
    mc_difference,
    mc_estimate,
    simulate_base_paths,
    transport_frame_along_path,
)
from src.schemas.flow_models import FlowConfig

logger = logging.getLogger("ricci_lab")

GRADIENT_DISPLACEMENT = 1e-3
FOURIER_TERMS = 200


# ============================================================================
# Observables on M
# ============================================================================

class Observable(ABC):
    """A function on M with an exact chart gradient."""

    @abstractmethod
    def value(self, background: Background, coords: np.ndarray, chart: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def gradient(self, background: Background, coords: np.ndarray, chart: np.ndarray) -> np.ndarray:
        """Chart partial derivatives d_i f, shape (..., n)."""

    def closed_form(self, background: Background, s: float, t_to: float,
                    coords: np.ndarray, chart: np.ndarray) -> np.ndarray:
        raise DomainError(f"{type(self).__name__} has no closed-form heat flow on this background")

    def __call__(self, background: Background, coords, chart) -> np.ndarray:
        return self.value(background, np.asarray(coords, dtype=float), np.asarray(chart))


class ConstantObservable(Observable):

    def __init__(self, c: float = 1.0):
        self.c = float(c)

    def value(self, background, coords, chart):
        return np.full(np.shape(coords)[:-1], self.c)

    def gradient(self, background, coords, chart):
        return np.zeros(np.shape(coords))

    def closed_form(self, background, s, t_to, coords, chart):
        return self.value(background, coords, chart)


class FourierMode(Observable):
    """A cos(kappa . x + phase) on the torus with kappa = 2 pi k / L, k integer."""

    def __init__(self, wave_numbers: Sequence[int], amplitude: float = 1.0, phase: float = 0.0):
        self.k = np.asarray(wave_numbers, dtype=float)
        self.amplitude = float(amplitude)
        self.phase = float(phase)

    def _kappa(self, background: Background) -> np.ndarray:
        if not isinstance(background, FlatTorusBackground):
            raise DomainError("Fourier modes live on the torus")
        if self.k.shape[0] != background.n:
            raise ContractError(f"wave vector has {self.k.shape[0]} entries, torus has dimension {background.n}")
        return 2.0 * math.pi * self.k / background.L

    def argument(self, background, coords):
        return np.asarray(coords) @ self._kappa(background) + self.phase

    def value(self, background, coords, chart):
        return self.amplitude * np.cos(self.argument(background, coords))

    def gradient(self, background, coords, chart):
        return (-self.amplitude * np.sin(self.argument(background, coords)))[..., None] * self._kappa(background)

    def closed_form(self, background, s, t_to, coords, chart):
        kappa = self._kappa(background)
        return math.exp(-float(kappa @ kappa) * (t_to - s)) * self.value(background, coords, chart)


class AmbientHarmonic(Observable):
    """Y(p) = v . p for p on the unit sphere (a degree-1 harmonic)."""

    def __init__(self, direction: Sequence[float]):
        self.v = np.asarray(direction, dtype=float)

    def _check(self, background):
        if not isinstance(background, ShrinkingSphereBackground):
            raise DomainError("ambient harmonics live on the sphere")
        if self.v.shape[0] != background.n + 1:
            raise ContractError(f"direction needs {background.n + 1} entries")

    def value(self, background, coords, chart):
        self._check(background)
        return background.to_ambient(coords, chart) @ self.v

    def gradient(self, background, coords, chart):
        self._check(background)
        return np.einsum('a,...aj->...j', self.v, background.ambient_jacobian(coords, chart))

    def closed_form(self, background, s, t_to, coords, chart):
        """(c(t_to)/c(s))^{n/(2(n-1))} Y: degree-1 eigenvalue -n/c(t) integrated over [s, t_to]."""
        self._check(background)
        n = background.n
        ratio = background.scale_at_time(t_to) / background.scale_at_time(s)
        return ratio ** (n / (2.0 * (n - 1))) * self.value(background, coords, chart)


def gradient_norm(background: Background, observable: Observable, coords, chart, tau) -> np.ndarray:
    """|grad f|_{g_tau}."""
    grad = observable.gradient(background, np.asarray(coords, dtype=float), np.asarray(chart))
    g_inv = np.linalg.inv(background.metric(coords, tau))
    return np.sqrt(np.einsum('...i,...ij,...j->...', grad, g_inv, grad))


def torus_abs_sine_expectation(y, duration: float, kappa: float = 1.0, terms: int = FOURIER_TERMS) -> np.ndarray:
    """
    E|sin(y + kappa * sqrt(2 d) Z)| for standard normal Z, from the cosine
    series of |sin|: 2/pi - 4/pi sum_m exp(-4 m^2 kappa^2 d) cos(2 m y)/(4 m^2 - 1).
    """
    y = np.asarray(y, dtype=float)
    m = np.arange(1, terms + 1)
    weights = np.exp(-4.0 * m ** 2 * kappa ** 2 * duration) / (4.0 * m ** 2 - 1.0)
    series = np.cos(2.0 * np.multiply.outer(y, m)) @ weights
    return 2.0 / math.pi - 4.0 / math.pi * series


# ============================================================================
# Parabolic paths
# ============================================================================

@dataclass
class ReferencePath:
    """Parabolic paths with their frames; clock[p, k] = calT - tau[p, k]."""
    ensemble: PathEnsemble
    frames: np.ndarray              # (P, S, n, n)
    clock: np.ndarray               # (P, S)
    defect: np.ndarray              # (P, S) orthogonality defect
    singular: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.ensemble.times


def parabolic_start(config: FlowConfig, x, chart: str = None, t_start: Optional[float] = None) -> ChartPoint:
    """Start point at forward time t_start (default T), i.e. tau0 = calT - t_start."""
    t_start = config.T if t_start is None else float(t_start)
    chart = chart or ("north" if config.is_sphere else "torus")
    return ChartPoint(np.asarray(x, dtype=float), config.calT - t_start, chart)


def parabolic_base_paths(config: FlowConfig, start: ChartPoint, S: float, h: float, n_paths: int,
                         rng: RngSpec, save_every: int = 1,
                         options: Optional[EngineOptions] = None) -> PathEnsemble:
    """
    x moves by the Laplacian of g_{t_s}, t_s = t0 - s deterministic. The
    clock is written back as tau0 + s so it is exact on the saved grid.
    """
    tau0 = float(start.tau)
    if tau0 + S > config.T + 1e-12:
        raise DomainError(f"horizon {S} runs past the end of the window (tau0 = {tau0}, T = {config.T})")
    provider = ParabolicCoefficientProvider(build_background(config))
    ensemble = simulate_base_paths(provider, start, S, h, n_paths, rng, save_every=save_every,
                                   options=options, boundary_start=True)
    ensemble.tau = np.broadcast_to(tau0 + ensemble.times, ensemble.tau.shape).copy()
    ensemble.meta["kind"] = "parabolic"
    return ensemble


def orthogonality_defect(u: np.ndarray, g: np.ndarray) -> np.ndarray:
    """||u^T g u - I||_F."""
    gram = np.einsum('...ia,...ij,...jb->...ab', u, g, u)
    return np.linalg.norm(gram - np.eye(u.shape[-1]), axis=(-2, -1))


def polar_reorthonormalize(u: np.ndarray, g: np.ndarray) -> np.ndarray:
    """u (u^T g u)^{-1/2}: the g-orthonormal frame nearest to u."""
    gram = np.einsum('...ia,...ij,...jb->...ab', u, g, u)
    w, V = np.linalg.eigh(gram)
    inv_sqrt = np.einsum('...ab,...b,...cb->...ac', V, 1.0 / np.sqrt(w), V)
    return np.einsum('...ia,...ab->...ib', u, inv_sqrt)


def parabolic_transport(config: FlowConfig, ensemble: PathEnsemble, u0: np.ndarray,
                        reorthonormalize: bool = False,
                        scheme: str = "metric_preserving") -> ReferencePath:
    """
    Heun transport du = -Gamma(g)[dx] u - Ric u ds along full-resolution
    parabolic paths. The default scheme carries u^T g u exactly from step to
    step; scheme="heun" is the plain Heun rule, whose orthogonality defect
    grows with h. reorthonormalize applies the polar projection to the saved
    frames afterwards; the dynamics are unchanged.
    """
    background = build_background(config)
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (config.n, config.n):
        raise ContractError(f"u0 must be {config.n}x{config.n}")
    provider = ParabolicCoefficientProvider(background)
    framed = transport_frame_along_path(ensemble, provider, embed_orthonormal(u0), scheme=scheme)
    frames = framed.frames[..., 1:, 1:]
    g = background.metric(ensemble.coords, ensemble.tau)
    if reorthonormalize:
        frames = polar_reorthonormalize(frames, g)
    defect = orthogonality_defect(frames, g)
    logger.info("Parabolic transport finished",
                extra={"paths": ensemble.n_paths, "max_defect": float(np.max(defect)),
                       "reorthonormalized": reorthonormalize, "scheme": scheme})
    return ReferencePath(
        ensemble=ensemble,
        frames=frames,
        clock=config.calT - ensemble.tau,
        defect=defect,
        singular=framed.singular,
    )


def volume_invariant(config: FlowConfig, path: ReferencePath) -> np.ndarray:
    """
    det(u) sqrt(det g_t) in a fixed orientation: constant along orthonormal
    transport, across chart changes included.
    """
    background = build_background(config)
    g = background.metric(path.ensemble.coords, path.ensemble.tau)
    orientation = background.chart_orientation(path.ensemble.chart)
    return orientation * np.linalg.det(path.frames) * np.sqrt(np.linalg.det(g))


# ============================================================================
# Heat flow
# ============================================================================

def heat_expectation(config: FlowConfig, observable: Observable, s: float, t_to: float, x,
                     chart: str = None, method: str = "closed_form", h: float = 1e-3,
                     n_paths: int = 2000, rng: Optional[RngSpec] = None,
                     options: Optional[EngineOptions] = None):
    """
    H_{s t_to} f (x): the heat flow of g from forward time s to t_to applied
    to f. closed_form returns a float; monte_carlo returns an MCEstimate of
    E f(X_{t_to - s}) over parabolic paths started at (x, t_to).
    """
    background = build_background(config)
    if not 0.0 <= s <= t_to <= config.calT:
        raise DomainError(f"need 0 <= s <= t_to <= calT, got s = {s}, t_to = {t_to}")
    chart = chart or ("north" if config.is_sphere else "torus")
    x = np.asarray(x, dtype=float)
    if method == "closed_form":
        return float(observable.closed_form(background, s, t_to, x, CHART_IDS.get(chart, 0)))
    if method != "monte_carlo":
        raise ContractError(f"unknown method {method!r}; expected closed_form or monte_carlo")
    ensemble = parabolic_base_paths(config, parabolic_start(config, x, chart, t_to), t_to - s, h,
                                    n_paths, rng or RngSpec(0), save_every=max(1, int(round((t_to - s) / h))),
                                    options=options)
    return mc_estimate(ensemble, lambda ens: observable(background, ens.coords[:, -1], ens.chart[:, -1]))


@dataclass
class GradientBoundRow:
    point: int
    lhs: float
    rhs: float
    lhs_stderr: float
    rhs_stderr: float
    holds: bool


def _crn_gradient(config, background, observable, x, chart, s, t_to, h, n_paths, rng, options):
    """Central differences of the MC heat flow with common random numbers; returns (grad, stderr)."""
    n = config.n
    grad, err = np.zeros(n), np.zeros(n)
    S = t_to - s
    every = max(1, int(round(S / h)))
    final = lambda ens: observable(background, ens.coords[:, -1], ens.chart[:, -1])
    for i in range(n):
        shift = np.zeros(n)
        shift[i] = GRADIENT_DISPLACEMENT
        plus = parabolic_base_paths(config, parabolic_start(config, x + shift, chart, t_to), S, h, n_paths, rng,
                                    save_every=every, options=options)
        minus = parabolic_base_paths(config, parabolic_start(config, x - shift, chart, t_to), S, h, n_paths, rng,
                                     save_every=every, options=options)
        diff = mc_difference(plus, minus, final)
        grad[i] = diff.mean / (2.0 * GRADIENT_DISPLACEMENT)
        err[i] = diff.stderr / (2.0 * GRADIENT_DISPLACEMENT)
    return grad, err


def gradient_bound_check(config: FlowConfig, observable: Observable, points: Sequence[Sequence[float]],
                         s: float, t_to: float, chart: str = None, tolerance: float = 0.05,
                         h: float = 1e-3, n_paths: int = 2000, rng: Optional[RngSpec] = None,
                         options: Optional[EngineOptions] = None) -> List[GradientBoundRow]:
    """
    |grad H_{s t_to} f|_{g_{t_to}} <= H_{s t_to} |grad f|_{g_s} at each point.
    Closed forms on the torus for Fourier modes; CRN Monte Carlo otherwise.
    """
    background = build_background(config)
    chart = chart or ("north" if config.is_sphere else "torus")
    chart_id = CHART_IDS.get(chart, 0)
    rng = rng or RngSpec(0)
    tau_start = config.calT - t_to
    rows = []
    for idx, x in enumerate(points):
        x = np.asarray(x, dtype=float)
        g_inv = np.linalg.inv(background.metric(x, tau_start))
        if isinstance(background, FlatTorusBackground) and isinstance(observable, (FourierMode, ConstantObservable)):
            if isinstance(observable, ConstantObservable):
                lhs = rhs = 0.0
            else:
                kappa = observable._kappa(background)
                knorm = float(np.sqrt(kappa @ kappa))
                d = t_to - s
                lhs = abs(observable.amplitude) * knorm * math.exp(-knorm ** 2 * d) * abs(
                    math.sin(float(observable.argument(background, x))))
                rhs = abs(observable.amplitude) * knorm * float(
                    torus_abs_sine_expectation(observable.argument(background, x), d, knorm))
            lhs_err = rhs_err = 0.0
        else:
            grad, grad_err = _crn_gradient(config, background, observable, x, chart, s, t_to,
                                           h, n_paths, rng, options)
            lhs = float(np.sqrt(grad @ g_inv @ grad))
            lhs_err = float(np.sqrt(grad_err @ np.abs(g_inv) @ grad_err))
            S = t_to - s
            ensemble = parabolic_base_paths(config, parabolic_start(config, x, chart, t_to), S, h, n_paths, rng,
                                            save_every=max(1, int(round(S / h))), options=options)
            est = mc_estimate(ensemble, lambda ens: gradient_norm(
                background, observable, ens.coords[:, -1], ens.chart[:, -1], ens.tau[:, -1]))
            rhs, rhs_err = est.mean, est.stderr
        combined = math.sqrt(lhs_err ** 2 + rhs_err ** 2)
        rows.append(GradientBoundRow(idx, lhs, rhs, lhs_err, rhs_err,
                                     lhs <= rhs * (1.0 + tolerance) + 3.0 * combined + 1e-12))
    logger.info("Gradient bound check", extra={"points": len(rows), "violations": sum(not r.holds for r in rows)})
    return rows


# src/core/reference_flow.py
