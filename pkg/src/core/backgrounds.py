# src/core/backgrounds.py
"""
src/core/backgrounds.py

Closed-form Ricci-flow backgrounds (shrinking round sphere, flat torus) and
the pointwise geometric data the rest of the lab consumes.

All evaluators accept leading batch dimensions: chart coordinates of shape
(..., n) and reverse times of shape (...). Reverse time tau = calT - t, so
the flow equation reads dg/dtau = +2 Ric.

Sphere charts are the two stereographic projections of the unit sphere,
'north' (centred at the north pole, projecting from the south pole) and
'south'. Both give the metric 4/(1+|x|^2)^2 times the identity, so the jet
formulas do not depend on the chart. The ambient unit-vector form is used
for stepping and is converted explicitly through chart_map.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, fields
from typing import List, Sequence, Union

import numpy as np

from src.core.errors import ChartError, ConfigurationError, DomainError
from src.core.finite_differences import christoffel_symbols
from src.schemas.flow_models import FlatTorus, FlowConfig, ShrinkingSphere

logger = logging.getLogger("ricci_lab")

NORTH = 0
SOUTH = 1
CHART_IDS = {"north": NORTH, "south": SOUTH}
CHART_NAMES = {NORTH: "north", SOUTH: "south"}

# Slack on the tau window, and distance to a projection pole that is refused.
TAU_TOLERANCE = 1e-12
POLE_TOLERANCE = 1e-10
# Ambient norms below this are not points of the sphere.
MIN_AMBIENT_NORM = 1e-12

ArrayLike = Union[float, np.ndarray]


@dataclass
class ChartPoint:
    """A point of M (possibly a batch) together with reverse time and chart."""
    coords: np.ndarray
    tau: ArrayLike
    chart_id: str = "torus"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)


@dataclass
class MetricJet:
    """
    Pointwise background data at (x, tau). Leading dimensions are batch
    dimensions; the trailing ones are listed per field.
    """
    g: np.ndarray                  # (n, n)            g_ij
    g_inv: np.ndarray              # (n, n)            g^ij
    gamma: np.ndarray              # (n, n, n)         Gamma^k_ij  [k, i, j]
    dgamma: np.ndarray             # (n, n, n, n)      d_l Gamma^k_ij  [l, k, i, j]
    ric: np.ndarray                # (n, n)            R_ij
    ric_mixed: np.ndarray          # (n, n)            R^k_i  [k, i]
    scal: np.ndarray               # ()                R
    dscal_dtau: np.ndarray         # ()                dR/dtau
    grad_scal: np.ndarray          # (n,)              nabla^i R
    dg_dtau: np.ndarray            # (n, n)            dg_ij/dtau
    dscal_dx: np.ndarray           # (n,)              d_i R
    d2scal_dx2: np.ndarray         # (n, n)            d_l d_i R
    d2scal_dx_dtau: np.ndarray     # (n,)              d_tau d_i R
    d2scal_dtau2: np.ndarray       # ()                d^2R/dtau^2
    dric: np.ndarray               # (n, n, n)         d_l R_ij  [l, i, j]
    dric_dtau: np.ndarray          # (n, n)            d_tau R_ij
    dric_mixed: np.ndarray         # (n, n, n)         d_l R^k_i  [l, k, i]
    dric_mixed_dtau: np.ndarray    # (n, n)            d_tau R^k_i
    dgamma_dtau: np.ndarray        # (n, n, n)         d_tau Gamma^k_ij
    dgrad_scal: np.ndarray         # (n, n)            d_l nabla^k R  [l, k]
    dgrad_scal_dtau: np.ndarray    # (n,)              d_tau nabla^k R

    @property
    def n(self) -> int:
        return self.g.shape[-1]

    def take(self, index) -> "MetricJet":
        """Select batch entries (same index applied to every field)."""
        return MetricJet(**{f.name: getattr(self, f.name)[index] for f in fields(self)})


def _zeros(batch, *trailing) -> np.ndarray:
    return np.zeros(tuple(batch) + tuple(trailing))


class Background(ABC):
    """
    Contract for a closed-form Ricci-flow background.

    A new family only has to implement these methods; perelman_geometry,
    generators and the integrators use nothing else.
    """

    def __init__(self, config: FlowConfig):
        self.config = config
        self.n = config.n

    # -- time window -------------------------------------------------------

    def check_tau(self, tau: ArrayLike) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        lo, hi = self.config.delta - TAU_TOLERANCE, self.config.T + TAU_TOLERANCE
        if np.any(~np.isfinite(tau)) or np.any(tau < lo) or np.any(tau > hi):
            raise DomainError(
                f"tau outside [{self.config.delta}, {self.config.T}]: "
                f"range [{np.min(tau):.6g}, {np.max(tau):.6g}]")
        return tau

    # -- geometry ----------------------------------------------------------

    @abstractmethod
    def metric(self, x: np.ndarray, tau: ArrayLike) -> np.ndarray:
        """g_ij at chart coordinates x and reverse time tau (no domain check)."""

    @abstractmethod
    def jet(self, x: np.ndarray, tau: ArrayLike) -> MetricJet:
        """Full closed-form jet; tau must lie in [delta, T]."""

    @abstractmethod
    def scalar(self, x: np.ndarray, tau: ArrayLike) -> np.ndarray:
        """Scalar curvature R at (x, tau) (no domain check)."""

    # -- charts ------------------------------------------------------------

    @property
    @abstractmethod
    def chart_names(self) -> Sequence[str]:
        """Chart ids accepted by chart_map, ambient representation included."""

    @abstractmethod
    def chart_map(self, p: ChartPoint, target: str) -> ChartPoint:
        """Same manifold point in the target chart."""

    @abstractmethod
    def canonical(self, p: ChartPoint) -> ChartPoint:
        """Chart representation used for derivative evaluation."""

    def chart_orientation(self, chart: ArrayLike) -> np.ndarray:
        """+1 or -1 per chart id: orientation of the chart relative to a fixed one."""
        return np.ones(np.shape(chart))


class FlatTorusBackground(Background):
    """Static flat torus [0, L)^n; every curvature field vanishes."""

    def __init__(self, config: FlowConfig):
        super().__init__(config)
        assert isinstance(config.background, FlatTorus)
        self.L = config.background.L

    @property
    def chart_names(self) -> Sequence[str]:
        return ("torus",)

    def wrap(self, x: np.ndarray) -> np.ndarray:
        return np.mod(x, self.L)

    def periodic_difference(self, x_new: np.ndarray, x_old: np.ndarray) -> np.ndarray:
        """Shortest representative of x_new - x_old modulo L."""
        d = np.asarray(x_new) - np.asarray(x_old)
        return d - self.L * np.round(d / self.L)

    def metric(self, x: np.ndarray, tau: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], np.shape(tau))
        return np.broadcast_to(np.eye(self.n), batch + (self.n, self.n)).copy()

    def scalar(self, x: np.ndarray, tau: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.zeros(np.broadcast_shapes(x.shape[:-1], np.shape(tau)))

    def jet(self, x: np.ndarray, tau: ArrayLike) -> MetricJet:
        x = np.asarray(x, dtype=float)
        tau = self.check_tau(tau)
        n = self.n
        batch = np.broadcast_shapes(x.shape[:-1], tau.shape)
        eye = np.broadcast_to(np.eye(n), batch + (n, n)).copy()
        return MetricJet(
            g=eye, g_inv=eye.copy(),
            gamma=_zeros(batch, n, n, n), dgamma=_zeros(batch, n, n, n, n),
            ric=_zeros(batch, n, n), ric_mixed=_zeros(batch, n, n),
            scal=_zeros(batch), dscal_dtau=_zeros(batch), grad_scal=_zeros(batch, n),
            dg_dtau=_zeros(batch, n, n), dscal_dx=_zeros(batch, n),
            d2scal_dx2=_zeros(batch, n, n), d2scal_dx_dtau=_zeros(batch, n),
            d2scal_dtau2=_zeros(batch), dric=_zeros(batch, n, n, n), dric_dtau=_zeros(batch, n, n),
            dric_mixed=_zeros(batch, n, n, n), dric_mixed_dtau=_zeros(batch, n, n),
            dgamma_dtau=_zeros(batch, n, n, n), dgrad_scal=_zeros(batch, n, n),
            dgrad_scal_dtau=_zeros(batch, n),
        )

    def chart_map(self, p: ChartPoint, target: str) -> ChartPoint:
        if p.chart_id != "torus" or target != "torus":
            raise ChartError(f"torus has the single chart 'torus', got {p.chart_id!r} -> {target!r}")
        return ChartPoint(self.wrap(p.coords), p.tau, "torus")

    def canonical(self, p: ChartPoint) -> ChartPoint:
        return self.chart_map(p, "torus")


class ShrinkingSphereBackground(Background):
    """
    Round sphere shrinking under the flow: g_t = c(t) * (unit round metric)
    with c(t) = c0 - 2(n-1)t, i.e. c(tau) = c0 - 2(n-1)(calT - tau).
    """

    def __init__(self, config: FlowConfig):
        super().__init__(config)
        assert isinstance(config.background, ShrinkingSphere)
        self.c0 = config.background.c0
        self.c_rate = 2.0 * (self.n - 1)

    @property
    def chart_names(self) -> Sequence[str]:
        return ("north", "south", "ambient")

    def scale(self, tau: ArrayLike) -> np.ndarray:
        """Conformal factor c at reverse time tau."""
        return self.c0 - self.c_rate * (self.config.calT - np.asarray(tau, dtype=float))

    def scale_at_time(self, t: ArrayLike) -> np.ndarray:
        """Conformal factor c at forward time t."""
        return self.c0 - self.c_rate * np.asarray(t, dtype=float)

    @staticmethod
    def _lambda(x: np.ndarray) -> np.ndarray:
        r2 = np.sum(x * x, axis=-1)
        return 4.0 / (1.0 + r2) ** 2

    def metric(self, x: np.ndarray, tau: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        factor = self.scale(tau) * self._lambda(x)
        return factor[..., None, None] * np.eye(self.n)

    def scalar(self, x: np.ndarray, tau: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        value = self.n * (self.n - 1) / self.scale(tau)
        return np.broadcast_to(value, np.broadcast_shapes(x.shape[:-1], np.shape(tau))).copy()

    def jet(self, x: np.ndarray, tau: ArrayLike) -> MetricJet:
        x = np.asarray(x, dtype=float)
        tau = self.check_tau(tau)
        n = self.n
        batch = np.broadcast_shapes(x.shape[:-1], tau.shape)
        x = np.broadcast_to(x, batch + (n,))
        eye = np.eye(n)

        c = np.broadcast_to(self.scale(tau), batch)
        c_tau = self.c_rate
        s = 1.0 + np.sum(x * x, axis=-1)
        lam = 4.0 / s ** 2

        # g = exp(2 phi) * identity with phi = 1/2 log(c lam)
        phi_d = -2.0 * x / s[..., None]
        phi_dd = -2.0 * eye / s[..., None, None] + 4.0 * np.einsum('...i,...l->...il', x, x) / (s ** 2)[..., None, None]

        gamma = (np.einsum('ki,...j->...kij', eye, phi_d)
                 + np.einsum('kj,...i->...kij', eye, phi_d)
                 - np.einsum('ij,...k->...kij', eye, phi_d))
        dgamma = (np.einsum('ki,...jl->...lkij', eye, phi_dd)
                  + np.einsum('kj,...il->...lkij', eye, phi_dd)
                  - np.einsum('ij,...kl->...lkij', eye, phi_dd))

        g = (c * lam)[..., None, None] * eye
        g_inv = (1.0 / (c * lam))[..., None, None] * eye
        ric = ((n - 1) * lam)[..., None, None] * eye
        ric_mixed = ((n - 1) / c)[..., None, None] * eye
        scal = n * (n - 1) / c
        dscal_dtau = -n * (n - 1) * c_tau / c ** 2
        d2scal_dtau2 = 2.0 * n * (n - 1) * c_tau ** 2 / c ** 3
        dlam = 2.0 * lam[..., None] * phi_d
        dric = (n - 1) * np.einsum('...l,ij->...lij', dlam, eye)
        dric_mixed_dtau = (-(n - 1) * c_tau / c ** 2)[..., None, None] * eye

        return MetricJet(
            g=g, g_inv=g_inv, gamma=gamma, dgamma=dgamma,
            ric=ric, ric_mixed=ric_mixed, scal=scal, dscal_dtau=dscal_dtau,
            grad_scal=_zeros(batch, n), dg_dtau=2.0 * ric,
            dscal_dx=_zeros(batch, n), d2scal_dx2=_zeros(batch, n, n),
            d2scal_dx_dtau=_zeros(batch, n), d2scal_dtau2=d2scal_dtau2,
            dric=dric, dric_dtau=_zeros(batch, n, n),
            dric_mixed=_zeros(batch, n, n, n), dric_mixed_dtau=dric_mixed_dtau,
            dgamma_dtau=_zeros(batch, n, n, n), dgrad_scal=_zeros(batch, n, n),
            dgrad_scal_dtau=_zeros(batch, n),
        )

    # -- charts ------------------------------------------------------------

    def to_ambient(self, x: np.ndarray, chart: Union[int, np.ndarray]) -> np.ndarray:
        """Inverse stereographic projection; chart is NORTH/SOUTH (scalar or per point)."""
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        sign = np.where(np.asarray(chart) == NORTH, 1.0, -1.0)
        last = sign * (1.0 - r2) / (1.0 + r2)
        return np.concatenate([2.0 * x / (1.0 + r2)[..., None], last[..., None]], axis=-1)

    def from_ambient(self, p: np.ndarray, chart: Union[int, np.ndarray]) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        sign = np.where(np.asarray(chart) == NORTH, 1.0, -1.0)
        denom = 1.0 + sign * p[..., -1]
        if np.any(denom < POLE_TOLERANCE):
            raise ChartError("point at the projection pole of the requested stereographic chart")
        return p[..., :-1] / denom[..., None]

    @staticmethod
    def preferred_chart(p: np.ndarray) -> np.ndarray:
        """NORTH on the closed upper hemisphere, SOUTH below."""
        return np.where(np.asarray(p)[..., -1] >= 0.0, NORTH, SOUTH).astype(np.int8)

    @staticmethod
    def normalize(p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        norm = np.linalg.norm(p, axis=-1)
        if np.any(norm < MIN_AMBIENT_NORM):
            raise ChartError("ambient point with near-zero norm is not on the sphere")
        return p / norm[..., None]

    @staticmethod
    def ambient_jacobian(x: np.ndarray, chart: Union[int, np.ndarray]) -> np.ndarray:
        """d(ambient)/d(chart) of the inverse projection, shape (..., n+1, n)."""
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        s = 1.0 + np.sum(x * x, axis=-1)
        top = (2.0 * np.eye(n) / s[..., None, None]
               - 4.0 * np.einsum('...a,...j->...aj', x, x) / (s ** 2)[..., None, None])
        sign = np.where(np.asarray(chart) == NORTH, 1.0, -1.0)
        bottom = -sign[..., None] * 4.0 * x / (s ** 2)[..., None]
        return np.concatenate([top, bottom[..., None, :]], axis=-2)

    @staticmethod
    def transition_jacobian(x: np.ndarray) -> np.ndarray:
        """d x_other / d x for the inversion x -> x/|x|^2 between the two charts."""
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        r2 = np.sum(x * x, axis=-1)
        if np.any(r2 < POLE_TOLERANCE ** 2):
            raise ChartError("chart transition at the pole of the target chart")
        return (np.eye(n) * r2[..., None, None]
                - 2.0 * np.einsum('...i,...j->...ij', x, x)) / (r2 ** 2)[..., None, None]

    @staticmethod
    def switch_chart(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        if np.any(r2 < POLE_TOLERANCE ** 2):
            raise ChartError("chart transition at the pole of the target chart")
        return x / r2[..., None]

    def chart_orientation(self, chart: ArrayLike) -> np.ndarray:
        # the inversion between the two charts reverses orientation
        return np.where(np.asarray(chart) == NORTH, 1.0, -1.0)

    def chart_map(self, p: ChartPoint, target: str) -> ChartPoint:
        if p.chart_id not in self.chart_names or target not in self.chart_names:
            raise ChartError(f"unknown sphere chart {p.chart_id!r} -> {target!r}")
        if p.chart_id == target:
            coords = self.normalize(p.coords) if target == "ambient" else p.coords
            return ChartPoint(coords, p.tau, target)
        if p.chart_id == "ambient":
            return ChartPoint(self.from_ambient(self.normalize(p.coords), CHART_IDS[target]), p.tau, target)
        if target == "ambient":
            return ChartPoint(self.to_ambient(p.coords, CHART_IDS[p.chart_id]), p.tau, "ambient")
        return ChartPoint(self.switch_chart(p.coords), p.tau, target)

    def canonical(self, p: ChartPoint) -> ChartPoint:
        if p.chart_id != "ambient":
            return p
        amb = self.normalize(p.coords)
        chart = self.preferred_chart(amb)
        if chart.ndim == 0:
            return ChartPoint(self.from_ambient(amb, int(chart)), p.tau, CHART_NAMES[int(chart)])
        if np.all(chart == chart.flat[0]):
            return ChartPoint(self.from_ambient(amb, chart), p.tau, CHART_NAMES[int(chart.flat[0])])
        # mixed hemispheres: the jet is chart independent, coordinates still valid per point
        return ChartPoint(self.from_ambient(amb, chart), p.tau, "mixed")


def build_background(config: FlowConfig) -> Background:
    """Factory mapping a FlowConfig to its background implementation."""
    if isinstance(config.background, ShrinkingSphere):
        return ShrinkingSphereBackground(config)
    if isinstance(config.background, FlatTorus):
        return FlatTorusBackground(config)
    raise ConfigurationError(f"unsupported background: {config.background!r}")


# ============================================================================
# Operations
# ============================================================================

def metric_jet(config: FlowConfig, p: ChartPoint) -> MetricJet:
    background = build_background(config)
    q = background.canonical(p)
    return background.jet(q.coords, q.tau)


def chart_map(config: FlowConfig, p: ChartPoint, target_chart: str) -> ChartPoint:
    return build_background(config).chart_map(p, target_chart)


def ricci_flow_residual(
    config: FlowConfig,
    samples: List[ChartPoint],
    h_fd: float = 1e-4,
    ricci_sign: float = 1.0,
) -> float:
    """
    max over samples of |(g(tau+h) - g(tau-h))/2h - 2 * ricci_sign * Ric(tau)|_F.

    ricci_sign = -1 is the negative control; there the residual is 4|Ric|.
    """
    background = build_background(config)
    worst = 0.0
    for p in samples:
        q = background.canonical(p)
        tau = np.asarray(q.tau, dtype=float)
        background.check_tau(tau - h_fd)
        background.check_tau(tau + h_fd)
        dg = (background.metric(q.coords, tau + h_fd) - background.metric(q.coords, tau - h_fd)) / (2.0 * h_fd)
        ric = background.jet(q.coords, tau).ric
        residual = np.linalg.norm(dg - 2.0 * ricci_sign * ric, axis=(-2, -1))
        worst = max(worst, float(np.max(residual)))
    return worst


def christoffel_fd(config: FlowConfig, p: ChartPoint, h: float = 1e-4) -> np.ndarray:
    """Christoffels of g_tau from central differences of the metric at a single point."""
    background = build_background(config)
    q = background.canonical(p)
    tau = float(q.tau)
    return christoffel_symbols(lambda x: background.metric(x, tau), q.coords, h)


def sample_chart_points(config: FlowConfig, count: int, seed: int = 0, margin: float = 1e-3) -> List[ChartPoint]:
    """
    Validation points: tau uniform in [delta + margin, T - margin]; sphere
    points are uniform on the sphere, expressed in their preferred chart.
    """
    background = build_background(config)
    rng = np.random.default_rng(seed)
    taus = rng.uniform(config.delta + margin, config.T - margin, size=count)
    points = []
    if isinstance(background, ShrinkingSphereBackground):
        amb = background.normalize(rng.standard_normal((count, config.n + 1)))
        for p, tau in zip(amb, taus):
            points.append(background.canonical(ChartPoint(p, tau, "ambient")))
    else:
        coords = rng.uniform(0.0, background.L, size=(count, config.n))
        points.extend(ChartPoint(x, tau, "torus") for x, tau in zip(coords, taus))
    return points


# src/core/backgrounds.py
