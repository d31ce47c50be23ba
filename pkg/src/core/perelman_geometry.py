# src/core/perelman_geometry.py
"""
src/core/perelman_geometry.py

Data of the metric

    G = g_tau + tau * h + (N/(2 tau) + R) dtau^2

on M x S^N x [delta, T], where h is the round metric of sectional curvature
1/(2N) (radius sqrt(2N)).

Large N never materialises the sphere: it enters only through G^00 and the
traces over the sphere block. The (n+1)-block of Christoffel symbols uses
block index 0 for tau and 1..n for the spatial coordinates.

A small-N full-chart evaluator (x, y, tau) checks the table and the Ricci
bound by finite differences.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from src.core.backgrounds import Background, MetricJet, build_background
from src.core.errors import ChartError, ConfigurationError, DomainError
from src.core.finite_differences import (
    christoffel_symbols,
    orthonormal_frame,
    ricci_tensor,
)
from src.schemas.flow_models import FlowConfig

logger = logging.getLogger("ricci_lab")

MIN_VALIDATOR_N = 2
MAX_VALIDATOR_N = 8
# Outer step of the nested Ricci differences, in units of h_fd.
RICCI_OUTER_FACTOR = 10.0


@dataclass
class PerelmanCoefficients:
    """
    G^00, the block Christoffels and the sphere traces at a space-time point.
    Leading dimensions are batch dimensions.
    """
    N: int
    tau: np.ndarray                 # ()
    g00_inv: np.ndarray             # ()             G^00
    block_gamma: np.ndarray         # (d, d, d)      Gamma^k_ij, block indices
    dblock_gamma: np.ndarray        # (d, d, d, d)   d_l Gamma^k_ij, l = 0 is d/dtau
    ginv_block: np.ndarray          # (d, d)         diag(G^00, g^ij)
    sphere_trace_time: np.ndarray   # ()             G^ab Gamma^0_ab = -G^00 N/(2 tau)
    h_trace: np.ndarray             # ()             G^ab h_ab = N/tau

    @property
    def d(self) -> int:
        return self.block_gamma.shape[-1]

    @property
    def trace_vector(self) -> np.ndarray:
        """T^k = sum over all index pairs of G^JK Gamma^k_JK, sphere block included."""
        trace = np.einsum('...jk,...ijk->...i', self.ginv_block, self.block_gamma)
        trace[..., 0] += self.sphere_trace_time
        return trace


def perelman_coefficients(jet: MetricJet, tau, N: int, derivatives: bool = True) -> PerelmanCoefficients:
    """
    Block Christoffel symbols of G:

        Gamma^k_ij = Christoffels of g_tau     Gamma^k_i0 = R^k_i
        Gamma^k_00 = -1/2 nabla^k R            Gamma^0_ij = -G^00 R_ij
        Gamma^0_i0 = G^00/2 d_i R
        Gamma^0_00 = G^00/2 (dR/dtau + R/tau) - 1/(2 tau)

    With derivatives=True the exact first derivatives in (tau, x) are filled in too.
    """
    tau = np.asarray(tau, dtype=float)
    R = jet.scal
    denom = N / (2.0 * tau) + R
    if np.any(denom <= 0.0):
        raise ConfigurationError(
            f"N = {N} too small: N/(2 tau) + R must be positive (min {np.min(denom):.4g})")
    g00 = 1.0 / denom
    n = jet.n
    d = n + 1
    batch = np.broadcast_shapes(np.shape(g00), jet.g.shape[:-2])
    g00 = np.broadcast_to(g00, batch)
    tau_b = np.broadcast_to(tau, batch)

    bg = np.zeros(batch + (d, d, d))
    bg[..., 1:, 1:, 1:] = jet.gamma
    bg[..., 1:, 1:, 0] = jet.ric_mixed
    bg[..., 1:, 0, 1:] = jet.ric_mixed
    bg[..., 1:, 0, 0] = -0.5 * jet.grad_scal
    bg[..., 0, 1:, 1:] = -g00[..., None, None] * jet.ric
    bg[..., 0, 1:, 0] = 0.5 * g00[..., None] * jet.dscal_dx
    bg[..., 0, 0, 1:] = bg[..., 0, 1:, 0]
    time_rate = jet.dscal_dtau + R / tau_b
    bg[..., 0, 0, 0] = 0.5 * g00 * time_rate - 0.5 / tau_b

    ginv = np.zeros(batch + (d, d))
    ginv[..., 0, 0] = g00
    ginv[..., 1:, 1:] = jet.g_inv

    dbg = np.zeros(batch + (d, d, d, d))
    if derivatives:
        g00_sq = g00 * g00
        dg00_dtau = -g00_sq * (-N / (2.0 * tau_b ** 2) + jet.dscal_dtau)
        dg00_dx = -g00_sq[..., None] * jet.dscal_dx

        # l = 0: d/dtau
        dbg[..., 0, 1:, 1:, 1:] = jet.dgamma_dtau
        dbg[..., 0, 1:, 1:, 0] = jet.dric_mixed_dtau
        dbg[..., 0, 1:, 0, 1:] = jet.dric_mixed_dtau
        dbg[..., 0, 1:, 0, 0] = -0.5 * jet.dgrad_scal_dtau
        dbg[..., 0, 0, 1:, 1:] = -(dg00_dtau[..., None, None] * jet.ric + g00[..., None, None] * jet.dric_dtau)
        dbg[..., 0, 0, 1:, 0] = 0.5 * (dg00_dtau[..., None] * jet.dscal_dx + g00[..., None] * jet.d2scal_dx_dtau)
        dbg[..., 0, 0, 0, 1:] = dbg[..., 0, 0, 1:, 0]
        dbg[..., 0, 0, 0, 0] = (0.5 * dg00_dtau * time_rate
                                + 0.5 * g00 * (jet.d2scal_dtau2 + jet.dscal_dtau / tau_b - R / tau_b ** 2)
                                + 0.5 / tau_b ** 2)

        # l = 1..n: d/dx^l
        dbg[..., 1:, 1:, 1:, 1:] = jet.dgamma
        dbg[..., 1:, 1:, 1:, 0] = jet.dric_mixed
        dbg[..., 1:, 1:, 0, 1:] = jet.dric_mixed
        dbg[..., 1:, 1:, 0, 0] = -0.5 * jet.dgrad_scal
        dbg[..., 1:, 0, 1:, 1:] = -(np.einsum('...l,...ij->...lij', dg00_dx, jet.ric)
                                    + g00[..., None, None, None] * jet.dric)
        dbg[..., 1:, 0, 1:, 0] = 0.5 * (np.einsum('...l,...i->...li', dg00_dx, jet.dscal_dx)
                                       + g00[..., None, None] * jet.d2scal_dx2)
        dbg[..., 1:, 0, 0, 1:] = dbg[..., 1:, 0, 1:, 0]
        dbg[..., 1:, 0, 0, 0] = (0.5 * dg00_dx * time_rate[..., None]
                                 + 0.5 * g00[..., None] * (jet.d2scal_dx_dtau + jet.dscal_dx / tau_b[..., None]))

    return PerelmanCoefficients(
        N=N,
        tau=tau_b,
        g00_inv=g00,
        block_gamma=bg,
        dblock_gamma=dbg,
        ginv_block=ginv,
        sphere_trace_time=-g00 * N / (2.0 * tau_b),
        h_trace=N / tau_b,
    )


def block_christoffel_derivatives(jet: MetricJet, tau, N: int) -> np.ndarray:
    return perelman_coefficients(jet, tau, N, derivatives=True).dblock_gamma


# ============================================================================
# Small-N full chart
# ============================================================================

class FullChartMetric:
    """
    G on a single chart (x^1..x^n, y^1..y^N, tau). The sphere factor uses the
    stereographic chart of the radius-sqrt(2N) round sphere.
    """

    def __init__(self, config: FlowConfig, N_small: int, background: Background = None):
        self.config = config
        self.background = background or build_background(config)
        self.n = config.n
        self.N = N_small
        self.dims = (self.n, N_small)
        self.dimension = self.n + N_small + 1

    @property
    def tau_index(self) -> int:
        return self.n + self.N

    @property
    def block_indices(self) -> List[int]:
        """Full-chart indices in block order (tau first, then x)."""
        return [self.tau_index] + list(range(self.n))

    @property
    def sphere_indices(self) -> List[int]:
        return list(range(self.n, self.n + self.N))

    def sphere_metric(self, y: np.ndarray) -> np.ndarray:
        """h_ab = 2N * 4/(1+|y|^2)^2 delta_ab."""
        y = np.asarray(y, dtype=float)
        return 2.0 * self.N * 4.0 / (1.0 + np.dot(y, y)) ** 2 * np.eye(self.N)

    def metric_eval(self, point: np.ndarray) -> np.ndarray:
        point = np.asarray(point, dtype=float)
        n, N = self.n, self.N
        x, y, tau = point[:n], point[n:n + N], point[n + N]
        G = np.zeros((self.dimension, self.dimension))
        G[:n, :n] = self.background.metric(x, tau)
        G[n:n + N, n:n + N] = tau * self.sphere_metric(y)
        G[n + N, n + N] = N / (2.0 * tau) + float(self.background.scalar(x, tau))
        return G

    def __call__(self, point: np.ndarray) -> np.ndarray:
        return self.metric_eval(point)

    def point(self, x: Sequence[float], y: Sequence[float], tau: float) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if np.dot(y, y) > 1e8:
            raise ChartError("sphere coordinate too close to the stereographic pole")
        return np.concatenate([np.asarray(x, dtype=float), y, [float(tau)]])


def full_chart_metric(config: FlowConfig, N_small: int) -> FullChartMetric:
    if not MIN_VALIDATOR_N <= N_small <= MAX_VALIDATOR_N:
        raise DomainError(f"N_small must lie in [{MIN_VALIDATOR_N}, {MAX_VALIDATOR_N}], got {N_small}")
    return FullChartMetric(config, N_small)


@dataclass
class CurvatureSample:
    """Finite-difference curvature of G at one chart point."""
    christoffels_fd: np.ndarray
    ricci_fd: np.ndarray
    sup_ric_frame: float


def curvature_fd(fcm: FullChartMetric, point: np.ndarray, h_fd: float = 1e-4) -> CurvatureSample:
    """
    Christoffels and Ricci of G by central differences; sup_ric_frame is the
    largest |Ric| entry in the Gram-Schmidt G-orthonormal frame.
    """
    point = np.asarray(point, dtype=float)
    gamma = christoffel_symbols(fcm.metric_eval, point, h_fd)
    ric = ricci_tensor(fcm.metric_eval, point, h_fd, RICCI_OUTER_FACTOR * h_fd)
    frame = orthonormal_frame(fcm.metric_eval(point))
    ric_frame = frame.T @ ric @ frame
    return CurvatureSample(gamma, ric, float(np.max(np.abs(ric_frame))))


def table_gamma_full(fcm: FullChartMetric, point: np.ndarray) -> np.ndarray:
    """
    Closed-form Christoffels of G on the full chart: the block table, the
    sphere-time entries, and zeros for every mixed space-sphere entry. The
    pure sphere entries are those of tau * h (tau-independent).
    """
    point = np.asarray(point, dtype=float)
    n, N = fcm.n, fcm.N
    x, y, tau = point[:n], point[n:n + N], point[n + N]
    jet = fcm.background.jet(x, tau)
    coeffs = perelman_coefficients(jet, tau, N, derivatives=False)
    D = fcm.dimension
    full = np.zeros((D, D, D))
    block = fcm.block_indices
    bg = coeffs.block_gamma
    for a, k in enumerate(block):
        for b, i in enumerate(block):
            for c, j in enumerate(block):
                full[k, i, j] = bg[a, b, c]

    sph = fcm.sphere_indices
    t = fcm.tau_index
    h = fcm.sphere_metric(y)
    # round metric in stereographic coordinates: conformal with phi_a = -2 y_a/(1+|y|^2)
    phi = -2.0 * y / (1.0 + np.dot(y, y))
    for ga, gidx in enumerate(sph):
        full[gidx, gidx, t] = full[gidx, t, gidx] = 0.5 / tau
        for aa, aidx in enumerate(sph):
            full[t, aidx, sph[ga]] = -0.5 * coeffs.g00_inv * h[aa, ga]
            for bb, bidx in enumerate(sph):
                full[gidx, aidx, bidx] = ((ga == aa) * phi[bb] + (ga == bb) * phi[aa]
                                          - (aa == bb) * phi[ga])
    return full


def christoffel_table_check(config: FlowConfig, N_small: int, point: np.ndarray, h_fd: float = 1e-4) -> Dict[str, float]:
    """
    Compare finite-difference Christoffels of the full chart with the closed
    table. Errors are relative to max(1, |table entry|).
    """
    fcm = full_chart_metric(config, N_small)
    gamma_fd = christoffel_symbols(fcm.metric_eval, point, h_fd)
    table = table_gamma_full(fcm, point)
    rel = np.abs(gamma_fd - table) / np.maximum(1.0, np.abs(table))

    block = fcm.block_indices
    sph = fcm.sphere_indices
    spatial = list(range(fcm.n))
    t = fcm.tau_index
    block_err = float(np.max(rel[np.ix_(block, block, block)]))
    mixed = [gamma_fd[np.ix_(spatial, spatial, sph)], gamma_fd[np.ix_([t], spatial, sph)],
             gamma_fd[np.ix_(spatial, [t], sph)], gamma_fd[np.ix_(sph, spatial, sph)]]
    mixed_abs = float(max(np.max(np.abs(m)) for m in mixed))
    sphere_time = float(max(np.max(rel[np.ix_(sph, sph, [t])]), np.max(rel[np.ix_([t], sph, sph)])))
    return {
        "block_max_rel_err": block_err,
        "mixed_max_abs": mixed_abs,
        "sphere_time_max_rel_err": sphere_time,
        "all_max_rel_err": float(np.max(rel)),
    }


def ricci_scaling_table(
    config: FlowConfig,
    N_small_list: Sequence[int],
    points: Sequence[Dict[str, np.ndarray]],
    h_fd: float = 1e-4,
) -> List[Dict[str, float]]:
    """
    N_small * sup_ric_frame for every (point, N_small). Points are given as
    {'x': ..., 'y': ..., 'tau': ...}; the y entries are truncated or padded
    with zeros to the sphere dimension.
    """
    rows = []
    for idx, p in enumerate(points):
        for N_small in N_small_list:
            fcm = full_chart_metric(config, N_small)
            y = np.zeros(N_small)
            y_given = np.asarray(p.get("y", []), dtype=float)[:N_small]
            y[:y_given.shape[0]] = y_given
            sample = curvature_fd(fcm, fcm.point(p["x"], y, p["tau"]), h_fd)
            rows.append({
                "point": idx,
                "N_small": N_small,
                "sup_ric_frame": sample.sup_ric_frame,
                "scaled": N_small * sample.sup_ric_frame,
            })
    logger.debug("Ricci scaling table computed", extra={"rows": len(rows)})
    return rows


# src/core/perelman_geometry.py
