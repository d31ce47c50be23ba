# src/core/generators.py
"""
src/core/generators.py

Projected generators of the Laplacian of G and their large-N limits.

Scalar level: the generator on functions of (tau, x) and its defect against
the heat operator d/dtau + Laplacian of g_tau.

Frame level: the exact generator L^N on functions of (tau, x, e) where e is
the (n+1)x(n+1) block frame, the limit operators (curly D and curly N), and
two oracles: the frame-sum form of D_tau + Delta_H on orthonormal frames and
a finite-difference horizontal Laplacian on the small-N full chart.

All operators use the convention a^ij d_i d_j + b^i d_i (no factor 1/2).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from src.core.backgrounds import ChartPoint, MetricJet
from src.core.errors import ContractError, DomainError
from src.core.finite_differences import christoffel_symbols, orthonormal_frame
from src.core.perelman_geometry import (
    PerelmanCoefficients,
    full_chart_metric,
    perelman_coefficients,
)
from src.core.test_functions import Arity, TestFunction
from src.schemas.flow_models import FlowConfig

logger = logging.getLogger("ricci_lab")


class IndexConvention(str, Enum):
    """Range of the frame column index in the first term of curly N."""
    FULL_BLOCK = "full_block"
    SPATIAL_ONLY = "spatial_only"


@dataclass
class GeneratorCoeffs:
    """a^ij d_i d_j + b^i d_i over the named coordinates; leading dims are batch."""
    coord_names: List[str]
    a: np.ndarray
    b: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.coord_names)


@dataclass
class FrameState:
    """A base point together with the block frame e^k_b (row 0 is the tau direction)."""
    base: ChartPoint
    e: np.ndarray

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=float)
        self.det0 = np.linalg.det(self.e)
        if np.any(np.abs(self.det0) == 0.0):
            raise DomainError("block frame is singular")

    @property
    def z(self) -> np.ndarray:
        return base_vector(self.base)

    @property
    def n(self) -> int:
        return self.e.shape[-1] - 1


def base_vector(point: ChartPoint) -> np.ndarray:
    """(tau, x^1..x^n) with batch dims broadcast."""
    coords = np.asarray(point.coords, dtype=float)
    tau = np.broadcast_to(np.asarray(point.tau, dtype=float), coords.shape[:-1])
    return np.concatenate([tau[..., None], coords], axis=-1)


def coordinate_names(n: int) -> List[str]:
    return ["tau"] + [f"x{i}" for i in range(1, n + 1)]


def _check_size(psi: TestFunction, n: int) -> None:
    if psi.d != n + 1:
        raise ContractError(f"{psi.name} is defined for block size {psi.d}, state has {n + 1}")


# ============================================================================
# Scalar generator
# ============================================================================

def scalar_generator(jet: MetricJet, tau, N: int) -> GeneratorCoeffs:
    """
    a = diag(G^00, g^ij) over (tau, x),
    b^tau = 1 + G^00/(2 tau) - (G^00)^2/2 (dR/dtau + R/tau),
    b^i   = -g^jk Gamma^i_jk + G^00/2 nabla^i R.
    """
    coeffs = perelman_coefficients(jet, tau, N, derivatives=False)
    g00 = coeffs.g00_inv
    tau_b = coeffs.tau
    b = np.zeros(g00.shape + (jet.n + 1,))
    b[..., 0] = (1.0 + g00 / (2.0 * tau_b)
                 - 0.5 * g00 ** 2 * (jet.dscal_dtau + jet.scal / tau_b))
    b[..., 1:] = (-np.einsum('...jk,...ijk->...i', jet.g_inv, jet.gamma)
                  + 0.5 * g00[..., None] * jet.grad_scal)
    return GeneratorCoeffs(coordinate_names(jet.n), coeffs.ginv_block, b)


def apply_generator(coeffs: GeneratorCoeffs, f: TestFunction, point: ChartPoint) -> np.ndarray:
    derivs = f.derivatives(base_vector(point))
    return (np.einsum('...ij,...ij->...', coeffs.a, derivs.hzz)
            + np.einsum('...i,...i->...', coeffs.b, derivs.gz))


def apply_scalar_generator(f: TestFunction, point: ChartPoint, jet: MetricJet, N: int) -> np.ndarray:
    f.require(Arity.BASE)
    _check_size(f, jet.n)
    return apply_generator(scalar_generator(jet, point.tau, N), f, point)


def heat_operator_apply(f: TestFunction, point: ChartPoint, jet: MetricJet) -> np.ndarray:
    """(d/dtau + Delta_{g_tau}) f."""
    f.require(Arity.BASE)
    _check_size(f, jet.n)
    derivs = f.derivatives(base_vector(point))
    grad_x = derivs.gz[..., 1:]
    hess_x = derivs.hzz[..., 1:, 1:]
    laplacian = (np.einsum('...ij,...ij->...', jet.g_inv, hess_x)
                 - np.einsum('...ij,...kij,...k->...', jet.g_inv, jet.gamma, grad_x))
    return derivs.gz[..., 0] + laplacian


def scalar_defect(f: TestFunction, point: ChartPoint, jet: MetricJet, N: int) -> np.ndarray:
    """Scalar generator minus heat operator."""
    return apply_scalar_generator(f, point, jet, N) - heat_operator_apply(f, point, jet)


def epsilon_display(f: TestFunction, point: ChartPoint, jet: MetricJet, N: int) -> np.ndarray:
    """
    Closed form of the scalar defect:
    (1/(N + 2 tau R) - (G^00)^2/2 (dR/dtau + R/tau)) df/dtau
        + G^00 (d^2f/dtau^2 + 1/2 nabla^i R df/dx^i)
    """
    f.require(Arity.BASE)
    tau = np.asarray(point.tau, dtype=float)
    R = jet.scal
    g00 = perelman_coefficients(jet, tau, N, derivatives=False).g00_inv
    derivs = f.derivatives(base_vector(point))
    f_tau = derivs.gz[..., 0]
    f_tautau = derivs.hzz[..., 0, 0]
    drift = np.einsum('...i,...i->...', jet.grad_scal, derivs.gz[..., 1:])
    return ((1.0 / (N + 2.0 * tau * R) - 0.5 * g00 ** 2 * (jet.dscal_dtau + R / tau)) * f_tau
            + g00 * (f_tautau + 0.5 * drift))


# ============================================================================
# Frame generator
# ============================================================================

def _connection_terms(gamma: np.ndarray, e: np.ndarray) -> np.ndarray:
    """A[i, k, b] = Gamma^k_ij e^j_b."""
    return np.einsum('...kij,...jb->...ikb', gamma, e)


def covariant_second_derivatives(psi: TestFunction, state: FrameState, gamma: np.ndarray,
                                 dgamma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    First and second horizontal derivatives of psi over the block:
        D_i psi      = d_i psi - Gamma^k_ij e^j_b dpsi/de^k_b
        D_l D_i psi  with D_l acting on every e-dependence of D_i psi.
    """
    e = state.e
    derivs = psi.derivatives(state.z, e)
    A = _connection_terms(gamma, e)
    d1 = derivs.gz - np.einsum('...ikb,...kb->...i', A, derivs.ge)
    dz_d1 = (derivs.hzz
             - np.einsum('...lkij,...jb,...kb->...li', dgamma, e, derivs.ge)
             - np.einsum('...ikb,...lkb->...li', A, derivs.hze))
    de_d1 = (derivs.hze
             - np.einsum('...kim,...kc->...imc', gamma, derivs.ge)
             - np.einsum('...ikb,...kbmc->...imc', A, derivs.hee))
    d2 = dz_d1 - np.einsum('...lmc,...imc->...li', A, de_d1)
    return d1, d2


def fibre_correction(psi: TestFunction, state: FrameState, coeffs: PerelmanCoefficients) -> np.ndarray:
    """
    Contribution of the S^N columns of an orthonormal full frame:
    (G^ab Gamma^0_ab / (2 tau)) e^0_b dpsi/de^0_b.
    """
    derivs = psi.derivatives(state.z, state.e)
    row0 = np.einsum('...b,...b->...', state.e[..., 0, :], derivs.ge[..., 0, :])
    return coeffs.sphere_trace_time / (2.0 * coeffs.tau) * row0


def frame_generator_apply(psi: TestFunction, state: FrameState, jet: MetricJet, N: int,
                          fibre_term: bool = False) -> np.ndarray:
    """
    L^N psi = G^il D_l D_i psi - (sum_JK G^JK Gamma^i_JK) D_i psi over the block,
    the trace including the sphere block.
    """
    _check_size(psi, state.n)
    coeffs = perelman_coefficients(jet, state.base.tau, N, derivatives=True)
    d1, d2 = covariant_second_derivatives(psi, state, coeffs.block_gamma, coeffs.dblock_gamma)
    value = (np.einsum('...il,...li->...', coeffs.ginv_block, d2)
             - np.einsum('...i,...i->...', coeffs.trace_vector, d1))
    if fibre_term:
        value = value + fibre_correction(psi, state, coeffs)
    return value


def diffusion_form(state: FrameState, jet: MetricJet, N: int) -> np.ndarray:
    """
    Coefficient matrix of the second derivatives of L^N over w = (z, vec e):
    V^T G^-1 V with V_i = d/dz^i - A[i, k, b] d/de^k_b.
    """
    coeffs = perelman_coefficients(jet, state.base.tau, N, derivatives=False)
    d = state.n + 1
    A = _connection_terms(coeffs.block_gamma, state.e)
    batch = A.shape[:-3]
    V = np.zeros(batch + (d, d + d * d))
    V[..., :, :d] = np.eye(d)
    V[..., :, d:] = -A.reshape(batch + (d, d * d))
    return np.einsum('...li,...lp,...iq->...pq', coeffs.ginv_block, V, V)


# ============================================================================
# Limit operators
# ============================================================================

@dataclass
class LimitSplit:
    """Values of the limit operators at a state."""
    D: np.ndarray
    N: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.D + self.N


def asymptotic_operators_apply(psi: TestFunction, state: FrameState, jet: MetricJet,
                               index_convention: IndexConvention = IndexConvention.FULL_BLOCK,
                               restore_cross_terms: bool = True) -> LimitSplit:
    """
    curly D and curly N on functions of (tau, x, e).

    curly D only sees spatial frame indices; curly N gathers every term that
    carries e^0_b, e^j_0 or a derivative along row 0 / column 0. With
    restore_cross_terms the second mixed term x-e of D_l D_i is included
    (in D for the spatial part, in N for the rest) together with the
    second-order term it induces through the row-0 part of the connection.
    """
    _check_size(psi, state.n)
    convention = IndexConvention(index_convention)
    tau = np.asarray(state.base.tau, dtype=float)
    e = state.e
    es = e[..., 1:, 1:]
    d = psi.derivatives(state.z, e)
    gi = jet.g_inv
    gam = jet.gamma
    dgam = jet.dgamma
    rm = jet.ric_mixed

    psi_tau = d.gz[..., 0]
    gx = d.gz[..., 1:]
    hxx = d.hzz[..., 1:, 1:]
    ge_s = d.ge[..., 1:, 1:]
    hxe = d.hze[..., 1:, :, :]            # [l, k, b] with l spatial, k and b block
    hxe_s = hxe[..., 1:, 1:]
    hee_s = d.hee[..., 1:, 1:, 1:, 1:]

    As = _connection_terms(gam, es)        # [i, k, b] spatial
    trace = np.einsum('...lr,...ilr->...i', gi, gam)
    S = gx - np.einsum('...ikb,...kb->...i', As, ge_s)

    D = (np.einsum('...il,...li->...', gi, hxx)
         - np.einsum('...il,...lkij,...jb,...kb->...', gi, dgam, es, ge_s)
         - np.einsum('...il,...ikb,...lkb->...', gi, As, hxe_s)
         + np.einsum('...il,...lrc,...ikb,...rckb->...', gi, As, As, hee_s)
         + np.einsum('...il,...lrc,...kir,...kc->...', gi, As, gam, ge_s)
         - np.einsum('...i,...i->...', trace, S)
         + psi_tau
         - np.einsum('...jb,...kj,...kb->...', es, rm, ge_s))

    # Connection with the time column: Gamma^r_{l0} = R^r_l
    gext = np.concatenate([rm[..., None], gam], axis=-1)   # [r, l, m], m over block
    Vc = np.einsum('...rlm,...mc->...lrc', gext, e)       # [l, r, c], c over block
    W = hxe[..., 1:, :] - np.einsum('...lrc,...rckb->...lkb', Vc, d.hee[..., 1:, :, 1:, :])

    bound = slice(0, None) if convention is IndexConvention.FULL_BLOCK else slice(1, None)
    N1 = np.einsum('...b,...b->...', e[..., 0, bound], d.ge[..., 0, bound]) / (2.0 * tau)

    Bkj = (np.einsum('...il,...ril,...krj->...kj', gi, gam, gam)
           + np.einsum('...il,...rlj,...kir->...kj', gi, gam, gam)
           - np.einsum('...il,...lkij->...kj', gi, dgam)
           - rm)
    N2 = np.einsum('...j,...kj,...k->...', e[..., 1:, 0], Bkj, d.ge[..., 1:, 0])

    Bk = (np.einsum('...il,...ril,...kr->...k', gi, gam, rm)
          + np.einsum('...il,...rl,...kir->...k', gi, rm, gam)
          - np.einsum('...il,...lki->...k', gi, jet.dric_mixed)
          + 0.5 * jet.grad_scal)
    N3 = np.einsum('...b,...k,...kb->...', e[..., 0, :], Bk, d.ge[..., 1:, :])

    N4 = -np.einsum('...j,...il,...kij,...lk->...', e[..., 1:, 0], gi, gam, W[..., 0])
    N5 = -np.einsum('...il,...ki,...b,...lkb->...', gi, rm, e[..., 0, :], W)

    Nval = N1 + N2 + N3 + N4 + N5

    if restore_cross_terms:
        D = D - np.einsum('...il,...lrc,...irc->...', gi, As, hxe_s)
        Zc = Vc.copy()
        Zc[..., 1:] = Zc[..., 1:] - As
        Nval = (Nval
                - np.einsum('...il,...lrc,...irc->...', gi, Zc, hxe[..., 1:, :])
                + np.einsum('...il,...ikb,...lrc,...rckb->...', gi, As, Zc, d.hee[..., 1:, :, 1:, 1:]))
    return LimitSplit(D=D, N=Nval)


def embed_orthonormal(u: np.ndarray) -> np.ndarray:
    """Block frame diag(1, u) of a spatial frame u."""
    u = np.asarray(u, dtype=float)
    n = u.shape[-1]
    e = np.zeros(u.shape[:-2] + (n + 1, n + 1))
    e[..., 0, 0] = 1.0
    e[..., 1:, 1:] = u
    return e


def orthonormal_block_frame(jet: MetricJet, tau: float, N: int,
                            rotation: Optional[np.ndarray] = None) -> np.ndarray:
    """
    A frame orthonormal for diag(N/(2 tau) + R, g_tau): diag(sqrt(G^00), u) Q
    with u the Gram-Schmidt frame of g and Q orthogonal (identity by default).
    """
    coeffs = perelman_coefficients(jet, tau, N, derivatives=False)
    g = np.asarray(jet.g)
    if g.ndim != 2:
        raise ContractError("orthonormal_block_frame takes a single point")
    n = g.shape[0]
    e = np.zeros((n + 1, n + 1))
    e[0, 0] = np.sqrt(float(coeffs.g00_inv))
    e[1:, 1:] = orthonormal_frame(g)
    if rotation is not None:
        e = e @ np.asarray(rotation, dtype=float)
    return e


def horizontal_laplacian_on_orthonormal(psi: TestFunction, state: FrameState, jet: MetricJet) -> np.ndarray:
    """
    (D_tau + Delta_H) psi at an embedded orthonormal frame, with
    Delta_H = sum_a H_a H_a summed explicitly over the columns u_a and
    H_a = u^l_a (d_l - Gamma^r_lm u^m_c d/du^r_c).
    """
    psi.require(Arity.BASE, Arity.SPATIAL_BLOCK)
    _check_size(psi, state.n)
    e = state.e
    u = e[..., 1:, 1:]
    d = psi.derivatives(state.z, e)
    gam, dgam = jet.gamma, jet.dgamma
    gx = d.gz[..., 1:]
    hxx = d.hzz[..., 1:, 1:]
    ge = d.ge[..., 1:, 1:]
    hxe = d.hze[..., 1:, 1:, 1:]
    hee = d.hee[..., 1:, 1:, 1:, 1:]
    A = _connection_terms(gam, u)
    S = gx - np.einsum('...ikb,...kb->...i', A, ge)

    n = u.shape[-1]
    total = np.zeros(np.shape(d.value))
    for a in range(n):
        ua = u[..., :, a]
        dF_x = (np.einsum('...i,...li->...l', ua, hxx)
                - np.einsum('...i,...lkij,...jb,...kb->...l', ua, dgam, u, ge)
                - np.einsum('...i,...ikb,...lkb->...l', ua, A, hxe))
        dF_e = (np.einsum('...i,...irc->...rc', ua, hxe)
                - np.einsum('...i,...kir,...kc->...rc', ua, gam, ge)
                - np.einsum('...i,...ikb,...kbrc->...rc', ua, A, hee))
        dF_e[..., :, a] += S
        total = total + np.einsum('...l,...l->...', ua,
                                  dF_x - np.einsum('...lrc,...rc->...l', A, dF_e))
    d_tau = d.gz[..., 0] - np.einsum('...ka,...ik,...ia->...', u, jet.ric_mixed, ge)
    return d_tau + total


# ============================================================================
# Small-N ground truth
# ============================================================================

@dataclass
class FullChartLaplacian:
    value: float
    frame_identity_defect: float


def horizontal_laplacian_fd(config: FlowConfig, N_small: int, psi: TestFunction, state: FrameState,
                            step: float = 1e-3, h_fd: float = 1e-5) -> FullChartLaplacian:
    """
    sum_A H_A H_A Psi on the full chart (x, y = 0, tau) for the pullback
    Psi(p, E) = psi(tau, x, E restricted to the block).

    E is block diagonal: the given block frame, and the sphere columns
    orthonormal for tau * h. H_A moves p along E_A and E along
    -Gamma^K_IJ E^J_B E^I_A with Christoffels by central differences; H_A H_A
    is a nested central difference along the flow. sum_A E E^T = G^-1 is
    reported as frame_identity_defect, not assumed.
    """
    _check_size(psi, state.n)
    fcm = full_chart_metric(config, N_small)
    x = np.asarray(state.base.coords, dtype=float)
    tau = float(state.base.tau)
    if x.ndim != 1:
        raise ContractError("horizontal_laplacian_fd takes a single state")
    p0 = fcm.point(x, np.zeros(N_small), tau)
    block = fcm.block_indices
    sph = fcm.sphere_indices
    D = fcm.dimension

    E0 = np.zeros((D, D))
    E0[np.ix_(block, block)] = state.e
    h_diag = np.diag(fcm.sphere_metric(np.zeros(N_small)))
    for a, idx in enumerate(sph):
        E0[idx, idx] = 1.0 / np.sqrt(tau * h_diag[a])

    G = fcm.metric_eval(p0)
    defect = float(np.max(np.abs(E0 @ E0.T - np.linalg.inv(G))))

    def psi_full(p: np.ndarray, E: np.ndarray) -> float:
        z = np.concatenate([[p[fcm.tau_index]], p[:fcm.n]])
        return float(psi.value(np.concatenate([z, E[np.ix_(block, block)].ravel()])))

    def field(p: np.ndarray, E: np.ndarray, A: int) -> Tuple[np.ndarray, np.ndarray]:
        gamma = christoffel_symbols(fcm.metric_eval, p, h_fd)
        dE = -np.einsum('kij,jb,i->kb', gamma, E, E[:, A])
        return E[:, A].copy(), dE

    def first(p: np.ndarray, E: np.ndarray, A: int) -> float:
        dp, dE = field(p, E, A)
        return (psi_full(p + step * dp, E + step * dE)
                - psi_full(p - step * dp, E - step * dE)) / (2.0 * step)

    total = 0.0
    for A in range(D):
        dp, dE = field(p0, E0, A)
        total += (first(p0 + step * dp, E0 + step * dE, A)
                  - first(p0 - step * dp, E0 - step * dE, A)) / (2.0 * step)
    logger.debug("Full-chart horizontal Laplacian",
                 extra={"N_small": N_small, "value": total, "frame_identity_defect": defect})
    return FullChartLaplacian(value=total, frame_identity_defect=defect)


# src/core/generators.py
