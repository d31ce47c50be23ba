# src/core/finite_differences.py
"""
src/core/finite_differences.py

Second-order central differences for metrics given as callables, used as
ground truth for the closed-form geometry: Christoffel symbols, their
derivatives and the Ricci tensor.

Index conventions match the rest of the core:
    dg[l, i, j]        = d_l g_ij
    gamma[k, i, j]     = Gamma^k_ij
    dgamma[l, k, i, j] = d_l Gamma^k_ij
"""

from typing import Callable

import numpy as np

from src.core.errors import ConditioningError

# Largest condition number for which differences of the metric are trusted.
MAX_CONDITION_NUMBER = 1e12

MetricFn = Callable[[np.ndarray], np.ndarray]


def central_gradient(fn: Callable[[np.ndarray], np.ndarray], point: np.ndarray, h: float) -> np.ndarray:
    """Derivatives of an array-valued function along every coordinate; leading axis is the direction."""
    point = np.asarray(point, dtype=float)
    slices = []
    for l in range(point.shape[0]):
        step = np.zeros_like(point)
        step[l] = h
        slices.append((np.asarray(fn(point + step)) - np.asarray(fn(point - step))) / (2.0 * h))
    return np.stack(slices, axis=0)


def checked_inverse(g: np.ndarray) -> np.ndarray:
    """Inverse of a metric matrix, refusing near-singular input."""
    cond = np.linalg.cond(g)
    if not np.isfinite(cond) or cond > MAX_CONDITION_NUMBER:
        raise ConditioningError(f"metric condition number {cond:.3e} exceeds {MAX_CONDITION_NUMBER:.0e}")
    return np.linalg.inv(g)


def christoffel_from_derivatives(g_inv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Gamma^k_ij = 1/2 g^kl (d_i g_lj + d_j g_li - d_l g_ij)."""
    lowered = (np.einsum('ilj->lij', dg) + np.einsum('jli->lij', dg) - dg)
    return 0.5 * np.einsum('kl,lij->kij', g_inv, lowered)


def christoffel_symbols(metric_fn: MetricFn, point: np.ndarray, h: float) -> np.ndarray:
    g = metric_fn(np.asarray(point, dtype=float))
    dg = central_gradient(metric_fn, point, h)
    return christoffel_from_derivatives(checked_inverse(g), dg)


def ricci_from_christoffel(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """R_ij = d_k G^k_ij - d_j G^k_ik + G^k_kl G^l_ij - G^k_jl G^l_ik."""
    return (np.einsum('kkij->ij', dgamma)
            - np.einsum('jkik->ij', dgamma)
            + np.einsum('kkl,lij->ij', gamma, gamma)
            - np.einsum('kjl,lik->ij', gamma, gamma))


def ricci_tensor(metric_fn: MetricFn, point: np.ndarray, h_inner: float, h_outer: float) -> np.ndarray:
    """Ricci tensor by nested central differences; h_outer differentiates the Christoffels."""
    gamma = christoffel_symbols(metric_fn, point, h_inner)
    dgamma = central_gradient(lambda q: christoffel_symbols(metric_fn, q, h_inner), point, h_outer)
    return ricci_from_christoffel(gamma, dgamma)


def orthonormal_frame(g: np.ndarray) -> np.ndarray:
    """
    Gram-Schmidt orthonormalisation of the coordinate basis with respect to g.

    Columns are the frame vectors. With g = L L^T (Cholesky) the frame is
    L^{-T}, which is upper triangular with positive diagonal, i.e. exactly
    what Gram-Schmidt on e_1, e_2, ... produces.
    """
    try:
        lower = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as e:
        raise ConditioningError("metric is not positive definite") from e
    return np.linalg.inv(lower).T


# src/core/finite_differences.py
