"""Single-smoother transductive fixed point: closed form, self-training, Newton.

For a smoother S partitioned by (L, U) the unlabeled fixed point solves
``(I - S_UU) y_U = S_UL y_L``; every fit here is linear in ``y_L``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import MvgamError
from .smoother import TransductiveSmoother
from .views import FeatureView

DEFAULT_DELTA = 1e-8
DEFAULT_MAX_ITER = 10_000


@dataclass
class FixedPointFit:
    yhat_L: np.ndarray
    yhat_U: np.ndarray
    M_LL: np.ndarray | None
    M_UL: np.ndarray | None
    method: str
    iterations: int
    converged: bool

    def yhat(self, partition) -> np.ndarray:
        out = np.empty(partition.n)
        out[partition.L] = self.yhat_L
        out[partition.U] = self.yhat_U
        return out


@dataclass
class SemiparametricFit:
    beta: np.ndarray
    f2_L: np.ndarray
    f2_U: np.ndarray
    yhat: np.ndarray
    M_LL: np.ndarray
    M_UL: np.ndarray


def labeled_smoothers(S_LL, S_LU, S_UL, S_UU):
    """(M_LL, M_UL) with M_UL = (I - S_UU)^{-1} S_UL and M_LL = S_LL + S_LU M_UL."""
    nu = S_UU.shape[0]
    if nu == 0:
        return S_LL.copy(), np.zeros((0, S_LL.shape[0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(np.eye(nu) - S_UU, check_finite=False)
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= 1e-13 * max(1.0, piv.max()):
        raise MvgamError("I - S_UU is numerically singular")
    M_UL = sla.lu_solve(lu, S_UL, check_finite=False)
    return S_LL + S_LU @ M_UL, M_UL


def _fixed_point_residual(S_UL, S_UU, y_L, y_U):
    return np.max(np.abs(y_U - S_UL @ y_L - S_UU @ y_U), initial=0.0)


def closed_form_fit(S: TransductiveSmoother, Y_L) -> FixedPointFit:
    y_L = np.asarray(Y_L, dtype=float)
    S_LL, S_LU, S_UL, S_UU = S.blocks
    M_LL, M_UL = labeled_smoothers(S_LL, S_LU, S_UL, S_UU)
    return FixedPointFit(M_LL @ y_L, M_UL @ y_L, M_LL, M_UL, "closed", 0, True)


def _initial_u(y_L, y_u0, nu):
    if y_u0 is None:
        return np.full(nu, float(np.mean(y_L)))
    y = np.asarray(y_u0, dtype=float).copy()
    if y.shape != (nu,):
        raise ValueError(f"initial unlabeled vector must have length {nu}")
    return y


def self_train_fit(S: TransductiveSmoother, Y_L, y_u0=None,
                   delta: float = DEFAULT_DELTA,
                   max_iter: int = DEFAULT_MAX_ITER) -> FixedPointFit:
    """Iterate y_U <- S_UL y_L + S_UU y_U until successive iterates differ by < delta."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    y_L = np.asarray(Y_L, dtype=float)
    S_LL, S_LU, S_UL, S_UU = S.blocks
    y_U = _initial_u(y_L, y_u0, S_UU.shape[0])
    drive = S_UL @ y_L
    converged, it = False, 0
    while it < max_iter:
        it += 1
        new = drive + S_UU @ y_U
        step = np.max(np.abs(new - y_U), initial=0.0)
        y_U = new
        if step < delta:
            converged = True
            break
    y_Lhat = S_LL @ y_L + S_LU @ y_U
    return FixedPointFit(y_Lhat, y_U, None, None, "selftrain", it, converged)


def newton_fit(S: TransductiveSmoother, Y_L, y_u0=None,
               delta: float = DEFAULT_DELTA,
               max_iter: int = DEFAULT_MAX_ITER) -> FixedPointFit:
    """Newton iteration on y_U - eta_U(y_U) = 0 for the identity link.

    The map is affine with gradient S_UU, so the first step lands on the
    fixed point; a second step confirms convergence.
    """
    y_L = np.asarray(Y_L, dtype=float)
    S_LL, S_LU, S_UL, S_UU = S.blocks
    nu = S_UU.shape[0]
    y_U = _initial_u(y_L, y_u0, nu)
    lu = sla.lu_factor(np.eye(nu) - S_UU, check_finite=False) if nu else None
    drive = S_UL @ y_L
    converged, it = False, 0
    while it < max_iter:
        it += 1
        if nu == 0:
            converged = True
            break
        resid = y_U - drive - S_UU @ y_U
        step = sla.lu_solve(lu, resid, check_finite=False)
        y_U = y_U - step
        if np.max(np.abs(step)) < delta:
            converged = True
            break
    y_Lhat = S_LL @ y_L + S_LU @ y_U
    return FixedPointFit(y_Lhat, y_U, None, None, "newton", it, converged)


def semiparametric_fit(X, S: TransductiveSmoother, Y_L) -> SemiparametricFit:
    """Linear term in X plus a graph term smoothed by S.

    beta = (X_L'(I - M_LL)X_L)^{-1} X_L'(I - M_LL) Y_L, and the graph term is
    the transductive smooth of the labeled partial residual.
    """
    X = X.data if isinstance(X, FeatureView) else np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    part = S.partition
    y_L = np.asarray(Y_L, dtype=float)
    X_L = X[part.L]
    M_LL, M_UL = labeled_smoothers(*S.blocks)
    IM = np.eye(part.m) - M_LL
    G = X_L.T @ IM @ X_L
    if np.linalg.matrix_rank(G) < G.shape[0]:
        raise MvgamError("collinear labeled features: X_L'(I - M_LL)X_L is singular")
    beta = np.linalg.solve(G, X_L.T @ IM @ y_L)
    r = y_L - X_L @ beta
    f2_L, f2_U = M_LL @ r, M_UL @ r
    yhat = np.empty(part.n)
    yhat[part.L] = X_L @ beta + f2_L
    yhat[part.U] = X[part.U] @ beta + f2_U
    return SemiparametricFit(beta, f2_L, f2_U, yhat, M_LL, M_UL)
