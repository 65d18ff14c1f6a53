"""Multi-view additive fits: Gauss-Seidel backfitting, transductive
self-training for the identity link, and transductive local scoring for the
logit link.

Every term is smoothed by a centered smoother ``C B`` where ``C = I - 11'/n``
and ``B`` is the term's base smoother. With IRLS weights ``V`` the base
smoother of a term with weights ``A`` and penalty ``P = D - A`` is

* symmetric:   ``(V + lam P)^{-1} V``
* regularized: ``(A V + lam P)^{-1} A V``
* stochastic:  the regularized form with ``lam = 1``

which reduce to ``(I + lam P)^{-1}``, ``(A + lam P)^{-1} A`` and ``D^{-1} A``
at ``V = I``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.special import expit, logit

from .errors import MvgamError
from .fixedpoint import labeled_smoothers
from .smoother import TransductiveSmoother, combinatorial_laplacian
from .views import Partition

VARIANCE_FLOOR = 1e-5
ETA_CAP = 30.0
OUTER_DELTA = 1e-6
INNER_DELTA = 1e-8
MAX_OUTER = 200
MAX_INNER = 1000
COLD_CLIP = (0.01, 0.99)
GS_SWITCH = 50      # sweeps before a stalled multi-term backfit is solved directly
ANDERSON_MEMORY = 5
DIVERGE_PATIENCE = 10  # consecutive outer residual increases before giving up


class SmootherTerm:
    """One additive term: weights, penalty, smoother form and lambda.

    ``base`` may be given instead of weights for a fixed n x n smoother
    (identity link only).
    """

    def __init__(self, name, W=None, form="regularized", lam=1.0, base=None):
        if (W is None) == (base is None):
            raise ValueError("give exactly one of W or base")
        if form not in ("stochastic", "regularized", "symmetric", "fixed"):
            raise ValueError(f"unknown smoother form {form!r}")
        self.name = name
        self.form = "fixed" if base is not None else form
        self.lam = float(lam)
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if base is not None:
            base = base.S if isinstance(base, TransductiveSmoother) else base
            self.fixed_base = np.asarray(base, dtype=float)
            self.W = self.P = None
            self.n = self.fixed_base.shape[0]
        else:
            self.fixed_base = None
            self.W = np.asarray(W, dtype=float)
            self.P = combinatorial_laplacian(self.W)
            self.n = self.W.shape[0]

    @property
    def effective_lam(self) -> float:
        return 1.0 if self.form == "stochastic" else self.lam

    def with_lam(self, lam) -> "SmootherTerm":
        if self.fixed_base is not None:
            return self
        return SmootherTerm(self.name, self.W, self.form, lam)

    def _system(self, V):
        n, lam = self.n, self.effective_lam
        v = np.ones(n) if V is None else np.asarray(V, dtype=float)
        if self.form == "symmetric":
            return np.diag(v) + lam * self.P, None, v
        AV = self.W * v[None, :]
        return AV + lam * self.P, AV, v

    def base_matrix(self, V=None) -> np.ndarray:
        if self.fixed_base is not None:
            if V is not None:
                raise MvgamError(f"term {self.name}: fixed smoother cannot be reweighted")
            return self.fixed_base
        M, AV, v = self._system(V)
        if self.form == "symmetric":
            c = _cho(M, self.name)
            return sla.cho_solve(c, np.diag(v), check_finite=False)
        return sla.lu_solve(_lu(M, self.name), AV, check_finite=False)

    def operator(self, V=None):
        """Callable r -> B(V) r backed by one factorization."""
        if self.fixed_base is not None:
            B = self.base_matrix(V)
            return lambda r: B @ r
        M, AV, v = self._system(V)
        if self.form == "symmetric":
            c = _cho(M, self.name)
            return lambda r: sla.cho_solve(c, v * r, check_finite=False)
        lu = _lu(M, self.name)
        W = self.W
        return lambda r: sla.lu_solve(lu, W @ (v * r), check_finite=False)


def _cho(M, name):
    try:
        return sla.cho_factor(M, check_finite=False)
    except sla.LinAlgError:
        raise MvgamError(f"term {name}: penalized system not positive definite") from None


def _lu(M, name):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(M, check_finite=False)
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= 1e-13 * max(1.0, piv.max()):
        raise MvgamError(f"term {name}: penalized system is singular")
    return lu


def center(M):
    """C M with C = I - 11'/n (columns of M centered)."""
    return M - M.mean(axis=0, keepdims=True)


@dataclass
class TermFit:
    name: str
    f: np.ndarray
    trace_M: float
    lam: float


@dataclass
class AdditiveFit:
    alpha: float
    term_fits: list[TermFit]
    eta: np.ndarray
    yhat: np.ndarray
    link: str
    outer_iterations: int
    inner_iterations: int
    converged: bool
    partition: Partition | None = None
    V: np.ndarray | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def df(self) -> float:
        """Remark-style degrees of freedom 1 + sum(tr(M_l) - 1)."""
        return 1.0 + sum(t.trace_M - 1.0 for t in self.term_fits)

    @property
    def yhat_U(self) -> np.ndarray:
        return self.yhat[self.partition.U]

    @property
    def yhat_L(self) -> np.ndarray:
        return self.yhat[self.partition.L]


def _as_terms(smoothers):
    out = []
    for i, s in enumerate(smoothers):
        if isinstance(s, SmootherTerm):
            out.append(s)
        else:
            out.append(SmootherTerm(f"term{i}", base=s))
    return out


def _gauss_seidel(ops, y, f, weights, delta, max_sweeps):
    """Backfit ``y`` with centered operators; updates ``f`` in place.

    ``weights`` is None for the plain mean intercept, otherwise the IRLS
    weights used for a weighted intercept. Returns (alpha, sweeps, converged).
    """
    total = f.sum(axis=0)
    for sweep in range(1, max_sweeps + 1):
        r = y - total
        alpha = float(np.mean(r) if weights is None else np.dot(weights, r) / weights.sum())
        change = 0.0
        for l, op in enumerate(ops):
            partial = y - alpha - (total - f[l])
            new = op(partial)
            new -= new.mean()
            change = max(change, np.max(np.abs(new - f[l])))
            total += new - f[l]
            f[l] = new
        if change < delta:
            r = y - total
            alpha = float(np.mean(r) if weights is None else np.dot(weights, r) / weights.sum())
            return alpha, sweep, True
    r = y - total
    alpha = float(np.mean(r) if weights is None else np.dot(weights, r) / weights.sum())
    return alpha, max_sweeps, False


def _blocked_solve(centered, y):
    """Exact backfitting fixed point: f_l + S_l sum_{j!=l} f_j = S_l y.

    Two terms reduce to f_1 = (I - S_1 S_2)^{-1} S_1 (I - S_2) y, f_2 = S_2 (y - f_1).
    ``y`` may hold several columns.
    """
    q = len(centered)
    n = centered[0].shape[0]
    if q == 1:
        return (centered[0] @ y)[None]
    if q == 2:
        S1, S2 = centered
        f1 = _checked_solve(np.eye(n) - S1 @ S2, S1 @ (y - S2 @ y))
        return np.stack([f1, S2 @ (y - f1)])
    big = np.eye(q * n)
    for a in range(q):
        for b in range(q):
            if a != b:
                big[a * n:(a + 1) * n, b * n:(b + 1) * n] = centered[a]
    rhs = np.concatenate([S @ y for S in centered])
    F = _checked_solve(big, rhs)
    return F.reshape((q, n) + np.shape(y)[1:])


def _checked_solve(M, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(M, check_finite=False)
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= 1e-12 * max(1.0, piv.max()):
        raise MvgamError("backfitting system is singular (concurvity between terms)")
    return sla.lu_solve(lu, b, check_finite=False)


def _backfit_step(terms, y, f, V, delta, max_sweeps):
    """Gauss-Seidel backfit of ``y``; a multi-term backfit that stalls after
    GS_SWITCH sweeps is finished with the exact blocked solve."""
    ops = [t.operator(V) for t in terms]
    weights = None if V is None else V
    first = max_sweeps if len(terms) == 1 else min(GS_SWITCH, max_sweeps)
    alpha, sweeps, ok = _gauss_seidel(ops, y, f, weights, delta, first)
    if ok or len(terms) == 1 or sweeps >= max_sweeps:
        return alpha, sweeps, ok
    try:
        f[:] = _blocked_solve([center(t.base_matrix(V)) for t in terms], y)
    except MvgamError:
        more, extra, ok = _gauss_seidel(ops, y, f, weights, delta, max_sweeps - sweeps)
        return more, sweeps + extra, ok
    r = y - f.sum(axis=0)
    alpha = float(np.mean(r) if V is None else np.dot(V, r) / V.sum())
    return alpha, sweeps, True


class _Anderson:
    """Anderson mixing for a fixed-point map x = G(x); same fixed points as
    plain iteration, superlinear in practice on slowly contracting maps.
    Extrapolations longer than ``max_ratio`` plain steps are rejected and
    the history restarted, which keeps divergent maps from being amplified."""

    max_ratio = 100.0

    def __init__(self, memory=ANDERSON_MEMORY):
        self.memory = memory
        self.G, self.R = [], []

    def __call__(self, x, gx):
        r = gx - x
        self.G.append(gx.copy())
        self.R.append(r)
        if len(self.R) > self.memory + 1:
            self.G.pop(0)
            self.R.pop(0)
        if len(self.R) < 2 or self.memory == 0:
            return gx
        dR = np.diff(np.array(self.R), axis=0).T
        dG = np.diff(np.array(self.G), axis=0).T
        gamma, *_ = np.linalg.lstsq(dR, r, rcond=None)
        new = gx - dG @ gamma
        step = np.max(np.abs(r))
        if (not np.all(np.isfinite(new))
                or np.max(np.abs(new - gx)) > self.max_ratio * max(step, 1e-12)):
            self.G, self.R = [gx.copy()], [r]
            return gx
        return new


def _term_traces(terms, partition, V=None):
    traces = []
    for t in terms:
        B = t.base_matrix(V)
        if partition is None or not partition.unlabeled:
            traces.append(float(np.trace(B)))
            continue
        try:
            M_LL, _ = labeled_smoothers(*partition.blocks(B))
            traces.append(float(np.trace(M_LL)))
        except MvgamError:
            traces.append(float("nan"))
    return traces


def backfit_regression(smoothers, Y, delta=INNER_DELTA, max_iter=MAX_INNER,
                       partition: Partition | None = None) -> AdditiveFit:
    """Supervised-form backfit of a fully specified response ``Y``."""
    terms = _as_terms(smoothers)
    y = np.asarray(Y, dtype=float)
    ops = [_matrix_op(center(t.base_matrix())) for t in terms]
    f = np.zeros((len(terms), y.size))
    alpha, sweeps, ok = _gauss_seidel(ops, y, f, None, delta, max_iter)
    eta = alpha + f.sum(axis=0)
    traces = _term_traces(terms, partition)
    fits = [TermFit(t.name, f[i].copy(), traces[i], t.lam) for i, t in enumerate(terms)]
    flags = [] if ok else ["backfit not converged"]
    return AdditiveFit(alpha, fits, eta, eta.copy(), "identity", 1, sweeps, ok,
                       partition, None, flags)


def _matrix_op(S):
    return lambda r: S @ r


def backfit_operator(centered):
    """Smoother R with eta = R y for converged mean-intercept backfitting.

    Solves the blocked Gauss-Seidel system for all response columns at once.
    """
    n = centered[0].shape[0]
    J = np.full((n, n), 1.0 / n)
    F = _blocked_solve(centered, np.eye(n) - J)
    return J + F.sum(axis=0)


def transductive_operator(terms, V=None):
    """The linear smoother R of the (identity-link) additive fit."""
    terms = _as_terms(terms)
    return backfit_operator([center(t.base_matrix(V)) for t in terms])


def warm_start(terms, partition: Partition, Y_L, delta=INNER_DELTA,
               max_iter=MAX_INNER):
    """Initial unlabeled response from per-view labeled smoothers.

    Backfits Y_L with the centered labeled blocks M_LL of each view, then
    predicts the unlabeled part from the final partial residuals with M_UL.
    """
    y_L = np.asarray(Y_L, dtype=float)
    M = [labeled_smoothers(*partition.blocks(t.base_matrix())) for t in terms]
    centered = [center(M_LL) for M_LL, _ in M]
    ops = [_matrix_op(S) for S in centered]
    f = np.zeros((len(terms), y_L.size))
    first = max_iter if len(terms) == 1 else min(GS_SWITCH, max_iter)
    alpha, _, ok = _gauss_seidel(ops, y_L, f, None, delta, first)
    if not ok and len(terms) > 1:
        try:
            f[:] = _blocked_solve(centered, y_L)
        except MvgamError:
            _gauss_seidel(ops, y_L, f, None, delta, max_iter)
        alpha = float(np.mean(y_L - f.sum(axis=0)))
    total = f.sum(axis=0)
    y_U = np.full(partition.U.size, alpha)
    for l, (_, M_UL) in enumerate(M):
        y_U += M_UL @ (y_L - alpha - (total - f[l]))
    return y_U


def _initial_unlabeled(terms, partition, y_L, warm, delta, max_iter):
    if warm:
        try:
            return warm_start(terms, partition, y_L, delta, max_iter), True
        except MvgamError:
            pass
    return np.full(partition.U.size, float(np.mean(y_L))), False


def transductive_backfit(terms, partition: Partition, Y_L, delta=OUTER_DELTA,
                         max_iter=MAX_OUTER, warm=True, inner_delta=INNER_DELTA,
                         max_inner=MAX_INNER, accelerate=True) -> AdditiveFit:
    """Identity-link self-training: backfit on [Y_L, Y_U], then set Y_U = eta_U.

    Stops when ||eta_U(Y_U) - Y_U||_inf < delta. With ``accelerate`` the
    update of Y_U is Anderson-mixed; the fixed point is unchanged.
    """
    terms = _as_terms(terms)
    y_L = np.asarray(Y_L, dtype=float)
    n = partition.n
    L, U = partition.L, partition.U
    if not partition.unlabeled:
        y = np.empty(n)
        y[L] = y_L
        return backfit_regression(terms, y, inner_delta, max_inner, partition)
    y_U, _ = _initial_unlabeled(terms, partition, y_L, warm, inner_delta, max_inner)
    y = np.empty(n)
    y[L] = y_L
    f = np.zeros((len(terms), n))
    mix = _Anderson(ANDERSON_MEMORY if accelerate else 0)
    sweeps_total, converged, inner_ok = 0, False, True
    outer = 0
    for outer in range(1, max_iter + 1):
        y[U] = y_U
        alpha, sweeps, ok = _backfit_step(terms, y, f, None, inner_delta, max_inner)
        sweeps_total += sweeps
        inner_ok = inner_ok and ok
        eta_U = alpha + f[:, U].sum(axis=0)
        if np.max(np.abs(eta_U - y_U)) < delta:
            y_U = eta_U
            converged = True
            break
        y_U = mix(y_U, eta_U)
    y[U] = y_U
    alpha = float(np.mean(y - f.sum(axis=0)))
    eta = alpha + f.sum(axis=0)
    traces = _term_traces(terms, partition)
    fits = [TermFit(t.name, f[i].copy(), traces[i], t.lam) for i, t in enumerate(terms)]
    flags = []
    if not converged:
        flags.append("outer loop not converged")
    if not inner_ok:
        flags.append("backfit not converged")
    return AdditiveFit(alpha, fits, eta, eta.copy(), "identity", outer, sweeps_total,
                       converged and inner_ok, partition, None, flags)


def _weights(eta):
    p = expit(np.clip(eta, -ETA_CAP, ETA_CAP))
    return p, np.maximum(p * (1.0 - p), VARIANCE_FLOOR)


def _saturated(eta_L, y_L):
    """Every labeled probability sits on the correct side beyond the variance
    floor: the likelihood can only improve by sending eta to infinity."""
    p = expit(np.clip(eta_L, -ETA_CAP, ETA_CAP))
    return bool(np.all(p * (1.0 - p) < VARIANCE_FLOOR) and np.all((p > 0.5) == (y_L == 1)))


def local_scoring(terms, partition: Partition, Y_L, delta=OUTER_DELTA,
                  max_iter_outer=MAX_OUTER, max_iter_inner=MAX_INNER, warm=True,
                  inner_delta=INNER_DELTA, accelerate=True) -> AdditiveFit:
    """Transductive local scoring for a binary response (logit link).

    Outer loop: self-training on the unlabeled probabilities, stopping when
    successive eta_U differ by < delta. A fit is flagged "separation" when
    |eta| exceeds ETA_CAP or every labeled probability has passed the
    variance floor on the side of its label, and "outer loop diverging" when
    the outer residual grows DIVERGE_PATIENCE times in a row. Inner loop: IRLS with working
    response z = eta + (y - p)/V, each z smoothed by weighted backfitting
    with smoothers C B_l(V). ``accelerate`` Anderson-mixes the outer update
    of eta_U without changing its fixed point.
    """
    terms = _as_terms(terms)
    y_L = np.asarray(Y_L, dtype=float)
    if not np.all((y_L == 0) | (y_L == 1)):
        raise MvgamError("local scoring needs binary labels in {0, 1}")
    n = partition.n
    L, U = partition.L, partition.U
    y = np.empty(n)
    y[L] = y_L
    x = np.zeros(0)
    if partition.unlabeled:
        y_U, _ = _initial_unlabeled(terms, partition, y_L, warm, inner_delta, max_iter_inner)
        x = logit(np.clip(y_U, *COLD_CLIP))
    f = np.zeros((len(terms), n))
    alpha = float(logit(np.clip(np.mean(y_L if not partition.unlabeled
                                        else np.r_[y_L, expit(x)]), *COLD_CLIP)))
    eta = np.full(n, alpha)
    mix = _Anderson(ANDERSON_MEMORY if accelerate else 0)
    inner_total, converged, inner_ok, separated = 0, False, True, False
    outer, rising, last_res, diverging = 0, 0, np.inf, False
    for outer in range(1, max_iter_outer + 1):
        y[U] = expit(x)
        for _ in range(max_iter_inner):
            inner_total += 1
            p, V = _weights(eta)
            z = eta + (y - p) / V
            alpha, _, ok = _backfit_step(terms, z, f, V, inner_delta, max_iter_inner)
            inner_ok = inner_ok and ok
            new = alpha + f.sum(axis=0)
            if np.max(np.abs(new)) > ETA_CAP or _saturated(new[L], y_L):
                separated = True
            step = np.max(np.abs(new - eta))
            eta = new
            if step < inner_delta or separated:
                break
        else:
            inner_ok = False
        if separated:
            break
        if not partition.unlabeled:
            converged = True
            break
        res = np.max(np.abs(eta[U] - x))
        if res < delta:
            converged = True
            break
        rising = rising + 1 if res > last_res else 0
        last_res = res
        if rising >= DIVERGE_PATIENCE:
            diverging = True
            break
        x = np.clip(mix(x, eta[U]), -ETA_CAP, ETA_CAP)
    _, V = _weights(eta)
    traces = _term_traces(terms, partition, V)
    fits = [TermFit(t.name, f[i].copy(), traces[i], t.lam) for i, t in enumerate(terms)]
    flags = []
    if separated:
        flags.append("separation")
    if diverging:
        flags.append("outer loop diverging")
    elif not converged and not separated:
        flags.append("outer loop not converged")
    if not inner_ok:
        flags.append("inner loop not converged")
    yhat = expit(np.clip(eta, -ETA_CAP, ETA_CAP))
    return AdditiveFit(alpha, fits, eta, yhat, "logit", outer, inner_total,
                       converged and inner_ok and not separated, partition, V, flags)


def predict_assignments(fit: AdditiveFit, threshold: float = 0.5) -> np.ndarray:
    """Class 1 iff the fitted probability on U is >= threshold."""
    if fit.link != "logit":
        raise MvgamError("class assignments need a logit-link fit")
    return (fit.yhat_U >= threshold).astype(int)
