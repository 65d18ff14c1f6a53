"""Tuning-parameter estimation and view selection.

tGCV and tAIC are evaluated through the labeled block M_LL of the
transductive fit, which is linear in Y_L.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .additive import (AdditiveFit, SmootherTerm, center, local_scoring,
                       transductive_backfit, transductive_operator)
from .errors import MvgamError, NotTransductiveError, SaturatedError
from .fixedpoint import labeled_smoothers
from .graphcore import shortest_path_distances
from .smoother import (KernelSpec, kernel_weights, knn_graph, pairwise_distances,
                       shortest_path_complete, spectral_radius_uu)
from .views import GraphView, LearnerPredictions, Partition, check_hierarchy

LINK_LOSSES = ("identity", "logit")


def default_lambda_grid() -> list[float]:
    return list(np.logspace(-3, 3, 13))


def _positive_offdiag(D):
    D = np.asarray(D, dtype=float)
    return np.where(np.eye(D.shape[0], dtype=bool) | ~np.isfinite(D) | (D <= 0), np.nan, D)


def default_gamma_grid(D) -> list[float]:
    """8 log-spaced values over [0.1, 10] x the median finite pairwise distance."""
    off = _positive_offdiag(D)
    finite = off[np.isfinite(off)]
    med = float(np.median(finite)) if finite.size else 1.0
    return list(np.geomspace(0.1 * med, 10.0 * med, 8))


def local_gamma_grid(D) -> list[float]:
    """8 log-spaced values from 0.25 x the median nearest-neighbor distance up
    to 2 x the median pairwise distance; resolves kernels that decay within a
    few hops, which the median-scaled grid skips on large sparse graphs."""
    off = _positive_offdiag(D)
    finite = off[np.isfinite(off)]
    if not finite.size:
        return list(np.geomspace(0.25, 2.0, 8))
    with np.errstate(all="ignore"):
        nn = np.nanmin(off, axis=1)
    lo = 0.25 * float(np.median(nn[np.isfinite(nn)]))
    hi = max(2.0 * float(np.median(finite)), 8.0 * lo)
    return list(np.geomspace(lo, hi, 8))


def default_k_grid(n: int) -> list[int]:
    ks = sorted({k for k in (3, 5, 10, math.ceil(math.sqrt(n))) if k <= n - 1})
    return ks or [max(1, n - 1)]


def view_distances(view) -> np.ndarray:
    if isinstance(view, GraphView):
        return shortest_path_distances(view.adjacency)
    return pairwise_distances(view.data)


def tgcv(M_LL, Y_L) -> float:
    y = np.asarray(Y_L, dtype=float)
    m = y.size
    r = y - np.asarray(M_LL) @ y
    return _gcv_ratio(float(r @ r), float(np.trace(M_LL)), m)


def _gcv_ratio(rss, trace, m):
    denom = (1.0 - trace / m) ** 2
    if denom <= 1e-14:
        raise SaturatedError(f"saturated smoother: tr(M_LL) = {trace:.6g} with m = {m}")
    return rss / denom


def df_denominator(traces, m: int) -> float:
    """(1 - [1 + sum(tr_l - 1)] / m)^2."""
    if m < 1:
        raise ValueError("need at least one labeled observation")
    df = 1.0 + sum(t - 1.0 for t in traces)
    denom = (1.0 - df / m) ** 2
    if denom <= 1e-14:
        raise SaturatedError(f"saturated smoother: approximate df {df:.6g} with m = {m}")
    return denom


def logistic_loss(y, p) -> float:
    y, p = np.asarray(y, dtype=float), np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(y == 1, -np.log(p), 0.0) + np.where(y == 0, -np.log1p(-p), 0.0)
    total = float(np.sum(terms))
    return math.inf if not math.isfinite(total) else total


def squared_loss(y, yhat) -> float:
    r = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    return float(r @ r)


def taic(Y_L, fitted_L, df: float, link: str = "logit") -> float:
    """(2/m) Loss + 2 df / m; fitted values are probabilities for the logit link."""
    y = np.asarray(Y_L, dtype=float)
    m = y.size
    loss = logistic_loss(y, fitted_L) if link == "logit" else squared_loss(y, fitted_L)
    return 2.0 * loss / m + 2.0 * df / m


def exact_labeled_smoother(terms, partition: Partition) -> np.ndarray:
    """M_LL of the identity-link transductive additive fit."""
    R = transductive_operator(terms)
    M_LL, _ = labeled_smoothers(*partition.blocks(R))
    return M_LL


def fit_tgcv(terms, partition: Partition, Y_L, check: bool = True) -> float:
    """tGCV of the identity-link fit; +inf when saturated, singular or (with
    ``check``) when a term is not transductive."""
    try:
        if check:
            for t in terms:
                check_transductive(t, partition)
        return tgcv(exact_labeled_smoother(terms, partition), Y_L)
    except MvgamError:
        return math.inf


def estimate_gamma(make_weights, partition: Partition, Y_L, gamma_grid,
                   form: str = "regularized", lam: float = 1.0):
    """Within-view gamma by tGCV of the single-term fit. Returns (gamma, tgcv)."""
    best = (math.inf, None)
    for g in sorted(gamma_grid):
        try:
            term = SmootherTerm("g", make_weights(g), form, lam)
        except (MvgamError, ValueError):
            continue
        crit = fit_tgcv([term], partition, Y_L)
        if crit < best[0]:
            best = (crit, g)
    if best[1] is None:
        raise SaturatedError("no gamma grid point gives a finite tGCV")
    return best[1], best[0]


def estimate_lambdas(terms, partition: Partition, Y_L, lambda_grids=None,
                     start=None):
    """Coordinate descent of tGCV over per-term lambda grids.

    Cycles over terms, moving each to its best grid value with the others
    held fixed, until a full cycle changes nothing. Ties go to the smaller
    lambda. Grid values whose smoother is not transductive are skipped.
    Returns (lambdas, tgcv).
    """
    terms = list(terms)
    q = len(terms)
    if lambda_grids is None:
        lambda_grids = [default_lambda_grid()] * q
    elif lambda_grids and np.isscalar(lambda_grids[0]):
        lambda_grids = [list(lambda_grids)] * q
    grids = [sorted(float(x) for x in g) for g in lambda_grids]
    if any(not g for g in grids):
        raise ValueError("lambda grids must be nonempty")
    idx = list(start) if start is not None else [len(g) // 2 for g in grids]
    cache, admissible = {}, {}

    def ok(l, j):
        if (l, j) not in admissible:
            try:
                check_transductive(terms[l].with_lam(grids[l][j]), partition)
                admissible[l, j] = True
            except MvgamError:
                admissible[l, j] = False
        return admissible[l, j]

    def crit(ix):
        key = tuple(ix)
        if key not in cache:
            if all(ok(l, j) for l, j in enumerate(ix)):
                ts = [t.with_lam(grids[i][ix[i]]) for i, t in enumerate(terms)]
                cache[key] = fit_tgcv(ts, partition, Y_L, check=False)
            else:
                cache[key] = math.inf
        return cache[key]

    for _ in range(100):
        changed = False
        for l in range(q):
            best_j, best_v = idx[l], crit(idx)
            for j in range(len(grids[l])):
                trial = idx.copy()
                trial[l] = j
                v = crit(trial)
                if v < best_v or (v == best_v and j < best_j):
                    best_j, best_v = j, v
            if best_j != idx[l]:
                idx[l] = best_j
                changed = True
        if not changed:
            break
    value = crit(idx)
    if not math.isfinite(value):
        raise SaturatedError("no lambda grid point gives a finite tGCV with a "
                             "transductive smoother")
    return [grids[i][idx[i]] for i in range(q)], value


def learner_match(view, partition: Partition, Y_L, predictions: LearnerPredictions,
                  grid, distance: str = "euclidean"):
    """Pick (gamma, k) whose stochastic-smoother fixed point best matches phi_U.

    Returns (gamma, k, criterion). Ties go to smaller gamma, then smaller k.
    """
    y_L = np.asarray(Y_L, dtype=float)
    phi_U = np.asarray(predictions.phi_U, dtype=float)
    order = sorted(grid, key=lambda gk: (gk[0], math.inf if gk[1] is None else gk[1]))
    best = None
    for gamma, k in order:
        try:
            W = candidate_weights(view, gamma, k, distance)
            crit = matching_criterion(W, partition, y_L, phi_U)
        except (MvgamError, ValueError):
            continue
        if best is None or crit < best[2]:
            best = (gamma, k, crit)
    if best is None:
        raise MvgamError("no grid candidate yields a transductive smoother")
    return best


def matching_criterion(W, partition: Partition, y_L, phi_U) -> float:
    W = np.asarray(W, dtype=float)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise MvgamError("zero-degree node")
    S = W / deg[:, None]
    if not spectral_radius_uu(S, partition) < 1:
        raise MvgamError("not transductive")
    _, M_UL = labeled_smoothers(*partition.blocks(S))
    r = phi_U - M_UL @ y_L
    return float(r @ r)


def candidate_weights(view, gamma, k=None, distance="euclidean") -> np.ndarray:
    """Kernel weights of a view for one (gamma, k) candidate."""
    if isinstance(view, GraphView):
        return shortest_path_complete(view.adjacency, KernelSpec(gamma, "shortest_path"), k)
    W = kernel_weights(view, KernelSpec(gamma, distance))
    return knn_graph(W, k) if k is not None else W


@dataclass
class SelectionReport:
    model_terms: tuple[str, ...]
    lambdas: list[float]
    taus: list[tuple]
    tgcv: float
    taic: float
    df: float
    loss: float
    prop1_radius: float | None = None
    status: str = "ok"
    fit: AdditiveFit | None = field(default=None, repr=False)

    @property
    def label(self) -> str:
        return "+".join(self.model_terms)


def admissible_models(terms, hierarchy: bool = True) -> list[tuple[int, ...]]:
    """All nonempty subsets (as index tuples) honoring the hierarchy."""
    out = []
    for r in range(1, len(terms) + 1):
        for combo in itertools.combinations(range(len(terms)), r):
            if hierarchy:
                try:
                    check_hierarchy([terms[i] for i in combo])
                except MvgamError:
                    continue
            out.append(combo)
    return out


def fit_terms(terms, partition, Y_L, link, **kw) -> AdditiveFit:
    if link == "logit":
        return local_scoring(terms, partition, Y_L, **kw)
    return transductive_backfit(terms, partition, Y_L, **kw)


def evaluate_model(terms, partition: Partition, Y_L, link: str,
                   estimate=(), lambda_grid=None, taus=None, fit_kw=None) -> SelectionReport:
    """Estimate the requested lambdas, fit the model and score it."""
    terms = list(terms)
    y_L = np.asarray(Y_L, dtype=float)
    names = tuple(t.name for t in terms)
    est = [i for i, t in enumerate(terms) if t.name in set(estimate)]
    if est:
        grids = [lambda_grid or default_lambda_grid() if i in est else [t.lam]
                 for i, t in enumerate(terms)]
        lams, crit = estimate_lambdas(terms, partition, y_L, grids)
        terms = [t.with_lam(lam) for t, lam in zip(terms, lams)]
    else:
        crit = fit_tgcv(terms, partition, y_L)
    for t in terms:
        check_transductive(t, partition)
    fit = fit_terms(terms, partition, y_L, link, **(fit_kw or {}))
    fitted_L = fit.yhat[partition.L]
    loss = (logistic_loss(y_L, fitted_L) if link == "logit"
            else squared_loss(y_L, fitted_L))
    radius = None
    if len(terms) == 2 and all(t.P is not None for t in terms):
        V = fit.V if fit.V is not None else np.ones(partition.n)
        try:
            radius = prop1_radius([t.P for t in terms],
                                  [t.effective_lam for t in terms], V, partition)
        except MvgamError:
            radius = None
    status = "ok" if fit.converged else ";".join(fit.flags) or "not converged"
    return SelectionReport(names, [t.lam for t in terms],
                           list(taus) if taus else [(None, None)] * len(terms),
                           crit, taic(y_L, fitted_L, fit.df, link), fit.df, loss,
                           radius, status, fit)


def check_transductive(term: SmootherTerm, partition: Partition) -> float:
    """rho of the term's unweighted smoother on U; raises when it is >= 1."""
    if not partition.unlabeled:
        return 0.0
    rho = spectral_radius_uu(term.base_matrix(), partition)
    if not rho < 1.0:
        raise NotTransductiveError(
            f"term {term.name}: rho(S_UU) = {rho:.6g} >= 1; label a node in every "
            "component or use shortest-path completion")
    return rho


def _report_key(rep: SelectionReport, order):
    value = rep.taic if math.isfinite(rep.taic) else math.inf
    return (value, len(rep.model_terms), order)


def hierarchical_search(candidates, built: dict, partition: Partition, Y_L,
                        link: str = "logit", hierarchy: bool = True,
                        estimate=(), lambda_grid=None, taus=None, fit_kw=None):
    """Fit and score every admissible model; returns (reports sorted by tAIC, best).

    ``candidates`` are :class:`~mvgam.views.Term` objects and ``built`` maps
    each term name to its :class:`~mvgam.additive.SmootherTerm`.
    """
    reports = []
    for order, combo in enumerate(admissible_models(candidates, hierarchy)):
        terms = [built[candidates[i].name] for i in combo]
        names = tuple(t.name for t in terms)
        try:
            rep = evaluate_model(terms, partition, Y_L, link,
                                 [n for n in names if n in set(estimate)], lambda_grid,
                                 [taus[n] for n in names] if taus else None, fit_kw)
        except (MvgamError, np.linalg.LinAlgError) as exc:
            rep = SelectionReport(names, [t.lam for t in terms], [], math.nan,
                                  math.inf, math.nan, math.nan, None, f"failed: {exc}")
        reports.append((rep, order))
    ranked = sorted(reports, key=lambda ro: _report_key(*ro))
    reports = [r for r, _ in ranked]
    ok = [r for r in reports if not r.status.startswith("failed")]
    return reports, (ok[0] if ok else None)


def prop1_radius(penalties, lambdas, V, partition: Partition) -> float:
    """Spectral radius of sum_j sum_{i!=j} [(I - S_j S_i)^{-1} S_j (I - S_i)]_UU.

    S_i = C (lam_i P_i + V)^{-1} V with C the centering matrix. Only the
    two-term case is defined.
    """
    if len(penalties) != 2:
        raise MvgamError("convergence condition is evaluated for exactly two terms")
    v = np.asarray(V, dtype=float)
    n = v.size
    S = []
    for P, lam in zip(penalties, lambdas):
        c = sla.cho_factor(lam * np.asarray(P) + np.diag(v), check_finite=False)
        S.append(center(sla.cho_solve(c, np.diag(v), check_finite=False)))
    I = np.eye(n)
    total = np.zeros((n, n))
    for j, i in ((0, 1), (1, 0)):
        lhs = I - S[j] @ S[i]
        lu = sla.lu_factor(lhs, check_finite=False)
        piv = np.abs(np.diag(lu[0]))
        if piv.min() <= 1e-13 * max(1.0, piv.max()):
            raise MvgamError("I - S_j S_i is singular")
        total += sla.lu_solve(lu, S[j] @ (I - S[i]), check_finite=False)
    return spectral_radius_uu(total, partition)
