"""Command-line frontend.

    mvgam fit     --graphs g=edges.tsv --labels y.csv --model spec.json --out dir
    mvgam select  --views x=feat.csv --labels y.csv --candidates spec.json --out dir
    mvgam lattice --rows 25 --cols 25 --fracs 0.1,0.3 --reps 50 --seed 7 --out dir
    mvgam check-smoother --graph edges.tsv --labels y.csv --form stochastic

Exit codes: 0 ok, 1 error, 2 fit did not converge, 3 smoother not transductive.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import lattice as lat
from .additive import SmootherTerm, predict_assignments
from .errors import MvgamError, NotTransductiveError
from .modelsel import (default_gamma_grid, default_k_grid, estimate_gamma, evaluate_model,
                       hierarchical_search, learner_match, view_distances)
from .smoother import (KernelSpec, combinatorial_laplacian, interaction_graph, kernel_weights,
                       knn_graph, label_reachability, pairwise_distances, regularized_matrix,
                       shortest_path_complete, spectral_radius_uu, symmetric_matrix)
from .views import (AdditiveModelSpec, GraphView, Term, load_feature_view,
                    load_graph_view, load_labels, load_learner_predictions, load_model_spec)

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_NOT_TRANSDUCTIVE = 0, 1, 2, 3


def fmt(x) -> str:
    """17 significant digits so values round-trip exactly."""
    if x is None:
        return ""
    x = float(x)
    return "nan" if math.isnan(x) else format(x, ".17g")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _pairs(items, flag):
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise MvgamError(f"{flag} expects name=path, got {item!r}")
        if name in out:
            raise MvgamError(f"{flag}: duplicate name {name!r}")
        out[name] = path
    return out


# ---------------------------------------------------------------- data setup

class Problem:
    """Views, labels and partition aligned to the label file's id order."""

    def __init__(self, args, spec: AdditiveModelSpec):
        views = _pairs(args.views, "--views")
        graphs = _pairs(args.graphs, "--graphs")
        clash = set(views) & set(graphs)
        if clash:
            raise MvgamError(f"view names used twice: {sorted(clash)}")
        self.labels, self.partition, ids = load_labels(args.labels, task=spec.task)
        self.ids = ids
        self.views = {}
        for name, path in views.items():
            fv = load_feature_view(path, name)
            if sorted(fv.ids) != sorted(ids):
                raise MvgamError(f"view {name}: ids do not match the label file")
            self.views[name] = fv.aligned(ids)
        for name, path in graphs.items():
            self.views[name] = load_graph_view(path, name, ids)
        spec.validate(self.views, self.labels)
        self.spec = spec
        self.y_L = self.labels.values[self.partition.L]
        self.learners = {
            name: load_learner_predictions(path, name, ids, self.partition)
            for name, path in _pairs(getattr(args, "learner", None), "--learner").items()}
        self._tau = {}

    def view_weights(self, view_name: str, gamma, k, distance: str, form: str, lam):
        """Weights for one view; ``gamma='estimate'`` is resolved and cached."""
        view = self.views[view_name]
        if gamma == "estimate":
            key = (view_name, k, distance, form)
            if key not in self._tau:
                self._tau[key] = self._estimate_tau(view, k, distance, form, lam)
            gamma, k = self._tau[key]
        if isinstance(view, GraphView):
            if gamma is None:
                W = view.adjacency.copy()
                np.fill_diagonal(W, 0.0)
                W = knn_graph(W, k) if k else W
            else:
                W = shortest_path_complete(view.adjacency, KernelSpec(gamma, "shortest_path"), k)
        else:
            if gamma is None:
                raise MvgamError(f"feature view {view_name} needs a numeric gamma "
                                 "or 'estimate'")
            W = kernel_weights(view, KernelSpec(gamma, distance))
            np.fill_diagonal(W, 0.0)
            W = knn_graph(W, k) if k else W
        return W, gamma, k

    def _estimate_tau(self, view, k, distance, form, lam):
        D = (view_distances(view) if isinstance(view, GraphView)
             else pairwise_distances(view.data, distance))
        grid = default_gamma_grid(D)
        if view.name in self.learners:
            ks = [k] if k else [None] + default_k_grid(self.partition.n)
            g, kk, _ = learner_match(view, self.partition, self.y_L, self.learners[view.name],
                                     [(g, kk) for g in grid for kk in ks], distance)
            return g, kk

        def make(g):
            return self.view_weights(view.name, g, k, distance, form, lam)[0]
        lam = 1.0 if lam == "estimate" else lam
        g, _ = estimate_gamma(make, self.partition, self.y_L, grid, form, lam)
        return g, k

    def build(self, term: Term):
        """SmootherTerm plus the frozen (numeric) Term it corresponds to."""
        lam0 = 1.0 if term.lam == "estimate" else term.lam
        if term.kind == "main":
            W, gamma, k = self.view_weights(term.views[0], term.gamma, term.k,
                                            term.distance, term.smoother, term.lam)
        else:
            parts = [self.view_weights(v, term.gamma, term.k, term.distance,
                                       term.smoother, term.lam) for v in term.views]
            W = interaction_graph(parts[0][0], parts[1][0], term.interaction_op)
            gamma, k = parts[0][1], parts[0][2]
        st = SmootherTerm(term.name, W, term.smoother, lam0)
        return st, (gamma, k)


def _frozen_term(term: Term, lam, tau) -> dict:
    d = term.to_json()
    d["lambda"] = float(lam)
    gamma, k = tau
    if term.gamma == "estimate" and term.kind == "main":
        d["gamma"], d["k"] = gamma, k
    return d


def _frozen_interaction(problem, term: Term, d: dict) -> dict:
    if term.gamma != "estimate" or term.kind != "interaction":
        return d
    # one tau per view; a single frozen value exists only when both agree,
    # otherwise "estimate" is kept (re-estimation is deterministic)
    taus = [problem._tau[(v, term.k, term.distance, term.smoother)] for v in term.views]
    if taus[0] == taus[1]:
        d["gamma"], d["k"] = taus[0]
    return d


def _fit_kw(args, link):
    if args.max_iter is None:
        return {}
    return {"max_iter_outer": args.max_iter} if link == "logit" else {"max_iter": args.max_iter}


# ---------------------------------------------------------------- commands

def cmd_fit(args) -> int:
    spec = load_model_spec(args.model)
    prob = Problem(args, spec)
    built = [prob.build(t) for t in spec.terms]
    terms = [b[0] for b in built]
    estimate = [t.name for t in spec.terms if t.lam == "estimate"]
    rep = evaluate_model(terms, prob.partition, prob.y_L, spec.link, estimate,
                         fit_kw=_fit_kw(args, spec.link))
    fit = rep.fit
    out = Path(args.out)
    frozen = dict(spec.to_json())
    frozen["terms"] = [_frozen_interaction(prob, t, _frozen_term(t, lam, tau))
                       for t, lam, (_, tau) in zip(spec.terms, rep.lambdas, built)]
    rows = []
    assign = predict_assignments(fit) if spec.link == "logit" and prob.partition.unlabeled \
        else None
    amap = dict(zip(prob.partition.U.tolist(), assign.tolist())) if assign is not None else {}
    for i, key in enumerate(prob.ids):
        row = [key, fmt(fit.yhat[i])]
        if spec.link == "logit":
            row.append(str(amap[i]) if i in amap else "")
        rows.append(row)
    header = ["id", "yhat"] + (["assignment"] if spec.link == "logit" else [])
    atomic_write(out / "predictions.csv", _csv_text(header, rows))
    report = {
        "model": spec.to_json(),
        "frozen_model": frozen,
        "terms": [{"name": tf.name, "lambda": tf.lam, "gamma": d["gamma"], "k": d["k"],
                   "trace": tf.trace_M}
                  for tf, d in zip(fit.term_fits, frozen["terms"])],
        "alpha": fit.alpha,
        "tgcv": rep.tgcv, "taic": rep.taic, "df": rep.df, "loss": rep.loss,
        "prop1_radius": rep.prop1_radius,
        "convergence": {"outer_iterations": fit.outer_iterations,
                        "inner_iterations": fit.inner_iterations,
                        "converged": fit.converged, "flags": fit.flags},
        "n": prob.partition.n, "m": prob.partition.m,
        "predictions": str(out / "predictions.csv"),
    }
    atomic_write(out / "report.json", json.dumps(_jsonable(report), indent=2) + "\n")
    atomic_write(out / "frozen_model.json", json.dumps(_jsonable(frozen), indent=2) + "\n")
    if not fit.converged:
        print(f"warning: fit did not converge ({', '.join(fit.flags)})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_select(args) -> int:
    spec = load_model_spec(args.candidates)
    prob = Problem(args, spec)
    built, taus = {}, {}
    for t in spec.terms:
        built[t.name], taus[t.name] = prob.build(t)
    estimate = [t.name for t in spec.terms if t.lam == "estimate"]
    reports, best = hierarchical_search(spec.terms, built, prob.partition, prob.y_L,
                                        spec.link, spec.hierarchy, estimate,
                                        taus=taus, fit_kw=_fit_kw(args, spec.link))
    out = Path(args.out)
    rows = [["+".join(r.model_terms), fmt(r.taic), fmt(r.tgcv), fmt(r.df),
             ";".join(fmt(x) for x in r.lambdas), r.status] for r in reports]
    atomic_write(out / "selection.csv",
                 _csv_text(["terms", "taic", "tgcv", "df", "lambdas", "status"], rows))
    if best is None:
        print("error: every candidate model failed to fit", file=sys.stderr)
        return EXIT_ERROR
    by_name = {t.name: t for t in spec.terms}
    frozen = {"link": spec.link, "hierarchy": spec.hierarchy,
              "terms": [_frozen_interaction(prob, by_name[n],
                                            _frozen_term(by_name[n], lam, taus[n]))
                        for n, lam in zip(best.model_terms, best.lambdas)]}
    atomic_write(out / "best.json", json.dumps(_jsonable(
        {"terms": best.label, "taic": best.taic, "tgcv": best.tgcv, "df": best.df,
         "status": best.status, "model": frozen}), indent=2) + "\n")
    return EXIT_OK


def cmd_lattice(args) -> int:
    try:
        fracs = [float(x) for x in args.fracs.split(",") if x.strip()]
    except ValueError:
        raise MvgamError(f"--fracs must be comma-separated numbers, got {args.fracs!r}")
    cfg = lat.LatticeConfig(rows=args.rows, cols=args.cols, pattern=args.pattern,
                            block_size=args.block, labeled_fracs=fracs, reps=args.reps,
                            seed=args.seed)
    cfg.validate()
    res = lat.run_benchmark(cfg, threads=args.threads or 1)
    out = Path(args.out)
    write_benchmark(res, out)
    for s in res.summary:
        print(f"{s['model']:>4} frac={s['labeled_frac']:.2f} acc={s['accuracy_mean']:.4f} "
              f"kappa={s['kappa_mean']:.4f} taic={s['taic_mean']:.4f} "
              f"reps={s['reps']} failed={s['failed']}")
    return EXIT_OK


def write_benchmark(res, out: Path) -> None:
    rows = [[r.model, fmt(r.labeled_frac), r.rep, fmt(r.accuracy), fmt(r.kappa),
             fmt(r.taic)] for r in res.rows]
    atomic_write(out / "lattice_reps.csv", _csv_text(
        ["model", "labeled_frac", "rep", "accuracy", "kappa", "taic"], rows))
    keys = ["model", "labeled_frac", "reps", "failed", "accuracy_mean", "accuracy_std",
            "kappa_mean", "taic_mean"]
    srows = [[s[k] if isinstance(s[k], (str, int)) else fmt(s[k]) for k in keys]
             for s in res.summary]
    atomic_write(out / "lattice_summary.csv", _csv_text(keys, srows))


def cmd_check_smoother(args) -> int:
    labels, part, ids = load_labels(args.labels)
    G = load_graph_view(args.graph, "graph", ids)
    A = G.adjacency
    W = A.copy()
    np.fill_diagonal(W, 0.0)
    if args.gamma is not None:
        W = shortest_path_complete(A, KernelSpec(args.gamma, "shortest_path"), args.k)
    if args.form == "stochastic":
        deg = W.sum(axis=1)
        if np.any(deg <= 0):
            raise MvgamError(f"node {ids[int(np.flatnonzero(deg <= 0)[0])]} has zero degree")
        S = W / deg[:, None]
    elif args.form == "regularized":
        S = regularized_matrix(W, args.lam)
    else:
        S = symmetric_matrix(combinatorial_laplacian(W), args.lam)
    rho = spectral_radius_uu(S, part)
    rs = S.sum(axis=1)
    reach = label_reachability(W, part)
    print(f"rho_uu {fmt(rho)}")
    print(f"row_sums min {fmt(rs.min())} max {fmt(rs.max())}")
    print(f"components {reach['components']}")
    stranded = reach["unlabeled_without_label_in_component"]
    print(f"unlabeled_without_label_in_component {len(stranded)}")
    print(f"unlabeled_without_labeled_neighbor {reach['unlabeled_without_labeled_neighbor']}")
    if rho < 1:
        print("transductive yes")
        return EXIT_OK
    print("transductive no")
    if stranded:
        print(f"hint: ids {[ids[i] for i in stranded[:5]]} share no component with a "
              "label; shortest-path completion cannot repair this, label a node in "
              "each such component")
    else:
        print("hint: every unlabeled node shares a component with a label; "
              "shortest-path completion (--gamma) repairs this")
    return EXIT_NOT_TRANSDUCTIVE


# ---------------------------------------------------------------- parser

def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvgam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--views", nargs="*", default=[], metavar="NAME=PATH",
                        help="feature-view CSV files (id column first)")
        sp.add_argument("--graphs", nargs="*", default=[], metavar="NAME=PATH",
                        help="graph-view edge lists (src dst weight)")
        sp.add_argument("--labels", required=True, help="id,label CSV; NA marks unlabeled")
        sp.add_argument("--learner", nargs="*", default=[], metavar="NAME=PATH",
                        help="external learner predictions (id,phi) for a view")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--max-iter", type=_positive_int, default=None,
                        help="outer iteration cap for the fit")
        sp.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)

    fp = sub.add_parser("fit", help="fit one additive model")
    data_args(fp)
    fp.add_argument("--model", required=True, help="model spec JSON")
    fp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("select", help="tAIC selection over admissible models")
    data_args(sp)
    sp.add_argument("--candidates", required=True, help="candidate terms spec JSON")
    sp.set_defaults(func=cmd_select)

    lp = sub.add_parser("lattice", help="square vs diagonal lattice benchmark")
    lp.add_argument("--rows", type=_positive_int, default=25)
    lp.add_argument("--cols", type=_positive_int, default=25)
    lp.add_argument("--pattern", choices=["checkerboard", "mixed"], default="checkerboard")
    lp.add_argument("--block", type=_positive_int, default=5)
    lp.add_argument("--fracs", default="0.1", help="comma-separated labeled fractions")
    lp.add_argument("--reps", type=_positive_int, default=50)
    lp.add_argument("--seed", type=int, default=0)
    lp.add_argument("--out", required=True)
    lp.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
    lp.set_defaults(func=cmd_lattice)

    cp = sub.add_parser("check-smoother", help="check rho(S_UU) < 1 for a graph smoother")
    cp.add_argument("--graph", required=True, help="edge list (src dst weight)")
    cp.add_argument("--labels", required=True)
    cp.add_argument("--form", choices=["stochastic", "regularized", "symmetric"],
                    default="stochastic")
    cp.add_argument("--lam", type=float, default=1.0)
    cp.add_argument("--gamma", type=float, default=None,
                    help="apply shortest-path completion with this kernel scale")
    cp.add_argument("--k", type=_positive_int, default=None)
    cp.set_defaults(func=cmd_check_smoother)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NotTransductiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_TRANSDUCTIVE
    except (MvgamError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
