"""Two-view lattice simulation: square vs diagonal neighborhoods.

Each replication samples a labeled set, tunes the kernel scale of each view
by tGCV, fits the models {S}, {D} and {S, D} by transductive local scoring,
and scores the unlabeled predictions.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .additive import SmootherTerm, predict_assignments
from .errors import MvgamError
from .graphcore import shortest_path_distances
from .modelsel import estimate_gamma, local_gamma_grid, evaluate_model
from .smoother import KernelSpec
from .views import GraphView, Partition

MODELS = (("S",), ("D",), ("S", "D"))
NEIGHBOR_STEPS = {"square": ((0, 1), (1, 0)), "diagonal": ((1, 1), (1, -1))}


@dataclass
class LatticeConfig:
    rows: int = 25
    cols: int = 25
    pattern: str = "checkerboard"
    block_size: int = 5
    labeled_fracs: list[float] = field(default_factory=lambda: [0.1])
    reps: int = 50
    seed: int = 0
    neighborhoods: tuple[str, ...] = ("square", "diagonal")
    gamma_grid: list[float] | None = None
    lambda_grid: list[float] | None = None
    single_lambda: float = 1.0

    def validate(self) -> "LatticeConfig":
        if self.rows < 2 or self.cols < 2:
            raise MvgamError("lattice needs at least 2 rows and 2 columns")
        if self.pattern not in ("checkerboard", "mixed"):
            raise MvgamError(f"unknown pattern {self.pattern!r}")
        if self.block_size < 1:
            raise MvgamError("block size must be positive")
        if self.pattern == "checkerboard" and min(self.rows, self.cols) % self.block_size:
            raise MvgamError("block size must divide min(rows, cols)")
        if not self.labeled_fracs or any(not 0 < f <= 1 for f in self.labeled_fracs):
            raise MvgamError("labeled fractions must lie in (0, 1]")
        if self.reps < 1:
            raise MvgamError("reps must be positive")
        if set(self.neighborhoods) - set(NEIGHBOR_STEPS) or not self.neighborhoods:
            raise MvgamError(f"neighborhoods must be a subset of {sorted(NEIGHBOR_STEPS)}")
        return self


def make_lattice(rows: int, cols: int, neighborhood: str = "square") -> GraphView:
    """Unit-weight lattice; node (i, j) has index i * cols + j. No wraparound."""
    if rows < 2 or cols < 2:
        raise MvgamError("lattice needs at least 2 rows and 2 columns")
    n = rows * cols
    A = np.zeros((n, n))
    for di, dj in NEIGHBOR_STEPS[neighborhood]:
        for i in range(rows):
            for j in range(cols):
                a, b = i + di, j + dj
                if 0 <= a < rows and 0 <= b < cols:
                    A[i * cols + j, a * cols + b] = A[a * cols + b, i * cols + j] = 1.0
    return GraphView(neighborhood, A, tuple(f"{i}_{j}" for i in range(rows) for j in range(cols)))


def make_response(rows: int, cols: int, pattern: str = "checkerboard",
                  block_size: int = 5) -> np.ndarray:
    """Binary response on the grid, flattened row-major.

    ``mixed``: checkerboard on the left half of the columns, horizontal
    stripes of height ``block_size`` on the right half.
    """
    if pattern == "checkerboard" and min(rows, cols) % block_size:
        raise MvgamError("block size must divide min(rows, cols)")
    i, j = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    checker = (i // block_size + j // block_size) % 2
    if pattern == "checkerboard":
        return checker.ravel().astype(int)
    if pattern == "mixed":
        stripes = (i // block_size) % 2
        return np.where(j < cols // 2, checker, stripes).ravel().astype(int)
    raise MvgamError(f"unknown pattern {pattern!r}")


def shortest_path_kernel_weights(G, gamma: float, distances=None) -> np.ndarray:
    """W_ij = exp(-d_sp(i, j) / gamma) with hop distances; 0 across components."""
    A = G.adjacency if isinstance(G, GraphView) else G
    D = shortest_path_distances(A, weighted=False) if distances is None else distances
    return KernelSpec(gamma, "shortest_path")(D)


def kappa(confusion) -> float:
    """Cohen's kappa (O - E)/(1 - E); NaN when E == 1."""
    C = np.asarray(confusion, dtype=float)
    total = C.sum()
    if total < 1:
        raise MvgamError("empty confusion matrix")
    O = np.trace(C) / total
    E = float(C.sum(axis=1) @ C.sum(axis=0)) / total**2
    if E >= 1.0:
        return math.nan
    return (O - E) / (1.0 - E)


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise MvgamError("prediction and truth lengths differ")
    if pred.size == 0:
        return math.nan
    return float(np.mean(pred == truth))


def confusion_matrix(pred, truth) -> np.ndarray:
    pred, truth = np.asarray(pred, dtype=int), np.asarray(truth, dtype=int)
    C = np.zeros((2, 2), dtype=int)
    np.add.at(C, (truth, pred), 1)
    return C


def rep_rng(seed: int, frac_index: int, rep: int) -> np.random.Generator:
    """Independent PCG64 stream for replication ``rep`` of fraction ``frac_index``."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(frac_index, rep))))


@dataclass
class RepResult:
    model: str
    labeled_frac: float
    rep: int
    accuracy: float
    kappa: float
    taic: float
    status: str = "ok"


@dataclass
class BenchResult:
    rows: list[RepResult]
    summary: list[dict]

    def summary_for(self, model: str, frac: float) -> dict:
        for s in self.summary:
            if s["model"] == model and s["labeled_frac"] == frac:
                return s
        raise KeyError((model, frac))


class _Lattice:
    """Per-config cached geometry shared by all replications."""

    def __init__(self, cfg: LatticeConfig):
        self.cfg = cfg
        self.y = make_response(cfg.rows, cfg.cols, cfg.pattern, cfg.block_size).astype(float)
        self.dist = {}
        for nb in cfg.neighborhoods:
            G = make_lattice(cfg.rows, cfg.cols, nb)
            self.dist[nb] = shortest_path_distances(G.adjacency, weighted=False)
        self._weights = {}

    def weights(self, nb, gamma):
        key = (nb, gamma)
        if key not in self._weights:
            self._weights[key] = KernelSpec(gamma, "shortest_path")(self.dist[nb])
        return self._weights[key]


def run_replication(cfg: LatticeConfig, frac_index: int, rep: int,
                    geometry: _Lattice | None = None) -> list[RepResult]:
    geo = geometry or _Lattice(cfg)
    n = cfg.rows * cfg.cols
    frac = cfg.labeled_fracs[frac_index]
    m = max(1, int(round(frac * n)))
    rng = rep_rng(cfg.seed, frac_index, rep)
    labeled = np.sort(rng.choice(n, size=m, replace=False))
    part = Partition.from_labeled(labeled, n)
    y_L, y_U = geo.y[part.L], geo.y[part.U]
    names = {"square": "S", "diagonal": "D"}
    terms = {}
    for nb in cfg.neighborhoods:
        grid = cfg.gamma_grid or local_gamma_grid(geo.dist[nb])
        gamma, _ = estimate_gamma(lambda g, nb=nb: geo.weights(nb, g), part, y_L, grid,
                                  lam=cfg.single_lambda)
        terms[names[nb]] = SmootherTerm(names[nb], geo.weights(nb, gamma), "regularized",
                                        cfg.single_lambda)
    out = []
    for model in MODELS:
        if not all(t in terms for t in model):
            continue
        label = "+".join(model)
        estimate = model if len(model) > 1 else ()
        try:
            rep_ = evaluate_model([terms[t] for t in model], part, y_L, "logit",
                                  estimate, cfg.lambda_grid)
            fit = rep_.fit
            if part.unlabeled:
                pred = predict_assignments(fit)
                acc = accuracy(pred, y_U)
                kap = kappa(confusion_matrix(pred, y_U))
            else:
                acc = kap = math.nan
            out.append(RepResult(label, frac, rep, acc, kap, rep_.taic, rep_.status))
        except (MvgamError, np.linalg.LinAlgError) as exc:
            out.append(RepResult(label, frac, rep, math.nan, math.nan, math.nan,
                                 f"failed: {exc}"))
    return out


def _job(args):
    cfg, fi, rep = args
    return run_replication(cfg, fi, rep)


def run_benchmark(cfg: LatticeConfig, threads: int = 1) -> BenchResult:
    cfg.validate()
    jobs = [(cfg, fi, rep) for fi in range(len(cfg.labeled_fracs)) for rep in range(cfg.reps)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_job, jobs))
    else:
        geo = _Lattice(cfg)
        results = [run_replication(cfg, fi, rep, geo) for _, fi, rep in jobs]
    rows = [r for batch in results for r in batch]
    return BenchResult(rows, summarize(rows))


def summarize(rows: list[RepResult]) -> list[dict]:
    summary = []
    keys = []
    for r in rows:
        if (r.model, r.labeled_frac) not in keys:
            keys.append((r.model, r.labeled_frac))
    for model, frac in keys:
        sel = [r for r in rows if r.model == model and r.labeled_frac == frac]
        good = [r for r in sel if not r.status.startswith("failed")]
        acc = np.array([r.accuracy for r in good], dtype=float)
        summary.append({
            "model": model, "labeled_frac": frac, "reps": len(good),
            "failed": len(sel) - len(good),
            "accuracy_mean": _nanstat(np.mean, acc),
            "accuracy_std": _nanstat(lambda a: np.std(a, ddof=1) if a.size > 1 else 0.0, acc),
            "kappa_mean": _nanstat(np.mean, np.array([r.kappa for r in good], dtype=float)),
            "taic_mean": _nanstat(np.mean, np.array([r.taic for r in good], dtype=float)),
        })
    return summary


def _nanstat(fn, a):
    a = a[np.isfinite(a)]
    return float(fn(a)) if a.size else math.nan
