"""Loading of views, labels, learner predictions and model configuration.

Observation ids are opaque strings. The labels file defines the canonical
order; every other input is aligned to it by id.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MvgamError, ParseError, SpecError

MISSING = "NA"


@dataclass(frozen=True)
class Partition:
    """Labeled / unlabeled index sets over ``n`` observations."""

    labeled: tuple[int, ...]
    unlabeled: tuple[int, ...]
    n: int

    def __post_init__(self):
        L, U = set(self.labeled), set(self.unlabeled)
        if len(L) != len(self.labeled) or len(U) != len(self.unlabeled):
            raise MvgamError("duplicate indices in partition")
        if L & U:
            raise MvgamError("labeled and unlabeled sets overlap")
        if L | U != set(range(self.n)):
            raise MvgamError("partition does not cover 0..n-1")
        if not L:
            raise MvgamError("no labeled observations")

    @classmethod
    def from_mask(cls, labeled_mask) -> "Partition":
        mask = np.asarray(labeled_mask, dtype=bool)
        idx = np.arange(mask.size)
        return cls(tuple(int(i) for i in idx[mask]),
                   tuple(int(i) for i in idx[~mask]), int(mask.size))

    @classmethod
    def from_labeled(cls, labeled: Sequence[int], n: int) -> "Partition":
        mask = np.zeros(n, dtype=bool)
        mask[list(labeled)] = True
        return cls.from_mask(mask)

    @property
    def m(self) -> int:
        return len(self.labeled)

    @property
    def L(self) -> np.ndarray:
        return np.asarray(self.labeled, dtype=np.intp)

    @property
    def U(self) -> np.ndarray:
        return np.asarray(self.unlabeled, dtype=np.intp)

    def blocks(self, M):
        """Return the (LL, LU, UL, UU) submatrices of an n x n matrix."""
        M = np.asarray(M)
        L, U = self.L, self.U
        return (M[np.ix_(L, L)], M[np.ix_(L, U)],
                M[np.ix_(U, L)], M[np.ix_(U, U)])

    def permuted(self, perm) -> "Partition":
        """Partition after relabeling node ``perm[i]`` as node ``i``."""
        inv = np.empty(self.n, dtype=np.intp)
        inv[np.asarray(perm)] = np.arange(self.n)
        return Partition.from_labeled(inv[self.L], self.n)


@dataclass(frozen=True)
class FeatureView:
    name: str
    data: np.ndarray
    column_names: tuple[str, ...]
    ids: tuple[str, ...]

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != len(self.ids):
            raise MvgamError(f"view {self.name!r}: data shape does not match ids")
        if not np.all(np.isfinite(self.data)):
            raise MvgamError(f"view {self.name!r}: non-finite entries")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def aligned(self, id_order: Sequence[str]) -> "FeatureView":
        """Reorder rows to ``id_order``; the id sets must coincide."""
        pos = {k: i for i, k in enumerate(self.ids)}
        missing = [k for k in id_order if k not in pos]
        if missing or len(id_order) != len(self.ids):
            raise ParseError(f"view {self.name!r}: ids do not match labels "
                             f"(missing {missing[:3]})")
        rows = [pos[k] for k in id_order]
        return FeatureView(self.name, self.data[rows], self.column_names, tuple(id_order))


@dataclass(frozen=True)
class GraphView:
    name: str
    adjacency: np.ndarray
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        A = self.adjacency
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise MvgamError(f"graph {self.name!r}: adjacency must be square")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12):
            raise MvgamError(f"graph {self.name!r}: adjacency not symmetric")
        if np.any(A < 0):
            raise MvgamError(f"graph {self.name!r}: negative weights")
        if self.ids and len(self.ids) != A.shape[0]:
            raise MvgamError(f"graph {self.name!r}: id count does not match adjacency")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class LabelVector:
    values: np.ndarray  # NaN marks unlabeled entries
    task: str

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise MvgamError(f"unknown task {self.task!r}")
        known = self.values[~np.isnan(self.values)]
        if self.task == "classification" and not np.all((known == 0) | (known == 1)):
            raise MvgamError("classification labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.values.size

    def labeled_values(self, partition: Partition) -> np.ndarray:
        return self.values[partition.L]


@dataclass(frozen=True)
class LearnerPredictions:
    view_name: str
    phi_L: np.ndarray
    phi_U: np.ndarray


@dataclass
class Term:
    views: tuple[str, ...]
    kind: str = "main"
    interaction_op: str = "intersection"
    smoother: str = "regularized"
    gamma: float | str | None = None
    k: int | None = None
    lam: float | str = 1.0
    distance: str = "euclidean"

    def __post_init__(self):
        self.views = tuple(self.views)
        if self.distance == "cosine_dissimilarity":
            self.distance = "cosine"
        if self.kind not in ("main", "interaction"):
            raise SpecError(f"unknown term kind {self.kind!r}")
        if self.kind == "main" and len(self.views) != 1:
            raise SpecError("main-effect terms reference exactly one view")
        if self.kind == "interaction" and len(self.views) != 2:
            raise SpecError("interaction terms reference exactly two views")
        if self.interaction_op not in ("intersection", "union"):
            raise SpecError(f"unknown interaction_op {self.interaction_op!r}")
        if self.smoother not in ("stochastic", "regularized", "symmetric"):
            raise SpecError(f"unknown smoother {self.smoother!r}")
        if self.distance not in ("euclidean", "cosine"):
            raise SpecError(f"unknown distance {self.distance!r}")
        if isinstance(self.gamma, str) and self.gamma != "estimate":
            raise SpecError(f"gamma must be a number or 'estimate', got {self.gamma!r}")
        if isinstance(self.gamma, (int, float)) and not self.gamma > 0:
            raise SpecError("gamma must be positive")
        if isinstance(self.lam, str) and self.lam != "estimate":
            raise SpecError(f"lambda must be a number or 'estimate', got {self.lam!r}")
        if isinstance(self.lam, (int, float)) and not self.lam > 0:
            raise SpecError("lambda must be positive")
        if self.k is not None and (int(self.k) != self.k or self.k < 1):
            raise SpecError("k must be a positive integer or null")

    @property
    def name(self) -> str:
        return "*".join(self.views)

    def to_json(self) -> dict:
        return {"views": list(self.views), "kind": self.kind,
                "interaction_op": self.interaction_op, "smoother": self.smoother,
                "gamma": self.gamma, "k": self.k, "lambda": self.lam,
                "distance": self.distance}


@dataclass
class AdditiveModelSpec:
    terms: list[Term]
    link: str = "identity"
    hierarchy: bool = True
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.link not in ("identity", "logit"):
            raise SpecError(f"unknown link {self.link!r}")
        if not self.terms:
            raise SpecError("model has no terms")
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise SpecError(f"duplicate terms in {names}")
        if self.hierarchy:
            check_hierarchy(self.terms)

    @property
    def task(self) -> str:
        return "classification" if self.link == "logit" else "regression"

    def view_names(self) -> set[str]:
        return {v for t in self.terms for v in t.views}

    def validate(self, views: dict | None = None, labels: LabelVector | None = None):
        """Check view references and link/task agreement."""
        if views is not None:
            unknown = sorted(self.view_names() - set(views))
            if unknown:
                raise SpecError(f"model references unknown views {unknown}")
        if labels is not None and labels.task != self.task:
            raise SpecError(f"link/task mismatch: link {self.link!r} with "
                            f"{labels.task} labels")
        return self

    def to_json(self) -> dict:
        return {"link": self.link, "hierarchy": self.hierarchy,
                "terms": [t.to_json() for t in self.terms], **self.options}


def check_hierarchy(terms: Sequence[Term]) -> None:
    mains = {t.views[0] for t in terms if t.kind == "main"}
    for t in terms:
        if t.kind == "interaction":
            absent = [v for v in t.views if v not in mains]
            if absent:
                raise SpecError(
                    f"interaction {t.name} requires main effects {absent}: without "
                    "them the interaction is not identifiable against the main "
                    "effects it absorbs")


def _read_csv(path) -> list[list[str]]:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    return rows


def load_feature_view(path, name: str) -> FeatureView:
    rows = _read_csv(path)
    if len(rows) < 2:
        raise ParseError(f"{path}: no observations")
    header = [c.strip() for c in rows[0]]
    cols = header[1:]
    if not cols:
        raise ParseError(f"{path}: no feature columns")
    ids, data, seen = [], [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {lineno} has {len(row)} fields, "
                             f"expected {len(header)}")
        key = row[0].strip()
        if key in seen:
            raise ParseError(f"{path}: duplicate id {key!r} at row {lineno}")
        seen.add(key)
        vals = []
        for col, cell in zip(cols, row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: non-numeric value {cell!r} at row "
                                 f"{lineno}, column {col!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: non-finite value at row {lineno}, "
                                 f"column {col!r}")
            vals.append(v)
        ids.append(key)
        data.append(vals)
    return FeatureView(name, np.array(data, dtype=float), tuple(cols), tuple(ids))


def load_graph_view(path, name: str, id_order: Sequence[str]) -> GraphView:
    """Read ``src dst weight`` lines into a symmetric adjacency matrix.

    Repeated and reversed edges accumulate: "a b 1" and "b a 1" give weight 2
    on both (a, b) and (b, a). Self loops are added once to the diagonal.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    pos = {k: i for i, k in enumerate(id_order)}
    A = np.zeros((len(id_order), len(id_order)))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"{path}: line {lineno}: expected 'src dst weight'")
            s, d, w = parts
            for node in (s, d):
                if node not in pos:
                    raise ParseError(f"{path}: line {lineno}: unknown id {node!r}")
            try:
                w = float(w)
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad weight {w!r}") from None
            if not math.isfinite(w) or w < 0:
                raise ParseError(f"{path}: line {lineno}: negative or non-finite weight")
            i, j = pos[s], pos[d]
            A[i, j] += w
            if i != j:
                A[j, i] += w
    return GraphView(name, A, tuple(id_order))


def write_graph_view(graph: GraphView, path, id_order: Sequence[str] | None = None) -> None:
    """Write the upper triangle (with diagonal) as an edge list."""
    ids = list(id_order or graph.ids)
    A = graph.adjacency
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in zip(*np.nonzero(np.triu(A))):
            fh.write(f"{ids[i]}\t{ids[j]}\t{float(A[i, j])!r}\n")


def load_labels(path, id_order: Sequence[str] | None = None,
                task: str = "regression"):
    """Read ``id,label`` rows. Returns ``(labels, partition, ids)``."""
    rows = _read_csv(path)
    if rows and rows[0][0].strip().lower() == "id":
        rows = rows[1:]
    if not rows:
        raise ParseError(f"{path}: no observations")
    ids, vals, seen = [], [], set()
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise ParseError(f"{path}: row {lineno}: expected 'id,label'")
        key, raw = row[0].strip(), row[1].strip()
        if key in seen:
            raise ParseError(f"{path}: duplicate id {key!r}")
        seen.add(key)
        if raw == MISSING:
            v = math.nan
        else:
            try:
                v = float(raw)
            except ValueError:
                raise ParseError(f"{path}: row {lineno}: bad label {raw!r}") from None
            if task == "classification" and v not in (0.0, 1.0):
                raise ParseError(f"{path}: row {lineno}: classification label "
                                 f"{raw!r} not in {{0,1}}")
        ids.append(key)
        vals.append(v)
    if id_order is not None:
        if sorted(id_order) != sorted(ids):
            raise ParseError(f"{path}: ids do not match the supplied id order")
        lookup = dict(zip(ids, vals))
        ids, vals = list(id_order), [lookup[k] for k in id_order]
    values = np.array(vals, dtype=float)
    mask = ~np.isnan(values)
    if not mask.any():
        raise ParseError(f"{path}: no labeled observations")
    return LabelVector(values, task), Partition.from_mask(mask), tuple(ids)


def load_learner_predictions(path, view_name: str, id_order: Sequence[str],
                             partition: Partition) -> LearnerPredictions:
    rows = _read_csv(path)
    if rows and rows[0][0].strip().lower() == "id":
        rows = rows[1:]
    phi = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise ParseError(f"{path}: row {lineno}: expected 'id,phi'")
        try:
            phi[row[0].strip()] = float(row[1])
        except ValueError:
            raise ParseError(f"{path}: row {lineno}: bad value {row[1]!r}") from None
    missing = [k for k in id_order if k not in phi]
    if missing:
        raise ParseError(f"{path}: predictions missing for ids {missing[:3]}")
    vec = np.array([phi[k] for k in id_order])
    return LearnerPredictions(view_name, vec[partition.L], vec[partition.U])


def _term_from_json(obj: dict) -> Term:
    views = obj.get("views")
    if not isinstance(views, list) or not views:
        raise SpecError("each term needs a non-empty 'views' list")
    kind = obj.get("kind", "main" if len(views) == 1 else "interaction")
    return Term(views=tuple(str(v) for v in views), kind=kind,
                interaction_op=obj.get("interaction_op", "intersection"),
                smoother=obj.get("smoother", "regularized"),
                gamma=obj.get("gamma"), k=obj.get("k"),
                lam=obj.get("lambda", 1.0),
                distance=obj.get("distance", "euclidean"))


def model_spec_from_dict(obj: dict) -> AdditiveModelSpec:
    if not isinstance(obj, dict) or "terms" not in obj:
        raise SpecError("model spec must be an object with a 'terms' list")
    known = {"link", "hierarchy", "terms"}
    return AdditiveModelSpec(terms=[_term_from_json(t) for t in obj["terms"]],
                             link=obj.get("link", "identity"),
                             hierarchy=bool(obj.get("hierarchy", True)),
                             options={k: v for k, v in obj.items() if k not in known})


def load_model_spec(path) -> AdditiveModelSpec:
    path = Path(path)
    if not path.exists():
        raise SpecError(f"{path}: no such file")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from None
    return model_spec_from_dict(obj)
