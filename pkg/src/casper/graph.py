"""DAG representation, random graph models and smooth acyclicity functionals.

Weighted adjacency matrices are plain ``(d, d)`` float arrays with
``W[i, j]`` the weight of edge ``i -> j``. Binary graphs are integer 0/1
arrays with the same convention.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

EXPM_TOL = 1e-12


@dataclass(frozen=True)
class GroundTruthDag:
    """A binary DAG together with one topological order of its nodes."""

    adjacency: np.ndarray
    order: np.ndarray
    requested_edges: int | None = field(default=None, compare=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=int)
        order = np.asarray(self.order, dtype=int)
        d = adj.shape[0]
        if adj.shape != (d, d):
            raise ValueError(f"adjacency must be square, got {adj.shape}")
        if sorted(order.tolist()) != list(range(d)):
            raise ValueError("order must be a permutation of 0..d-1")
        permuted = adj[np.ix_(order, order)]
        if np.any(np.tril(permuted)):
            raise ValueError("adjacency is not strictly upper-triangular in the given order")
        adj.setflags(write=False)
        order.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "order", order)

    @property
    def d(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum())

    @classmethod
    def from_adjacency(cls, adjacency: np.ndarray) -> "GroundTruthDag":
        adj = (np.asarray(adjacency) != 0).astype(int)
        return cls(adj, topological_order(adj))


@dataclass(frozen=True)
class GraphModel:
    scheme: str
    degree: float

    def __post_init__(self):
        if self.scheme.upper() not in ("ER", "SF"):
            raise ValueError(f"unknown graph scheme {self.scheme!r}")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")

    def sample(self, d: int, seed) -> GroundTruthDag:
        if self.scheme.upper() == "ER":
            return generate_er(d, self.degree, seed)
        return generate_sf(d, int(self.degree), seed)


@dataclass(frozen=True)
class AcyclicityForm:
    """Which smooth acyclicity functional to use.

    ``kind`` is ``"expm"`` for tr(exp(W*W)) - d or ``"poly"`` for
    tr((I + alpha W*W)^d) - d. ``alpha=None`` means 1/d.
    """

    kind: str = "expm"
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in ("expm", "poly"):
            raise ValueError(f"unknown acyclicity form {self.kind!r}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def alpha_for(self, d: int) -> float:
        return self.alpha if self.alpha is not None else 1.0 / d


EXPM = AcyclicityForm("expm")
POLY = AcyclicityForm("poly")


def topological_order(adj: np.ndarray) -> np.ndarray:
    """Kahn's algorithm; raises ``ValueError`` on a cyclic graph."""
    adj = np.asarray(adj) != 0
    d = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    ready = sorted(np.flatnonzero(indeg == 0).tolist(), reverse=True)
    order = []
    while ready:
        node = ready.pop()
        order.append(node)
        for c in np.flatnonzero(adj[node]):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(int(c))
        ready.sort(reverse=True)
    if len(order) != d:
        raise ValueError("graph contains a directed cycle")
    return np.array(order, dtype=int)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_er(d: int, k: float, seed=None) -> GroundTruthDag:
    """Erdos-Renyi DAG with ``k * d`` expected edges.

    Each pair that is upper-triangular under a uniformly random node order is
    included independently. The inclusion probability saturates at 1, so a
    request above the number of unordered pairs (but within the number of
    ordered pairs) yields the complete DAG.
    """
    if d < 2:
        raise ValueError("need at least 2 nodes")
    if k <= 0:
        raise ValueError("degree must be positive")
    max_pairs = d * (d - 1) / 2
    if k * d > 2 * max_pairs:
        raise ValueError(f"{k * d} expected edges is infeasible for d={d}")
    rng = _rng(seed)
    return _er_from_probability(d, min(1.0, k * d / max_pairs), rng, requested=int(round(k * d)))


def _er_from_probability(d, p, rng, requested=None) -> GroundTruthDag:
    order = rng.permutation(d)
    upper = np.triu(rng.random((d, d)) < p, k=1).astype(int)
    adj = np.zeros((d, d), dtype=int)
    adj[np.ix_(order, order)] = upper
    return GroundTruthDag(adj, order, requested_edges=requested)


def generate_sf(d: int, k: int, seed=None) -> GroundTruthDag:
    """Scale-free DAG from Barabasi-Albert preferential attachment.

    Nodes ``0..k-1`` seed the process; every later node picks ``k`` distinct
    earlier nodes with probability proportional to their current degree and
    points to them. Node labels are then shuffled. The result has exactly
    ``k * (d - k)`` edges; ``requested_edges`` records the nominal ``k * d``.
    """
    k = int(k)
    if k < 1:
        raise ValueError("degree must be >= 1")
    if k >= d:
        raise ValueError(f"degree {k} must be smaller than the node count {d}")
    rng = _rng(seed)
    adj = np.zeros((d, d), dtype=int)
    targets = list(range(k))
    repeated: list[int] = []
    for source in range(k, d):
        for t in targets:
            adj[source, t] = 1
        repeated.extend(targets)
        repeated.extend([source] * k)
        chosen: set[int] = set()
        while len(chosen) < k and source + 1 < d:
            chosen.add(repeated[rng.integers(len(repeated))])
        targets = sorted(chosen)
    perm = rng.permutation(d)
    relabeled = np.zeros_like(adj)
    relabeled[np.ix_(perm, perm)] = adj
    # arrival order reversed is topological: later nodes point to earlier ones
    order = perm[::-1].copy()
    return GroundTruthDag(relabeled, order, requested_edges=k * d)


def _check_square(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValueError("matrix has non-finite entries")
    return W


def expm(A: np.ndarray, tol: float = EXPM_TOL) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a truncated Taylor series.

    The matrix is scaled by ``2**-s`` until its 1-norm is at most 0.5 and the
    series is summed until the next term's 1-norm falls below ``tol``
    relative to the partial sum, then squared back ``s`` times.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    norm = np.abs(A).sum(axis=0).max() if d else 0.0
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    B = A / (2.0**s)
    result = np.eye(d)
    term = np.eye(d)
    for m in range(1, 60):
        term = term @ B / m
        result = result + term
        if np.abs(term).sum(axis=0).max() <= tol * max(1.0, np.abs(result).sum(axis=0).max()):
            break
    # far outside the feasible region squaring can overflow; callers see inf
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            result = result @ result
    return result


def _poly_power(M: np.ndarray, alpha: float, power: int) -> np.ndarray:
    d = M.shape[0]
    return np.linalg.matrix_power(np.eye(d) + alpha * M, power)


def h_from_square(M: np.ndarray, form: AcyclicityForm = EXPM) -> tuple[float, np.ndarray]:
    """Acyclicity functional of a non-negative matrix ``M = W * W`` and its gradient in ``M``."""
    d = M.shape[0]
    if form.kind == "expm":
        E = expm(M)
        h = np.trace(E) - d
        dM = E.T
    else:
        alpha = form.alpha_for(d)
        P = _poly_power(M, alpha, d - 1)
        h = np.trace(P @ (np.eye(d) + alpha * M)) - d
        dM = d * alpha * P.T
    return max(float(h), 0.0), dM


def h_value(W: np.ndarray, form: AcyclicityForm = EXPM) -> float:
    """Acyclicity violation of ``W``; zero iff the support of ``W`` is acyclic."""
    W = _check_square(W)
    return h_from_square(W * W, form)[0]


def h_value_and_gradient(W: np.ndarray, form: AcyclicityForm = EXPM) -> tuple[float, np.ndarray]:
    W = _check_square(W)
    h, dM = h_from_square(W * W, form)
    return h, dM * (2 * W)


def h_gradient(W: np.ndarray, form: AcyclicityForm = EXPM) -> np.ndarray:
    """Gradient of :func:`h_value` with respect to ``W``."""
    return h_value_and_gradient(W, form)[1]


def prune(W: np.ndarray, omega: float = 0.3) -> np.ndarray:
    """Binary graph keeping entries with ``|W_ij| >= omega``; the diagonal is dropped."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    W = _check_square(W)
    B = (np.abs(W) >= omega).astype(int)
    np.fill_diagonal(B, 0)
    return B


def is_acyclic(B: np.ndarray) -> bool:
    B = np.asarray(B)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {B.shape}")
    return not kernels.has_cycle(B)


def save_adjacency(path, W: np.ndarray, binary: bool | None = None) -> None:
    """Headerless CSV, row ``i`` holds the edges leaving node ``i``."""
    W = np.asarray(W)
    if binary is None:
        binary = W.dtype.kind in "iub" or bool(np.all((W == 0) | (W == 1)))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in W:
            if binary:
                writer.writerow([int(v != 0) for v in row])
            else:
                writer.writerow([repr(float(v)) for v in row])


def load_adjacency(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{Path(path).name}:{lineno}: non-numeric entry") from exc
    if not rows:
        raise ValueError(f"{path}: empty adjacency file")
    d = len(rows)
    if any(len(r) != d for r in rows):
        raise ValueError(f"{path}: adjacency must be {d}x{d}")
    A = np.array(rows)
    if np.all((A == 0) | (A == 1)):
        return A.astype(int)
    return A
