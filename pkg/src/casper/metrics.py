"""Structure-recovery metrics: TPR, FDR, SHD, SID and trial aggregation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels


class CyclicGraphError(ValueError):
    """A metric that presupposes a DAG received a cyclic graph."""


@dataclass
class MetricsReport:
    tpr: float
    fdr: float
    shd: int
    sid: int | None
    n_predicted_edges: int
    n_correct_edges: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrialAggregate:
    mean: dict[str, float | None]
    std: dict[str, float | None]
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def _binary_pair(truth, estimate):
    T = np.asarray(truth) != 0
    E = np.asarray(estimate) != 0
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValueError(f"truth must be square, got {T.shape}")
    if T.shape != E.shape:
        raise ValueError(f"shape mismatch: truth {T.shape} vs estimate {E.shape}")
    if np.any(np.diag(T)) or np.any(np.diag(E)):
        raise ValueError("graphs must not contain self-loops")
    return T, E


def structural_hamming(truth, estimate) -> int:
    """Pairs whose edge state differs; a reversed edge counts once."""
    T, E = _binary_pair(truth, estimate)
    differs = (T != E) | (T.T != E.T)
    return int(np.triu(differs, k=1).sum())


def _edge_counts(T, E):
    correct = int((T & E).sum())
    return correct, int(T.sum()), int(E.sum())


def tpr_fdr(truth, estimate) -> tuple[float, float]:
    T, E = _binary_pair(truth, estimate)
    correct, n_true, n_pred = _edge_counts(T, E)
    tpr = correct / n_true if n_true else 1.0
    fdr = (n_pred - correct) / max(n_pred, 1)
    return tpr, fdr


def d_separated(G, i: int, j: int, Z=()) -> bool:
    """Whether ``i`` and ``j`` are d-separated given the node set ``Z`` in DAG ``G``."""
    G = np.asarray(G) != 0
    d = G.shape[0]
    if i == j:
        raise ValueError("i and j must differ")
    zmask = np.zeros(d, dtype=bool)
    zmask[list(Z)] = True
    if zmask[i] or zmask[j]:
        raise ValueError("i and j must not be in the conditioning set")
    if kernels.has_cycle(G):
        raise CyclicGraphError("d-separation needs an acyclic graph")
    return kernels.d_separated(G, i, j, zmask)


def sid(truth, estimate) -> int:
    """Structural intervention distance.

    Counts ordered pairs ``(i, j)`` for which adjusting for the estimated
    parents of ``i`` does not identify ``p(x_j | do(x_i))`` in the true DAG.
    """
    T, E = _binary_pair(truth, estimate)
    if kernels.has_cycle(T):
        raise CyclicGraphError("truth graph is cyclic")
    if kernels.has_cycle(E):
        raise CyclicGraphError("estimated graph is cyclic; prune it to a DAG first")
    return kernels.sid_count(T, E)


def evaluate(truth, estimate) -> MetricsReport:
    """All metrics; SID is ``None`` when the estimate is cyclic."""
    T, E = _binary_pair(truth, estimate)
    tpr, fdr = tpr_fdr(T, E)
    try:
        sid_value = sid(T, E)
    except CyclicGraphError:
        sid_value = None
    correct, _, n_pred = _edge_counts(T, E)
    return MetricsReport(tpr, fdr, structural_hamming(T, E), sid_value, n_pred, correct)


METRIC_NAMES = ("tpr", "fdr", "shd", "sid", "n_predicted_edges", "n_correct_edges")


def aggregate_trials(reports: list[MetricsReport]) -> TrialAggregate:
    """Per-metric mean and sample standard deviation (``ddof=1``; 0 for one trial)."""
    if not reports:
        raise ValueError("need at least one report")
    mean: dict[str, float | None] = {}
    std: dict[str, float | None] = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not vals:
            mean[name] = std[name] = None
            continue
        arr = np.asarray(vals, dtype=float)
        mean[name] = float(arr.mean())
        std[name] = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return TrialAggregate(mean, std, len(reports))


def format_cell(mean: float | None, std: float | None, digits: int = 2) -> str:
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "-"
    return f"{mean:.{digits}f}±{std:.{digits}f}"
