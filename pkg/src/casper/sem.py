"""Synthetic data from linear and Gaussian-process structural equation models."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import GroundTruthDag, topological_order


class NumericalError(RuntimeError):
    pass


class ParseError(ValueError):
    """Malformed dataset file; ``lineno`` is 1-based and counts the header."""

    def __init__(self, message: str, lineno: int | None = None):
        super().__init__(message)
        self.lineno = lineno


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("dataset values must be a 2-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains non-finite values")
        names = tuple(self.names) if self.names else tuple(f"X{j + 1}" for j in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise ValueError(f"{len(names)} names for {values.shape[1]} columns")
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def standardized(self) -> "Dataset":
        X = self.values
        std = X.std(axis=0)
        std[std == 0] = 1.0
        return Dataset((X - X.mean(axis=0)) / std, self.names)


@dataclass(frozen=True)
class LinearSemSpec:
    dag: GroundTruthDag
    coefficients: np.ndarray
    noise_mean: float = 0.0
    noise_std: float = 1.0


@dataclass(frozen=True)
class NonlinearSemSpec:
    dag: GroundTruthDag
    kernel_bandwidth: float = 1.0
    noise_mean: float = 0.0
    noise_std: float = 1.0

    def __post_init__(self):
        if self.kernel_bandwidth <= 0:
            raise ValueError("kernel bandwidth must be positive")


def sample_linear_weights(
    dag: GroundTruthDag, seed=None, noise_mean: float = 0.0, noise_std: float = 1.0
) -> LinearSemSpec:
    """Edge weights with uniform sign and magnitude uniform in [0.5, 2]."""
    rng = np.random.default_rng(seed)
    d = dag.d
    magnitude = rng.uniform(0.5, 2.0, size=(d, d))
    sign = np.where(rng.random((d, d)) < 0.5, -1.0, 1.0)
    coef = dag.adjacency * magnitude * sign
    return LinearSemSpec(dag, coef, noise_mean, noise_std)


def _noise(rng, n, mean, std):
    return mean + std * rng.standard_normal(n)


def simulate_linear(spec: LinearSemSpec, n: int, seed=None) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    C = np.asarray(spec.coefficients, dtype=float)
    order = topological_order(C != 0)
    rng = np.random.default_rng(seed)
    d = C.shape[0]
    X = np.zeros((n, d))
    for j in order:
        X[:, j] = X @ C[:, j] + _noise(rng, n, spec.noise_mean, spec.noise_std)
    return Dataset(X)


def rbf_kernel(P: np.ndarray, bandwidth: float = 1.0) -> np.ndarray:
    sq = np.sum(P * P, axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * P @ P.T, 0.0)
    return np.exp(-dist2 / (2.0 * bandwidth**2))


def _cholesky_with_jitter(K: np.ndarray) -> np.ndarray:
    n = K.shape[0]
    jitter = 1e-6
    while jitter <= 1e-3 * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter *= 10
    raise NumericalError("kernel matrix is not positive definite even with jitter 1e-3")


def simulate_nonlinear_gp(spec: NonlinearSemSpec, n: int, seed=None) -> Dataset:
    """Each child is a draw of a zero-mean RBF Gaussian process at its parents' values plus noise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > 10_000:
        raise ValueError("n above 10,000 makes the kernel matrix infeasible")
    adj = spec.dag.adjacency
    rng = np.random.default_rng(seed)
    d = adj.shape[0]
    X = np.zeros((n, d))
    for j in spec.dag.order:
        parents = np.flatnonzero(adj[:, j])
        noise = _noise(rng, n, spec.noise_mean, spec.noise_std)
        if parents.size == 0:
            X[:, j] = noise
            continue
        L = _cholesky_with_jitter(rbf_kernel(X[:, parents], spec.kernel_bandwidth))
        X[:, j] = L @ rng.standard_normal(n) + noise
    return Dataset(X)


def save_dataset(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.names)
        for row in data.values:
            writer.writerow([repr(float(v)) for v in row])


def load_dataset(path, standardize: bool = False) -> Dataset:
    """Read a header + numeric-rows CSV; errors carry the offending line number."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", 1) from None
        names = [h.strip() for h in header]
        d = len(names)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d:
                raise ParseError(f"{path}:{lineno}: expected {d} fields, found {len(row)}", lineno)
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric cell", lineno) from None
    if not rows:
        raise ParseError(f"{path}: no data rows", 2)
    values = np.array(rows)
    if not np.all(np.isfinite(values)):
        raise ParseError(f"{path}: non-finite values")
    try:
        data = Dataset(values, tuple(names))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}", 1) from exc
    return data.standardized() if standardize else data
