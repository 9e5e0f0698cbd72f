"""Score functions and the augmented-Lagrangian structure learners.

``casper_fit`` alternates between minimising the fitting objective (with the
critic frozen) and a few clipped ascent steps of the critic, whose parameter
box shrinks with the current acyclicity violation as ``log(1 + h)``.
``notears_fit`` and ``notears_mlp_fit`` run the same outer machinery without
the critic.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.optimize as sopt

from .graph import EXPM, AcyclicityForm, _er_from_probability, h_from_square, is_acyclic, prune
from .nn import (
    AdamState,
    CriticModel,
    LinearFittingModel,
    MLPFittingModel,
    adam_step,
    backward,
    forward,
    max_abs_param,
    value_and_input_gradient,
)
from .sem import Dataset

log = logging.getLogger(__name__)

METHODS = ("casper", "notears", "notears-mlp", "random")

# the harness draws the Random baseline with this many expected edges per node
RANDOM_EDGES_PER_NODE = 1.0


class TrainingError(RuntimeError):
    """Raised when the objective diverges; ``result`` holds the last finite state."""

    def __init__(self, message: str, result: "TrainResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass
class LagrangianSchedule:
    alpha0: float = 0.0
    mu0: float = 1.0
    mu_growth: float = 10.0
    progress_ratio: float = 0.25
    h_tolerance: float = 1e-8
    mu_cap: float = 1e16

    def __post_init__(self):
        if self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if self.mu_growth <= 1:
            raise ValueError("mu_growth must exceed 1")
        if not 0 < self.progress_ratio < 1:
            raise ValueError("progress_ratio must lie in (0, 1)")


@dataclass
class CasperConfig:
    mode: str = "linear"
    lambda1: float = 0.01
    lambda2: float = 0.01
    k_inner: int = 3
    k_outer_max: int = 100
    pretrain_epochs: int = 10
    omega: float = 0.3
    acyclicity_form: AcyclicityForm = field(default_factory=lambda: EXPM)
    lagrangian: LagrangianSchedule = field(default_factory=LagrangianSchedule)
    seed: int = 0
    hidden: int = 10
    critic_hidden: int = 16
    critic_lr: float = 5e-3
    solver: str = "lbfgs"
    max_iter: int = 1000
    pretrain_iter: int = 100
    adam_epochs: int = 300
    fit_lr: float = 1e-3
    center: bool = True
    reset_critic: bool = False

    def __post_init__(self):
        if self.mode not in ("linear", "mlp"):
            raise ValueError(f"mode must be 'linear' or 'mlp', got {self.mode!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularisation coefficients must be non-negative")
        if self.k_inner < 1:
            raise ValueError("k_inner must be >= 1")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.solver not in ("lbfgs", "adam"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if isinstance(self.acyclicity_form, dict):
            self.acyclicity_form = AcyclicityForm(**self.acyclicity_form)
        if isinstance(self.lagrangian, dict):
            self.lagrangian = LagrangianSchedule(**self.lagrangian)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    weighted: np.ndarray
    pruned: np.ndarray
    history: list[dict]
    wall_time_seconds: float
    converged: bool
    method: str = "casper"
    config: dict = field(default_factory=dict)

    def history_arrays(self) -> dict[str, list]:
        keys = self.history[0].keys() if self.history else []
        return {k: [rec[k] for rec in self.history] for k in keys}

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "config": self.config,
            "seed": self.config.get("seed"),
            "converged": self.converged,
            "wall_time_seconds": self.wall_time_seconds,
            "history": self.history_arrays(),
            "n_edges": int(self.pruned.sum()),
        }


def invariant_violations(result: TrainResult) -> list[str]:
    """Training invariants that ``result`` breaks; empty when all hold.

    Checks that the penalty weight never decreases, that the critic sat inside
    its clip box on entry to every outer step, that a converged run ends with
    h within tolerance and an acyclic pruned graph, and that the pruned graph
    is the thresholded weighted one.
    """
    out = []
    hist = result.history
    mus = [r["mu"] for r in hist]
    if any(b < a for a, b in zip(mus, mus[1:])):
        out.append("mu decreased")
    for r in hist:
        if r.get("critic_max_abs") is not None and r["critic_max_abs"] > r["clip_bound"] + 1e-15:
            out.append(f"critic outside clip box at epoch {r['epoch']}")
            break
    if result.converged:
        lag = result.config.get("lagrangian") or {}
        tol = lag.get("h_tolerance", LagrangianSchedule.h_tolerance)
        if hist and hist[-1]["h"] > tol:
            out.append("terminal h above tolerance")
        if not is_acyclic(result.pruned):
            out.append("pruned graph is cyclic")
    omega = result.config.get("omega")
    if omega is not None and not np.array_equal(result.pruned, prune(result.weighted, omega)):
        out.append("pruned graph differs from the thresholded weights")
    return out


def _values(X) -> np.ndarray:
    return X.values if isinstance(X, Dataset) else np.asarray(X, dtype=float)


# ---------------------------------------------------------------- scores


def least_squares_score(X, W: np.ndarray, lambda1: float = 0.0) -> float:
    """``(1/2n) ||X - XW||_F^2 + lambda1 * sum |W|``."""
    X = _values(X)
    W = np.asarray(W, dtype=float)
    if W.shape != (X.shape[1], X.shape[1]):
        raise ValueError(f"W of shape {W.shape} does not match {X.shape[1]} variables")
    R = X - X @ W
    return 0.5 / X.shape[0] * float(np.sum(R * R)) + lambda1 * float(np.abs(W).sum())


def dag_penalty(h: float, alpha: float, mu: float) -> float:
    """Augmented-Lagrangian term ``alpha * h + mu / 2 * h^2``."""
    return alpha * h + 0.5 * mu * h * h


@dataclass
class ScoreResult:
    value: float
    distance: float
    sparsity: float
    grad_theta: list[np.ndarray]
    grad_phi: list[np.ndarray]


def critic_distance(X: np.ndarray, X_hat: np.ndarray, critic: CriticModel):
    """Mean critic output on real rows minus on reconstructed rows, with gradients.

    Returns ``(distance, grad_phi, grad_X_hat)``.
    """
    n = X.shape[0]
    dist = float(np.mean(forward(critic.net, X)) - np.mean(forward(critic.net, X_hat)))
    up = np.full((n, 1), 1.0 / n)
    g_real, _ = backward(critic.net, X, up)
    g_fake, dX_hat = backward(critic.net, X_hat, -up)
    return dist, [a + b for a, b in zip(g_real, g_fake)], dX_hat


def _sparsity(model, lambda1):
    if isinstance(model, LinearFittingModel):
        return lambda1 * float(np.abs(model.W).sum()), [lambda1 * np.sign(model.W)]
    norms = np.sqrt(np.sum(model.W1 * model.W1, axis=2, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    dW1 = lambda1 * np.where(norms > 0, model.W1 / safe, 0.0)
    grads = [dW1] + [np.zeros_like(p) for p in model.params()[1:]]
    return lambda1 * float(norms.sum()), grads


def casper_score(X, model, critic: CriticModel, lambda1: float = 0.0) -> ScoreResult:
    """Critic distance between data and reconstruction plus L1 sparsity of the adjacency."""
    X = _values(X)
    if X.shape[1] != model.d or critic.net.input_dim != model.d:
        raise ValueError("model, critic and data dimensions disagree")
    X_hat = model.forward(X)
    dist, g_phi, dX_hat = critic_distance(X, X_hat, critic)
    g_theta, _ = model.backward(X, dX_hat)
    sparse, g_sparse = _sparsity(model, lambda1)
    g_theta = [a + b for a, b in zip(g_theta, g_sparse)]
    return ScoreResult(dist + sparse, dist, sparse, g_theta, g_phi)


def clip_bound_for(h: float) -> float:
    return math.log1p(max(h, 0.0))


def critic_inner_loop(
    X,
    model,
    critic: CriticModel,
    k_inner: int,
    current_h: float,
    state: AdamState | None = None,
) -> CriticModel:
    """``k_inner`` clipped Adam ascent steps on the critic distance, fitting model frozen."""
    X = _values(X)
    if state is None:
        state = AdamState(lr=5e-3)
    c = clip_bound_for(current_h)
    X_hat = model.forward(X)
    for _ in range(k_inner):
        _, g_phi, _ = critic_distance(X, X_hat, critic)
        params = adam_step(state, critic.net.params(), [-g for g in g_phi])
        critic.net.set_params(params)
        critic.clip(c)
    return critic


# ---------------------------------------------------------------- objective


class _Objective:
    """Augmented-Lagrangian objective over a flat parameter vector.

    The graph-carrying weights (``W`` in linear mode, the first layer in MLP
    mode) are split into non-negative positive and negative parts so the L1
    term is smooth under box constraints; self-edges are pinned to zero.
    """

    def __init__(self, X, model, form, lambda1, lambda2, critic=None):
        self.X = X
        self.n = X.shape[0]
        self.model = model
        self.form = form
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.critic = critic
        self._real_mean = None
        self._neg_up = np.full((self.n, 1), -1.0 / self.n)
        self.alpha = 0.0
        self.mu = 0.0
        self.linear = isinstance(model, LinearFittingModel)
        params = model.params()
        self.shapes = [p.shape for p in params]
        self.sizes = [p.size for p in params]
        self.n_graph = self.sizes[0]
        d = model.d
        if self.linear:
            self.self_mask = np.eye(d, dtype=bool)
        else:
            self.self_mask = np.broadcast_to(np.eye(d, dtype=bool)[:, :, None], self.shapes[0])
        free = [(0, 0) if s else (0, None) for s in self.self_mask.ravel()]
        rest = sum(self.sizes[1:])
        self.bounds = free + free + [(None, None)] * rest

    def pack(self, params) -> np.ndarray:
        G = params[0]
        pos = np.where(self.self_mask, 0.0, np.maximum(G, 0.0)).ravel()
        neg = np.where(self.self_mask, 0.0, np.maximum(-G, 0.0)).ravel()
        return np.concatenate([pos, neg] + [p.ravel() for p in params[1:]])

    def unpack(self, x: np.ndarray) -> list[np.ndarray]:
        ng = self.n_graph
        params = [(x[:ng] - x[ng : 2 * ng]).reshape(self.shapes[0])]
        offset = 2 * ng
        for shape, size in zip(self.shapes[1:], self.sizes[1:]):
            params.append(x[offset : offset + size].reshape(shape))
            offset += size
        return params

    def square_adjacency(self):
        if self.linear:
            W = self.model.W
            return W * W
        return self.model.squared_adjacency()

    def evaluate(self, x: np.ndarray, with_penalty: bool = True):
        """Objective value, gradient and a breakdown of its parts."""
        self.model.set_params(self.unpack(x))
        X, n = self.X, self.n
        X_hat = self.model.forward(X)
        R = X_hat - X
        loss = 0.5 / n * float(np.sum(R * R))
        upstream = R / n
        dist = 0.0
        if self.critic is not None:
            # the real-data half of the distance is constant while the critic is frozen
            if self._real_mean is None:
                self._real_mean = float(np.mean(forward(self.critic.net, X)))
            fake, dX_hat = value_and_input_gradient(self.critic.net, X_hat, self._neg_up)
            dist = self._real_mean - float(np.mean(fake))
            upstream = upstream + dX_hat
        grads, _ = self.model.backward(X, upstream)
        params = self.model.params()
        l2 = 0.0
        if not self.linear and self.lambda2 > 0:
            W1, W2 = params[0], params[2]
            l2 = 0.5 * self.lambda2 * float(np.sum(W1 * W1) + np.sum(W2 * W2))
            grads[0] = grads[0] + self.lambda2 * W1
            grads[2] = grads[2] + self.lambda2 * W2
        M = self.square_adjacency()
        h, dM = h_from_square(M, self.form)
        penalty = 0.0
        if with_penalty:
            penalty = dag_penalty(h, self.alpha, self.mu)
            coef = self.alpha + self.mu * h
            if self.linear:
                grads[0] = grads[0] + coef * dM * 2 * params[0]
            else:
                # M[i, j] = sum_k W1[j, i, k]^2
                grads[0] = grads[0] + coef * 2 * dM.T[:, :, None] * params[0]
        l1 = self.lambda1 * float(x[: 2 * self.n_graph].sum())
        value = loss + dist + l1 + l2 + penalty
        g_graph = grads[0].ravel()
        g = np.concatenate(
            [g_graph + self.lambda1, -g_graph + self.lambda1] + [gr.ravel() for gr in grads[1:]]
        )
        g[: 2 * self.n_graph][np.tile(self.self_mask.ravel(), 2)] = 0.0
        parts = {"loss": loss, "distance": dist, "h": h, "score": loss + dist + l1 + l2}
        return value, g, parts

    def fun(self, x, with_penalty=True):
        value, g, _ = self.evaluate(x, with_penalty)
        if not np.isfinite(value) or not np.all(np.isfinite(g)):
            return 1e300, np.zeros_like(x)
        return value, g


# ---------------------------------------------------------------- training


class _Trainer:
    def __init__(self, X: np.ndarray, config: CasperConfig, method: str):
        self.config = config
        self.method = method
        rng = np.random.default_rng(config.seed)
        seeds = rng.integers(0, 2**31, size=2)
        d = X.shape[1]
        if config.mode == "linear":
            if config.center:
                X = X - X.mean(axis=0, keepdims=True)
            model = LinearFittingModel.zeros(d)
        else:
            model = MLPFittingModel.create(d, config.hidden, seed=int(seeds[0]))
        self.X = X
        self.use_critic = method == "casper"
        self.critic_seed = int(seeds[1])
        self.critic = CriticModel.create(d, config.critic_hidden, self.critic_seed) if self.use_critic else None
        self.critic_state = AdamState(lr=config.critic_lr)
        self.obj = _Objective(X, model, config.acyclicity_form, config.lambda1, config.lambda2, self.critic)
        self.x = self.obj.pack(model.params())
        self.history: list[dict] = []
        self.epoch = 0
        self.alpha = config.lagrangian.alpha0
        self.mu = config.lagrangian.mu0

    # -- subproblem solvers

    def _solve(self, x0, with_penalty: bool, max_iter: int):
        if self.config.solver == "lbfgs":
            sol = sopt.minimize(
                self.obj.fun,
                x0,
                args=(with_penalty,),
                method="L-BFGS-B",
                jac=True,
                bounds=self.obj.bounds,
                options={"maxiter": max_iter},
            )
            x = sol.x
        else:
            x = self._adam_solve(x0, with_penalty)
        value, _, parts = self.obj.evaluate(x, with_penalty)
        if not np.isfinite(value):
            raise TrainingError("objective became non-finite", self._result(converged=False))
        return x, parts

    def _adam_solve(self, x0, with_penalty):
        cfg = self.config
        lower = np.array([b[0] if b[0] is not None else -np.inf for b in self.obj.bounds])
        upper = np.array([b[1] if b[1] is not None else np.inf for b in self.obj.bounds])
        lr = cfg.fit_lr
        for _attempt in range(4):
            state = AdamState(lr=lr)
            x = x0.copy()
            prev = None
            ok = True
            for _ in range(cfg.adam_epochs):
                value, g, _ = self.obj.evaluate(x, with_penalty)
                if not np.isfinite(value):
                    ok = False
                    break
                (x,) = adam_step(state, [x], [g])
                np.clip(x, lower, upper, out=x)
                if self.use_critic:
                    self.obj.model.set_params(self.obj.unpack(x))
                    self._critic_loop()
                if prev is not None and abs(prev - value) <= 1e-6 * max(abs(prev), 1e-12):
                    break
                prev = value
            if ok:
                return x
            lr *= 0.5
            log.warning("non-finite objective, restarting subproblem with lr=%g", lr)
        raise TrainingError("objective diverged after 3 learning-rate halvings", self._result(converged=False))

    def _critic_loop(self):
        self.obj._real_mean = None
        critic_inner_loop(
            self.X, self.obj.model, self.critic, self.config.k_inner, self._current_h(), self.critic_state
        )

    def _current_h(self) -> float:
        return h_from_square(self.obj.square_adjacency(), self.config.acyclicity_form)[0]

    # -- bookkeeping

    def _record(self, phase: str, parts: dict, critic_entry: float | None, bound_entry: float | None):
        rec = {
            "epoch": self.epoch,
            "phase": phase,
            "score": parts["score"],
            "h": parts["h"],
            "alpha": self.alpha,
            "mu": self.mu,
            "distance": parts["distance"],
            "critic_max_abs": critic_entry,
            "clip_bound": bound_entry,
        }
        self.history.append(rec)
        self.epoch += 1

    def _after_solve(self, x_new):
        # critic update follows each descent step of the fitting model
        self.obj.model.set_params(self.obj.unpack(x_new))
        if self.use_critic and self.config.solver == "lbfgs":
            self._critic_loop()

    def _result(self, converged: bool, start: float | None = None) -> TrainResult:
        self.obj.model.set_params(self.obj.unpack(self.x))
        W = self.obj.model.adjacency()
        elapsed = time.perf_counter() - start if start is not None else 0.0
        return TrainResult(
            weighted=W,
            pruned=prune(W, self.config.omega),
            history=list(self.history),
            wall_time_seconds=elapsed,
            converged=converged,
            method=self.method,
            config=self.config.to_dict(),
        )

    def _entry_state(self):
        if not self.use_critic:
            return None, None
        return max_abs_param(self.critic.net), self.critic.clip_bound

    def run(self) -> TrainResult:
        cfg = self.config
        sched = cfg.lagrangian
        start = time.perf_counter()
        if self.use_critic:
            for _ in range(cfg.pretrain_epochs):
                entry = self._entry_state()
                x_new, parts = self._solve(self.x, with_penalty=False, max_iter=cfg.pretrain_iter)
                self.x = x_new
                self._after_solve(x_new)
                self._record("pretrain", parts, *entry)
        h = np.inf
        converged = False
        for _ in range(cfg.k_outer_max):
            x_new, h_new = None, None
            while self.mu < sched.mu_cap:
                self.obj.alpha, self.obj.mu = self.alpha, self.mu
                entry = self._entry_state()
                x_new, parts = self._solve(self.x, with_penalty=True, max_iter=cfg.max_iter)
                h_new = parts["h"]
                self._after_solve(x_new)
                self._record("dual", parts, *entry)
                if h_new > sched.progress_ratio * h:
                    self.mu *= sched.mu_growth
                else:
                    break
            if x_new is None:
                break
            self.x, h = x_new, h_new
            if self.use_critic and cfg.reset_critic:
                self.critic.net = CriticModel.create(self.X.shape[1], cfg.critic_hidden, self.critic_seed).net
                self.critic.clip(clip_bound_for(h))
                self.critic_state = AdamState(lr=cfg.critic_lr)
                self.obj._real_mean = None
            self.alpha += self.mu * h
            if h <= sched.h_tolerance:
                converged = True
                break
            if self.mu >= sched.mu_cap:
                break
        if not converged:
            log.info("%s stopped without reaching h <= %g (h=%g, mu=%g)", self.method, sched.h_tolerance, h, self.mu)
        return self._result(converged, start)


def casper_fit(X, config: CasperConfig | None = None) -> TrainResult:
    """Bilevel structure learning with the clipped critic score."""
    return _Trainer(_values(X), config or CasperConfig(), "casper").run()


def notears_fit(X, config: CasperConfig | None = None) -> TrainResult:
    """Least-squares NOTEARS with the same augmented-Lagrangian loop."""
    config = config or CasperConfig(lambda1=0.1)
    if config.mode != "linear":
        raise ValueError("notears_fit is linear-only; use notears_mlp_fit")
    return _Trainer(_values(X), config, "notears").run()


def notears_mlp_fit(X, config: CasperConfig | None = None) -> TrainResult:
    config = config or CasperConfig(mode="mlp")
    if config.mode != "mlp":
        raise ValueError("notears_mlp_fit needs mode='mlp'")
    return _Trainer(_values(X), config, "notears-mlp").run()


def random_baseline(d: int, expected_edges: float, seed=None) -> np.ndarray:
    """Random DAG (uniform order, independent edges) with the given expected edge count."""
    max_pairs = d * (d - 1) / 2
    if expected_edges < 0 or expected_edges > max_pairs:
        raise ValueError(f"{expected_edges} expected edges is infeasible for d={d}")
    p = expected_edges / max_pairs if max_pairs else 0.0
    return np.array(_er_from_probability(d, p, np.random.default_rng(seed)).adjacency)
