"""Synchronous-round distributed SGD simulator.

Every round, each worker evaluates its local gradient at the shared model,
runs its sparsifier step, and the server aggregates the payloads with fixed
worker order (so results are reproducible bit for bit), updates the model,
and broadcasts the aggregate back. Traces record the optimality gap, loss,
and a per-worker payload/mask breakdown when requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from . import problems, rng
from .core import RegTopKParams, SparsePayload, WorkerState, regtopk_step, topk_step

__all__ = [
    "DivergenceError",
    "ExperimentConfig",
    "ExperimentResult",
    "RoundTrace",
    "SWEEP_FORMAT_VERSION",
    "TRACE_FORMAT_VERSION",
    "aggregate",
    "mask_overlap",
    "payload_bytes",
    "run_experiment",
    "sgd_update",
    "sparsity_sweep",
]

TRACE_FORMAT_VERSION = 1
SWEEP_FORMAT_VERSION = 1

LOSS_DIVERGENCE_LIMIT = 1e12

SPARSIFIERS = ("none", "topk", "regtopk")
PROBLEMS = ("linear_regression", "logistic_toy")


class DivergenceError(RuntimeError):
    """Loss became non-finite or exceeded the divergence limit."""

    def __init__(self, message: str, traces: list["RoundTrace"]):
        super().__init__(message)
        self.traces = traces


@dataclass
class ExperimentConfig:
    problem: str = "linear_regression"
    sparsifier: str = "topk"
    k: int = 1
    eta: float = 1e-2
    iterations: int = 100
    gen: problems.GenConfig | None = None
    regtopk: RegTopKParams = field(default_factory=RegTopKParams)
    weights: str | list[float] = "uniform"
    seed: int = 0
    trace_level: str = "gap_only"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}")
        if self.sparsifier not in SPARSIFIERS:
            raise ValueError(f"sparsifier must be one of {SPARSIFIERS}")
        if self.trace_level not in ("gap_only", "full"):
            raise ValueError("trace_level must be 'gap_only' or 'full'")
        if self.problem == "linear_regression" and self.gen is None:
            raise ValueError("linear_regression needs a GenConfig")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        dim = self.dim
        if not 1 <= self.k <= dim:
            raise ValueError(f"k must be in [1, {dim}]")
        n = self.n_workers
        if isinstance(self.weights, str):
            if self.weights != "uniform":
                raise ValueError("weights must be 'uniform' or an explicit list")
        else:
            if len(self.weights) != n:
                raise ValueError("explicit weights must have one entry per worker")
            if abs(sum(self.weights) - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1")

    @property
    def dim(self) -> int:
        return 2 if self.problem == "logistic_toy" else self.gen.dim

    @property
    def n_workers(self) -> int:
        return 2 if self.problem == "logistic_toy" else self.gen.n_workers

    def resolved_weights(self) -> list[float]:
        if isinstance(self.weights, str):
            return [1.0 / self.n_workers] * self.n_workers
        return [float(w) for w in self.weights]

    @property
    def sparsity(self) -> float:
        return self.k / self.dim


@dataclass
class WorkerRoundTrace:
    accumulated: np.ndarray
    payload: SparsePayload
    mask: np.ndarray


@dataclass
class RoundTrace:
    t: int
    delta: float
    loss: float
    bytes_estimate: float
    per_worker: list[WorkerRoundTrace] | None = None
    aggregation_target: np.ndarray | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    traces: list[RoundTrace]
    theta: np.ndarray
    initial_delta: float
    initial_loss: float
    theta_star: np.ndarray | None = None

    @property
    def final_delta(self) -> float:
        return self.traces[-1].delta


def aggregate(payloads: list[SparsePayload], weights: list[float], dim: int) -> np.ndarray:
    """Weighted sum of sparse payloads as a dense vector, in worker order."""
    if len(payloads) != len(weights):
        raise ValueError("one weight per payload required")
    out = np.zeros(dim)
    for w, p in zip(weights, payloads):
        if len(p) and p.indices[-1] >= dim:
            raise ValueError("payload index out of range")
        out[p.indices] += w * p.values
    return out


def sgd_update(theta: np.ndarray, gradient: np.ndarray, eta: float) -> np.ndarray:
    if theta.shape != gradient.shape:
        raise ValueError("theta and gradient must have matching shapes")
    if not eta > 0:
        raise ValueError("eta must be positive")
    return theta - eta * gradient


def payload_bytes(k: int, dim: int) -> float:
    """Per-worker payload size: k values at 64 bits plus ceil(log2 J) index bits."""
    index_bits = math.ceil(math.log2(dim)) if dim > 1 else 0
    return k * (64 + index_bits) / 8


class _LinearRegressionProblem:
    """Gradient/loss evaluation over frozen datasets.

    Per-worker Gram matrices are precomputed so each gradient is a J x J
    matrix-vector product; this matches linreg_gradient algebraically (the
    float path differs in the last bits, which no consumer relies on).
    """

    def __init__(self, datasets: list[problems.LinearDataset]):
        self.datasets = datasets
        self.dim = datasets[0].dim
        self._gram = np.stack([ds.X.T @ ds.X for ds in datasets])
        self._cross = np.stack([ds.X.T @ ds.y for ds in datasets])
        self._ysq = np.array([ds.y @ ds.y for ds in datasets])
        self._inv_points = np.array([1.0 / ds.n_points for ds in datasets])
        self._scale = 2.0 * self._inv_points
        self.theta_star = problems.global_optimum(datasets)

    def gradients(self, theta: np.ndarray) -> np.ndarray:
        return self._scale[:, None] * (self._gram @ theta - self._cross)

    def loss(self, theta: np.ndarray) -> float:
        # per-worker (1/D) ||X theta - y||^2 via the cached quadratic form
        quad = (self._gram @ theta) @ theta - 2.0 * (self._cross @ theta) + self._ysq
        return float(np.mean(self._inv_points * quad))

    def initial_theta(self) -> np.ndarray:
        return np.zeros(self.dim)


class _LogisticToyProblem:
    def __init__(self):
        self.features = problems.toy_features()
        self.dim = 2
        self.theta_star = None

    def gradients(self, theta: np.ndarray) -> np.ndarray:
        return np.stack([problems.logistic_gradient(theta, x) for x in self.features])

    def loss(self, theta: np.ndarray) -> float:
        return float(np.mean([problems.logistic_loss(theta, x) for x in self.features]))

    def initial_theta(self) -> np.ndarray:
        return np.array([0.0, 1.0])


def _build_problem(cfg: ExperimentConfig):
    if cfg.problem == "logistic_toy":
        return _LogisticToyProblem()
    return _LinearRegressionProblem(problems.generate_datasets(cfg.gen))


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run the configured number of synchronous rounds and trace each one.

    The model update is theta <- theta - eta * g with g the weighted
    aggregate of the workers' payloads; regularized workers keep the
    broadcast aggregate for their next-round feedback. The dense baseline
    ('none') sends the full gradient through the same aggregation path, so
    k = J sparsified runs reproduce it bit for bit.
    """
    problem = _build_problem(cfg)
    weights = cfg.resolved_weights()
    n, dim = cfg.n_workers, cfg.dim
    k = dim if cfg.sparsifier == "none" else cfg.k
    states = [WorkerState.fresh(dim, weight=w) for w in weights]
    theta = problem.initial_theta()
    theta_star = problem.theta_star
    full = cfg.trace_level == "full"

    def gap(th):
        if theta_star is None:
            return float("nan")
        return float(np.linalg.norm(th - theta_star))

    initial_delta = gap(theta)
    initial_loss = problem.loss(theta)
    bytes_estimate = payload_bytes(k, dim)
    prev_global = None
    traces: list[RoundTrace] = []

    for t in range(1, cfg.iterations + 1):
        gradients = problem.gradients(theta)
        payloads = []
        for i in range(n):
            if cfg.sparsifier == "regtopk":
                payload, states[i] = regtopk_step(
                    states[i], gradients[i], prev_global, k, cfg.regtopk
                )
            else:
                payload, states[i] = topk_step(states[i], gradients[i], k)
            payloads.append(payload)
        global_grad = aggregate(payloads, weights, dim)
        theta = sgd_update(theta, global_grad, cfg.eta)
        prev_global = global_grad

        loss = problem.loss(theta)
        trace = RoundTrace(t=t, delta=gap(theta), loss=loss, bytes_estimate=bytes_estimate)
        if full:
            trace.per_worker = [
                WorkerRoundTrace(
                    accumulated=states[i].prev_accumulated,
                    payload=payloads[i],
                    mask=states[i].prev_mask,
                )
                for i in range(n)
            ]
            trace.aggregation_target = aggregate(
                [
                    SparsePayload(np.arange(dim), states[i].prev_accumulated)
                    for i in range(n)
                ],
                weights,
                dim,
            )
        traces.append(trace)
        if not math.isfinite(loss) or loss > LOSS_DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"loss diverged at round {t}: {loss!r}", traces
            )

    return ExperimentResult(
        config=cfg,
        traces=traces,
        theta=theta,
        initial_delta=initial_delta,
        initial_loss=initial_loss,
        theta_star=theta_star,
    )


def mask_overlap(traces: list[RoundTrace]) -> list[float]:
    """Per-round agreement of the workers' masks.

    Two workers: |intersection| / k. More: mean pairwise Jaccard index.
    Requires traces recorded with trace_level='full'.
    """
    out = []
    for trace in traces:
        if trace.per_worker is None:
            raise ValueError("mask_overlap needs full traces")
        masks = [w.mask for w in trace.per_worker]
        if len(masks) == 2:
            k = int(masks[0].sum())
            out.append(float((masks[0] & masks[1]).sum()) / k)
        else:
            scores = [
                (a & b).sum() / (a | b).sum() for a, b in combinations(masks, 2)
            ]
            out.append(float(np.mean(scores)))
    return out


def sparsity_sweep(
    base: ExperimentConfig, s_values: list[float], repeats: int
) -> list[tuple[float, float]]:
    """Mean final optimality gap per sparsity factor, over fresh seeds.

    Each repeat regenerates the datasets from a substream of base.seed; the
    same data is reused across the swept sparsity factors so rows are
    comparable. k is max(1, round(S * J)).
    """
    if base.problem != "linear_regression":
        raise ValueError("sparsity sweep is defined for linear regression")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    dim = base.dim
    ks = []
    for s in s_values:
        k = max(1, round(s * dim))
        if k > dim:
            raise ValueError(f"sparsity factor {s} exceeds 1")
        ks.append(k)
    finals = np.zeros((len(s_values), repeats))
    for r in range(repeats):
        seed_r = int(
            rng.substream(base.seed, rng.SWEEP, r).integers(0, 2**63 - 1)
        )
        gen_r = replace(base.gen, seed=seed_r)
        for i, k in enumerate(ks):
            cfg = replace(base, gen=gen_r, k=k, seed=seed_r)
            finals[i, r] = run_experiment(cfg).final_delta
    return [(float(s), float(finals[i].mean())) for i, s in enumerate(s_values)]
