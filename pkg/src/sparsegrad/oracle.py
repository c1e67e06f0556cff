"""Monte Carlo evaluation of the exact selection posterior on tiny problems.

The regularized sparsifier ranks entries by a closed-form surrogate for the
probability that each entry lands in the top k of the unseen network-wide
aggregate. This module estimates that probability directly: it samples the
other workers' contribution (known entries fixed, unknown ones drawn from a
prior) plus an additive innovation, and counts how often each entry's total
falls in the top k. Intended for J <= 8 or so; used as a validation
diagnostic, never inside the training loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats

from . import rng
from .core import Distortion, RegTopKParams, regtopk_score, top_k_select

__all__ = [
    "AgreementReport",
    "InnovationModel",
    "PosteriorEstimate",
    "SCALE_FLOOR",
    "feasible_indicator",
    "innovation_pdf",
    "mc_posterior",
    "ranking_agreement",
]

# Floor on the per-entry innovation scale when it is tied to the gradient
# magnitude, so zero entries keep a proper (non-degenerate) distribution.
SCALE_FLOOR = 1e-6

_SAMPLE_BATCH = 1 << 16


@dataclass
class InnovationModel:
    """Distribution of the round-to-round change in the others' aggregate.

    family 'tanh_sech2' has density (1/2s)(1 - tanh^2(x/s)) - a logistic
    distribution with scale s/2 and standard deviation ~0.907 s - while
    'gaussian' uses standard deviation s. The per-entry scale s is mu,
    optionally multiplied by max(|a_j|, SCALE_FLOOR) when
    scale_with_gradient is set. Unknown contribution entries are drawn from
    a Gaussian prior p0 = (mean, var); None defers to the empirical variance
    of the known entries (or 1 if there are none).
    """

    family: str = "tanh_sech2"
    mu: float = 0.5
    scale_with_gradient: bool = False
    p0: tuple[float, float] | None = None

    def __post_init__(self):
        if self.family not in ("tanh_sech2", "gaussian"):
            raise ValueError("family must be 'tanh_sech2' or 'gaussian'")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.p0 is not None and self.p0[1] < 0:
            raise ValueError("p0 variance must be non-negative")


@dataclass
class PosteriorEstimate:
    p_hat: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    samples: int


@dataclass
class AgreementReport:
    posterior: PosteriorEstimate
    oracle_mask: np.ndarray
    surrogate_mask: np.ndarray
    overlap: float
    rank_correlation: float


def innovation_pdf(model: InnovationModel, x, scale: float) -> np.ndarray:
    """Density of one innovation entry at the given effective scale."""
    x = np.asarray(x, dtype=np.float64)
    if model.family == "tanh_sech2":
        return (1.0 - np.tanh(x / scale) ** 2) / (2.0 * scale)
    return np.exp(-0.5 * (x / scale) ** 2) / (scale * math.sqrt(2 * math.pi))


def feasible_indicator(a, j: int, k: int) -> bool:
    """True iff entry j is among the k largest magnitudes of a."""
    mask = top_k_select(a, k)
    if not 0 <= j < mask.size:
        raise ValueError("entry index out of range")
    return bool(mask[j])


def _effective_scales(model: InnovationModel, a_local: np.ndarray) -> np.ndarray:
    if model.scale_with_gradient:
        return model.mu * np.maximum(np.abs(a_local), SCALE_FLOOR)
    return np.full(a_local.size, model.mu)


def _resolve_p0(model: InnovationModel, z_known: Mapping[int, float]) -> tuple[float, float]:
    if model.p0 is not None:
        return model.p0
    if z_known:
        values = np.fromiter(z_known.values(), dtype=np.float64)
        return 0.0, float(np.var(values))
    return 0.0, 1.0


def mc_posterior(
    a_local,
    z_known: Mapping[int, float],
    model: InnovationModel,
    weight: float,
    k: int,
    samples: int,
    seed: int,
) -> PosteriorEstimate:
    """Estimate, per entry, the probability of landing in the global top k.

    Each sample forms a_j = weight * a_local_j + z_j + xi_j with z_j fixed
    where known and drawn from p0 otherwise, and xi_j from the innovation
    family. Counts are exact integers, so the estimates sum to exactly k in
    counts space regardless of the sample budget.
    """
    a_local = np.asarray(a_local, dtype=np.float64)
    dim = a_local.size
    if samples < 1:
        raise ValueError("samples must be at least 1")
    if not 1 <= k <= dim:
        raise ValueError(f"k must be in [1, {dim}]")
    if not 0 < weight <= 1:
        raise ValueError("weight must be in (0, 1]")
    if any(not 0 <= j < dim for j in z_known):
        raise ValueError("z_known index out of range")

    base = weight * a_local
    known_idx = np.array(sorted(z_known), dtype=np.int64)
    unknown_idx = np.setdiff1d(np.arange(dim), known_idx)
    z_fixed = np.zeros(dim)
    if known_idx.size:
        z_fixed[known_idx] = [z_known[int(j)] for j in known_idx]
    p0_mean, p0_var = _resolve_p0(model, z_known)
    p0_sd = math.sqrt(p0_var)
    scales = _effective_scales(model, a_local)

    gen = rng.substream(seed, rng.ORACLE)
    counts = np.zeros(dim, dtype=np.int64)
    done = 0
    while done < samples:
        batch = min(_SAMPLE_BATCH, samples - done)
        totals = np.broadcast_to(base + z_fixed, (batch, dim)).copy()
        if unknown_idx.size:
            totals[:, unknown_idx] += gen.normal(
                p0_mean, p0_sd, size=(batch, unknown_idx.size)
            )
        if model.family == "tanh_sech2":
            # logistic with scale s/2 has CDF (1 + tanh(x/s)) / 2
            totals += gen.logistic(0.0, scales / 2.0, size=(batch, dim))
        else:
            totals += scales * gen.standard_normal((batch, dim))
        order = np.argsort(-np.abs(totals), axis=1, kind="stable")[:, :k]
        counts += np.bincount(order.ravel(), minlength=dim)
        done += batch

    p_hat = counts / samples
    stderr = np.sqrt(p_hat * (1.0 - p_hat) / samples)
    return PosteriorEstimate(p_hat=p_hat, stderr=stderr, counts=counts, samples=samples)


def ranking_agreement(
    a_local,
    z_known: Mapping[int, float],
    model: InnovationModel,
    params: RegTopKParams,
    weight: float,
    k: int,
    samples: int,
    seed: int,
) -> AgreementReport:
    """Compare the sampled posterior's top-k set with the surrogate's.

    The surrogate sees exactly the information a worker would have: known
    contribution entries define the distortion (z / (weight * a)), unknown
    ones fall back to the constant regularizer. Reports the top-k set
    overlap and, over the known entries, the rank correlation between score
    magnitude and estimated posterior.
    """
    a_local = np.asarray(a_local, dtype=np.float64)
    estimate = mc_posterior(a_local, z_known, model, weight, k, samples, seed)
    oracle_mask = top_k_select(estimate.p_hat, k)

    denom = weight * a_local
    informative = np.zeros(a_local.size, dtype=bool)
    values = np.zeros(a_local.size)
    for j, z in z_known.items():
        if abs(denom[j]) >= params.zero_tolerance:
            informative[j] = True
            values[j] = z / denom[j]
    scores = regtopk_score(a_local, Distortion(values=values, informative=informative), params)
    surrogate_mask = top_k_select(scores, k)

    overlap = float((oracle_mask & surrogate_mask).sum()) / k
    known_idx = np.array(sorted(z_known), dtype=np.int64)
    if known_idx.size >= 2:
        rho = stats.spearmanr(
            np.abs(scores[known_idx]), estimate.p_hat[known_idx]
        ).statistic
        rank_correlation = float(rho) if rho is not None else float("nan")
    else:
        rank_correlation = float("nan")
    return AgreementReport(
        posterior=estimate,
        oracle_mask=oracle_mask,
        surrogate_mask=surrogate_mask,
        overlap=overlap,
        rank_correlation=rank_correlation,
    )
