"""Per-worker gradient sparsification: top-k with error feedback, and a
regularized variant that damps entries the previous aggregation cancelled.

All operations are pure: they take a worker's state and return a new one.
Vectors are float64 numpy arrays of a fixed length J; masks are boolean
arrays with exactly k entries set. Inputs are validated at the public
entry points; the internal step path skips re-checking values it
constructed itself (the error vector stays finite by construction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Distortion",
    "RegTopKParams",
    "SparsePayload",
    "WorkerState",
    "posterior_distortion",
    "regtopk_score",
    "regtopk_step",
    "top_k_select",
    "topk_step",
]


def _as_vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"{name} must be a 1-d vector with at least one entry")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


@dataclass
class RegTopKParams:
    """Tuning knobs for the regularized selection rule.

    mu            scale of the tanh regularizer; smaller values push the
                  rule back towards plain magnitude ranking.
    c_unselected  constant score multiplier for entries with no feedback
                  from the previous round (1.0 treats them like plain top-k).
    y_exponent    magnitude exponent in the score, in (0, 1].
    zero_tolerance  below this, a previous-round denominator counts as zero
                  and the entry is treated as having no usable feedback.
    """

    mu: float = 0.5
    c_unselected: float = 1.0
    y_exponent: float = 1.0
    zero_tolerance: float = 1e-12

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not 0 < self.c_unselected <= 1:
            raise ValueError("c_unselected must be in (0, 1]")
        if not 0 < self.y_exponent <= 1:
            raise ValueError("y_exponent must be in (0, 1]")
        if not self.zero_tolerance > 0:
            raise ValueError("zero_tolerance must be positive")


@dataclass
class SparsePayload:
    """The k entries a worker transmits: sorted unique indices plus values."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if self.indices.size and (np.any(np.diff(self.indices) <= 0) or self.indices[0] < 0):
            raise ValueError("indices must be strictly increasing and non-negative")

    def __len__(self) -> int:
        return int(self.indices.size)

    @classmethod
    def from_masked(cls, vector: np.ndarray, mask: np.ndarray) -> "SparsePayload":
        idx = np.flatnonzero(mask)
        return cls(indices=idx, values=vector[idx])

    def to_dense(self, dim: int) -> np.ndarray:
        if self.indices.size and self.indices[-1] >= dim:
            raise ValueError("payload index out of range for dimension")
        out = np.zeros(dim)
        out[self.indices] = self.values
        return out


def _payload_unchecked(indices: np.ndarray, values: np.ndarray) -> SparsePayload:
    # flatnonzero output is already sorted and unique
    p = object.__new__(SparsePayload)
    p.indices = indices
    p.values = values
    return p


@dataclass
class WorkerState:
    """One worker's carry-over between rounds.

    error holds the unsent accumulated-gradient mass; entries selected in
    the previous round are exactly zero. prev_mask / prev_accumulated are
    absent until the worker has completed a round.
    """

    error: np.ndarray
    weight: float = 1.0
    prev_mask: np.ndarray | None = None
    prev_accumulated: np.ndarray | None = None
    round_index: int = 0

    def __post_init__(self):
        self.error = _as_vector(self.error, "error")
        if not 0 < self.weight <= 1:
            raise ValueError("weight must be in (0, 1]")

    @classmethod
    def fresh(cls, dim: int, weight: float = 1.0) -> "WorkerState":
        return cls(error=np.zeros(dim), weight=weight)

    @property
    def dim(self) -> int:
        return int(self.error.size)


@dataclass
class Distortion:
    """Per-entry feedback ratio with validity flags.

    values[j] is meaningful only where informative[j] is True; elsewhere the
    entry had no previous-round feedback (not selected, or a vanishing
    denominator) and the selection rule falls back to a constant regularizer.
    """

    values: np.ndarray
    informative: np.ndarray


def _topk_mask(v: np.ndarray, k: int) -> np.ndarray:
    # stable sort on the negated magnitudes breaks ties towards lower index
    order = np.argsort(-np.abs(v), kind="stable")
    mask = np.zeros(v.size, dtype=bool)
    mask[order[:k]] = True
    return mask


def top_k_select(x, k: int) -> np.ndarray:
    """Boolean mask of the k largest-magnitude entries of x.

    Ties are broken towards the lower index, so the result is deterministic.
    """
    v = _as_vector(x, "x")
    k = int(k)
    if not 1 <= k <= v.size:
        raise ValueError(f"k must be in [1, {v.size}], got {k}")
    return _topk_mask(v, k)


def _advance(state: WorkerState, accumulated: np.ndarray, mask: np.ndarray):
    idx = np.flatnonzero(mask)
    payload = _payload_unchecked(idx, accumulated[idx])
    new_state = object.__new__(WorkerState)
    new_state.error = np.where(mask, 0.0, accumulated)
    new_state.weight = state.weight
    new_state.prev_mask = mask
    new_state.prev_accumulated = accumulated
    new_state.round_index = state.round_index + 1
    return payload, new_state


def _check_k(k: int, dim: int) -> int:
    k = int(k)
    if not 1 <= k <= dim:
        raise ValueError(f"k must be in [1, {dim}], got {k}")
    return k


def topk_step(state: WorkerState, gradient, k: int):
    """One round of top-k sparsification with error feedback.

    Adds the carried error to the fresh gradient, keeps the k largest
    magnitudes of the sum as the payload, and stores the rest as the new
    error. Returns (payload, new_state); the error plus the densified
    payload reconstruct the accumulated gradient exactly.
    """
    g = _as_vector(gradient, "gradient")
    if g.size != state.dim:
        raise ValueError("gradient length does not match worker state")
    k = _check_k(k, state.dim)
    accumulated = state.error + g
    return _advance(state, accumulated, _topk_mask(accumulated, k))


def _distortion(state, prev_global, accumulated, zero_tolerance) -> Distortion:
    denom = state.weight * accumulated
    informative = state.prev_mask & (np.abs(denom) >= zero_tolerance)
    values = np.zeros(state.dim)
    idx = np.flatnonzero(informative)
    values[idx] = (prev_global[idx] - state.weight * state.prev_accumulated[idx]) / denom[idx]
    return Distortion(values=values, informative=informative)


def posterior_distortion(
    state: WorkerState,
    prev_global: np.ndarray,
    accumulated: np.ndarray,
    params: RegTopKParams,
) -> Distortion:
    """Per-entry ratio relating last round's aggregate to the worker's share.

    For an entry j the worker sent last round, the rest of the network
    contributed prev_global[j] - weight * prev_accumulated[j]; dividing by
    the worker's current scaled entry gives the distortion. A value of -1
    means the other workers exactly cancelled this worker's contribution.
    Entries not sent last round, or with a denominator below
    zero_tolerance, are flagged uninformative.
    """
    if state.prev_mask is None or state.prev_accumulated is None:
        raise ValueError("posterior distortion needs a completed previous round")
    gp = _as_vector(prev_global, "prev_global")
    a = _as_vector(accumulated, "accumulated")
    if gp.size != state.dim or a.size != state.dim:
        raise ValueError("vector length does not match worker state")
    return _distortion(state, gp, a, params.zero_tolerance)


def _scores(accumulated, distortion, params) -> np.ndarray:
    magnitude = np.abs(accumulated)
    if params.y_exponent != 1.0:
        magnitude = magnitude**params.y_exponent
    regularizer = np.full(accumulated.size, params.c_unselected)
    idx = np.flatnonzero(distortion.informative)
    regularizer[idx] = np.tanh(np.abs(1.0 + distortion.values[idx]) / params.mu)
    return np.sign(accumulated) * magnitude * regularizer


def regtopk_score(accumulated, distortion: Distortion, params: RegTopKParams) -> np.ndarray:
    """Selection scores: signed magnitude^y damped by the distortion.

    Informative entries are scaled by tanh(|1 + distortion| / mu), which
    vanishes when the previous aggregation cancelled the entry; the rest get
    the constant c_unselected. Ranking the scores by magnitude is the
    regularized replacement for ranking the accumulated gradient itself.
    """
    a = _as_vector(accumulated, "accumulated")
    if distortion.values.size != a.size:
        raise ValueError("distortion length does not match accumulated gradient")
    return _scores(a, distortion, params)


def regtopk_step(
    state: WorkerState,
    gradient,
    prev_global,
    k: int,
    params: RegTopKParams,
):
    """One round of regularized top-k sparsification.

    The first round (no history yet) is plain top-k. Afterwards the mask is
    chosen by ranking regularized scores, but the payload always carries the
    accumulated-gradient values themselves, never the scores.
    """
    if state.round_index == 0:
        return topk_step(state, gradient, k)
    if prev_global is None:
        raise ValueError("prev_global is required after the first round")
    g = _as_vector(gradient, "gradient")
    gp = _as_vector(prev_global, "prev_global")
    if g.size != state.dim or gp.size != state.dim:
        raise ValueError("vector length does not match worker state")
    k = _check_k(k, state.dim)
    accumulated = state.error + g
    distortion = _distortion(state, gp, accumulated, params.zero_tolerance)
    scores = _scores(accumulated, distortion, params)
    return _advance(state, accumulated, _topk_mask(scores, k))
