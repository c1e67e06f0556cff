"""Loss and gradient definitions plus synthetic data generation.

Two problem families are provided: distributed linear regression over
Gaussian synthetic data (per-worker loss ``(1/D) * ||X theta - y||^2``),
and a two-worker logistic regression toy whose first feature is large and
opposite-signed across the workers, so naive magnitude selection cancels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from . import rng

__all__ = [
    "GenConfig",
    "LinearDataset",
    "generate_datasets",
    "global_optimum",
    "linreg_gradient",
    "linreg_loss",
    "load_dataset",
    "logistic_gradient",
    "logistic_loss",
    "save_dataset",
    "toy_features",
]


@dataclass
class LinearDataset:
    """One worker's regression data: rows of X are data points, y the labels."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValueError("X must be a matrix with at least one row")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("y length must match the number of rows of X")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n_points(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass
class GenConfig:
    """Synthetic-data recipe for the regression experiments.

    Per worker n: features are i.i.d. standard normal, the true model t_n is
    drawn around a per-worker mean u_n ~ N(model_mean, mean_var) with
    per-coordinate variance model_var, and labels are X @ t_n plus Gaussian
    noise of variance noise_var. With homogeneous=True every worker shares
    worker 0's true model and the label noise is dropped, so all local optima
    coincide.
    """

    n_workers: int
    dim: int
    batch_size: int
    model_mean: float = 0.0
    mean_var: float = 1.0
    model_var: float = 1.0
    noise_var: float = 0.0
    homogeneous: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.n_workers, self.dim, self.batch_size) < 1:
            raise ValueError("n_workers, dim and batch_size must be at least 1")
        if min(self.mean_var, self.model_var, self.noise_var) < 0:
            raise ValueError("variances must be non-negative")


def generate_datasets(cfg: GenConfig) -> list[LinearDataset]:
    """Draw one dataset per worker, deterministically from cfg.seed.

    Each (worker, purpose) pair gets its own counter-based substream, so the
    draws do not depend on iteration order.
    """

    def true_model(worker: int) -> np.ndarray:
        u = cfg.model_mean + math.sqrt(cfg.mean_var) * rng.substream(
            cfg.seed, worker, rng.MODEL_MEAN
        ).standard_normal()
        return u + math.sqrt(cfg.model_var) * rng.substream(
            cfg.seed, worker, rng.MODEL
        ).standard_normal(cfg.dim)

    shared = true_model(0) if cfg.homogeneous else None
    datasets = []
    for n in range(cfg.n_workers):
        X = rng.substream(cfg.seed, n, rng.FEATURES).standard_normal(
            (cfg.batch_size, cfg.dim)
        )
        t = shared if shared is not None else true_model(n)
        y = X @ t
        if not cfg.homogeneous and cfg.noise_var > 0:
            y = y + math.sqrt(cfg.noise_var) * rng.substream(
                cfg.seed, n, rng.NOISE
            ).standard_normal(cfg.batch_size)
        datasets.append(LinearDataset(X=X, y=y))
    return datasets


def linreg_loss(theta, ds: LinearDataset) -> float:
    """Mean squared residual (1/D) * ||X theta - y||^2."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (ds.dim,):
        raise ValueError("theta length does not match dataset dimension")
    r = ds.X @ theta - ds.y
    return float(r @ r) / ds.n_points


def linreg_gradient(theta, ds: LinearDataset) -> np.ndarray:
    """Exact gradient of linreg_loss: (2/D) * X^T (X theta - y)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (ds.dim,):
        raise ValueError("theta length does not match dataset dimension")
    return (2.0 / ds.n_points) * (ds.X.T @ (ds.X @ theta - ds.y))


def global_optimum(datasets: list[LinearDataset]) -> np.ndarray:
    """Least-squares minimizer of the pooled problem via the normal equations.

    Solves (sum X_n^T X_n) theta = sum X_n^T y_n by Cholesky, falling back to
    column-pivoted QR if the Gram matrix is not numerically positive
    definite. Raises LinAlgError with a condition estimate if the residual
    check fails.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    dim = datasets[0].dim
    A = np.zeros((dim, dim))
    b = np.zeros(dim)
    for ds in datasets:
        if ds.dim != dim:
            raise ValueError("datasets disagree on dimension")
        A += ds.X.T @ ds.X
        b += ds.X.T @ ds.y
    def _singular(detail: str):
        cond = np.linalg.cond(A)
        return np.linalg.LinAlgError(
            f"normal equations ill-conditioned ({detail}), condition estimate {cond:.3e}"
        )

    try:
        c, low = scipy.linalg.cho_factor(A)
        theta = scipy.linalg.cho_solve((c, low), b)
    except scipy.linalg.LinAlgError:
        # Semi-definite Gram matrix; pivoted QR still yields a solution
        # when one exists.
        try:
            q, r, piv = scipy.linalg.qr(A, pivoting=True)
            theta = np.zeros(dim)
            theta[piv] = scipy.linalg.solve_triangular(r, q.T @ b)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise _singular(str(exc)) from exc
    residual = np.linalg.norm(A @ theta - b)
    if not np.isfinite(residual) or residual > 1e-8 * max(np.linalg.norm(b), 1.0):
        raise _singular(f"residual {residual:.3e}")
    return theta


def _sigmoid_neg(z: float) -> float:
    """sigmoid(-z), stable for large |z| (features here reach magnitude 100)."""
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def logistic_loss(theta, x) -> float:
    """log(1 + exp(-<theta, x>)) for a single positive-labelled point."""
    z = float(np.dot(theta, x))
    if z >= 0:
        return float(np.log1p(np.exp(-z)))
    return float(-z + np.log1p(np.exp(z)))


def logistic_gradient(theta, x) -> np.ndarray:
    """Gradient of logistic_loss: -sigmoid(-<theta, x>) * x."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if theta.shape != x.shape:
        raise ValueError("theta and x must have matching lengths")
    z = float(np.dot(theta, x))
    return -_sigmoid_neg(z) * x


def toy_features() -> list[np.ndarray]:
    """The two single-point logistic workers: [100, 1] and [-100, 1]."""
    return [np.array([100.0, 1.0]), np.array([-100.0, 1.0])]


# Dataset files: header line "J,D", then D rows of X with J comma-separated
# values, then one row with the D labels. Floats use repr precision so a
# round trip is bit-exact.
def save_dataset(path: str | Path, ds: LinearDataset) -> None:
    lines = [f"{ds.dim},{ds.n_points}"]
    for row in ds.X:
        lines.append(",".join(f"{v:.17g}" for v in row))
    lines.append(",".join(f"{v:.17g}" for v in ds.y))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> LinearDataset:
    lines = Path(path).read_text().strip().split("\n")
    dim, n_points = (int(v) for v in lines[0].split(","))
    if len(lines) != n_points + 2:
        raise ValueError(f"expected {n_points + 2} lines in {path}, got {len(lines)}")
    X = np.array([[float(v) for v in line.split(",")] for line in lines[1 : n_points + 1]])
    y = np.array([float(v) for v in lines[n_points + 1].split(",")])
    if X.shape != (n_points, dim):
        raise ValueError(f"malformed dataset file {path}")
    return LinearDataset(X=X, y=y)
