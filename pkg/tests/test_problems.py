import math

import numpy as np
import pytest

from sparsegrad.problems import (
    GenConfig,
    LinearDataset,
    generate_datasets,
    global_optimum,
    linreg_gradient,
    linreg_loss,
    load_dataset,
    logistic_gradient,
    logistic_loss,
    save_dataset,
    toy_features,
)


def naive_loss(theta, ds):
    """Independent oracle: plain python sum of squared residuals."""
    total = 0.0
    for i in range(ds.n_points):
        r = sum(ds.X[i, j] * theta[j] for j in range(ds.dim)) - ds.y[i]
        total += r * r
    return total / ds.n_points


def central_difference(f, theta, step=1e-6):
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[j] += step
        dn[j] -= step
        grad[j] = (f(up) - f(dn)) / (2 * step)
    return grad


def gd_oracle(datasets, eta=0.1, steps=100_000):
    """Independent optimizer: plain full-gradient descent to convergence."""
    dim = datasets[0].dim
    theta = np.zeros(dim)
    for _ in range(steps):
        g = np.zeros(dim)
        for ds in datasets:
            g += linreg_gradient(theta, ds)
        theta -= (eta / len(datasets)) * g
    return theta


class TestGeneration:
    def test_seeded_determinism(self):
        cfg = GenConfig(n_workers=3, dim=5, batch_size=8, mean_var=2.0, noise_var=0.3, seed=11)
        a = generate_datasets(cfg)
        b = generate_datasets(cfg)
        for da, db in zip(a, b):
            assert np.array_equal(da.X, db.X)
            assert np.array_equal(da.y, db.y)

    def test_workers_get_distinct_data(self):
        cfg = GenConfig(n_workers=2, dim=4, batch_size=6, seed=0)
        a, b = generate_datasets(cfg)
        assert not np.array_equal(a.X, b.X)

    def test_homogeneous_shares_the_true_model(self):
        cfg = GenConfig(
            n_workers=4, dim=6, batch_size=30, mean_var=3.0, model_var=2.0,
            noise_var=0.7, homogeneous=True, seed=5,
        )
        datasets = generate_datasets(cfg)
        # noise-free shared model: every per-worker least-squares solution
        # recovers the same vector, which is also the pooled optimum
        locals_ = [global_optimum([ds]) for ds in datasets]
        pooled = global_optimum(datasets)
        for sol in locals_:
            assert np.linalg.norm(sol - pooled) < 1e-8

    def test_degenerate_variances_give_constant_model(self):
        cfg = GenConfig(
            n_workers=2, dim=5, batch_size=25, model_mean=1.5,
            mean_var=0.0, model_var=0.0, noise_var=0.0, seed=2,
        )
        for ds in generate_datasets(cfg):
            sol = global_optimum([ds])
            assert np.allclose(sol, 1.5, atol=1e-8)

    def test_features_are_standard_normal(self):
        cfg = GenConfig(n_workers=1, dim=50, batch_size=400, seed=3)
        (ds,) = generate_datasets(cfg)
        assert abs(ds.X.mean()) < 0.02
        assert abs(ds.X.std() - 1.0) < 0.02

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            GenConfig(n_workers=0, dim=3, batch_size=5)
        with pytest.raises(ValueError):
            GenConfig(n_workers=1, dim=3, batch_size=5, mean_var=-1.0)


class TestLinreg:
    def test_loss_zero_at_exact_model(self):
        cfg = GenConfig(n_workers=1, dim=4, batch_size=12, noise_var=0.0,
                        homogeneous=True, seed=7)
        (ds,) = generate_datasets(cfg)
        t = global_optimum([ds])
        assert linreg_loss(t, ds) < 1e-16

    def test_loss_identity_design(self):
        dim = 5
        ds = LinearDataset(X=np.eye(dim), y=np.zeros(dim))
        e1 = np.zeros(dim)
        e1[0] = 1.0
        assert linreg_loss(e1, ds) == pytest.approx(1.0 / dim)

    def test_loss_matches_naive_sum(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            ds = LinearDataset(X=rng.standard_normal((7, 3)), y=rng.standard_normal(7))
            theta = rng.standard_normal(3)
            assert linreg_loss(theta, ds) == pytest.approx(naive_loss(theta, ds), abs=1e-12)

    def test_gradient_identity_design(self):
        dim = 6
        ds = LinearDataset(X=np.eye(dim), y=np.zeros(dim))
        theta = np.arange(1.0, dim + 1)
        assert np.allclose(linreg_gradient(theta, ds), (2.0 / dim) * theta)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        ds = LinearDataset(X=rng.standard_normal((20, 5)), y=rng.standard_normal(20))
        for _ in range(100):
            theta = rng.standard_normal(5)
            approx = central_difference(lambda th: linreg_loss(th, ds), theta)
            exact = linreg_gradient(theta, ds)
            denom = max(np.linalg.norm(exact), 1.0)
            assert np.linalg.norm(approx - exact) / denom < 1e-5

    def test_dimension_mismatch(self):
        ds = LinearDataset(X=np.eye(3), y=np.zeros(3))
        with pytest.raises(ValueError):
            linreg_loss(np.zeros(2), ds)
        with pytest.raises(ValueError):
            linreg_gradient(np.zeros(4), ds)


class TestGlobalOptimum:
    def test_identity_single_worker(self):
        y = np.array([1.0, -2.0, 0.5])
        ds = LinearDataset(X=np.eye(3), y=y)
        assert np.allclose(global_optimum([ds]), y, atol=1e-12)

    def test_first_order_optimality(self):
        cfg = GenConfig(n_workers=3, dim=8, batch_size=40, mean_var=2.0,
                        noise_var=0.5, seed=23)
        datasets = generate_datasets(cfg)
        star = global_optimum(datasets)
        mean_grad = np.mean([linreg_gradient(star, ds) for ds in datasets], axis=0)
        assert np.linalg.norm(mean_grad) < 1e-8

    def test_matches_gradient_descent_oracle(self):
        cfg = GenConfig(n_workers=2, dim=6, batch_size=25, mean_var=1.0,
                        noise_var=0.4, seed=29)
        datasets = generate_datasets(cfg)
        star = global_optimum(datasets)
        iterate = gd_oracle(datasets)
        assert np.linalg.norm(star - iterate) < 1e-6

    def test_singular_system_raises_with_condition(self):
        X = np.zeros((4, 3))
        X[:, 0] = [1.0, 2.0, 3.0, 4.0]  # columns 1 and 2 identically zero
        ds = LinearDataset(X=X, y=np.ones(4))
        with pytest.raises(np.linalg.LinAlgError, match="condition"):
            global_optimum([ds])

    def test_residual_bound(self):
        cfg = GenConfig(n_workers=4, dim=20, batch_size=60, mean_var=4.0,
                        noise_var=1.0, seed=31)
        datasets = generate_datasets(cfg)
        star = global_optimum(datasets)
        A = sum(ds.X.T @ ds.X for ds in datasets)
        b = sum(ds.X.T @ ds.y for ds in datasets)
        assert np.linalg.norm(A @ star - b) <= 1e-8 * np.linalg.norm(b)


class TestLogistic:
    def test_zero_model(self):
        x = np.array([2.0, -1.0])
        assert np.allclose(logistic_gradient(np.zeros(2), x), -0.5 * x)

    def test_saturation(self):
        x = np.array([1.0, 0.0])
        g = logistic_gradient(np.array([1000.0, 0.0]), x)
        assert np.linalg.norm(g) < 1e-300

    def test_large_negative_inner_product_is_stable(self):
        x = np.array([100.0, 1.0])
        g = logistic_gradient(np.array([-10.0, 0.0]), x)
        assert np.all(np.isfinite(g))
        assert np.allclose(g, -x, rtol=1e-12)  # sigmoid(-z) -> 1

    def test_toy_start_value(self):
        g = logistic_gradient(np.array([0.0, 1.0]), np.array([100.0, 1.0]))
        factor = 1.0 / (1.0 + math.e)
        assert np.allclose(g, -factor * np.array([100.0, 1.0]), rtol=1e-14)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            x = rng.standard_normal(3)
            theta = rng.standard_normal(3)
            approx = central_difference(lambda th: logistic_loss(th, x), theta)
            exact = logistic_gradient(theta, x)
            denom = max(np.linalg.norm(exact), 1.0)
            assert np.linalg.norm(approx - exact) / denom < 1e-5

    def test_loss_stable_both_signs(self):
        x = np.array([100.0, 1.0])
        assert logistic_loss(np.array([10.0, 0.0]), x) == pytest.approx(0.0, abs=1e-300)
        big = logistic_loss(np.array([-10.0, 0.0]), x)
        assert big == pytest.approx(1000.0, rel=1e-10)

    def test_toy_features(self):
        x1, x2 = toy_features()
        assert x1.tolist() == [100.0, 1.0]
        assert x2.tolist() == [-100.0, 1.0]


class TestDatasetFiles:
    def test_roundtrip_bitwise(self, tmp_path):
        cfg = GenConfig(n_workers=1, dim=7, batch_size=9, mean_var=2.0,
                        noise_var=0.25, seed=41)
        (ds,) = generate_datasets(cfg)
        path = tmp_path / "worker.csv"
        save_dataset(path, ds)
        back = load_dataset(path)
        assert np.array_equal(back.X, ds.X)
        assert np.array_equal(back.y, ds.y)

    def test_header_shape(self, tmp_path):
        ds = LinearDataset(X=np.eye(2), y=np.array([1.0, 2.0]))
        path = tmp_path / "d.csv"
        save_dataset(path, ds)
        assert path.read_text().splitlines()[0] == "2,2"

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("3,2\n1,2,3\n")
        with pytest.raises(ValueError):
            load_dataset(path)
