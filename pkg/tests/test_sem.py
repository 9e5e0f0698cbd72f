import numpy as np
import pytest
from scipy import stats

from casper.graph import GroundTruthDag, generate_er
from casper.sem import (
    Dataset,
    LinearSemSpec,
    NonlinearSemSpec,
    NumericalError,
    ParseError,
    _cholesky_with_jitter,
    load_dataset,
    rbf_kernel,
    sample_linear_weights,
    save_dataset,
    simulate_linear,
    simulate_nonlinear_gp,
)

CHAIN = GroundTruthDag(np.array([[0, 1], [0, 0]]), [0, 1])


def chain_spec(coef=1.5, mean=0.0):
    return LinearSemSpec(CHAIN, np.array([[0.0, coef], [0.0, 0.0]]), mean, 1.0)


def test_weights_empty_dag():
    dag = GroundTruthDag(np.zeros((4, 4), dtype=int), np.arange(4))
    assert np.all(sample_linear_weights(dag, 0).coefficients == 0)


def test_weights_magnitude_distribution():
    dag = GroundTruthDag(np.triu(np.ones((142, 142), dtype=int), k=1), np.arange(142))
    C = sample_linear_weights(dag, 1).coefficients
    mags = np.abs(C[dag.adjacency == 1])[:10_000]
    assert mags.size == 10_000
    assert 1.22 <= mags.mean() <= 1.28
    assert mags.min() >= 0.5 and mags.max() <= 2.0
    assert np.all(C[dag.adjacency == 0] == 0)
    assert 0.45 < (C[dag.adjacency == 1] > 0).mean() < 0.55


def test_linear_pure_noise_moments():
    dag = GroundTruthDag(np.zeros((3, 3), dtype=int), np.arange(3))
    X = simulate_linear(LinearSemSpec(dag, np.zeros((3, 3))), 50_000, 0).values
    assert np.all(np.abs(X.mean(axis=0)) <= 0.02)
    assert np.all((X.var(axis=0) >= 0.97) & (X.var(axis=0) <= 1.03))


def test_linear_regression_recovers_coefficient():
    X = simulate_linear(chain_spec(), 10_000, 1).values
    slope = np.polyfit(X[:, 0], X[:, 1], 1)[0]
    assert 1.45 <= slope <= 1.55


def test_linear_shape_and_determinism():
    spec = sample_linear_weights(generate_er(10, 2, 3), 4)
    a, b = simulate_linear(spec, 2000, 5), simulate_linear(spec, 2000, 5)
    assert (a.n, a.d) == (2000, 10)
    assert a.values.tobytes() == b.values.tobytes()


def test_linear_rejects_cycle_and_bad_n():
    dag = GroundTruthDag(np.zeros((2, 2), dtype=int), [0, 1])
    with pytest.raises(ValueError):
        simulate_linear(LinearSemSpec(dag, np.array([[0, 1.0], [1.0, 0]])), 10, 0)
    with pytest.raises(ValueError):
        simulate_linear(chain_spec(), 0, 0)


def test_linear_population_covariance():
    rng = np.random.default_rng(6)
    for k in range(3):
        spec = sample_linear_weights(generate_er(5, 1, rng), rng)
        C = spec.coefficients
        X = simulate_linear(spec, 50_000, k).values
        inv = np.linalg.inv(np.eye(5) - C)
        sigma = inv.T @ inv
        emp = np.cov(X, rowvar=False)
        assert np.abs(emp - sigma).max() <= 0.05 * max(1.0, np.abs(sigma).max())


def test_noise_mean_shifts_roots():
    X = simulate_linear(chain_spec(mean=0.6), 20_000, 2).values
    assert X[:, 0].mean() == pytest.approx(0.6, abs=0.03)
    assert X[:, 1].mean() == pytest.approx(0.6 * 2.5, abs=0.06)


def test_rbf_kernel_values():
    P = np.array([[0.0], [1.0], [3.0]])
    K = rbf_kernel(P, 1.0)
    assert K[0, 1] == pytest.approx(np.exp(-0.5))
    assert K[0, 2] == pytest.approx(np.exp(-4.5))
    np.testing.assert_allclose(np.diag(K), 1.0)


def test_gp_root_is_noise():
    X = simulate_nonlinear_gp(NonlinearSemSpec(CHAIN, 1.0, 0.0, 1.0), 5000, 7).values
    assert stats.kstest(X[:, 0], "norm").pvalue > 0.01
    assert X[:, 1].var() > 1.0


def test_gp_deterministic():
    spec = NonlinearSemSpec(CHAIN)
    a, b = simulate_nonlinear_gp(spec, 300, 8), simulate_nonlinear_gp(spec, 300, 8)
    assert a.values.tobytes() == b.values.tobytes()


def test_gp_limits():
    with pytest.raises(ValueError):
        simulate_nonlinear_gp(NonlinearSemSpec(CHAIN), 10_001, 0)
    with pytest.raises(ValueError):
        NonlinearSemSpec(CHAIN, kernel_bandwidth=0.0)


def test_jitter_escalation():
    # rank one with a negative eigenvalue of -1e-5: 1e-6 fails, 1e-4 succeeds
    K = np.ones((3, 3)) - 1e-5 * np.eye(3)
    L = _cholesky_with_jitter(K)
    assert np.allclose(L @ L.T, K, atol=2e-4)
    with pytest.raises(NumericalError):
        _cholesky_with_jitter(np.ones((3, 3)) - 1e-2 * np.eye(3))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), ("a", "a"))
    assert Dataset(np.zeros((2, 3))).names == ("X1", "X2", "X3")


def test_row_permutation_leaves_statistics_unchanged():
    X = simulate_linear(chain_spec(), 500, 9).values
    perm = np.random.default_rng(0).permutation(500)
    np.testing.assert_allclose(np.cov(X[perm], rowvar=False), np.cov(X, rowvar=False), rtol=1e-12)


def test_csv_roundtrip(tmp_path):
    data = simulate_linear(chain_spec(), 50, 10)
    save_dataset(tmp_path / "x.csv", data)
    back = load_dataset(tmp_path / "x.csv")
    assert back.names == data.names
    assert back.values.tobytes() == data.values.tobytes()
    std = load_dataset(tmp_path / "x.csv", standardize=True).values
    np.testing.assert_allclose(std.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(std.std(axis=0), 1, atol=1e-12)


@pytest.mark.parametrize(
    "body, lineno",
    [("a,b\n1,2\n3\n", 3), ("a,b\n1,2\n3,x\n", 3), ("a,b\n1,2\n4,5\n6,7,8\n", 4)],
)
def test_parse_errors_report_line(tmp_path, body, lineno):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ParseError) as info:
        load_dataset(path)
    assert info.value.lineno == lineno
