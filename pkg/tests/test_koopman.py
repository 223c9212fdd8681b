import numpy as np
import pytest

from koopsoc.errors import ConfigError
from koopsoc.koopman import (
    DataMatrices,
    LinearPredictor,
    TrainingConfig,
    check_pairing,
    collect_data,
    fit_edmd,
    load_data,
    predict,
    prediction_error,
    read_matrix_csv,
    save_data,
    write_matrix_csv,
)
from koopsoc.lift import DictionaryState, lifted_dim
from koopsoc.model import NoiseSpec, SystemModel


def exact_linear_data(rng, n=5, m=2, d=200):
    A0 = rng.standard_normal((n, n)) * 0.3
    B0 = rng.standard_normal((n, m))
    X = rng.standard_normal((n, d))
    U = rng.standard_normal((m, d))
    return A0, B0, DataMatrices(A0 @ X + B0 @ U, X, U, state_dim=n, dictionary="identity")


def lower_triangular_blind_model():
    """Linear plant whose CE lift is exactly affine-linear.

    With a measurement that carries no state information and (numerically)
    zero process noise, the covariance factor evolves as ``L -> A L``; a lower
    triangular ``A`` with positive diagonal keeps that a valid Cholesky factor.
    """
    A = np.array([[0.9, 0.0, 0.0], [0.3, 0.8, 0.0], [-0.2, 0.1, 0.7]])
    B = np.array([[1.0], [0.0], [0.5]])
    return SystemModel(
        3, 1, 1,
        f=lambda x, u: A @ x + B @ u,
        h=lambda x, u: np.array([0.0]),
        jac_f=lambda x, u: A,
        jac_h=lambda x, u: np.zeros((1, 3)),
        process_noise=NoiseSpec(np.zeros(3), 1e-30 * np.eye(3)),
        measurement_noise=NoiseSpec(np.zeros(1), np.eye(1)),
        prior=NoiseSpec(np.zeros(3), np.eye(3), 3.0),
        name="blind",
    )


def test_exact_recovery(rng):
    A0, B0, data = exact_linear_data(rng)
    fit = fit_edmd(data)
    np.testing.assert_allclose(fit.A, A0, atol=1e-8)
    np.testing.assert_allclose(fit.B, B0, atol=1e-8)
    assert fit.residual <= 1e-8
    assert not fit.rank_deficient


def test_duplicated_columns_give_same_fit(rng):
    _, _, data = exact_linear_data(rng)
    noisy = DataMatrices(data.psi_plus + 0.1 * rng.standard_normal(data.psi_plus.shape),
                         data.psi_minus, data.u_data, data.state_dim, "identity")
    dup = DataMatrices(np.hstack([noisy.psi_plus] * 2), np.hstack([noisy.psi_minus] * 2),
                       np.hstack([noisy.u_data] * 2), noisy.state_dim, "identity")
    a, b = fit_edmd(noisy), fit_edmd(dup)
    np.testing.assert_allclose(a.A, b.A, atol=1e-10)
    np.testing.assert_allclose(a.B, b.B, atol=1e-10)


def test_ridge_shrinks_gains(rng):
    _, _, data = exact_linear_data(rng)
    norms = []
    for ridge in (0.0, 1.0, 1e3, 1e6):
        fit = fit_edmd(data, ridge)
        norms.append(np.linalg.norm(np.hstack([fit.A, fit.B])))
    assert all(a > b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-2 * norms[0]


def test_fit_is_first_order_optimal(rng):
    _, _, data = exact_linear_data(rng)
    noisy = DataMatrices(data.psi_plus + 0.2 * rng.standard_normal(data.psi_plus.shape),
                         data.psi_minus, data.u_data, data.state_dim, "identity")
    fit = fit_edmd(noisy)
    Z = np.vstack([noisy.psi_minus, noisy.u_data])
    G = np.hstack([fit.A, fit.B])
    base = np.linalg.norm(noisy.psi_plus - G @ Z)
    assert base == pytest.approx(fit.residual, rel=1e-12)
    for _ in range(100):
        delta = rng.standard_normal(G.shape)
        delta *= 1e-3 / np.linalg.norm(delta)
        assert np.linalg.norm(noisy.psi_plus - (G + delta) @ Z) >= base


def test_rank_deficiency_is_warned_not_raised():
    n, d = 3, 20
    X = np.random.default_rng(0).standard_normal((n, d))
    data = DataMatrices(X, X, np.zeros((1, d)), state_dim=n, dictionary="identity")
    with pytest.warns(RuntimeWarning, match="rank deficient"):
        fit = fit_edmd(data)
    assert fit.rank_deficient
    np.testing.assert_allclose(fit.A, np.eye(n), atol=1e-10)


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        fit_edmd(DataMatrices(np.zeros((3, 5)), np.zeros((3, 4)), np.zeros((1, 4)), 3, "identity"))


def test_predict_identity_and_projection(rng):
    n = 10
    p = LinearPredictor(np.eye(n), np.zeros((n, 1)), np.eye(9, n), "affine", 0.0, 3)
    psi = DictionaryState(rng.standard_normal(n), "affine")
    out = predict(p, psi, [3.0])
    np.testing.assert_array_equal(out.psi, psi.psi)
    np.testing.assert_array_equal(p.C @ out.psi, psi.psi[:9])
    with pytest.raises(ConfigError):
        predict(p, DictionaryState(psi.psi, "monomials2"), [0.0])


def test_multi_step_prediction_matches_simulation(rng):
    A0, B0, data = exact_linear_data(rng)
    fit = fit_edmd(data)
    x = psi = rng.standard_normal(5)
    for _ in range(50):
        u = rng.standard_normal(2)
        x = A0 @ x + B0 @ u
        psi = predict(fit, psi, u)
    np.testing.assert_allclose(psi, x, atol=1e-6)


def test_collect_data_bookkeeping(elu_model):
    cfg = TrainingConfig(num_trajectories=1, steps_per_trajectory=5)
    data = collect_data(elu_model, cfg)
    assert data.psi_minus.shape == (10, 5) and data.psi_plus.shape == (10, 5)
    assert data.u_data.shape == (1, 5)
    np.testing.assert_array_equal(data.psi_minus[:, 1:], data.psi_plus[:, :-1])
    np.testing.assert_array_equal(data.psi_minus[-1], 1.0)


def test_no_pairs_cross_trajectories(elu_model):
    cfg = TrainingConfig(num_trajectories=3, steps_per_trajectory=4)
    data = collect_data(elu_model, cfg)
    assert data.num_samples == 12
    for start in (4, 8):
        assert not np.allclose(data.psi_minus[:, start], data.psi_plus[:, start - 1])


def test_collect_data_is_seeded(elu_model):
    cfg = TrainingConfig(num_trajectories=4, steps_per_trajectory=10, seed=9)
    a, b = collect_data(elu_model, cfg), collect_data(elu_model, cfg)
    np.testing.assert_array_equal(a.psi_plus, b.psi_plus)
    c = collect_data(elu_model, TrainingConfig(num_trajectories=4, steps_per_trajectory=10, seed=10))
    assert not np.array_equal(a.psi_plus, c.psi_plus)


def test_zero_excitation_reports_rank_deficiency():
    model = lower_triangular_blind_model()
    cfg = TrainingConfig(num_trajectories=5, steps_per_trajectory=20,
                         excitation=NoiseSpec(np.zeros(1), 1e-300 * np.eye(1)))
    data = collect_data(model, cfg)
    assert np.abs(data.u_data).max() < 1e-140
    with pytest.warns(RuntimeWarning):
        assert fit_edmd(data).rank_deficient


def test_pairing_invariant_on_default_config(elu_model):
    data = collect_data(elu_model, TrainingConfig())
    assert data.num_samples == 20_000
    assert check_pairing(data, elu_model) == 0


def test_exact_lift_recovers_dynamics_and_predicts():
    model = lower_triangular_blind_model()
    cfg = TrainingConfig(num_trajectories=20, steps_per_trajectory=30)
    fit = fit_edmd(collect_data(model, cfg))
    r_eta = lifted_dim(3)
    np.testing.assert_array_equal(fit.C, np.eye(r_eta, r_eta + 1))
    assert fit.residual <= 1e-8
    curve = prediction_error(fit, model, cfg, horizon=25)
    assert curve[0] == 0.0
    assert curve.max() <= 1e-8


def test_example_prediction_error_is_finite(elu_model, trained_bundle):
    curve = prediction_error(trained_bundle.predictor, elu_model, TrainingConfig(), horizon=20)
    assert curve.shape == (21,) and curve[0] == 0.0
    assert np.all(np.isfinite(curve))


def test_matrix_csv_round_trip(tmp_path, rng):
    M = rng.standard_normal((4, 7))
    write_matrix_csv(M, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "4,7" and len(lines) == 8
    np.testing.assert_array_equal([float(v) for v in lines[1].split(",")], M[:, 0])
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "m.csv"), M)


def test_data_and_predictor_serialization(tmp_path, elu_model):
    data = collect_data(elu_model, TrainingConfig(num_trajectories=2, steps_per_trajectory=15))
    save_data(data, tmp_path / "data")
    back = load_data(tmp_path / "data")
    np.testing.assert_array_equal(back.psi_plus, data.psi_plus)
    np.testing.assert_array_equal(back.u_data, data.u_data)
    assert back.dictionary == "affine" and back.state_dim == 3
    fit = fit_edmd(data)
    again = LinearPredictor.from_dict(fit.to_dict())
    np.testing.assert_array_equal(again.A, fit.A)
    np.testing.assert_array_equal(again.C, fit.C)
    assert again.residual == fit.residual
