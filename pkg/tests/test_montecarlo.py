import csv

import numpy as np
import pytest

from kernelfactors.data_ingest import standardize_array
from kernelfactors.factors import kernel_factors, pca_factors
from kernelfactors.kernels import KernelSpec, center_gram, gram_matrix
from kernelfactors.montecarlo import (
    FactorDgpSpec,
    concentration_experiment,
    consistency_experiment,
    make_rng,
    simulate_factor_model,
    simulate_forecast_panel,
    spawn_rngs,
    top_direction_distance,
    trace_r2,
    write_rows,
)


def test_factors_are_orthonormal():
    X, F = simulate_factor_model(FactorDgpSpec(200, 200, 3))
    assert X.shape == (200, 200) and F.shape == (200, 3)
    assert np.abs(F.T @ F / 200 - np.eye(3)).max() <= 1e-10


def test_noiseless_linear_panel_has_rank_r():
    X, _ = simulate_factor_model(FactorDgpSpec(40, 25, 4, noise_scale=0.0))
    s = np.linalg.svd(X, compute_uv=False)
    assert s[3] > 1e-6 * s[0]
    assert s[4] <= 1e-10 * s[0]


def test_simulation_is_deterministic_per_seed():
    a = simulate_factor_model(FactorDgpSpec(30, 10, 2, seed=5, link="sigmoid_link"))
    b = simulate_factor_model(FactorDgpSpec(30, 10, 2, seed=5, link="sigmoid_link"))
    c = simulate_factor_model(FactorDgpSpec(30, 10, 2, seed=6, link="sigmoid_link"))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_links_apply_to_common_component():
    lin, F = simulate_factor_model(FactorDgpSpec(20, 5, 2, noise_scale=0.0, seed=1))
    sig, _ = simulate_factor_model(FactorDgpSpec(20, 5, 2, noise_scale=0.0, seed=1, link="sigmoid_link"))
    quad, _ = simulate_factor_model(FactorDgpSpec(20, 5, 2, noise_scale=0.0, seed=1, link="quadratic_link"))
    np.testing.assert_allclose(sig, np.tanh(lin))
    np.testing.assert_allclose(quad, lin + 0.5 * lin**2)


def test_persistent_factors_are_autocorrelated():
    _, F = simulate_factor_model(FactorDgpSpec(2000, 5, 1, factor_ar=0.8))
    assert np.corrcoef(F[1:, 0], F[:-1, 0])[0, 1] == pytest.approx(0.8, abs=0.05)


def test_spec_validation():
    with pytest.raises(ValueError, match="r must lie"):
        FactorDgpSpec(10, 3, 4)
    with pytest.raises(ValueError, match="unknown link"):
        FactorDgpSpec(10, 5, 1, link="cubic")
    with pytest.raises(ValueError):
        FactorDgpSpec(10, 5, 1, loading_scale=0.0)
    with pytest.raises(ValueError):
        FactorDgpSpec(10, 5, 1, factor_ar=1.0)


def test_spawned_streams_are_reproducible_and_distinct():
    a = [g.standard_normal() for g in spawn_rngs(3, 4)]
    b = [g.standard_normal() for g in spawn_rngs(3, 4)]
    assert a == b and len(set(a)) == 4
    assert make_rng(1).integers(1 << 30) == make_rng(1).integers(1 << 30)


def test_trace_r2_of_exact_rotation_is_one():
    rng = make_rng(0)
    F = rng.standard_normal((100, 3))
    R = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    res = trace_r2(F @ R, F)
    assert abs(res.trace_r2 - 1.0) <= 1e-10
    np.testing.assert_allclose(res.rotation, np.linalg.inv(R), atol=1e-10)


def test_trace_r2_is_rotation_invariant():
    rng = make_rng(1)
    F = rng.standard_normal((80, 3))
    G = F + rng.standard_normal((80, 3))
    R = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    assert trace_r2(G @ R, F).trace_r2 == pytest.approx(trace_r2(G, F).trace_r2, abs=1e-10)


def test_trace_r2_of_unrelated_factors_is_small():
    values = []
    for g in spawn_rngs(2, 100):
        F = g.standard_normal((200, 3))
        values.append(trace_r2(g.standard_normal((200, 3)), F).trace_r2)
    assert np.mean(values) < 0.1
    assert np.mean(values) == pytest.approx(3 / 200, abs=0.01)


def test_trace_r2_rejects_rank_deficiency():
    F = make_rng(3).standard_normal((20, 2))
    with pytest.raises(ValueError, match="rank deficient"):
        trace_r2(np.column_stack([F[:, 0], F[:, 0]]), F)
    with pytest.raises(ValueError, match="rows"):
        trace_r2(F[:10], F)


def test_linear_kernel_factors_recover_noiseless_factors():
    X, F = simulate_factor_model(FactorDgpSpec(60, 30, 3, noise_scale=0.0, seed=4))
    Z, _, _ = standardize_array(X)
    K = center_gram(gram_matrix(KernelSpec.linear(), Z))
    assert abs(trace_r2(kernel_factors(K, 3).factors, F).trace_r2 - 1.0) <= 1e-8


def test_consistency_experiment_rows():
    rows = consistency_experiment([(40, 30), (80, 60)], replications=3, seed=1)
    assert [(r["T"], r["N"]) for r in rows] == [(40, 30), (80, 60)]
    assert all(0.0 <= r["mean_trace_r2"] <= 1.0 + 1e-10 for r in rows)
    assert rows == consistency_experiment([(40, 30), (80, 60)], replications=3, seed=1)
    with pytest.raises(ValueError):
        consistency_experiment([])


def test_concentration_same_sample_distance_is_zero():
    sample = make_rng(5).uniform(-1, 1, (60, 2))
    assert top_direction_distance(sample, sample, KernelSpec.rbf(1.0)) <= 1e-7


def test_concentration_distance_is_bounded():
    rng = make_rng(6)
    d = top_direction_distance(rng.uniform(-1, 1, (40, 2)), rng.uniform(-1, 1, (80, 2)), KernelSpec.rbf(1.0))
    assert 0.0 <= d <= 1.0


def test_concentration_single_replication_is_deterministic():
    a = concentration_experiment([20, 40], replications=1, seed=7)
    b = concentration_experiment([20, 40], replications=1, seed=7)
    assert a == b
    assert a[0]["t_ref"] == 160
    with pytest.raises(ValueError):
        concentration_experiment([20], replications=0)


def test_forecast_panel_alignment():
    spec = FactorDgpSpec(50, 8, 3, seed=2)
    panel, F = simulate_forecast_panel(spec, 4, target_noise=0.0, square_weight=0.5, interaction_weight=2.0)
    y = panel.column("y")
    b = make_rng([2, 1]).standard_normal(3)
    expected = F @ b + 0.5 * (F[:, 0] ** 2 - 1) + 2.0 * np.prod(F, axis=1)
    np.testing.assert_allclose(y[4:], expected[:-4], atol=1e-12)
    assert panel.names[-1] == "y" and panel.shape == (50, 9)
    with pytest.raises(ValueError):
        simulate_forecast_panel(FactorDgpSpec(50, 8, 2), 1, interaction_weight=1.0)
    with pytest.raises(ValueError):
        simulate_forecast_panel(spec, 0)


def test_write_rows_round_trip(tmp_path):
    rows = [{"T": 50, "value": 0.1}, {"T": 100, "value": 1 / 3}]
    write_rows(rows, tmp_path / "out.csv")
    with (tmp_path / "out.csv").open() as fh:
        back = list(csv.DictReader(fh))
    assert back[1]["T"] == "100" and float(back[1]["value"]) == 1 / 3
    with pytest.raises(ValueError):
        write_rows([], tmp_path / "x.csv")


def test_pca_consistency_improves_with_size():
    small = consistency_experiment([(30, 30)], replications=5, seed=3)[0]["mean_trace_r2"]
    large = consistency_experiment([(150, 150)], replications=5, seed=3)[0]["mean_trace_r2"]
    assert large > small
    X, F = simulate_factor_model(FactorDgpSpec(150, 150, 3, seed=9))
    assert trace_r2(pca_factors(standardize_array(X)[0], 3).factors, F).trace_r2 > 0.9
