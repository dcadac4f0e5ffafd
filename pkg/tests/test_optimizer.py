import numpy as np
import pytest

from bhtsne import TsneConfig, optimizer
from bhtsne.affinity import SparseAffinities, exaggerate, joint_affinities
from bhtsne.core import DivergenceError, Embedding, SparseMatrix
from bhtsne.forces import kl_divergence
from bhtsne.knn import knn_exact
from bhtsne.optimizer import TrainState, initialize, kl_schedule, run, step

from conftest import blobs


def pair_affinities():
    return SparseAffinities(SparseMatrix.from_dense(np.array([[0.0, 0.5], [0.5, 0.0]])))


def test_initialize_is_deterministic():
    a = initialize(500, 7)
    b = initialize(500, 7)
    assert np.array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, initialize(500, 8).coords)
    assert np.all(a.velocity == 0) and np.all(a.gains == 1)


def test_initialize_statistics():
    e = initialize(10_000, 3, dtype=np.float64)
    sigma = 1e-4
    assert np.all(np.abs(e.coords.mean(axis=0)) <= 3 * sigma / np.sqrt(2 * 10_000))
    assert e.coords.std() == pytest.approx(sigma, rel=0.05)


def test_initialize_needs_two_points():
    with pytest.raises(ValueError):
        initialize(1, 0)


def test_matched_pair_is_a_fixed_point():
    coords = np.array([[-1.0, 0.5], [1.0, -0.5]])
    state = TrainState(0, Embedding(coords.copy()))
    cfg = TsneConfig(perplexity=1, k_neighbors=1)
    step(state, pair_affinities(), cfg)
    np.testing.assert_allclose(state.embedding.coords, coords, atol=1e-12)
    assert np.all(state.embedding.velocity == 0)
    assert state.iter == 1


def test_step_recentres(rng):
    x, _ = blobs(300, 5, 3, seed=2)
    P = joint_affinities(knn_exact(x, 30), 10.0)
    state = TrainState(0, Embedding(rng.normal(size=(300, 2)).astype(np.float32) + 5))
    for _ in range(3):
        step(state, P, TsneConfig())
        assert np.all(np.abs(state.embedding.coords.mean(axis=0, dtype=np.float64)) <= 1e-6)
    assert np.all(state.embedding.gains > 0)


def test_one_small_step_does_not_raise_objective():
    x, _ = blobs(1000, 10, 4, seed=4)
    P = exaggerate(joint_affinities(knn_exact(x, 90), 30.0, dtype=np.float64), 12.0)
    cfg = TsneConfig(learning_rate=10.0, dtype="float64")
    state = TrainState(0, initialize(1000, 42, np.float64))
    before = kl_divergence(P, state.embedding.coords)
    step(state, P, cfg)
    after = kl_divergence(P, state.embedding.coords)
    assert after <= before


def test_divergence_reports_iteration():
    x, _ = blobs(100, 4, 2, seed=0)
    P = joint_affinities(knn_exact(x, 20), 5.0)
    state = TrainState(4, initialize(100, 0))
    with pytest.raises(DivergenceError) as info:
        step(state, P, TsneConfig(learning_rate=np.inf))
    assert info.value.iteration == 5


def test_two_points_separate():
    res = run(np.array([[0.0, 0.0], [1.0, 1.0]]), TsneConfig(max_iters=100, verbose=False))
    assert np.linalg.norm(res.coords[0] - res.coords[1]) > 0


def test_kl_schedule():
    cfg = TsneConfig(max_iters=1000, exaggeration_iters=250)
    small = kl_schedule(1000, cfg)
    assert 50 in small and 300 in small and 1000 in small and 75 not in small
    large = kl_schedule(5000, cfg)
    assert sorted(large) == [250, 300, 500, 750, 1000]


def test_run_is_deterministic_and_descends():
    x, labels = blobs(600, 20, 3, seed=9)
    cfg = TsneConfig(perplexity=20, max_iters=400, verbose=False, threads=1)
    a = run(x, cfg)
    b = run(x, cfg)
    assert np.array_equal(a.coords, b.coords)
    history = dict(a.kl_history)
    assert history[400] < history[300]
    assert a.kl_kind == "exact"
    assert set(a.timings) >= {"knn", "affinity", "tree", "repulsive", "pq", "attractive", "update"}
    assert np.abs(a.coords).max() < 1e6


def test_stage_errors_name_the_stage():
    with pytest.raises(optimizer.StageError, match="input"):
        run(np.array([[0.0, np.nan], [1.0, 1.0]]), TsneConfig(verbose=False))


def test_precomputed_affinities_skip_knn():
    x, _ = blobs(200, 6, 2, seed=1)
    P = joint_affinities(knn_exact(x, 40), 10.0)
    res = run(config=TsneConfig(max_iters=60, verbose=False), affinities=P)
    assert "knn" not in res.timings
    assert res.coords.shape == (200, 2)


def test_progress_lines(capsys):
    x, _ = blobs(120, 4, 2, seed=3)
    run(x, TsneConfig(perplexity=10, max_iters=100, exaggeration_iters=20, verbose=True))
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 3  # 50, 70, 100
    assert all(line.startswith("iter=") and "max_grad=" in line and "elapsed_ms=" in line
               for line in lines)


def test_min_grad_norm_stops_early():
    x, _ = blobs(150, 4, 2, seed=3)
    res = run(x, TsneConfig(perplexity=10, max_iters=1000, exaggeration_iters=10,
                            min_grad_norm=1e9, verbose=False))
    assert res.iterations == 11
    assert res.kl_history[-1][0] == 11
