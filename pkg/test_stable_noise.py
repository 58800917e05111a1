import math

import numpy as np
import pytest
from scipy import stats

from noise.stable_noise import (CHUNK_STEPS, NoisePath, ReplicaNoise, StableParams, empirical_char_fn,
                                sample_increment, sample_increments, site_key, stable_transform, validate_grid,
                                white_noise_path)


def _stream(seed):
    return np.random.Generator(np.random.Philox(key=seed))


@pytest.mark.parametrize("alpha", [0.9, 1.0, 2.5, float("nan")])
def test_alpha_outside_range_rejected(alpha):
    with pytest.raises(ValueError, match=r"\(1, 2\]"):
        StableParams(alpha)


def test_gaussian_branch_selected_at_two():
    assert StableParams(2.0).is_gaussian
    assert not StableParams(1.5).is_gaussian
    assert StableParams(2.0).char_fn(1.0, 2.0) == pytest.approx(math.exp(-1.0))
    assert StableParams(1.5).char_fn(-2.0, 1.0) == pytest.approx(math.exp(-2.0 ** 1.5))


def test_zero_time_increment_is_zero():
    params = StableParams(1.5)
    assert sample_increment(params, 0.0, _stream(1)) == 0.0
    assert np.all(sample_increments(params, 0.0, 10, _stream(1)) == 0.0)


def test_negative_dt_rejected():
    with pytest.raises(ValueError):
        sample_increment(StableParams(1.5), -0.1, _stream(1))
    with pytest.raises(ValueError):
        sample_increments(StableParams(1.5), -0.1, 5, _stream(1))


def test_gaussian_increments_have_variance_dt():
    draws = sample_increments(StableParams(2.0), 0.25, 200_000, _stream(7))
    assert abs(draws.mean()) < 0.005
    assert draws.var() == pytest.approx(0.25, abs=0.005)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8, 2.0])
def test_characteristic_function_matches_convention(alpha):
    params = StableParams(alpha)
    n = 200_000
    draws = sample_increments(params, 1.0, n, _stream(11))
    for xi in (0.5, 1.0, 2.0):
        assert abs(empirical_char_fn(draws, xi) - params.char_fn(xi)) < 4.0 / math.sqrt(n)


def test_sign_is_symmetric():
    n = 200_000
    draws = sample_increments(StableParams(1.3), 1.0, n, _stream(5))
    assert abs(np.mean(np.sign(draws))) < 4.0 / math.sqrt(n)


def test_empirical_char_fn_edge_cases():
    assert empirical_char_fn([0.0, 0.0, 0.0], 7.0) == 1.0
    assert empirical_char_fn([3.0, -1.5, 100.0], 0.0) == 1.0
    with pytest.raises(ValueError):
        empirical_char_fn([], 1.0)


@pytest.mark.parametrize("alpha", [1.2, 1.7])
def test_law_matches_scipy_levy_stable(alpha):
    draws = sample_increments(StableParams(alpha), 1.0, 20_000, _stream(3))
    reference = stats.levy_stable.rvs(alpha, 0.0, size=20_000, random_state=np.random.default_rng(4))
    assert stats.ks_2samp(draws, reference).statistic < 0.03


@pytest.mark.parametrize("t", [0.25, 4.0, 16.0])
def test_scaling_law(t):
    params = StableParams(1.5)
    stream = _stream(21)
    direct = sample_increments(params, t, 50_000, stream)
    scaled = t ** (1.0 / 1.5) * sample_increments(params, 1.0, 50_000, stream)
    assert stats.ks_2samp(direct, scaled).statistic < 0.02


def test_grid_validation():
    with pytest.raises(ValueError):
        validate_grid([0.0, 0.2, 0.1])
    with pytest.raises(ValueError):
        validate_grid([0.1, 0.2])
    with pytest.raises(ValueError):
        validate_grid([])
    assert validate_grid([0.0]).size == 1


def test_empty_site_set_gives_empty_path():
    path = white_noise_path(StableParams(1.5), 0, np.linspace(0, 1, 11), seed=3)
    assert path.increments.shape == (0, 10)
    assert list(path.csv_rows()) == []


def test_noise_path_is_deterministic_and_read_only():
    grid = np.linspace(0.0, 1.0, 41)
    a = white_noise_path(StableParams(1.5), 3, grid, seed=42)
    b = white_noise_path(StableParams(1.5), 3, grid, seed=42)
    assert np.array_equal(a.increments, b.increments)
    assert a.steps == 40
    with pytest.raises(ValueError):
        a.increments[0, 0] = 1.0


def test_distinct_seeds_give_distinct_paths():
    grid = np.linspace(0.0, 1.0, 11)
    for seed in range(100):
        a = white_noise_path(StableParams(1.5), 2, grid, seed=seed)
        b = white_noise_path(StableParams(1.5), 2, grid, seed=seed + 1000)
        assert not np.array_equal(a.increments, b.increments)


def test_thread_count_does_not_change_values():
    grid = np.linspace(0.0, 2.0, 101)
    sites = [(i, j) for i in range(-2, 3) for j in range(-2, 3)]
    serial = white_noise_path(StableParams(1.8), sites, grid, seed=9, workers=1)
    threaded = white_noise_path(StableParams(1.8), sites, grid, seed=9, workers=4)
    assert np.array_equal(serial.increments, threaded.increments)


def test_replica_values_do_not_depend_on_replica_count():
    dts = np.full(CHUNK_STEPS, 0.01)
    small = ReplicaNoise(StableParams(1.5), 5, [(0,), (1,)], replicas=3).chunk_increments(2, dts)
    large = ReplicaNoise(StableParams(1.5), 5, [(0,), (1,)], replicas=8).chunk_increments(2, dts)
    assert np.array_equal(small, large[:, :3, :])


def test_noise_is_keyed_by_site_coordinates():
    grid = np.linspace(0.0, 1.0, 51)
    inner = white_noise_path(StableParams(1.5), [(0,), (1,)], grid, seed=8)
    outer = white_noise_path(StableParams(1.5), [(-1,), (0,), (1,)], grid, seed=8)
    assert np.array_equal(inner.increments, outer.increments[1:])
    assert site_key((0,)) != site_key((1,))
    assert site_key((0, 1)) != site_key((1, 0))


def test_path_is_replica_zero_of_ensemble_noise():
    grid = np.linspace(0.0, 0.5, 51)
    sites = [(-1,), (0,), (1,)]
    path = white_noise_path(StableParams(1.5), sites, grid, seed=13)
    ensemble = ReplicaNoise(StableParams(1.5), 13, sites, replicas=4).increments(grid)
    assert ensemble.shape == (50, 4, 3)
    assert np.array_equal(path.increments, ensemble[:, 0, :].T)


def test_disabled_noise_is_zero():
    noise = ReplicaNoise(StableParams(1.5), 1, 3, replicas=2, enabled=False)
    assert not np.any(noise.increments(np.linspace(0, 1, 21)))


def test_increments_are_the_transform_of_their_uniform_block():
    grid = np.array([0.0, 0.5, 2.5])
    params = StableParams(1.5)
    noise = ReplicaNoise(params, 4, 1, replicas=1)
    u = noise.uniforms(0, 0)
    assert u.shape == (1, CHUNK_STEPS, 2)
    expected = params.scale(np.diff(grid)) * stable_transform(u[0, :2, 0], u[0, :2, 1], 1.5)
    assert np.allclose(noise.increments(grid)[:, 0, 0], expected, rtol=1e-14, atol=0)


def test_noise_path_csv_rows():
    path = NoisePath(grid=np.array([0.0, 1.0, 2.0]), increments=np.array([[0.5, -0.25]]), seed=0,
                     params=StableParams(2.0), sites=((0,),))
    assert list(path.csv_rows()) == [(0, 0, 0.5), (0, 1, -0.25)]
