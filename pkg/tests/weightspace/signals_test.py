import numpy as np
import pytest

from weightspace.errors import ConfigError
from weightspace.signals import (
    BACKGROUND,
    CENTER_RANGE,
    FOREGROUND,
    MAX_SCALE,
    MIN_SCALE,
    SCALE_BANDS,
    SIGNAL_KINDS,
    make_signal,
    sample_grid,
)


def test_sample_grid_is_row_major():
    grid = sample_grid(3)
    assert grid.shape == (9, 2)
    np.testing.assert_array_equal(grid[0], [-1.0, -1.0])
    np.testing.assert_array_equal(grid[1], [-1.0, 0.0])
    np.testing.assert_array_equal(grid[-1], [1.0, 1.0])
    assert sample_grid(4, dim=3).shape == (64, 3)


def test_sample_grid_rejects_tiny_resolution():
    with pytest.raises(ConfigError) as err:
        sample_grid(1)
    assert err.value.key == "resolution"


@pytest.mark.parametrize("kind", SIGNAL_KINDS)
def test_signals_are_deterministic_and_bounded(kind):
    a = make_signal(kind, 24, seed=11)
    b = make_signal(kind, 24, seed=11)
    np.testing.assert_array_equal(a.targets, b.targets)
    assert a.params == b.params
    assert a.class_id == SIGNAL_KINDS.index(kind)
    assert a.targets.shape == (24 * 24, 1)
    assert a.targets.min() >= BACKGROUND
    assert a.targets.max() <= FOREGROUND
    # every shape has both foreground and background pixels
    assert (a.targets > 0.5).any() and (a.targets < -0.5).any()


def test_seeds_change_the_shape():
    a = make_signal("disk", 16, seed=0)
    b = make_signal("disk", 16, seed=1)
    assert a.params.center != b.params.center
    assert not np.array_equal(a.targets, b.targets)


def test_overrides_are_clamped():
    signal = make_signal("ring", 16, seed=0, center=(5.0, -5.0), scale=9.0, angle=0.0)
    assert signal.params.center == (CENTER_RANGE, -CENTER_RANGE)
    assert signal.params.scale == MAX_SCALE
    assert signal.params.angle == 0.0


def test_unknown_kind():
    with pytest.raises(ConfigError) as err:
        make_signal("triangle", 16, seed=0)
    assert err.value.key == "kind"


def test_scales_stay_in_range():
    for kind in SIGNAL_KINDS:
        low, high = SCALE_BANDS[kind]
        assert MIN_SCALE <= low < high <= MAX_SCALE
        for seed in range(20):
            assert low <= make_signal(kind, 8, seed).params.scale <= high


def test_smallest_disk_still_has_foreground():
    signal = make_signal("disk", 28, seed=0, scale=0.0)
    assert signal.params.scale == MIN_SCALE
    assert np.mean(signal.targets > 0) >= 0.05


def test_checker_is_balanced():
    for seed in range(50):
        signal = make_signal("checker", 28, seed)
        assert abs(float(signal.targets.mean())) <= 0.1
        assert signal.params.center == (0.0, 0.0)


def test_classes_are_separable_by_nearest_centroid():
    resolution = 28

    def images(seeds):
        return np.stack(
            [
                np.stack([make_signal(k, resolution, s).targets[:, 0] for s in seeds])
                for k in SIGNAL_KINDS
            ]
        )

    train = images(range(100))
    test = images(range(10_000, 10_050))
    centroids = train.mean(axis=1)
    flat = test.reshape(-1, resolution * resolution)
    distances = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    predicted = distances.argmin(axis=1)
    expected = np.repeat(np.arange(len(SIGNAL_KINDS)), 50)
    assert len(flat) == 200
    assert np.mean(predicted == expected) >= 0.95
