import threading

import numpy as np
import pytest

from tests.weightspace.helpers import relu_net, siren_net
from weightspace.align import weight_matching
from weightspace.core import (
    LabeledSample,
    MlpSpec,
    PermutationSequence,
    WeightSpaceVector,
    apply_permutation,
    l2_distance,
    random_permutation,
)
from weightspace.errors import ConfigError, LabelError, ShapeError
from weightspace.mixup import (
    AlignmentMemo,
    MixupConfig,
    aligned_mixup,
    direct_mixup,
    input_average,
    label_smooth,
    mix,
    randomized_mixup,
    sample_lambda,
)
from weightspace.nnrun import TrainConfig, fit_inr, signal_mse
from weightspace.signals import make_signal
from weightspace.verify import func_equiv

SPEC = MlpSpec.siren([2, 8, 8, 1])


def _sample(seed, class_id=0, object_id=None, view_id=0):
    return LabeledSample.one_hot(
        siren_net(SPEC.dims, seed),
        class_id,
        4,
        object_id=seed if object_id is None else object_id,
        view_id=view_id,
    )


def test_sample_lambda_is_uniform_for_alpha_one():
    rng = np.random.default_rng(0)
    draws = np.array([sample_lambda(1.0, rng) for _ in range(10_000)])
    assert draws.min() >= 0.0 and draws.max() <= 1.0
    assert abs(draws.mean() - 0.5) < 0.02
    counts, _ = np.histogram(draws, bins=10, range=(0.0, 1.0))
    assert np.all(np.abs(counts / 10_000 - 0.1) < 0.02)
    assert sample_lambda(1.0, 5) == sample_lambda(1.0, 5)
    with pytest.raises(ConfigError):
        sample_lambda(0.0, 0)


@pytest.mark.parametrize(
    "mixer",
    [
        direct_mixup,
        lambda s1, s2, lam: randomized_mixup(s1, s2, lam, seed=3),
        aligned_mixup,
        input_average,
    ],
    ids=["direct", "randomized", "aligned", "input_only"],
)
def test_lambda_one_returns_first_sample(mixer):
    s1, s2 = _sample(0, class_id=1), _sample(1, class_id=2)
    out = mixer(s1, s2, 1.0)
    assert out.v.bitwise_equal(s1.v)
    np.testing.assert_array_equal(out.label, s1.label)


def test_direct_lambda_zero_returns_second_sample():
    s1, s2 = _sample(0, class_id=1), _sample(1, class_id=2)
    out = direct_mixup(s1, s2, 0.0)
    assert out.v.bitwise_equal(s2.v)
    np.testing.assert_array_equal(out.label, s2.label)


def test_direct_midpoint():
    spec = MlpSpec.relu([2, 3, 1])
    s1 = LabeledSample.one_hot(WeightSpaceVector.zeros(spec), 0, 2)
    s2 = LabeledSample.one_hot(WeightSpaceVector.full(spec, 1.0), 1, 2)
    out = direct_mixup(s1, s2, 0.5)
    np.testing.assert_array_equal(out.v.flatten(), np.full(spec.num_params, 0.5))
    np.testing.assert_allclose(out.label, [0.5, 0.5])


def test_mixup_checks_inputs():
    s1 = _sample(0)
    with pytest.raises(ConfigError):
        direct_mixup(s1, _sample(1), 1.5)
    other = LabeledSample.one_hot(siren_net([2, 5, 1], 0), 0, 4)
    with pytest.raises(ShapeError):
        direct_mixup(s1, other, 0.5)
    fewer = LabeledSample.one_hot(s1.v, 0, 3)
    with pytest.raises(LabelError):
        direct_mixup(s1, fewer, 0.5)


def test_randomized_lambda_zero_is_permuted_second_sample():
    s1, s2 = _sample(0), _sample(1)
    out = randomized_mixup(s1, s2, 0.0, seed=11)
    p = PermutationSequence.random(SPEC.hidden_widths, np.random.default_rng(11))
    assert out.v.bitwise_equal(apply_permutation(s2.v, p))
    assert func_equiv(out.v, s2.v, SPEC, resolution=32).passed


def test_randomized_equals_direct_for_unit_widths():
    spec = MlpSpec.siren([2, 1, 1, 1])
    s1 = LabeledSample.one_hot(siren_net(spec.dims, 0), 0, 2)
    s2 = LabeledSample.one_hot(siren_net(spec.dims, 1), 1, 2)
    assert randomized_mixup(s1, s2, 0.3, seed=0).v.bitwise_equal(
        direct_mixup(s1, s2, 0.3).v
    )


def test_aligned_lambda_zero_is_aligned_second_sample():
    s1, s2 = _sample(0), _sample(1)
    out = aligned_mixup(s1, s2, 0.0)
    p = weight_matching(s1.v, s2.v).p
    assert out.v.bitwise_equal(apply_permutation(s2.v, p))


def test_aligned_midpoint_of_planted_pair_is_the_original():
    v = siren_net(SPEC.dims, 0)
    q = random_permutation(SPEC, 1)
    s1 = LabeledSample.one_hot(v, 0, 4, object_id=0)
    s2 = LabeledSample.one_hot(apply_permutation(v, q), 0, 4, object_id=1)
    out = aligned_mixup(s1, s2, 0.5)
    report = func_equiv(out.v, v, SPEC, resolution=32, tol=1e-4)
    assert report.passed, report


def test_alignment_is_never_worse_than_identity():
    for seed in range(10):
        s1, s2 = _sample(2 * seed), _sample(2 * seed + 1)
        p = weight_matching(s1.v, s2.v).p
        aligned = l2_distance(s1.v, apply_permutation(s2.v, p))
        assert aligned <= l2_distance(s1.v, s2.v) + 1e-6


def test_label_smooth():
    s = _sample(0, class_id=0)
    assert label_smooth(s, 0.0) is s
    out = label_smooth(s, 0.1)
    np.testing.assert_allclose(out.label, [0.925, 0.025, 0.025, 0.025])
    assert out.v is s.v
    soft = LabeledSample(s.v, np.random.default_rng(0).dirichlet(np.ones(4)))
    assert label_smooth(soft, 0.3).label.sum() == pytest.approx(1.0, abs=1e-7)
    with pytest.raises(ConfigError):
        label_smooth(s, 1.0)


def test_input_average_keeps_first_label():
    s1, s2 = _sample(0, class_id=1), _sample(1, class_id=3)
    out = input_average(s1, s2, 0.5)
    assert out.v.bitwise_equal(direct_mixup(s1, s2, 0.5).v)
    np.testing.assert_array_equal(out.label, s1.label)


def test_mixed_labels_stay_on_the_simplex():
    rng = np.random.default_rng(0)
    s1, s2 = _sample(0, class_id=0), _sample(1, class_id=2)
    for lam in rng.uniform(size=20):
        label = direct_mixup(s1, s2, float(lam)).label
        assert label.min() >= 0.0
        assert label.sum() == pytest.approx(1.0, abs=1e-6)


class TestAlignmentMemo:
    def test_caches_unordered_pairs(self):
        memo = AlignmentMemo()
        s1, s2 = _sample(0), _sample(1)
        forward = memo.align(s1, s2)
        backward = memo.align(s2, s1)
        assert len(memo) == 1
        assert (memo.hits, memo.misses) == (1, 1)
        assert backward == forward.inverse()
        assert forward == weight_matching(s1.v, s2.v).p

    def test_order_of_first_request_does_not_matter(self):
        s1, s2 = _sample(0), _sample(1)
        first = AlignmentMemo()
        first.align(s2, s1)
        second = AlignmentMemo()
        second.align(s1, s2)
        assert first.align(s1, s2) == second.align(s1, s2)

    def test_same_sample_is_identity(self):
        s = _sample(0)
        memo = AlignmentMemo()
        assert memo.align(s, s).is_identity()
        assert len(memo) == 0

    def test_memoized_output_matches_direct_alignment(self):
        s1, s2 = _sample(0), _sample(1)
        memo = AlignmentMemo()
        memo.align(s2, s1)
        out = aligned_mixup(s1, s2, 0.4, memo=memo)
        assert out.v.bitwise_equal(aligned_mixup(s1, s2, 0.4).v)

    def test_concurrent_access(self):
        samples = [_sample(seed) for seed in range(4)]
        memo = AlignmentMemo()
        results = []

        def work():
            for a in samples:
                for b in samples:
                    results.append(memo.align(a, b))

        threads = [threading.Thread(target=work) for _ in range(4)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        assert len(memo) == 6
        assert len(results) == 64

    def test_clear(self):
        memo = AlignmentMemo()
        memo.align(_sample(0), _sample(1))
        memo.clear()
        assert len(memo) == 0


def test_mix_dispatches_on_variant():
    s1, s2 = _sample(0, class_id=0), _sample(1, class_id=1)
    rng = np.random.default_rng(0)
    smoothed = mix(s1, s2, MixupConfig(variant="label_only"), rng)
    np.testing.assert_allclose(smoothed.label, [0.925, 0.025, 0.025, 0.025])
    fixed = MixupConfig(variant="direct", fixed_lambda=0.25)
    assert mix(s1, s2, fixed, rng).v.bitwise_equal(direct_mixup(s1, s2, 0.25).v)
    aligned = MixupConfig(variant="aligned", fixed_lambda=0.25)
    assert mix(s1, s2, aligned, rng).v.bitwise_equal(aligned_mixup(s1, s2, 0.25).v)
    kept = mix(s1, s2, MixupConfig(variant="input_only"), rng)
    np.testing.assert_array_equal(kept.label, s1.label)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"variant": "manifold"},
        {"alpha": 0.0},
        {"smoothing_eps": 1.0},
        {"fixed_lambda": 2.0},
        {"memo_scope": "batch"},
    ],
)
def test_mixup_config_validation(kwargs):
    with pytest.raises(ConfigError):
        MixupConfig(**kwargs)


@pytest.mark.slow
def test_aligned_midpoints_reconstruct_better():
    spec = MlpSpec.siren([2, 32, 32, 1])
    signal = make_signal("disk", 16, seed=0)
    nets = [
        fit_inr(signal, spec, TrainConfig(steps=300, learning_rate=1e-3, seed=seed))
        for seed in range(20)
    ]
    wins = total = 0
    for i in range(len(nets)):
        for j in range(i + 1, min(i + 6, len(nets))):
            s1 = LabeledSample.one_hot(nets[i], 0, 4, object_id=i)
            s2 = LabeledSample.one_hot(nets[j], 0, 4, object_id=j)
            aligned = signal_mse(aligned_mixup(s1, s2, 0.5).v, spec, signal)
            direct = signal_mse(direct_mixup(s1, s2, 0.5).v, spec, signal)
            wins += aligned <= direct
            total += 1
            if total == 50:
                break
        if total == 50:
            break
    assert wins >= 0.7 * total


def test_relu_nets_mix_too():
    spec = MlpSpec.relu([2, 6, 6, 1])
    s1 = LabeledSample.one_hot(relu_net(spec.dims, 0), 0, 2, object_id=0)
    s2 = LabeledSample.one_hot(relu_net(spec.dims, 1), 1, 2, object_id=1)
    out = aligned_mixup(s1, s2, 0.5)
    assert out.v.dims == spec.dims
    np.testing.assert_allclose(out.label, [0.5, 0.5])
