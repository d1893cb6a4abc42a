import math

import numpy as np
import pytest

from tests.weightspace.helpers import relu_net, siren_net, tiny_net
from weightspace import augment
from weightspace.augment import (
    AugmentPipeline,
    GaussianNoise,
    Mask,
    Permute,
    ReluScale,
    Rotate,
    Scale,
    SirenBias,
    SirenNegation,
    Translate,
    apply_pipeline,
    combination_pipeline,
)
from weightspace.core import MlpSpec
from weightspace.errors import AugmentationError, ShapeError
from weightspace.verify import func_equiv, transform_equiv

SIREN = MlpSpec.siren([2, 16, 16, 1])
RELU = MlpSpec.relu([2, 16, 16, 1])


def test_translate_moves_first_bias():
    out = augment.translate(tiny_net(w1=2.0, b1=1.0, w2=1.0), [0.5])
    assert out.biases[0][0] == 2.0
    assert out.weights[0][0, 0] == 2.0


def test_translate_rejects_wrong_dimension():
    with pytest.raises(ShapeError):
        augment.translate(siren_net([2, 4, 1], 0), [0.1, 0.2, 0.3])


def test_rotate_needs_planar_input():
    with pytest.raises(ShapeError):
        augment.rotate(siren_net([3, 4, 1], 0), 0.3)


@pytest.mark.parametrize("spec", [RELU, SIREN])
def test_geometric_transforms_match_input_transforms(spec):
    for seed in range(20):
        v = relu_net(spec.dims, seed) if spec is RELU else siren_net(spec.dims, seed)
        rng = np.random.default_rng(seed)
        t = rng.uniform(-0.25, 0.25, size=2)
        angle = rng.uniform(-math.pi / 6, math.pi / 6)
        rotation = augment.rotation_matrix(angle)
        c = rng.uniform(0.8, 1.0)
        checks = [
            (augment.translate(v, t), lambda x: x + t),
            (augment.rotate(v, angle), lambda x: x @ rotation.T),
            (augment.scale(v, c), lambda x: c * x),
        ]
        for augmented, transform in checks:
            report = transform_equiv(augmented, v, spec, transform, 64, 1e-5)
            assert report.passed, report


def test_scale_validates_factor():
    with pytest.raises(AugmentationError):
        augment.scale(siren_net([2, 4, 1], 0), 0.0)
    v = siren_net([2, 4, 4, 1], 0)
    out = augment.scale(v, 0.5, all_layers=True)
    for before, after in zip(v.weights, out.weights):
        np.testing.assert_array_equal(after, before * np.float32(0.5))
    for before, after in zip(v.biases, out.biases):
        np.testing.assert_array_equal(after, before)


def test_gaussian_noise_matches_tensor_scale():
    v = relu_net([2, 256, 256, 1], 0)
    out = augment.gaussian_noise(v, 0.32, seed=3)
    w, w_aug = v.weights[1].astype(np.float64), out.weights[1].astype(np.float64)
    ratio = np.std(w_aug - w) / (0.32 * np.std(w))
    assert abs(ratio - 1.0) < 0.02
    assert not np.array_equal(out.biases[1], v.biases[1])


def test_gaussian_noise_options():
    v = siren_net([2, 8, 1], 0)
    assert augment.gaussian_noise(v, 0.0, seed=0).bitwise_equal(v)
    no_bias = augment.gaussian_noise(v, 0.5, seed=0, include_biases=False)
    for before, after in zip(v.biases, no_bias.biases):
        np.testing.assert_array_equal(after, before)
    again = augment.gaussian_noise(v, 0.5, seed=0, include_biases=False)
    assert no_bias.bitwise_equal(again)
    with pytest.raises(AugmentationError):
        augment.gaussian_noise(v, -0.1, seed=0)


def test_mask_rate():
    v = relu_net([2, 256, 256, 1], 0)
    assert augment.mask(v, 0.0, seed=0).bitwise_equal(v)
    assert not augment.mask(v, 1.0, seed=0).flatten().any()
    out = augment.mask(v, 0.3, seed=0)
    dropped = float(np.mean(out.weights[1] == 0))
    assert abs(dropped - 0.3) < 0.01
    kept = out.weights[1] != 0
    np.testing.assert_array_equal(out.weights[1][kept], v.weights[1][kept])
    with pytest.raises(AugmentationError):
        augment.mask(v, 1.5, seed=0)


@pytest.mark.parametrize("spec", [SIREN, RELU])
def test_noise_and_mask_change_the_function(spec):
    make = relu_net if spec is RELU else siren_net
    for seed in range(5):
        v = make(spec.dims, seed)
        noisy = augment.gaussian_noise(v, 0.3, seed=seed)
        masked = augment.mask(v, 0.3, seed=seed)
        for out in (noisy, masked):
            report = func_equiv(v, out, spec, resolution=64, tol=1e-3)
            assert not report.passed, report


def test_quantile_mask_threshold():
    v = relu_net([2, 32, 1], 0)
    out = augment.quantile_mask(v, 0.5)
    for before, after in zip(v.tensors(), out.tensors()):
        small = np.abs(before) < 0.5
        assert not after[small].any()
        np.testing.assert_array_equal(after[~small], before[~small])
    with pytest.raises(AugmentationError):
        augment.quantile_mask(v, -1.0)


def test_siren_negation_flips_adjacent_tensors():
    v = siren_net([2, 4, 4, 1], 0)
    out = augment.siren_negation(v, MlpSpec.siren([2, 4, 4, 1]), 2)
    np.testing.assert_array_equal(out.weights[1], -v.weights[1])
    np.testing.assert_array_equal(out.biases[1], -v.biases[1])
    np.testing.assert_array_equal(out.weights[2], -v.weights[2])
    np.testing.assert_array_equal(out.weights[0], v.weights[0])
    np.testing.assert_array_equal(out.biases[2], v.biases[2])


def test_siren_bias_flips_only_odd_shifts():
    spec = MlpSpec.siren([2, 3, 1])
    v = siren_net(spec.dims, 0)
    out = augment.siren_bias(v, spec, 1, [1, 2, -1])
    np.testing.assert_allclose(
        out.biases[0] - v.biases[0], [math.pi, 2 * math.pi, -math.pi], rtol=1e-6
    )
    np.testing.assert_array_equal(out.weights[1], v.weights[1] * [-1, 1, -1])
    with pytest.raises(AugmentationError):
        augment.siren_bias(v, spec, 1, 0.5)


@pytest.mark.parametrize("seed", range(20))
def test_activation_symmetries_preserve_function(seed):
    rng = np.random.default_rng(seed)
    v = siren_net(SIREN.dims, seed)
    for layer in (1, 2):
        negated = augment.siren_negation(v, SIREN, layer)
        assert func_equiv(v, negated, SIREN, resolution=64).passed
        k = rng.choice([-2, -1, 1, 2], size=16)
        shifted = augment.siren_bias(v, SIREN, layer, k)
        assert func_equiv(v, shifted, SIREN, resolution=64).passed

    w = relu_net(RELU.dims, seed)
    for layer in (1, 2):
        diag = np.exp2(rng.uniform(-1, 1, size=16))
        scaled = augment.relu_scale(w, RELU, layer, diag)
        assert func_equiv(w, scaled, RELU, resolution=64, tol=1e-5).passed


def test_symmetries_check_layer_kind():
    with pytest.raises(AugmentationError):
        augment.siren_negation(relu_net(RELU.dims, 0), RELU, 1)
    with pytest.raises(AugmentationError):
        augment.relu_scale(siren_net(SIREN.dims, 0), SIREN, 1, np.ones(16))
    with pytest.raises(AugmentationError):
        # the output layer is not internal
        augment.siren_negation(siren_net(SIREN.dims, 0), SIREN, 3)
    with pytest.raises(AugmentationError):
        augment.relu_scale(relu_net(RELU.dims, 0), RELU, 1, -np.ones(16))
    with pytest.raises(ShapeError):
        augment.relu_scale(relu_net(RELU.dims, 0), RELU, 1, np.ones(4))


def test_pipeline_is_deterministic_per_sample():
    v = siren_net(SIREN.dims, 0)
    pipeline = combination_pipeline(seed=7)
    a = apply_pipeline(pipeline, v, SIREN, sample_seed=1)
    assert a.bitwise_equal(apply_pipeline(pipeline, v, SIREN, sample_seed=1))
    assert not a.bitwise_equal(apply_pipeline(pipeline, v, SIREN, sample_seed=2))
    other = AugmentPipeline(steps=pipeline.steps, seed=8)
    assert not a.bitwise_equal(apply_pipeline(other, v, SIREN, sample_seed=1))


def test_empty_pipeline_is_identity():
    v = siren_net(SIREN.dims, 0)
    assert apply_pipeline(AugmentPipeline(), v, SIREN, 5) is v


def test_symmetry_steps_preserve_function():
    pipeline = AugmentPipeline(
        steps=[Permute(), SirenNegation(layers="all"), SirenBias(layers="all")]
    )
    v = siren_net(SIREN.dims, 1)
    for sample_seed in range(20):
        out = apply_pipeline(pipeline, v, SIREN, sample_seed)
        assert func_equiv(v, out, SIREN, resolution=64).passed
    relu = AugmentPipeline(steps=[Permute(), ReluScale(layers="all")])
    w = relu_net(RELU.dims, 1)
    out = apply_pipeline(relu, w, RELU, 0)
    assert func_equiv(w, out, RELU, resolution=64, tol=1e-5).passed


def test_pipeline_check_rejects_mismatched_steps():
    AugmentPipeline(steps=[Translate(), Rotate(), SirenNegation()]).check(SIREN)
    with pytest.raises(AugmentationError, match="Step 1"):
        AugmentPipeline(steps=[Translate(), SirenNegation()]).check(RELU)
    with pytest.raises(AugmentationError, match="rotate"):
        AugmentPipeline(steps=[Rotate()]).check(MlpSpec.siren([3, 8, 1]))
    with pytest.raises(AugmentationError):
        AugmentPipeline(steps=[ReluScale()]).check(SIREN)


@pytest.mark.parametrize(
    "make_step",
    [
        lambda: Mask(rate=1.5),
        lambda: Scale(low=1.0, high=0.5),
        lambda: GaussianNoise(scale=-1.0),
        lambda: Rotate(max_degrees=200.0),
        lambda: SirenBias(max_k=0),
        lambda: AugmentPipeline(seed=-1),
    ],
)
def test_step_parameters_are_validated(make_step):
    with pytest.raises(AugmentationError):
        make_step()


def test_combination_pipeline_steps():
    pipeline = combination_pipeline(seed=3)
    assert [step.kind for step in pipeline.steps] == [
        "translate",
        "gaussian_noise",
        "siren_negation",
    ]
    assert pipeline.seed == 3
