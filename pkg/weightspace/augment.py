"""Weight-space augmentations: input-space geometry, data-agnostic noise and
activation symmetries, plus sequential pipelines of them.

Every function is pure and returns a new :class:`WeightSpaceVector`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import List, Literal, Sequence, Union

import numpy as np

from weightspace.core import (
    Activation,
    MlpSpec,
    PermutationSequence,
    SeedLike,
    WeightSpaceVector,
    apply_permutation,
)
from weightspace.errors import AugmentationError, ShapeError


def translate(v: WeightSpaceVector, t: Sequence[float]) -> WeightSpaceVector:
    """``b_1' = b_1 + W_1 t``, so the new network computes ``f(x + t)``."""
    shift = np.asarray(t, dtype=np.float64)
    w1 = v.weights[0]
    if shift.shape != (w1.shape[1],):
        raise ShapeError(
            f"Translation has shape {shift.shape}, input dim is {w1.shape[1]}"
        )
    bias = v.biases[0].astype(np.float64) + w1.astype(np.float64) @ shift
    return v.replace_layer(1, bias=bias)


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotate(v: WeightSpaceVector, angle: float) -> WeightSpaceVector:
    """``W_1' = W_1 R(angle)``, so the new network computes ``f(R x)``."""
    w1 = v.weights[0]
    if w1.shape[1] != 2:
        raise ShapeError(f"Rotation needs a 2D input, got input dim {w1.shape[1]}")
    return v.replace_layer(1, weight=w1.astype(np.float64) @ rotation_matrix(angle))


def scale(
    v: WeightSpaceVector, c: float, all_layers: bool = False
) -> WeightSpaceVector:
    """``W_1' = c W_1`` (the network computes ``f(c x)``); optionally every ``W_m``."""
    if c <= 0:
        raise AugmentationError(f"Scale factor must be positive, got {c}")
    if not all_layers:
        return v.replace_layer(1, weight=c * v.weights[0].astype(np.float64))
    return WeightSpaceVector(
        tuple(c * w.astype(np.float64) for w in v.weights), v.biases
    )


def gaussian_noise(
    v: WeightSpaceVector, s: float, seed: SeedLike, include_biases: bool = True
) -> WeightSpaceVector:
    """Add ``N(0, (s σ_T)²)`` noise to each tensor ``T``.

    ``σ_T`` is the population standard deviation of ``T``.
    """
    if s < 0:
        raise AugmentationError(f"Noise scale must be non-negative, got {s}")
    rng = np.random.default_rng(seed)

    def perturb(tensor: np.ndarray) -> np.ndarray:
        std = s * float(np.std(tensor.astype(np.float64)))
        if std == 0.0:
            return tensor
        return tensor.astype(np.float64) + rng.normal(0.0, std, size=tensor.shape)

    weights = tuple(perturb(w) for w in v.weights)
    biases = tuple(perturb(b) for b in v.biases) if include_biases else v.biases
    return WeightSpaceVector(weights, biases)


def mask(v: WeightSpaceVector, rate: float, seed: SeedLike) -> WeightSpaceVector:
    """Zero every entry independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise AugmentationError(f"Masking rate must lie in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)

    def drop(tensor: np.ndarray) -> np.ndarray:
        return np.where(rng.random(tensor.shape) < rate, np.float32(0), tensor)

    return WeightSpaceVector(
        tuple(drop(w) for w in v.weights), tuple(drop(b) for b in v.biases)
    )


def quantile_mask(v: WeightSpaceVector, threshold: float) -> WeightSpaceVector:
    """Zero every entry whose magnitude is below ``threshold``."""
    if threshold < 0:
        raise AugmentationError(f"Threshold must be non-negative, got {threshold}")

    def drop(tensor: np.ndarray) -> np.ndarray:
        return np.where(np.abs(tensor) < threshold, np.float32(0), tensor)

    return WeightSpaceVector(
        tuple(drop(w) for w in v.weights), tuple(drop(b) for b in v.biases)
    )


def _check_internal_layer(spec: MlpSpec, layer: int, activation: Activation) -> None:
    if not 1 <= layer <= spec.num_layers - 1:
        raise AugmentationError(
            f"Layer {layer} is not an internal layer "
            f"(expected 1..{spec.num_layers - 1})"
        )
    found = spec.activation_after(layer)
    if found is not activation:
        raise AugmentationError(
            f"Layer {layer} is followed by {found.value}, not {activation.value}"
        )


def siren_negation(
    v: WeightSpaceVector, spec: MlpSpec, layer: int
) -> WeightSpaceVector:
    """Negate ``W_layer``, ``b_layer`` and ``W_{layer+1}`` (sine is odd)."""
    _check_internal_layer(spec, layer, Activation.SINE)
    out = v.replace_layer(
        layer, weight=-v.weights[layer - 1], bias=-v.biases[layer - 1]
    )
    return out.replace_layer(layer + 1, weight=-v.weights[layer])


def siren_bias(
    v: WeightSpaceVector, spec: MlpSpec, layer: int, k: Union[int, Sequence[int]]
) -> WeightSpaceVector:
    """Shift ``b_layer[j]`` by ``k[j]·π``; for odd ``k[j]`` also flip column ``j``
    of ``W_{layer+1}``."""
    _check_internal_layer(spec, layer, Activation.SINE)
    width = spec.dims[layer]
    shifts = np.broadcast_to(np.asarray(k), (width,))
    if not np.issubdtype(shifts.dtype, np.integer):
        raise AugmentationError("SIREN bias shifts must be integers")
    bias = v.biases[layer - 1].astype(np.float64) + shifts * math.pi
    signs = np.where(shifts % 2 == 0, np.float32(1), np.float32(-1))
    out = v.replace_layer(layer, bias=bias)
    return out.replace_layer(layer + 1, weight=v.weights[layer] * signs[None, :])


def relu_scale(
    v: WeightSpaceVector, spec: MlpSpec, layer: int, diag: Sequence[float]
) -> WeightSpaceVector:
    """``W_layer' = C W_layer``, ``b_layer' = C b_layer`` and
    ``W_{layer+1}' = W_{layer+1} C^-1``."""
    _check_internal_layer(spec, layer, Activation.RELU)
    c = np.asarray(diag, dtype=np.float64)
    if c.shape != (spec.dims[layer],):
        raise ShapeError(
            f"Scaling diagonal has shape {c.shape}, layer width is {spec.dims[layer]}"
        )
    if np.any(c <= 0):
        raise AugmentationError("ReLU scaling factors must be positive")
    w = v.weights[layer - 1].astype(np.float64) * c[:, None]
    b = v.biases[layer - 1].astype(np.float64) * c
    w_next = v.weights[layer].astype(np.float64) / c[None, :]
    out = v.replace_layer(layer, weight=w, bias=b)
    return out.replace_layer(layer + 1, weight=w_next)


def _layers_with(spec: MlpSpec, activation: Activation) -> List[int]:
    return [
        l for l in range(1, spec.num_layers) if spec.activation_after(l) is activation
    ]


def _pick_layers(
    spec: MlpSpec, activation: Activation, which: str, rng: np.random.Generator
) -> List[int]:
    eligible = _layers_with(spec, activation)
    if not eligible:
        raise AugmentationError(
            f"Spec {spec.dims} has no internal {activation.value} layer"
        )
    if which == "all":
        return eligible
    return [eligible[int(rng.integers(len(eligible)))]]


# Pipeline steps. Each step samples its hyperparameters from the generator it is
# handed; defaults follow the hyperparameters used for the INR benchmarks.


@dataclass(frozen=True)
class Translate:
    kind: Literal["translate"] = "translate"
    max_shift: float = 0.25

    def __post_init__(self) -> None:
        _require(self.max_shift >= 0, "max_shift must be non-negative")

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        shift = rng.uniform(-self.max_shift, self.max_shift, size=spec.input_dim)
        return translate(v, shift)


@dataclass(frozen=True)
class Rotate:
    kind: Literal["rotate"] = "rotate"
    max_degrees: float = 30.0

    def __post_init__(self) -> None:
        _require(0 <= self.max_degrees <= 180, "max_degrees must lie in [0, 180]")

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        limit = math.radians(self.max_degrees)
        return rotate(v, rng.uniform(-limit, limit))


@dataclass(frozen=True)
class Scale:
    kind: Literal["scale"] = "scale"
    low: float = 0.8
    high: float = 1.0
    all_layers: bool = False

    def __post_init__(self) -> None:
        _require(0 < self.low <= self.high, "scale range must satisfy 0 < low <= high")

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        return scale(v, rng.uniform(self.low, self.high), all_layers=self.all_layers)


@dataclass(frozen=True)
class GaussianNoise:
    kind: Literal["gaussian_noise"] = "gaussian_noise"
    scale: float = 0.32
    include_biases: bool = True

    def __post_init__(self) -> None:
        _require(self.scale >= 0, "noise scale must be non-negative")

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        return gaussian_noise(v, self.scale, rng, include_biases=self.include_biases)


@dataclass(frozen=True)
class Mask:
    kind: Literal["mask"] = "mask"
    rate: float = 0.1

    def __post_init__(self) -> None:
        _require(0 <= self.rate <= 1, "masking rate must lie in [0, 1]")

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        return mask(v, self.rate, rng)


@dataclass(frozen=True)
class QuantileMask:
    kind: Literal["quantile_mask"] = "quantile_mask"
    max_threshold: float = 0.1

    def __post_init__(self) -> None:
        _require(self.max_threshold >= 0, "max_threshold must be non-negative")

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        return quantile_mask(v, rng.uniform(0.0, self.max_threshold))


@dataclass(frozen=True)
class SirenNegation:
    kind: Literal["siren_negation"] = "siren_negation"
    layers: Literal["random", "all"] = "random"

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        for layer in _pick_layers(spec, Activation.SINE, self.layers, rng):
            v = siren_negation(v, spec, layer)
        return v


@dataclass(frozen=True)
class SirenBias:
    kind: Literal["siren_bias"] = "siren_bias"
    layers: Literal["random", "all"] = "random"
    max_k: int = 2
    per_neuron: bool = True

    def __post_init__(self) -> None:
        _require(self.max_k >= 1, "max_k must be at least 1")

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        choices = np.array([k for k in range(-self.max_k, self.max_k + 1) if k != 0])
        for layer in _pick_layers(spec, Activation.SINE, self.layers, rng):
            size = spec.dims[layer] if self.per_neuron else 1
            k = rng.choice(choices, size=size)
            v = siren_bias(v, spec, layer, k if self.per_neuron else int(k[0]))
        return v


@dataclass(frozen=True)
class ReluScale:
    kind: Literal["relu_scale"] = "relu_scale"
    layers: Literal["random", "all"] = "random"
    # Factors are drawn log-uniformly from [2**-log2_range, 2**log2_range].
    log2_range: float = 1.0

    def __post_init__(self) -> None:
        _require(self.log2_range >= 0, "log2_range must be non-negative")

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        for layer in _pick_layers(spec, Activation.RELU, self.layers, rng):
            exponents = rng.uniform(
                -self.log2_range, self.log2_range, size=spec.dims[layer]
            )
            v = relu_scale(v, spec, layer, np.exp2(exponents))
        return v


@dataclass(frozen=True)
class Permute:
    kind: Literal["permute"] = "permute"

    def apply(
        self, v: WeightSpaceVector, spec: MlpSpec, rng: np.random.Generator
    ) -> WeightSpaceVector:
        return apply_permutation(v, PermutationSequence.random(spec.hidden_widths, rng))


AugmentStep = Union[
    Translate,
    Rotate,
    Scale,
    GaussianNoise,
    Mask,
    QuantileMask,
    SirenNegation,
    SirenBias,
    ReluScale,
    Permute,
]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise AugmentationError(message)


@dataclass
class AugmentPipeline:
    steps: List[AugmentStep] = dataclasses.field(default_factory=list)
    seed: int = 0

    def __post_init__(self) -> None:
        _require(self.seed >= 0, "pipeline seed must be non-negative")

    def check(self, spec: MlpSpec) -> None:
        """Raise if any step cannot be applied to networks of ``spec``."""
        for position, step in enumerate(self.steps):
            try:
                if isinstance(step, Rotate) and spec.input_dim != 2:
                    raise AugmentationError("rotate needs a 2D input")
                if isinstance(step, (SirenNegation, SirenBias)):
                    _pick_layers(spec, Activation.SINE, "all", np.random.default_rng(0))
                if isinstance(step, ReluScale):
                    _pick_layers(spec, Activation.RELU, "all", np.random.default_rng(0))
            except AugmentationError as err:
                raise AugmentationError(
                    f"Step {position} ({step.kind}): {err}"
                ) from err


def apply_pipeline(
    pipeline: AugmentPipeline, v: WeightSpaceVector, spec: MlpSpec, sample_seed: int
) -> WeightSpaceVector:
    """Apply the steps in order; step ``i`` draws from a generator keyed by
    ``(pipeline.seed, sample_seed, i)``."""
    for position, step in enumerate(pipeline.steps):
        rng = np.random.default_rng([pipeline.seed, sample_seed, position])
        v = step.apply(v, spec, rng)
    return v


def combination_pipeline(seed: int = 0) -> AugmentPipeline:
    """Translate, Gaussian noise and SIREN negation; pair with aligned MixUp for the
    full combination."""
    return AugmentPipeline(
        steps=[Translate(), GaussianNoise(), SirenNegation()], seed=seed
    )
