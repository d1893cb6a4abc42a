from typing import Sequence

import numpy as np

from weightspace.core import MlpSpec, WeightSpaceVector
from weightspace.nnrun import TrainConfig, init_weights


def random_net(
    spec: MlpSpec, seed: int, bias_std: float = 0.5
) -> WeightSpaceVector:
    """Standard init for ``spec`` with random (rather than zero) biases."""
    rng = np.random.default_rng(seed)
    v = init_weights(spec, rng)
    biases = tuple(rng.normal(0.0, bias_std, size=b.shape) for b in v.biases)
    return WeightSpaceVector(v.weights, biases)


def siren_net(dims: Sequence[int], seed: int) -> WeightSpaceVector:
    return random_net(MlpSpec.siren(dims), seed)


def relu_net(dims: Sequence[int], seed: int) -> WeightSpaceVector:
    return random_net(MlpSpec.relu(dims), seed)


def tiny_net(w1: float, b1: float, w2: float, b2: float = 0.0) -> WeightSpaceVector:
    """A [1, 1, 1] network with the given scalar parameters."""
    return WeightSpaceVector(
        (np.array([[w1]]), np.array([[w2]])), (np.array([b1]), np.array([b2]))
    )


def quick_fit(steps: int = 60) -> TrainConfig:
    """A short fit for tests that only need some trained weights."""
    return TrainConfig(steps=steps, learning_rate=1e-3, eval_every=20)
