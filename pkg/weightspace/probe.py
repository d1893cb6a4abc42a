"""A permutation-invariant probe classifier over INR weights.

Weights are summarized by sorted neuron norms (see :func:`featurize`) and
classified by a small ReLU MLP trained with Adam on soft-label cross-entropy.
Augmentations and MixUp act on the weight vectors before featurization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from weightspace.augment import AugmentPipeline, apply_pipeline
from weightspace.core import LabeledSample, MlpSpec, WeightSpaceVector
from weightspace.errors import (
    ConfigError,
    DivergenceError,
    EmptyDatasetError,
    ShapeError,
)
from weightspace.mixup import AlignmentMemo, MixupConfig, mix
from weightspace.nnrun import (
    DIVERGENCE_LOSS,
    Adam,
    TrainConfig,
    backward_from_cache,
    forward_cached,
    init_weights,
)
from weightspace.store import InrDataset

logger = logging.getLogger(__name__)


def feature_dim(spec: MlpSpec) -> int:
    per_layer = sum(d_out + d_in for d_in, d_out in zip(spec.dims, spec.dims[1:]))
    return per_layer + spec.output_dim + 2


def _sorted_norms(squares: np.ndarray, axis: int) -> np.ndarray:
    # Summing sorted squares makes each norm independent of entry order.
    norms = np.sqrt(np.sort(squares, axis=axis).sum(axis=axis))
    return np.sort(norms)[::-1]


def featurize(v: WeightSpaceVector, spec: MlpSpec) -> np.ndarray:
    """Per layer ``m``: row norms of ``[W_m | b_m]`` and column norms of ``W_m``,
    each sorted descending; then ``b_M`` as is; then the mean and standard
    deviation of all entry magnitudes.

    Invariant under hidden-neuron permutations, sign flips of whole neurons
    and any transform that preserves these norms.
    """
    if v.dims != spec.dims:
        raise ShapeError(f"Vector dims {v.dims} do not match spec dims {spec.dims}")
    parts = []
    for w, b in zip(v.weights, v.biases):
        w2 = np.square(w.astype(np.float64))
        b2 = np.square(b.astype(np.float64))
        rows = np.concatenate([w2, b2[:, None]], axis=1)
        parts.append(_sorted_norms(rows, axis=1))
        parts.append(_sorted_norms(w2, axis=0))
    parts.append(v.biases[-1].astype(np.float64))
    flat = np.sort(np.abs(v.flatten().astype(np.float64)))
    parts.append(np.array([flat.mean(), flat.std()]))
    return np.concatenate(parts)


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-dimension z-scoring with statistics frozen from the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> Standardizer:
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        return cls(mean, np.where(std > 1e-12, std, 1.0))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


@dataclass
class ProbeConfig:
    steps: int = 1000
    learning_rate: float = 1e-3
    batch_size: int = 32
    hidden_width: int = 64
    seed: int = 0
    # Log training loss and test accuracy every this many steps.
    eval_every: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigError("steps must be non-negative", key="steps")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive", key="batch_size")
        if self.hidden_width <= 0:
            raise ConfigError("hidden_width must be positive", key="hidden_width")
        if self.eval_every <= 0:
            raise ConfigError("eval_every must be positive", key="eval_every")

    def optimizer_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            early_stop_psnr=None,
            seed=self.seed,
            eval_every=self.eval_every,
        )


@dataclass
class ProbeAugmentation:
    """Per-sample augmentation for probe training: MixUp first, then the pipeline."""

    pipeline: Optional[AugmentPipeline] = None
    mixup: Optional[MixupConfig] = None

    @property
    def is_identity(self) -> bool:
        no_pipeline = self.pipeline is None or not self.pipeline.steps
        return no_pipeline and self.mixup is None


@dataclass(frozen=True, eq=False)
class ProbeModel:
    spec: MlpSpec
    v: WeightSpaceVector
    input_spec: MlpSpec
    standardizer: Standardizer

    @property
    def num_classes(self) -> int:
        return self.spec.output_dim

    def logits(self, samples: Sequence[LabeledSample]) -> np.ndarray:
        features = np.stack([featurize(s.v, self.input_spec) for s in samples])
        _, post = forward_cached(
            self.v.weights,
            self.v.biases,
            self.spec.activations,
            self.standardizer(features),
            np.float64,
        )
        return post[-1]

    def predict(self, samples: Sequence[LabeledSample]) -> np.ndarray:
        # argmax breaks ties toward the lower class index
        return np.argmax(self.logits(samples), axis=1)


@dataclass
class TrainingLog:
    steps: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    test_acc: List[float] = field(default_factory=list)

    def append(self, step: int, loss: float, accuracy: float) -> None:
        self.steps.append(step)
        self.train_loss.append(loss)
        self.test_acc.append(accuracy)


def soft_cross_entropy(
    logits: np.ndarray, targets: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Mean soft-label cross-entropy and its gradient with respect to ``logits``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    batch = logits.shape[0]
    loss = float(-(targets * log_probs).sum() / batch)
    grad = (np.exp(log_probs) - targets) / batch
    return loss, grad


def _streams(seed: int) -> List[np.random.Generator]:
    """Independent generators for init, batching and the augmentation pipeline."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def _check_train(train: InrDataset) -> None:
    if len(train) == 0:
        raise EmptyDatasetError("Cannot train a probe on an empty dataset")


def _augmented(
    s: LabeledSample,
    pipeline: AugmentPipeline,
    spec: MlpSpec,
    rng: np.random.Generator,
) -> LabeledSample:
    v = apply_pipeline(pipeline, s.v, spec, int(rng.integers(2**63)))
    return LabeledSample(v, s.label, s.object_id, s.view_id)


def initial_probe(train: InrDataset, cfg: ProbeConfig) -> ProbeModel:
    """The untrained probe ``train_probe`` starts from."""
    _check_train(train)
    features = np.stack([featurize(s.v, train.spec) for s in train.samples])
    spec = MlpSpec.relu([feature_dim(train.spec), cfg.hidden_width, train.num_classes])
    init_rng = _streams(cfg.seed)[0]
    return ProbeModel(
        spec, init_weights(spec, init_rng), train.spec, Standardizer.fit(features)
    )


def train_probe(
    train: InrDataset,
    aug: Optional[ProbeAugmentation] = None,
    cfg: Optional[ProbeConfig] = None,
    test: Optional[InrDataset] = None,
) -> Tuple[ProbeModel, TrainingLog]:
    """Train a probe on ``train``, augmenting every minibatch sample on the fly.

    Deterministic for a fixed ``cfg.seed``. Batches, the pipeline and MixUp draw
    from separate generators, so MixUp with λ = 1 leaves every step unchanged.
    Raises :class:`DivergenceError` when a minibatch loss is non-finite or
    exceeds ``DIVERGENCE_LOSS``.
    """
    cfg = cfg or ProbeConfig()
    aug = aug or ProbeAugmentation()
    model = initial_probe(train, cfg)
    spec, input_spec = model.spec, train.spec
    if aug.pipeline is not None:
        aug.pipeline.check(input_spec)

    _, batch_rng, aug_rng = _streams(cfg.seed)
    mix_cfg = aug.mixup
    mix_rng = np.random.default_rng([cfg.seed, mix_cfg.seed if mix_cfg else 0])
    memo = None
    if mix_cfg is not None and mix_cfg.variant == "aligned":
        memo = AlignmentMemo(mix_cfg.align)
    clear_each_epoch = mix_cfg is not None and mix_cfg.memo_scope == "epoch"

    samples = train.samples
    n = len(samples)
    batch_size = min(cfg.batch_size, n)
    steps_per_epoch = math.ceil(n / batch_size)
    base_features = None
    if aug.is_identity:
        base_features = model.standardizer(
            np.stack([featurize(s.v, input_spec) for s in samples])
        )
    base_labels = np.stack([s.label for s in samples])

    params = [np.array(t, dtype=np.float32) for t in model.v.tensors()]
    adam = Adam(params, cfg.optimizer_config())
    log = TrainingLog()
    logger.info(
        "Training probe %s for %d steps on %d samples (seed %d)",
        spec.dims,
        cfg.steps,
        n,
        cfg.seed,
    )

    def current_model() -> ProbeModel:
        v = WeightSpaceVector(tuple(params[0::2]), tuple(params[1::2]))
        return ProbeModel(spec, v, input_spec, model.standardizer)

    for step in range(cfg.steps):
        if memo is not None and clear_each_epoch and step % steps_per_epoch == 0:
            memo.clear()
        idx = np.sort(batch_rng.choice(n, size=batch_size, replace=False))
        if base_features is not None:
            x, y = base_features[idx], base_labels[idx]
        else:
            batch = [samples[i] for i in idx]
            if mix_cfg is not None:
                partners = mix_rng.integers(batch_size, size=batch_size)
                batch = [
                    mix(s, batch[j], mix_cfg, mix_rng, memo)
                    for s, j in zip(batch, partners)
                ]
            if aug.pipeline is not None and aug.pipeline.steps:
                pipeline = aug.pipeline
                batch = [_augmented(s, pipeline, input_spec, aug_rng) for s in batch]
            features = np.stack([featurize(s.v, input_spec) for s in batch])
            x = model.standardizer(features)
            y = np.stack([s.label for s in batch])

        weights, biases = params[0::2], params[1::2]
        pre, post = forward_cached(weights, biases, spec.activations, x, np.float64)
        loss, upstream = soft_cross_entropy(post[-1], y)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise DivergenceError(step, loss)
        grad_w, grad_b = backward_from_cache(
            weights, spec.activations, pre, post, upstream
        )
        adam.step(params, [g for pair in zip(grad_w, grad_b) for g in pair])

        if step % cfg.eval_every == 0 or step == cfg.steps - 1:
            accuracy = math.nan if test is None else eval_probe(current_model(), test)
            log.append(step, loss, accuracy)
            logger.debug("Step %d: loss %.4f, test accuracy %.4f", step, loss, accuracy)

    if memo is not None:
        logger.debug("Alignment memo: %d hits, %d misses", memo.hits, memo.misses)
    return current_model(), log


def eval_probe(model: ProbeModel, test: InrDataset) -> float:
    """Fraction of samples whose predicted class matches the argmax of their label."""
    if len(test) == 0:
        raise EmptyDatasetError("Cannot evaluate on an empty dataset")
    if test.spec != model.input_spec:
        raise ShapeError(
            f"Probe reads {model.input_spec.dims} INRs, got {test.spec.dims}"
        )
    predictions = model.predict(test.samples)
    return float(np.mean(predictions == test.class_ids()))
