"""Weight-space data model and the permutation group action on MLP weights.

Permutations are stored as index arrays. A permutation ``pi`` acts on a vector
with the convention ``(P x)[i] = x[pi^-1(i)]``, i.e. entry ``j`` moves to
position ``pi[j]``. Every row/column move in the package goes through
:func:`apply_permutation`, which is the only place the convention is spelled out.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from weightspace.errors import FinitenessError, LabelError, ShapeError

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]

_MASK64 = (1 << 64) - 1


class Activation(str, enum.Enum):
    SINE = "sine"
    RELU = "relu"
    LINEAR = "linear"


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``d_0..d_M`` and the activation applied after each layer."""

    dims: Tuple[int, ...]
    activations: Tuple[Activation, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        activations = tuple(Activation(a) for a in self.activations)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "activations", activations)
        if len(dims) < 3:
            raise ShapeError(f"An MLP spec needs at least 2 layers, got dims {dims}")
        if any(d <= 0 for d in dims):
            raise ShapeError(f"Layer widths must be positive, got {dims}")
        if len(activations) != len(dims) - 1:
            raise ShapeError(
                f"Expected {len(dims) - 1} activations for dims {dims}, "
                f"got {len(activations)}"
            )
        if activations[-1] is not Activation.LINEAR:
            raise ShapeError("The output layer must be linear")

    @classmethod
    def siren(cls, dims: Sequence[int]) -> MlpSpec:
        return cls(tuple(dims), _hidden_then_linear(Activation.SINE, len(dims)))

    @classmethod
    def relu(cls, dims: Sequence[int]) -> MlpSpec:
        return cls(tuple(dims), _hidden_then_linear(Activation.RELU, len(dims)))

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    @property
    def hidden_widths(self) -> Tuple[int, ...]:
        return self.dims[1:-1]

    @property
    def num_params(self) -> int:
        return sum(d_out * (d_in + 1) for d_in, d_out in zip(self.dims, self.dims[1:]))

    def weight_shape(self, layer: int) -> Tuple[int, int]:
        """Shape of ``W_layer`` (1-indexed)."""
        return (self.dims[layer], self.dims[layer - 1])

    def activation_after(self, layer: int) -> Activation:
        return self.activations[layer - 1]

    @property
    def has_sine(self) -> bool:
        return Activation.SINE in self.activations


def _hidden_then_linear(
    activation: Activation, num_dims: int
) -> Tuple[Activation, ...]:
    return tuple([activation] * (num_dims - 2) + [Activation.LINEAR])


def _frozen(array: object, ndim: int, name: str) -> np.ndarray:
    out = np.array(array, dtype=np.float32)
    if out.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class WeightSpaceVector:
    """The weights ``W_1..W_M`` and biases ``b_1..b_M`` of one MLP.

    Entries are stored as read-only 32-bit arrays; every operation returns a new
    vector.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ShapeError(
                f"Got {len(self.weights)} weight matrices "
                f"but {len(self.biases)} bias vectors"
            )
        object.__setattr__(
            self,
            "weights",
            tuple(_frozen(w, 2, f"W_{m}") for m, w in enumerate(self.weights, 1)),
        )
        object.__setattr__(
            self,
            "biases",
            tuple(_frozen(b, 1, f"b_{m}") for m, b in enumerate(self.biases, 1)),
        )

    @classmethod
    def zeros(cls, spec: MlpSpec) -> WeightSpaceVector:
        return cls.full(spec, 0.0)

    @classmethod
    def full(cls, spec: MlpSpec, value: float) -> WeightSpaceVector:
        layers = range(1, spec.num_layers + 1)
        return cls(
            tuple(np.full(spec.weight_shape(m), value) for m in layers),
            tuple(np.full(spec.dims[m], value) for m in layers),
        )

    @classmethod
    def from_flat(cls, spec: MlpSpec, flat: np.ndarray) -> WeightSpaceVector:
        flat = np.asarray(flat).ravel()
        if flat.size != spec.num_params:
            raise ShapeError(
                f"Flat vector has {flat.size} entries, spec needs {spec.num_params}"
            )
        weights, biases, offset = [], [], 0
        for m in range(1, spec.num_layers + 1):
            rows, cols = spec.weight_shape(m)
            weights.append(flat[offset : offset + rows * cols].reshape(rows, cols))
            offset += rows * cols
            biases.append(flat[offset : offset + rows])
            offset += rows
        return cls(tuple(weights), tuple(biases))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> Tuple[int, ...]:
        inputs = int(self.weights[0].shape[1])
        return (inputs,) + tuple(int(w.shape[0]) for w in self.weights)

    @property
    def hidden_widths(self) -> Tuple[int, ...]:
        return self.dims[1:-1]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def tensors(self) -> Iterator[np.ndarray]:
        """Yield ``W_1, b_1, W_2, b_2, ...`` in storage order."""
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def replace_layer(
        self,
        layer: int,
        weight: Optional[np.ndarray] = None,
        bias: Optional[np.ndarray] = None,
    ) -> WeightSpaceVector:
        weights, biases = list(self.weights), list(self.biases)
        if weight is not None:
            weights[layer - 1] = weight
        if bias is not None:
            biases[layer - 1] = bias
        return WeightSpaceVector(tuple(weights), tuple(biases))

    def bitwise_equal(self, other: WeightSpaceVector) -> bool:
        return self.num_layers == other.num_layers and all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors(), other.tensors())
        )


LABEL_SUM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """A weight vector with a soft label over ``C`` classes."""

    v: WeightSpaceVector
    label: np.ndarray
    object_id: int = 0
    view_id: int = 0

    def __post_init__(self) -> None:
        label = np.array(self.label, dtype=np.float64)
        if label.ndim != 1 or label.size == 0:
            raise LabelError(
                f"Label must be a non-empty vector, got shape {label.shape}"
            )
        if np.any(label < 0) or abs(label.sum() - 1.0) > LABEL_SUM_TOL:
            raise LabelError(f"Label {label.tolist()} is not a probability vector")
        label.setflags(write=False)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "object_id", int(self.object_id))
        object.__setattr__(self, "view_id", int(self.view_id))

    @classmethod
    def one_hot(
        cls,
        v: WeightSpaceVector,
        class_id: int,
        num_classes: int,
        object_id: int = 0,
        view_id: int = 0,
    ) -> LabeledSample:
        label = np.zeros(num_classes)
        label[class_id] = 1.0
        return cls(v, label, object_id, view_id)

    @property
    def num_classes(self) -> int:
        return self.label.size

    @property
    def class_id(self) -> int:
        """Hard label; ``argmax`` breaks ties toward the lower index."""
        return int(np.argmax(self.label))


def validate(v: WeightSpaceVector, spec: MlpSpec) -> None:
    """Raise :class:`ShapeError` or :class:`FinitenessError` if ``v`` misfits."""
    if v.num_layers != spec.num_layers:
        first_bad = min(v.num_layers, spec.num_layers) + 1
        raise ShapeError(
            f"Layer {first_bad}: spec has {spec.num_layers} layers, "
            f"vector has {v.num_layers}",
            layer=first_bad,
        )
    for m in range(1, spec.num_layers + 1):
        expected_w = spec.weight_shape(m)
        actual_w = tuple(v.weights[m - 1].shape)
        if actual_w != expected_w:
            raise ShapeError(
                f"Layer {m}: W_{m} expected shape {expected_w}, got {actual_w}",
                layer=m,
                expected=expected_w,
                actual=actual_w,
            )
        expected_b = (spec.dims[m],)
        actual_b = tuple(v.biases[m - 1].shape)
        if actual_b != expected_b:
            raise ShapeError(
                f"Layer {m}: b_{m} expected shape {expected_b}, got {actual_b}",
                layer=m,
                expected=expected_b,
                actual=actual_b,
            )
    for m in range(1, spec.num_layers + 1):
        for name, tensor in ((f"W_{m}", v.weights[m - 1]), (f"b_{m}", v.biases[m - 1])):
            bad = np.argwhere(~np.isfinite(tensor))
            if len(bad):
                index = tuple(int(i) for i in bad[0])
                raise FinitenessError(
                    f"Layer {m}: {name}{list(index)} is {tensor[index]}",
                    layer=m,
                    tensor=name,
                    index=index,
                )


@dataclass(frozen=True, eq=False)
class PermutationSequence:
    """One permutation per hidden layer (the group element acting on weights)."""

    perms: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        perms = []
        for l, perm in enumerate(self.perms, 1):
            arr = np.array(perm, dtype=np.int64)
            if arr.ndim != 1 or not np.array_equal(np.sort(arr), np.arange(arr.size)):
                raise ShapeError(
                    f"Permutation for hidden layer {l} is not a bijection", layer=l
                )
            arr.setflags(write=False)
            perms.append(arr)
        object.__setattr__(self, "perms", tuple(perms))

    @classmethod
    def identity(cls, widths: Sequence[int]) -> PermutationSequence:
        return cls(tuple(np.arange(d) for d in widths))

    @classmethod
    def random(
        cls, widths: Sequence[int], rng: np.random.Generator
    ) -> PermutationSequence:
        # Generator.permutation is a Fisher-Yates shuffle.
        return cls(tuple(rng.permutation(d) for d in widths))

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(p.size for p in self.perms)

    def inverse(self) -> PermutationSequence:
        return PermutationSequence(tuple(np.argsort(p) for p in self.perms))

    def compose(self, other: PermutationSequence) -> PermutationSequence:
        """``self ∘ other``: acts as ``other`` followed by ``self``."""
        if self.widths != other.widths:
            raise ShapeError(
                f"Cannot compose permutations of widths {self.widths} "
                f"and {other.widths}"
            )
        return PermutationSequence(tuple(a[b] for a, b in zip(self.perms, other.perms)))

    def is_identity(self) -> bool:
        return all(np.array_equal(p, np.arange(p.size)) for p in self.perms)

    def to_lists(self) -> List[List[int]]:
        return [[int(i) for i in p] for p in self.perms]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PermutationSequence):
            return NotImplemented
        return self.widths == other.widths and all(
            np.array_equal(a, b) for a, b in zip(self.perms, other.perms)
        )

    def __hash__(self) -> int:
        return hash(tuple(p.tobytes() for p in self.perms))


def apply_permutation(
    v: WeightSpaceVector, p: PermutationSequence
) -> WeightSpaceVector:
    """Return ``p·v``: ``W_m' = P_m W_m P_{m-1}^T`` and ``b_m' = P_m b_m``."""
    if p.widths != v.hidden_widths:
        raise ShapeError(
            f"Permutation widths {p.widths} do not match "
            f"hidden widths {v.hidden_widths}"
        )
    inverse = [np.argsort(perm) for perm in p.perms]
    last = v.num_layers - 1
    weights, biases = [], []
    for m, (w, b) in enumerate(zip(v.weights, v.biases)):
        if m < last:
            w = w[inverse[m], :]
            b = b[inverse[m]]
        if m > 0:
            w = w[:, inverse[m - 1]]
        weights.append(w)
        biases.append(b)
    return WeightSpaceVector(tuple(weights), tuple(biases))


def random_permutation(spec: MlpSpec, seed: SeedLike) -> PermutationSequence:
    return PermutationSequence.random(spec.hidden_widths, np.random.default_rng(seed))


def check_same_shapes(v1: WeightSpaceVector, v2: WeightSpaceVector) -> None:
    if v1.num_layers != v2.num_layers or any(
        a.shape != b.shape for a, b in zip(v1.tensors(), v2.tensors())
    ):
        raise ShapeError(
            f"Weight vectors have different shapes: {v1.dims} vs {v2.dims}"
        )


def l2_distance(v1: WeightSpaceVector, v2: WeightSpaceVector) -> float:
    check_same_shapes(v1, v2)
    total = 0.0
    for a, b in zip(v1.tensors(), v2.tensors()):
        diff = a.astype(np.float64) - b.astype(np.float64)
        total += float(np.dot(diff.ravel(), diff.ravel()))
    return float(np.sqrt(total))


def inner_product(v1: WeightSpaceVector, v2: WeightSpaceVector) -> float:
    check_same_shapes(v1, v2)
    return float(
        sum(
            np.dot(a.astype(np.float64).ravel(), b.astype(np.float64).ravel())
            for a, b in zip(v1.tensors(), v2.tensors())
        )
    )


def interpolate(
    v1: WeightSpaceVector, v2: WeightSpaceVector, t: float
) -> WeightSpaceVector:
    """``(1 - t)·v1 + t·v2``, exact at both endpoints."""
    check_same_shapes(v1, v2)
    if t == 0.0:
        return v1
    if t == 1.0:
        return v2
    return WeightSpaceVector(
        tuple(
            (1.0 - t) * a.astype(np.float64) + t * b.astype(np.float64)
            for a, b in zip(v1.weights, v2.weights)
        ),
        tuple(
            (1.0 - t) * a.astype(np.float64) + t * b.astype(np.float64)
            for a, b in zip(v1.biases, v2.biases)
        ),
    )


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(root: int, *parts: int) -> int:
    """Mix ``root`` and ``parts`` into an independent 64-bit seed."""
    h = splitmix64(root & _MASK64)
    for part in parts:
        h = splitmix64(h ^ (part & _MASK64))
    return h
