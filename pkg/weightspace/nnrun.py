"""Forward evaluation, reverse-mode gradients and Adam fitting for small MLPs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from weightspace.core import Activation, MlpSpec, WeightSpaceVector
from weightspace.errors import ConfigError, DivergenceError, ShapeError
from weightspace.signals import Signal

logger = logging.getLogger(__name__)

# Grids up to this many points are fitted full-batch.
FULL_BATCH_LIMIT = 4096
DIVERGENCE_LOSS = 1e6
PSNR_CAP = 200.0


@dataclass
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 5e-4
    batch_size: int = 4096
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # Stop as soon as the reconstruction PSNR (dB) exceeds this value.
    early_stop_psnr: Optional[float] = 40.0
    seed: int = 0
    # SIREN first-layer frequency, folded into the stored W_1 at init.
    omega0: float = 30.0
    # Interval (steps) for logging, heartbeats and minibatch early-stop checks.
    eval_every: int = 25

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigError("steps must be non-negative", key="steps")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive", key="learning_rate")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive", key="batch_size")
        for key in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, key) < 1.0:
                raise ConfigError(f"{key} must lie in (0, 1)", key=key)
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive", key="adam_eps")
        if self.eval_every <= 0:
            raise ConfigError("eval_every must be positive", key="eval_every")


@dataclass(frozen=True)
class GradientTape:
    """Gradients congruent in shape to a :class:`WeightSpaceVector`."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def tensors(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.SINE:
        return np.sin(z)
    if kind is Activation.RELU:
        return np.maximum(z, 0)
    return z


def _activate_grad(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.SINE:
        return np.cos(z)
    if kind is Activation.RELU:
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


def forward_cached(
    weights: Sequence[np.ndarray],
    biases: Sequence[np.ndarray],
    activations: Sequence[Activation],
    x: np.ndarray,
    dtype: type,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    h = x
    pre: List[np.ndarray] = []
    post: List[np.ndarray] = [h]
    for w, b, kind in zip(weights, biases, activations):
        z = h @ np.asarray(w, dtype).T + np.asarray(b, dtype)
        h = _activate(Activation(kind), z)
        pre.append(z)
        post.append(h)
    return pre, post


def backward_from_cache(
    weights: Sequence[np.ndarray],
    activations: Sequence[Activation],
    pre: Sequence[np.ndarray],
    post: Sequence[np.ndarray],
    upstream: np.ndarray,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    num_layers = len(weights)
    grad_w: List[np.ndarray] = [np.empty(0)] * num_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * num_layers
    g = upstream
    for m in reversed(range(num_layers)):
        g = g * _activate_grad(Activation(activations[m]), pre[m])
        grad_w[m] = g.T @ post[m]
        grad_b[m] = g.sum(axis=0)
        if m > 0:
            g = g @ np.asarray(weights[m], g.dtype)
    return grad_w, grad_b


def _as_batch(x: np.ndarray, width: int, dtype: type) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=dtype)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f"Expected inputs of width {width}, got shape {np.shape(x)}")
    return arr, single


def forward_arrays(
    weights: Sequence[np.ndarray],
    biases: Sequence[np.ndarray],
    activations: Sequence[Activation],
    x: np.ndarray,
    dtype: type = np.float32,
) -> np.ndarray:
    """Evaluate raw parameter arrays; ``dtype`` selects the arithmetic precision."""
    batch, single = _as_batch(x, np.shape(weights[0])[1], dtype)
    _, post = forward_cached(weights, biases, activations, batch, dtype)
    return post[-1][0] if single else post[-1]


def backward_arrays(
    weights: Sequence[np.ndarray],
    biases: Sequence[np.ndarray],
    activations: Sequence[Activation],
    x: np.ndarray,
    upstream: np.ndarray,
    dtype: type = np.float32,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Gradient of ``sum(upstream * f(x))`` with respect to every weight and bias."""
    batch, single = _as_batch(x, np.shape(weights[0])[1], dtype)
    up = np.asarray(upstream, dtype=dtype)
    if single:
        up = up[None, :]
    if up.shape != (batch.shape[0], np.shape(weights[-1])[0]):
        raise ShapeError(f"Upstream gradient has shape {np.shape(upstream)}")
    pre, post = forward_cached(weights, biases, activations, batch, dtype)
    return backward_from_cache(weights, activations, pre, post, up)


def _check_spec(v: WeightSpaceVector, spec: MlpSpec) -> None:
    if v.dims != spec.dims:
        raise ShapeError(f"Vector dims {v.dims} do not match spec dims {spec.dims}")


def forward(
    v: WeightSpaceVector, spec: MlpSpec, x: np.ndarray, dtype: type = np.float32
) -> np.ndarray:
    """``x_{m+1} = σ_m(W_{m+1} x_m + b_{m+1})`` for one point or a batch of points."""
    _check_spec(v, spec)
    return forward_arrays(v.weights, v.biases, spec.activations, x, dtype)


def backward(
    v: WeightSpaceVector,
    spec: MlpSpec,
    x: np.ndarray,
    upstream: np.ndarray,
    dtype: type = np.float32,
) -> GradientTape:
    _check_spec(v, spec)
    grad_w, grad_b = backward_arrays(
        v.weights, v.biases, spec.activations, x, upstream, dtype
    )
    return GradientTape(tuple(grad_w), tuple(grad_b))


class Adam:
    """Adam over a flat list of parameter arrays, with optional per-tensor lr scales."""

    def __init__(
        self,
        params: Sequence[np.ndarray],
        cfg: TrainConfig,
        lr_scales: Optional[Sequence[float]] = None,
    ) -> None:
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.lr_scales = list(lr_scales) if lr_scales else [1.0] * len(params)
        self.t = 0

    def step(self, params: List[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        correction1 = 1.0 - cfg.adam_beta1**self.t
        correction2 = 1.0 - cfg.adam_beta2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            g = g.astype(p.dtype, copy=False)
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * g
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * g * g
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            lr = cfg.learning_rate * self.lr_scales[i]
            update = lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            params[i] = (p - update).astype(p.dtype)


def init_weights(
    spec: MlpSpec, rng: np.random.Generator, omega0: float = 30.0
) -> WeightSpaceVector:
    """SIREN uniform init (ω₀ folded into W_1), Kaiming-uniform for ReLU nets.

    A SIREN's linear output layer draws from the hidden bound divided by ω₀, so a
    fresh network starts close to the zero function.
    """
    siren = spec.has_sine
    weights, biases = [], []
    for m in range(1, spec.num_layers + 1):
        d_in = spec.dims[m - 1]
        shape = spec.weight_shape(m)
        if m == 1 and spec.activations[0] is Activation.SINE:
            w = rng.uniform(-1.0 / d_in, 1.0 / d_in, size=shape) * omega0
        else:
            bound = math.sqrt(6.0 / d_in)
            if siren and m == spec.num_layers:
                bound /= omega0
            w = rng.uniform(-bound, bound, size=shape)
        weights.append(w)
        biases.append(np.zeros(spec.dims[m]))
    return WeightSpaceVector(tuple(weights), tuple(biases))


def mse_to_psnr(mse_unit: float) -> float:
    """PSNR in dB for an MSE measured on [0, 1]-scaled intensities (MAX = 1)."""
    if mse_unit <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse_unit))


def _mse(pred: np.ndarray, targets: np.ndarray) -> float:
    resid = pred.astype(np.float64) - targets.astype(np.float64)
    return float(np.mean(resid * resid))


def signal_mse(v: WeightSpaceVector, spec: MlpSpec, signal: Signal) -> float:
    """Mean squared error of the network against the signal targets ([-1, 1] range)."""
    _check_signal(spec, signal)
    return _mse(forward(v, spec, signal.coords), signal.targets)


def psnr(v: WeightSpaceVector, spec: MlpSpec, signal: Signal) -> float:
    # Mapping [-1, 1] -> [0, 1] halves every residual.
    return mse_to_psnr(signal_mse(v, spec, signal) / 4.0)


def _check_signal(spec: MlpSpec, signal: Signal) -> None:
    if len(signal.coords) == 0:
        raise ShapeError("Signal has no samples")
    in_dim, out_dim = signal.coords.shape[1], signal.targets.shape[1]
    if in_dim != spec.input_dim or out_dim != spec.output_dim:
        raise ShapeError(
            f"Signal maps {in_dim} -> {out_dim} dims, "
            f"spec maps {spec.input_dim} -> {spec.output_dim}"
        )


def fit_inr(
    signal: Signal,
    spec: MlpSpec,
    cfg: TrainConfig,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> WeightSpaceVector:
    """Fit an INR to ``signal`` with Adam on the mean squared error.

    Deterministic for a fixed ``cfg.seed``. Raises :class:`DivergenceError` when
    the loss becomes non-finite or exceeds ``DIVERGENCE_LOSS``.
    """
    _check_signal(spec, signal)
    rng = np.random.default_rng(cfg.seed)
    init = init_weights(spec, rng, cfg.omega0)
    params = [np.array(t, dtype=np.float32) for t in init.tensors()]
    # Sine layers store ω₀-scaled values; scaling their step size by ω₀
    # reproduces the trajectory of the unscaled SIREN parametrization.
    lr_scales: List[float] = []
    for kind in spec.activations:
        scale = cfg.omega0 if kind is Activation.SINE else 1.0
        lr_scales.extend((scale, scale))
    adam = Adam(params, cfg, lr_scales)

    coords = signal.coords.astype(np.float32)
    targets = signal.targets.astype(np.float32)
    n = len(coords)
    full_batch = n <= FULL_BATCH_LIMIT
    batch_size = min(cfg.batch_size, n)
    logger.debug(
        "Fitting %s INR on %d points for up to %d steps", spec.dims, n, cfg.steps
    )

    steps_used = cfg.steps
    for step in range(cfg.steps):
        if full_batch:
            xb, yb = coords, targets
        else:
            idx = np.sort(rng.choice(n, size=batch_size, replace=False))
            xb, yb = coords[idx], targets[idx]
        weights, biases = params[0::2], params[1::2]
        pre, post = forward_cached(weights, biases, spec.activations, xb, np.float32)
        resid = post[-1] - yb
        loss = _mse(post[-1], yb)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise DivergenceError(step, loss)

        if cfg.early_stop_psnr is not None:
            if full_batch:
                current = mse_to_psnr(loss / 4.0)
            elif step % cfg.eval_every == 0:
                pred = forward_arrays(weights, biases, spec.activations, coords)
                current = mse_to_psnr(_mse(pred, targets) / 4.0)
            else:
                current = -math.inf
            if current > cfg.early_stop_psnr:
                logger.debug("Early stop at step %d with PSNR %.2f dB", step, current)
                steps_used = step
                break

        if on_step is not None and step % cfg.eval_every == 0:
            on_step(step, loss)
        upstream = (2.0 / resid.size) * resid
        grad_w, grad_b = backward_from_cache(
            weights, spec.activations, pre, post, upstream
        )
        grads = [g for pair in zip(grad_w, grad_b) for g in pair]
        adam.step(params, grads)

    v = WeightSpaceVector(tuple(params[0::2]), tuple(params[1::2]))
    logger.info(
        "Fitted %s INR in %d steps, PSNR %.2f dB",
        spec.dims,
        steps_used,
        mse_to_psnr(signal_mse(v, spec, signal) / 4.0),
    )
    return v
