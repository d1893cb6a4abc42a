"""Oracles: grid function equivalence, reconstruction loss and loss barriers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from weightspace import augment
from weightspace.align import AlignConfig, weight_matching
from weightspace.core import (
    Activation,
    MlpSpec,
    WeightSpaceVector,
    apply_permutation,
    check_same_shapes,
    interpolate,
    random_permutation,
)
from weightspace.errors import ConfigError
from weightspace.nnrun import forward, signal_mse
from weightspace.signals import Signal, sample_grid

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 64
SINE_TOL = 1e-4
DEFAULT_TOL = 1e-5


class EquivalenceReport(NamedTuple):
    max_abs_diff: float
    passed: bool


def default_tol(spec: MlpSpec) -> float:
    return SINE_TOL if spec.has_sine else DEFAULT_TOL


def _grid(spec: MlpSpec, resolution: int) -> np.ndarray:
    return sample_grid(resolution, spec.input_dim)


def _report(a: np.ndarray, b: np.ndarray, tol: float) -> EquivalenceReport:
    diff = float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))
    return EquivalenceReport(diff, diff < tol)


def func_equiv(
    v1: WeightSpaceVector,
    v2: WeightSpaceVector,
    spec: MlpSpec,
    resolution: int = DEFAULT_RESOLUTION,
    tol: Optional[float] = None,
) -> EquivalenceReport:
    """Compare both networks on a ``resolution``-per-axis grid.

    Networks are evaluated in 64-bit so the difference reflects the stored
    weights rather than evaluation rounding.
    """
    check_same_shapes(v1, v2)
    tol = default_tol(spec) if tol is None else tol
    x = _grid(spec, resolution)
    out1 = forward(v1, spec, x, dtype=np.float64)
    out2 = forward(v2, spec, x, dtype=np.float64)
    return _report(out1, out2, tol)


def transform_equiv(
    augmented: WeightSpaceVector,
    v: WeightSpaceVector,
    spec: MlpSpec,
    transform: Callable[[np.ndarray], np.ndarray],
    resolution: int = DEFAULT_RESOLUTION,
    tol: float = DEFAULT_TOL,
) -> EquivalenceReport:
    """Compare ``augmented(x)`` with ``v(transform(x))`` on the grid."""
    x = _grid(spec, resolution)
    return _report(
        forward(augmented, spec, x, dtype=np.float64),
        forward(v, spec, transform(x), dtype=np.float64),
        tol,
    )


def recon_loss(v: WeightSpaceVector, spec: MlpSpec, signal: Signal) -> float:
    """Mean squared error against the signal's targets (on their [-1, 1] scale)."""
    return signal_mse(v, spec, signal)


@dataclass
class BarrierProfile:
    lambdas: np.ndarray
    losses: np.ndarray
    barrier: float
    aligned: bool


def barrier_from(lambdas: np.ndarray, losses: np.ndarray) -> float:
    """``max_λ loss(λ) − [λ·loss(1) + (1 − λ)·loss(0)]``."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    chord = lambdas * losses[-1] + (1.0 - lambdas) * losses[0]
    return float(np.max(losses - chord))


def lmc_barrier(
    v1: WeightSpaceVector,
    v2: WeightSpaceVector,
    spec: MlpSpec,
    signal: Signal,
    aligned: bool,
    num_lambdas: int = 11,
    align_cfg: Optional[AlignConfig] = None,
) -> BarrierProfile:
    """Scan the reconstruction loss along ``(1 − λ)·v1 + λ·v2``.

    With ``aligned`` the path ends at the weight-matching alignment of ``v2``
    to ``v1`` instead.
    """
    if num_lambdas < 3:
        raise ConfigError("num_lambdas must be at least 3", key="num_lambdas")
    check_same_shapes(v1, v2)
    if aligned:
        cfg = align_cfg or AlignConfig()
        result = weight_matching(v1, v2, max_sweeps=cfg.max_sweeps, seed=cfg.seed)
        v2 = apply_permutation(v2, result.p)
    lambdas = np.linspace(0.0, 1.0, num_lambdas)
    losses = np.array(
        [recon_loss(interpolate(v1, v2, float(lam)), spec, signal) for lam in lambdas]
    )
    profile = BarrierProfile(lambdas, losses, barrier_from(lambdas, losses), aligned)
    logger.debug("Barrier %.6g (aligned=%s)", profile.barrier, aligned)
    return profile


class CheckResult(NamedTuple):
    name: str
    max_abs_diff: float
    passed: bool


def check_symmetries(
    v: WeightSpaceVector,
    spec: MlpSpec,
    seed: int,
    resolution: int = DEFAULT_RESOLUTION,
    tol: Optional[float] = None,
) -> List[CheckResult]:
    """Apply every function-preserving transform that ``spec`` admits and compare."""
    rng = np.random.default_rng(seed)
    results = []

    def record(name: str, transformed: WeightSpaceVector) -> None:
        report = func_equiv(v, transformed, spec, resolution, tol)
        results.append(CheckResult(name, report.max_abs_diff, report.passed))

    record("permutation", apply_permutation(v, random_permutation(spec, rng)))
    for layer in range(1, spec.num_layers):
        kind = spec.activation_after(layer)
        if kind is Activation.SINE:
            record(f"siren_negation[{layer}]", augment.siren_negation(v, spec, layer))
            k = rng.choice([-2, -1, 1, 2], size=spec.dims[layer])
            record(f"siren_bias[{layer}]", augment.siren_bias(v, spec, layer, k))
        elif kind is Activation.RELU:
            diag = np.exp2(rng.uniform(-1.0, 1.0, size=spec.dims[layer]))
            record(f"relu_scale[{layer}]", augment.relu_scale(v, spec, layer, diag))
    return results


def check_geometric(
    v: WeightSpaceVector,
    spec: MlpSpec,
    seed: int,
    resolution: int = DEFAULT_RESOLUTION,
    tol: float = DEFAULT_TOL,
) -> List[CheckResult]:
    """Check that translate, rotate and scale realize their input transforms."""
    rng = np.random.default_rng(seed)
    results = []

    def record(name: str, augmented: WeightSpaceVector, transform: Callable) -> None:
        report = transform_equiv(augmented, v, spec, transform, resolution, tol)
        results.append(CheckResult(name, report.max_abs_diff, report.passed))

    t = rng.uniform(-0.25, 0.25, size=spec.input_dim)
    record("translate", augment.translate(v, t), lambda x: x + t)
    if spec.input_dim == 2:
        angle = rng.uniform(-math.pi / 6, math.pi / 6)
        rotation = augment.rotation_matrix(angle)
        record("rotate", augment.rotate(v, angle), lambda x: x @ rotation.T)
    c = rng.uniform(0.8, 1.0)
    record("scale", augment.scale(v, c), lambda x: c * x)
    return results
