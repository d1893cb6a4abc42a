"""Weight-space MixUp.

All variants mix ``λ·s1 + (1 − λ)·s2`` and differ in how ``s2``'s weights are
permuted first: not at all (direct), by a random permutation (randomized), or by
the weight-matching alignment to ``s1`` (aligned). ``label_only`` and
``input_only`` isolate the two halves of MixUp: label smoothing and weight
averaging with ``s1``'s label kept.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Tuple

import numpy as np

from weightspace.align import AlignConfig, weight_matching
from weightspace.core import (
    LabeledSample,
    PermutationSequence,
    SeedLike,
    apply_permutation,
    check_same_shapes,
    interpolate,
)
from weightspace.errors import ConfigError, LabelError

logger = logging.getLogger(__name__)

PairKey = Tuple[Tuple[int, int], Tuple[int, int]]
MixupVariant = Literal["direct", "randomized", "aligned", "label_only", "input_only"]
MIXUP_VARIANTS: Tuple[str, ...] = (
    "direct",
    "randomized",
    "aligned",
    "label_only",
    "input_only",
)


@dataclass
class MixupConfig:
    variant: MixupVariant = "aligned"
    # λ ~ Beta(alpha, alpha); alpha = 1 is uniform.
    alpha: float = 1.0
    seed: int = 0
    smoothing_eps: float = 0.1
    # Use this λ instead of sampling (ablations and tests).
    fixed_lambda: Optional[float] = None
    # Alignments are memoized per unordered pair; "epoch" clears the table each
    # epoch, "run" keeps it for the whole training run. Both give the same output.
    memo_scope: Literal["epoch", "run"] = "run"
    align: AlignConfig = field(default_factory=AlignConfig)

    def __post_init__(self) -> None:
        if self.variant not in MIXUP_VARIANTS:
            raise ConfigError(
                f"Unknown MixUp variant {self.variant!r}, "
                f"expected one of {MIXUP_VARIANTS}",
                key="variant",
            )
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive", key="alpha")
        if not 0.0 <= self.smoothing_eps < 1.0:
            raise ConfigError("smoothing_eps must lie in [0, 1)", key="smoothing_eps")
        if self.fixed_lambda is not None and not 0.0 <= self.fixed_lambda <= 1.0:
            raise ConfigError("fixed_lambda must lie in [0, 1]", key="fixed_lambda")
        if self.memo_scope not in ("epoch", "run"):
            raise ConfigError("memo_scope must be 'epoch' or 'run'", key="memo_scope")


def sample_lambda(alpha: float, seed: SeedLike) -> float:
    if alpha <= 0:
        raise ConfigError("alpha must be positive", key="alpha")
    return float(np.random.default_rng(seed).beta(alpha, alpha))


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"λ must lie in [0, 1], got {lam}", key="lambda")


def _mix_labels(y1: np.ndarray, y2: np.ndarray, lam: float) -> np.ndarray:
    if y1.shape != y2.shape:
        raise LabelError(f"Labels have different sizes: {y1.size} vs {y2.size}")
    if lam == 1.0:
        return y1
    if lam == 0.0:
        return y2
    return lam * y1 + (1.0 - lam) * y2


def _mix(
    s1: LabeledSample, s2: LabeledSample, lam: float, mix_labels: bool = True
) -> LabeledSample:
    _check_lambda(lam)
    check_same_shapes(s1.v, s2.v)
    label = _mix_labels(s1.label, s2.label, lam) if mix_labels else s1.label
    # interpolate(a, b, t) = (1 - t)·a + t·b, exact at both endpoints.
    return LabeledSample(interpolate(s2.v, s1.v, lam), label, s1.object_id, s1.view_id)


def _permuted(s: LabeledSample, p: PermutationSequence) -> LabeledSample:
    return LabeledSample(apply_permutation(s.v, p), s.label, s.object_id, s.view_id)


def direct_mixup(s1: LabeledSample, s2: LabeledSample, lam: float) -> LabeledSample:
    return _mix(s1, s2, lam)


def randomized_mixup(
    s1: LabeledSample, s2: LabeledSample, lam: float, seed: SeedLike
) -> LabeledSample:
    """Direct MixUp of ``s1`` with a randomly permuted copy of ``s2``."""
    _check_lambda(lam)
    rng = np.random.default_rng(seed)
    p = PermutationSequence.random(s2.v.hidden_widths, rng)
    if lam == 1.0:
        return s1
    return _mix(s1, _permuted(s2, p), lam)


class AlignmentMemo:
    """Thread-safe cache of weight-matching results keyed by unordered sample pair.

    The pair is always aligned in canonical order (lower ``(object_id, view_id)``
    first), so a cached answer does not depend on which order was asked first.
    """

    def __init__(self, cfg: Optional[AlignConfig] = None) -> None:
        self.cfg = cfg or AlignConfig()
        self._table: Dict[PairKey, PermutationSequence] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._table)

    def clear(self) -> None:
        with self._lock:
            self._table.clear()

    def align(self, s1: LabeledSample, s2: LabeledSample) -> PermutationSequence:
        """Permutation ``p`` such that ``p·s2.v`` is aligned to ``s1.v``."""
        k1, k2 = (s1.object_id, s1.view_id), (s2.object_id, s2.view_id)
        if k1 == k2:
            return PermutationSequence.identity(s1.v.hidden_widths)
        low, high = (s1, s2) if k1 < k2 else (s2, s1)
        key = (min(k1, k2), max(k1, k2))
        with self._lock:
            cached = self._table.get(key)
            if cached is not None:
                self.hits += 1
        if cached is None:
            cached = weight_matching(
                low.v, high.v, max_sweeps=self.cfg.max_sweeps, seed=self.cfg.seed
            ).p
            with self._lock:
                self.misses += 1
                cached = self._table.setdefault(key, cached)
        # Stored q aligns high to low; q^-1 aligns low to high.
        return cached if k1 < k2 else cached.inverse()


def aligned_mixup(
    s1: LabeledSample,
    s2: LabeledSample,
    lam: float,
    align_cfg: Optional[AlignConfig] = None,
    memo: Optional[AlignmentMemo] = None,
) -> LabeledSample:
    """Direct MixUp of ``s1`` with ``p*·s2``, where ``p*`` aligns ``s2`` to ``s1``."""
    _check_lambda(lam)
    if lam == 1.0:
        return s1
    if memo is not None:
        p = memo.align(s1, s2)
    else:
        cfg = align_cfg or AlignConfig()
        p = weight_matching(s1.v, s2.v, max_sweeps=cfg.max_sweeps, seed=cfg.seed).p
    return _mix(s1, _permuted(s2, p), lam)


def label_smooth(s: LabeledSample, eps: float) -> LabeledSample:
    """``y' = (1 − eps)·y + eps/C``; weights untouched."""
    if not 0.0 <= eps < 1.0:
        raise ConfigError("smoothing eps must lie in [0, 1)", key="smoothing_eps")
    if eps == 0.0:
        return s
    label = (1.0 - eps) * s.label + eps / s.num_classes
    return LabeledSample(s.v, label, s.object_id, s.view_id)


def input_average(s1: LabeledSample, s2: LabeledSample, lam: float) -> LabeledSample:
    """Mix weights as :func:`direct_mixup` but keep ``s1``'s label."""
    return _mix(s1, s2, lam, mix_labels=False)


def mix(
    s1: LabeledSample,
    s2: LabeledSample,
    cfg: MixupConfig,
    rng: np.random.Generator,
    memo: Optional[AlignmentMemo] = None,
) -> LabeledSample:
    """Apply the configured variant, drawing λ (and any permutation) from ``rng``."""
    if cfg.variant == "label_only":
        return label_smooth(s1, cfg.smoothing_eps)
    lam = cfg.fixed_lambda
    if lam is None:
        lam = sample_lambda(cfg.alpha, rng)
    if cfg.variant == "direct":
        return direct_mixup(s1, s2, lam)
    if cfg.variant == "randomized":
        return randomized_mixup(s1, s2, lam, rng)
    if cfg.variant == "input_only":
        return input_average(s1, s2, lam)
    return aligned_mixup(s1, s2, lam, cfg.align, memo)
