"""Weight alignment: the permutation sequence ``p`` minimizing ``‖v1 − p·v2‖``.

:func:`weight_matching` is coordinate descent over hidden layers, each step an
exact linear assignment problem solved by :func:`lap_solve`.
:func:`brute_force_alignment` enumerates every candidate and serves as an oracle
at tiny widths.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from weightspace.core import (
    PermutationSequence,
    SeedLike,
    WeightSpaceVector,
    apply_permutation,
    check_same_shapes,
    inner_product,
    l2_distance,
)
from weightspace.errors import (
    AlignmentSizeError,
    ConfigError,
    FinitenessError,
    ShapeError,
)

logger = logging.getLogger(__name__)

# Assignments whose values differ by less than this (relative) count as ties.
TIE_RTOL = 1e-9
BRUTE_FORCE_LIMIT = 10**6


@dataclass
class AlignConfig:
    max_sweeps: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be at least 1", key="max_sweeps")


@dataclass
class AlignmentResult:
    p: PermutationSequence
    # ‖v1 − p·v2‖₂
    objective: float
    sweeps_used: int
    converged: bool
    # Objective after the initial state and after every accepted layer update.
    history: List[float] = field(default_factory=list)


def _as_score(score: np.ndarray) -> np.ndarray:
    s = np.asarray(score, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"Score matrix must be square, got shape {s.shape}")
    bad = np.argwhere(~np.isfinite(s))
    if len(bad):
        index = tuple(int(i) for i in bad[0])
        raise FinitenessError(
            f"Score matrix entry {list(index)} is {s[index]}",
            layer=0,
            tensor="score",
            index=index,
        )
    return s


def assignment_value(score: np.ndarray, sigma: Sequence[int]) -> float:
    """``Σ_i score[i, sigma[i]]`` accumulated in 64-bit."""
    s = np.asarray(score, dtype=np.float64)
    return float(s[np.arange(len(sigma)), np.asarray(sigma)].sum())


def _best_value(s: np.ndarray) -> float:
    if s.shape[0] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(s, maximize=True)
    return float(s[rows, cols].sum())


def lap_solve(score: np.ndarray) -> np.ndarray:
    """The assignment ``σ`` maximizing ``Σ_i score[i, σ(i)]``.

    Among optimal assignments (up to ``TIE_RTOL``) the lexicographically smallest
    ``σ`` is returned, so the result does not depend on solver internals.
    """
    s = _as_score(score)
    n = s.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    _, sigma = linear_sum_assignment(s, maximize=True)
    sigma = sigma.astype(np.int64)
    best = assignment_value(s, sigma)
    tol = TIE_RTOL * max(1.0, abs(best), float(np.abs(s).max()))
    if n == 1:
        return sigma

    # Forbidding an edge with a penalty no feasible optimum can absorb.
    penalty = float(s.min()) - 1.0 - n * float(s.max() - s.min())

    unique = True
    for i in range(n):
        probe = s.copy()
        probe[i, sigma[i]] = penalty
        if _best_value(probe) >= best - tol:
            unique = False
            break
    if unique:
        return sigma

    # Ties: fix rows in order, each to the smallest column that still admits
    # an optimal completion.
    result = np.empty(n, dtype=np.int64)
    free_rows = list(range(n))
    free_cols = list(range(n))
    fixed_value = 0.0
    for i in range(n):
        free_rows.remove(i)
        for c in sorted(free_cols):
            remaining = [col for col in free_cols if col != c]
            rest = _best_value(s[np.ix_(free_rows, remaining)]) if free_rows else 0.0
            if fixed_value + s[i, c] + rest >= best - tol:
                result[i] = c
                fixed_value += s[i, c]
                free_cols.remove(c)
                break
        else:  # pragma: no cover - the optimum itself is always a completion
            raise ArithmeticError("Assignment refinement found no feasible column")
    return result


def _layer_score(
    a: WeightSpaceVector,
    b: WeightSpaceVector,
    inverses: List[np.ndarray],
    l: int,
) -> np.ndarray:
    """Score matrix for hidden layer ``l`` (1-indexed), other layers held fixed."""
    m = a.num_layers
    w_a = a.weights[l - 1].astype(np.float64)
    w_b = b.weights[l - 1].astype(np.float64)
    if l > 1:
        w_b = w_b[:, inverses[l - 2]]
    score = w_a @ w_b.T
    bias_a = a.biases[l - 1].astype(np.float64)
    bias_b = b.biases[l - 1].astype(np.float64)
    score += np.outer(bias_a, bias_b)
    next_a = a.weights[l].astype(np.float64)
    next_b = b.weights[l].astype(np.float64)
    if l + 1 < m:
        next_b = next_b[inverses[l], :]
    score += next_a.T @ next_b
    return score


def _from_inverses(inverses: List[np.ndarray]) -> PermutationSequence:
    return PermutationSequence(tuple(np.argsort(inv) for inv in inverses))


def weight_matching(
    v1: WeightSpaceVector,
    v2: WeightSpaceVector,
    max_sweeps: int = 50,
    seed: SeedLike = 0,
) -> AlignmentResult:
    """Align ``v2`` to ``v1`` by coordinate descent over hidden layers.

    Starts from identity permutations. Each sweep visits the hidden layers in a
    seeded random order and replaces that layer's permutation with the exact
    assignment maximizing its score; an update is accepted only when it raises
    the score, so the distance never increases. Stops after a sweep with no
    accepted update or after ``max_sweeps`` sweeps.
    """
    check_same_shapes(v1, v2)
    if max_sweeps < 1:
        raise ConfigError("max_sweeps must be at least 1", key="max_sweeps")
    rng = np.random.default_rng(seed)
    widths = v1.hidden_widths
    # inverses[l-1][i] is the v2 neuron placed at position i of hidden layer l.
    inverses = [np.arange(d) for d in widths]
    history = [l2_distance(v1, v2)]

    converged = False
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        progress = False
        for idx in rng.permutation(len(widths)):
            l = int(idx) + 1
            score = _layer_score(v1, v2, inverses, l)
            sigma = lap_solve(score)
            if np.array_equal(sigma, inverses[l - 1]):
                continue
            old = assignment_value(score, inverses[l - 1])
            new = assignment_value(score, sigma)
            if new <= old + TIE_RTOL * max(1.0, abs(old)):
                continue
            inverses[l - 1] = sigma
            progress = True
            current = apply_permutation(v2, _from_inverses(inverses))
            history.append(l2_distance(v1, current))
        logger.debug("Sweep %d: objective %.6g", sweeps, history[-1])
        if not progress:
            converged = True
            break

    p = _from_inverses(inverses)
    return AlignmentResult(
        p=p,
        objective=l2_distance(v1, apply_permutation(v2, p)),
        sweeps_used=sweeps,
        converged=converged,
        history=history,
    )


def brute_force_size(widths: Sequence[int]) -> int:
    return math.prod(math.factorial(d) for d in widths)


def brute_force_alignment(
    v1: WeightSpaceVector, v2: WeightSpaceVector, limit: Optional[int] = None
) -> AlignmentResult:
    """Exhaustive minimum of ``‖v1 − p·v2‖`` over all permutation sequences.

    Candidates are visited in lexicographic order and only a strictly smaller
    distance replaces the incumbent, so ties go to the lexicographically first.
    """
    check_same_shapes(v1, v2)
    widths = v1.hidden_widths
    limit = BRUTE_FORCE_LIMIT if limit is None else limit
    count = brute_force_size(widths)
    if count > limit:
        raise AlignmentSizeError(
            f"Brute-force alignment over widths {widths} needs {count} candidates "
            f"(limit {limit})"
        )
    best: Optional[PermutationSequence] = None
    best_distance = math.inf
    history: List[float] = []
    for perms in itertools.product(*(itertools.permutations(range(d)) for d in widths)):
        candidate = PermutationSequence(tuple(np.array(perm) for perm in perms))
        distance = l2_distance(v1, apply_permutation(v2, candidate))
        if distance < best_distance:
            best, best_distance = candidate, distance
            history.append(distance)
    assert best is not None
    return AlignmentResult(
        p=best,
        objective=best_distance,
        sweeps_used=count,
        converged=True,
        history=history,
    )


def alignment_score(
    v1: WeightSpaceVector, v2: WeightSpaceVector, p: PermutationSequence
) -> float:
    """``⟨v1, p·v2⟩``.

    Since ``‖p·v2‖ = ‖v2‖``, maximizing it minimizes ``‖v1 − p·v2‖``.
    """
    return inner_product(v1, apply_permutation(v2, p))
