"""Synthetic 2D shape families used as the objects that INRs represent."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from weightspace.errors import ConfigError, ShapeError

SIGNAL_KINDS: Tuple[str, ...] = ("disk", "ring", "cross", "checker")
NUM_CLASSES = len(SIGNAL_KINDS)

CENTER_RANGE = 0.4
# Radius or scale as a fraction of the image side; explicit values clamp to
# this range.
MIN_SCALE = 0.15
MAX_SCALE = 0.45
# Each family draws its size from its own band inside [MIN_SCALE, MAX_SCALE],
# which keeps the classes apart in raw pixel space.
SCALE_BANDS: Dict[str, Tuple[float, float]] = {
    "disk": (0.35, MAX_SCALE),
    "ring": (MIN_SCALE, 0.3),
    "cross": (0.3, MAX_SCALE),
    "checker": (MIN_SCALE, MAX_SCALE),
}
RING_HALF_WIDTH = 0.07

FOREGROUND = 1.0
BACKGROUND = -1.0


@dataclass(frozen=True)
class SignalParams:
    kind: str
    center: Tuple[float, float]
    scale: float
    angle: float
    seed: int
    resolution: int


@dataclass(frozen=True, eq=False)
class Signal:
    """A discretized target: coordinates in [-1, 1]^d mapped to values in [-1, 1]."""

    coords: np.ndarray
    targets: np.ndarray
    class_id: int
    params: SignalParams

    def __post_init__(self) -> None:
        if self.coords.ndim != 2 or self.targets.ndim != 2:
            raise ShapeError("Signal coords and targets must be 2-dimensional arrays")
        if len(self.coords) != len(self.targets):
            raise ShapeError(
                f"Signal has {len(self.coords)} coordinates "
                f"but {len(self.targets)} targets"
            )
        if np.any(np.abs(self.coords) > 1.0) or np.any(np.abs(self.targets) > 1.0):
            raise ShapeError("Signal coordinates and targets must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.coords)


def sample_grid(resolution: int, dim: int = 2) -> np.ndarray:
    """Row-major grid of ``resolution**dim`` evenly spaced points in [-1, 1]^dim."""
    if resolution < 2:
        raise ConfigError(
            f"Grid resolution must be at least 2, got {resolution}", key="resolution"
        )
    axis = np.linspace(-1.0, 1.0, resolution)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, dim)


def _smoothstep(edge0: float, edge1: float, x: np.ndarray) -> np.ndarray:
    t = np.clip((x - edge0) / (edge1 - edge0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _signed_distance(
    kind: str, u: np.ndarray, v: np.ndarray, scale: float
) -> np.ndarray:
    """Approximate signed distance to the shape boundary, positive inside.

    ``u`` and ``v`` are rotated coordinates; ``scale`` is a fraction of the
    image side, which spans 2 in grid coordinates.
    """
    extent = 2.0 * scale
    r = np.hypot(u, v)
    if kind == "disk":
        return extent - r
    if kind == "ring":
        return RING_HALF_WIDTH - np.abs(r - extent)
    if kind == "cross":
        # arms run across the whole image
        half_width = extent / 6.0
        return np.maximum(half_width - np.abs(u), half_width - np.abs(v))
    # checker: square cells of side `extent`; sin·cos is odd about the origin,
    # so the pattern has zero mean on any symmetric grid
    return (extent / math.pi) * np.sin(math.pi * u / extent) * np.cos(
        math.pi * v / extent
    )


def make_signal(
    kind: str,
    resolution: int,
    seed: int,
    *,
    center: Optional[Sequence[float]] = None,
    scale: Optional[float] = None,
    angle: Optional[float] = None,
) -> Signal:
    """Draw a randomized shape of the given kind on a ``resolution``² grid.

    Position, scale and rotation come from ``seed``; explicit keyword values
    override the draws and are clamped to the valid ranges. Checker lattices are
    anchored at the image center and ignore ``center``.
    """
    if kind not in SIGNAL_KINDS:
        raise ConfigError(
            f"Unknown signal kind {kind!r}, expected one of {SIGNAL_KINDS}", key="kind"
        )
    rng = np.random.default_rng(seed)
    drawn_center = rng.uniform(-CENTER_RANGE, CENTER_RANGE, size=2)
    drawn_scale = rng.uniform(*SCALE_BANDS[kind])
    drawn_angle = rng.uniform(0.0, 2.0 * math.pi)

    c = np.clip(
        np.asarray(center if center is not None else drawn_center, dtype=np.float64),
        -CENTER_RANGE,
        CENTER_RANGE,
    )
    if kind == "checker":
        c = np.zeros(2)
    s = float(
        np.clip(scale if scale is not None else drawn_scale, MIN_SCALE, MAX_SCALE)
    )
    a = float(angle if angle is not None else drawn_angle)

    coords = sample_grid(resolution)
    px, py = coords[:, 0] - c[0], coords[:, 1] - c[1]
    u = math.cos(a) * px + math.sin(a) * py
    v = -math.sin(a) * px + math.cos(a) * py
    sd = _signed_distance(kind, u, v, s)
    edge = 2.0 / resolution
    inside = _smoothstep(-edge / 2, edge / 2, sd)
    targets = BACKGROUND + (FOREGROUND - BACKGROUND) * inside

    return Signal(
        coords=coords,
        targets=targets.astype(np.float32)[:, None],
        class_id=SIGNAL_KINDS.index(kind),
        params=SignalParams(
            kind=kind,
            center=(float(c[0]), float(c[1])),
            scale=s,
            angle=a,
            seed=int(seed),
            resolution=int(resolution),
        ),
    )
