"""CSV output. Every table starts with a ``#`` comment line carrying the seed and
toolkit version, followed by a header row."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import pandas as pd

from weightspace import __version__
from weightspace.errors import FormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def provenance(seed: int, **extra: object) -> str:
    fields = {"seed": seed, "version": __version__, **extra}
    return "# " + " ".join(f"{k}={v}" for k, v in fields.items())


def to_csv_text(frame: pd.DataFrame, seed: int, **extra: object) -> str:
    body = frame.to_csv(index=False, lineterminator="\n")
    return provenance(seed, **extra) + "\n" + body


def write_csv(
    frame: pd.DataFrame, path: Optional[PathLike], seed: int, **extra: object
) -> str:
    """Write ``frame`` to ``path`` (or just return the text when ``path`` is None)."""
    text = to_csv_text(frame, seed, **extra)
    if path is not None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
        logger.info("Wrote %d rows to %s", len(frame), target)
    return text


def read_csv(path: PathLike) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Read a table written by :func:`write_csv` and its provenance fields."""
    target = Path(path)
    with target.open(encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
    if not first.startswith("# "):
        raise FormatError(f"{target} has no provenance line")
    meta = dict(item.split("=", 1) for item in first[2:].split())
    return pd.read_csv(target, skiprows=1), meta


def summarize(
    frame: pd.DataFrame, by: Sequence[str], value: str = "accuracy"
) -> pd.DataFrame:
    """Mean, sample standard deviation, standard error and count of ``value``
    per group, in first-appearance group order."""
    grouped = frame.groupby(list(by), sort=False)[value]
    table = grouped.agg(["mean", "std", "count"]).reset_index()
    table["std"] = table["std"].fillna(0.0)
    table["sem"] = table["std"] / table["count"].pow(0.5)
    return table.rename(
        columns={
            "mean": f"{value}_mean",
            "std": f"{value}_std",
            "sem": f"{value}_sem",
            "count": "seeds",
        }
    )


def seed_table(seeds: Sequence[int], accuracies: Sequence[float]) -> pd.DataFrame:
    """Per-seed accuracies followed by ``mean`` and ``std`` rows."""
    frame = pd.DataFrame({"seed": [str(s) for s in seeds], "accuracy": accuracies})
    std = float(frame["accuracy"].std()) if len(frame) > 1 else 0.0
    summary = pd.DataFrame(
        {"seed": ["mean", "std"], "accuracy": [frame["accuracy"].mean(), std]}
    )
    return pd.concat([frame, summary], ignore_index=True)
