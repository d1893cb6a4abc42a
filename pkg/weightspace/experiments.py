"""Desk-scale experiment grids: training views vs. objects, generalization to new
views and new objects, the augmentation table, and loss barriers.

Every grid is a list of independent jobs mapped over an optional executor and
collected in job order, so tables do not depend on the number of workers.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import pandas as pd

from weightspace.align import AlignConfig
from weightspace.augment import (
    AugmentPipeline,
    AugmentStep,
    GaussianNoise,
    Mask,
    Permute,
    QuantileMask,
    ReluScale,
    Rotate,
    Scale,
    SirenBias,
    SirenNegation,
    Translate,
    combination_pipeline,
)
from weightspace.config import RunConfig
from weightspace.core import Activation, LabeledSample, MlpSpec
from weightspace.errors import ConfigError, FormatError
from weightspace.mixup import MixupConfig
from weightspace.probe import (
    ProbeAugmentation,
    ProbeConfig,
    TrainingLog,
    eval_probe,
    train_probe,
)
from weightspace.reporting import summarize
from weightspace.store import (
    DatasetManifest,
    InrDataset,
    assemble,
    object_signal,
    plan_fits,
    run_fit_job,
)
from weightspace.verify import lmc_barrier

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

FitKey = Tuple[int, int]


def map_jobs(
    fn: Callable[[T], R], jobs: Iterable[T], executor: Optional[Executor] = None
) -> List[R]:
    if executor is None:
        return [fn(job) for job in jobs]
    return list(executor.map(fn, jobs))


def seed_configs(cfg: ProbeConfig, count: int) -> List[ProbeConfig]:
    """Probe configs for ``count`` runs; run ``i`` uses seed ``cfg.seed + i``."""
    if count < 1:
        raise ConfigError("At least one seed is required", key="seeds")
    return [dataclasses.replace(cfg, seed=cfg.seed + i) for i in range(count)]


def fit_all(
    manifests: Sequence[DatasetManifest], executor: Optional[Executor] = None
) -> List[InrDataset]:
    """Build several datasets from manifests sharing seed, spec and fit settings.

    A view requested by more than one manifest is fit once.
    """
    unique: Dict[FitKey, Tuple] = {}
    for manifest in manifests:
        for job in plan_fits(manifest):
            unique.setdefault((job.object_id, job.view_id), (job, manifest))
    logger.info("Fitting %d distinct INRs for %d datasets", len(unique), len(manifests))
    fitted = map_jobs(lambda pair: run_fit_job(*pair), unique.values(), executor)
    by_key: Dict[FitKey, LabeledSample] = dict(zip(unique, fitted))
    return [
        assemble(m, [by_key[(j.object_id, j.view_id)] for j in plan_fits(m)])
        for m in manifests
    ]


@dataclass
class ProbeRun:
    seed: int
    accuracy: float
    log: TrainingLog


def probe_run(
    train: InrDataset,
    test: InrDataset,
    aug: ProbeAugmentation,
    cfg: ProbeConfig,
) -> ProbeRun:
    model, log = train_probe(train, aug, cfg, test)
    accuracy = eval_probe(model, test)
    logger.info("Probe seed %d: test accuracy %.4f", cfg.seed, accuracy)
    return ProbeRun(cfg.seed, accuracy, log)


def probe_runs(
    train: InrDataset,
    test: InrDataset,
    aug: ProbeAugmentation,
    cfg: ProbeConfig,
    seeds: int,
    executor: Optional[Executor] = None,
) -> List[ProbeRun]:
    return map_jobs(
        lambda c: probe_run(train, test, aug, c), seed_configs(cfg, seeds), executor
    )


def curves_frame(runs: Sequence[ProbeRun]) -> pd.DataFrame:
    return pd.concat(
        [
            pd.DataFrame(
                {
                    "seed": run.seed,
                    "step": run.log.steps,
                    "train_loss": run.log.train_loss,
                    "test_acc": run.log.test_acc,
                }
            )
            for run in runs
        ],
        ignore_index=True,
    )


def _views_of(dataset: InrDataset, views: int) -> InrDataset:
    first = dataset.manifest.view_offset if dataset.manifest else 0
    keep = [i for i, s in enumerate(dataset.samples) if s.view_id < first + views]
    return dataset.subset(keep)


def views_experiment(
    cfg: RunConfig, executor: Optional[Executor] = None
) -> pd.DataFrame:
    """Accuracy on new views of the training objects (internal) and on unseen
    objects (external) as the number of training views per object grows."""
    exp = cfg.experiment
    pool, internal, external = fit_all(
        [
            cfg.dataset.manifest(exp.objects, exp.max_views),
            cfg.dataset.manifest(
                exp.objects, exp.internal_views, view_offset=exp.max_views
            ),
            cfg.dataset.manifest(exp.test_objects, 1, object_offset=exp.objects),
        ],
        executor,
    )
    aug = ProbeAugmentation(cfg.augment, cfg.mixup)
    jobs = [
        (views, probe_cfg)
        for views in range(1, exp.max_views + 1)
        for probe_cfg in seed_configs(cfg.probe, exp.seeds)
    ]

    def run(job: Tuple[int, ProbeConfig]) -> List[Dict]:
        views, probe_cfg = job
        model, _ = train_probe(_views_of(pool, views), aug, probe_cfg)
        return [
            {
                "views": views,
                "seed": probe_cfg.seed,
                "split": split,
                "accuracy": eval_probe(model, test),
            }
            for split, test in (("internal", internal), ("external", external))
        ]

    rows = [row for rows in map_jobs(run, jobs, executor) for row in rows]
    return summarize(pd.DataFrame(rows), by=["views", "split"])


def budget_experiment(
    cfg: RunConfig, executor: Optional[Executor] = None
) -> pd.DataFrame:
    """Fixed number of training INRs split between objects and views per object."""
    exp = cfg.experiment
    cells = []
    for views in exp.budget_views:
        if views < 1 or views > exp.budget_total:
            raise ConfigError(
                f"budget_views entry {views} must lie in [1, {exp.budget_total}]",
                key="experiment.budget_views",
            )
        cells.append((exp.budget_total // views, views))
    max_objects = max(objects for objects, _ in cells)
    manifests = [cfg.dataset.manifest(objects, views) for objects, views in cells]
    manifests.append(
        cfg.dataset.manifest(exp.test_objects, 1, object_offset=max_objects)
    )
    *trains, test = fit_all(manifests, executor)
    aug = ProbeAugmentation(cfg.augment, cfg.mixup)
    jobs = [
        (cell, train, probe_cfg)
        for cell, train in zip(cells, trains)
        for probe_cfg in seed_configs(cfg.probe, exp.seeds)
    ]

    def run(job: Tuple[Tuple[int, int], InrDataset, ProbeConfig]) -> Dict:
        (objects, views), train, probe_cfg = job
        model, _ = train_probe(train, aug, probe_cfg)
        return {
            "objects": objects,
            "views_per_object": views,
            "seed": probe_cfg.seed,
            "accuracy": eval_probe(model, test),
        }

    rows = map_jobs(run, jobs, executor)
    return summarize(pd.DataFrame(rows), by=["objects", "views_per_object"])


def augmentation_rows(
    spec: MlpSpec,
    seed: int = 0,
    mixup: Optional[MixupConfig] = None,
    align: Optional[AlignConfig] = None,
) -> Dict[str, ProbeAugmentation]:
    """One row per augmentation family and MixUp variant that ``spec`` admits."""
    steps: Dict[str, AugmentStep] = {"translate": Translate()}
    if spec.input_dim == 2:
        steps["rotate"] = Rotate()
    steps.update(
        scale=Scale(),
        gaussian_noise=GaussianNoise(),
        mask=Mask(),
        quantile_mask=QuantileMask(),
        permute=Permute(),
    )
    if Activation.SINE in spec.activations[:-1]:
        steps.update(siren_negation=SirenNegation(), siren_bias=SirenBias())
    if Activation.RELU in spec.activations[:-1]:
        steps["relu_scale"] = ReluScale()

    rows = {"none": ProbeAugmentation()}
    for name, step in steps.items():
        rows[name] = ProbeAugmentation(AugmentPipeline([step], seed))

    base = mixup or MixupConfig(seed=seed)
    if align is not None:
        base = dataclasses.replace(base, align=align)
    for variant in ("direct", "randomized", "aligned"):
        rows[f"mixup_{variant}"] = ProbeAugmentation(
            mixup=dataclasses.replace(base, variant=variant)
        )
    for variant in ("label_only", "input_only"):
        rows[variant] = ProbeAugmentation(
            mixup=dataclasses.replace(base, variant=variant)
        )

    if "siren_negation" in steps:
        pipeline = combination_pipeline(seed)
    else:
        pipeline = AugmentPipeline([Translate(), GaussianNoise()], seed)
    rows["combination"] = ProbeAugmentation(
        pipeline, dataclasses.replace(base, variant="aligned")
    )
    return rows


def augmentations_experiment(
    cfg: RunConfig, executor: Optional[Executor] = None
) -> pd.DataFrame:
    """Mean test accuracy per augmentation, one training view per object."""
    exp = cfg.experiment
    train, test = fit_all(
        [
            cfg.dataset.manifest(exp.objects, 1),
            cfg.dataset.manifest(exp.test_objects, 1, object_offset=exp.objects),
        ],
        executor,
    )
    rows = augmentation_rows(train.spec, cfg.augment.seed, cfg.mixup, cfg.align)
    if exp.rows:
        unknown = [name for name in exp.rows if name not in rows]
        if unknown:
            raise ConfigError(
                f"Unknown augmentation rows {unknown}, expected some of {list(rows)}",
                key="experiment.rows",
            )
        rows = {name: rows[name] for name in exp.rows}
    jobs = [
        (name, aug, probe_cfg)
        for name, aug in rows.items()
        for probe_cfg in seed_configs(cfg.probe, exp.seeds)
    ]

    def run(job: Tuple[str, ProbeAugmentation, ProbeConfig]) -> Dict:
        name, aug, probe_cfg = job
        result = probe_run(train, test, aug, probe_cfg)
        return {"augmentation": name, "seed": result.seed, "accuracy": result.accuracy}

    return summarize(pd.DataFrame(map_jobs(run, jobs, executor)), by=["augmentation"])


# Linear mode connectivity


@dataclass(frozen=True)
class LmcPair:
    index: int
    object_id: int
    view_a: int
    view_b: int


def lmc_pairs(dataset: InrDataset, count: int) -> List[LmcPair]:
    """The first two views of each of the first ``count`` objects having two."""
    if count < 1:
        raise ConfigError("At least one pair is required", key="lmc.pairs")
    views: Dict[int, List[int]] = {}
    for sample in dataset.samples:
        views.setdefault(sample.object_id, []).append(sample.view_id)
    eligible = [obj for obj in sorted(views) if len(views[obj]) >= 2]
    if len(eligible) < count:
        raise ConfigError(
            f"Dataset has {len(eligible)} objects with two views, {count} requested",
            key="lmc.pairs",
        )
    return [
        LmcPair(i, obj, *sorted(views[obj])[:2])
        for i, obj in enumerate(eligible[:count])
    ]


def lmc_pair(
    dataset: InrDataset,
    pair: LmcPair,
    aligned: bool,
    num_lambdas: int = 11,
    align_cfg: Optional[AlignConfig] = None,
) -> Dict:
    if dataset.manifest is None:
        raise FormatError("Loss barriers need the dataset manifest to rebuild signals")
    by_key = {(s.object_id, s.view_id): s for s in dataset.samples}
    v1 = by_key[(pair.object_id, pair.view_a)].v
    v2 = by_key[(pair.object_id, pair.view_b)].v
    signal = object_signal(dataset.manifest, pair.object_id)
    profile = lmc_barrier(v1, v2, dataset.spec, signal, aligned, num_lambdas, align_cfg)
    return {
        "pair": pair.index,
        "object_id": pair.object_id,
        "view_a": pair.view_a,
        "view_b": pair.view_b,
        "aligned": aligned,
        "barrier": profile.barrier,
        "loss_start": float(profile.losses[0]),
        "loss_mid": float(profile.losses[len(profile.losses) // 2]),
        "loss_end": float(profile.losses[-1]),
    }


def lmc_scan(
    dataset: InrDataset,
    pairs: int,
    modes: Sequence[bool] = (False, True),
    num_lambdas: int = 11,
    align_cfg: Optional[AlignConfig] = None,
    executor: Optional[Executor] = None,
) -> pd.DataFrame:
    """Loss barrier of every pair, unaligned and/or aligned."""
    jobs = [(pair, aligned) for pair in lmc_pairs(dataset, pairs) for aligned in modes]
    rows = map_jobs(
        lambda job: lmc_pair(dataset, job[0], job[1], num_lambdas, align_cfg),
        jobs,
        executor,
    )
    return pd.DataFrame(rows)
