"""``weightspace`` command line.

Exit codes: 0 success, 1 computational failure (including failed oracle
checks), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import asyncio
import contextlib
import dataclasses
import logging
import sys
from concurrent.futures import Executor, ThreadPoolExecutor
from pathlib import Path
from typing import (
    Any,
    Awaitable,
    Callable,
    Iterator,
    List,
    Optional,
    Sequence,
    TypeVar,
)

import numpy as np
import pandas as pd
import yaml
from temporalio.client import Client, WorkflowFailureError
from temporalio.service import RPCError

from weightspace import __version__, experiments, reporting, store
from weightspace.align import weight_matching
from weightspace.augment import apply_pipeline
from weightspace.config import (
    RunConfig,
    default_jobs,
    default_temporal_address,
    load_config,
    load_pipeline,
    to_yaml,
)
from weightspace.core import LabeledSample, derive_seed
from weightspace.errors import ConfigError, OrchestrationError, WeightSpaceError
from weightspace.mixup import MIXUP_VARIANTS, MixupConfig, mix
from weightspace.probe import ProbeAugmentation
from weightspace.verify import check_geometric, check_symmetries

logger = logging.getLogger(__name__)

USAGE_ERROR = 2
FAILURE = 1

T = TypeVar("T")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _bool(text: str) -> bool:
    if text.lower() in ("true", "yes", "1"):
        return True
    if text.lower() in ("false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (defaults when omitted)")
    common.add_argument(
        "--jobs",
        type=_positive_int,
        help="Parallel fits/probe runs (default: $WEIGHTSPACE_JOBS or 1)",
    )
    common.add_argument(
        "--temporal-address",
        help="Run fan-out through Temporal workflows on this server "
        "(default: $WEIGHTSPACE_TEMPORAL_ADDRESS)",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="weightspace", description="Weight-space augmentation toolkit"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="Fit and save a dataset")
    gen.add_argument("--out", required=True, help="Output dataset directory")
    gen.add_argument("--objects", type=_positive_int, help="Override num_objects")
    gen.add_argument("--views", type=_positive_int, help="Override views_per_object")
    gen.add_argument("--object-offset", type=int, default=0)
    gen.add_argument("--view-offset", type=int, default=0)

    augment = sub.add_parser(
        "augment", parents=[common], help="Apply a pipeline to every sample"
    )
    augment.add_argument("--in", dest="input", required=True)
    augment.add_argument(
        "--pipeline",
        help="YAML pipeline ({steps: [...], seed: S}); default: the config's",
    )
    augment.add_argument("--seed", type=int, help="Override the pipeline seed")
    augment.add_argument("--out", required=True)

    align = sub.add_parser("align", parents=[common], help="Align two samples")
    align.add_argument("--in", dest="input", required=True)
    align.add_argument("--a", type=int, required=True, help="Sample index")
    align.add_argument("--b", type=int, required=True, help="Sample index")

    mixup = sub.add_parser("mixup", parents=[common], help="Mix two samples")
    mixup.add_argument("--in", dest="input", required=True)
    mixup.add_argument("--variant", choices=MIXUP_VARIANTS, default="aligned")
    mixup.add_argument("--lambda", dest="lam", type=float, help="Default: Beta draw")
    mixup.add_argument("--seed", type=int, default=0)
    mixup.add_argument("--a", type=int, required=True)
    mixup.add_argument("--b", type=int, required=True)
    mixup.add_argument("--out", required=True, help="Output sample file")

    verify = sub.add_parser("verify", parents=[common], help="Run grid oracles")
    verify.add_argument("--in", dest="input", required=True)
    verify.add_argument("--check", choices=["symmetry", "geometric"], required=True)
    verify.add_argument("--resolution", type=_positive_int, default=64)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", help="Per-check CSV")

    lmc = sub.add_parser("lmc", parents=[common], help="Loss barriers of view pairs")
    lmc.add_argument("--in", dest="input", required=True)
    lmc.add_argument("--pairs", type=_positive_int, help="Override lmc.pairs")
    lmc.add_argument(
        "--aligned", type=_bool, help="Only aligned or only unaligned (default: both)"
    )
    lmc.add_argument("--out", required=True)

    probe = sub.add_parser(
        "train-probe", parents=[common], help="Train and evaluate the probe"
    )
    probe.add_argument("--train", required=True)
    probe.add_argument("--test", required=True)
    probe.add_argument(
        "--aug", help="YAML with augment/mixup sections overriding the config's"
    )
    probe.add_argument("--seeds", type=_positive_int, default=1)
    probe.add_argument("--out", required=True)
    probe.add_argument("--log-csv", help="Training curves per seed")

    experiment = sub.add_parser(
        "experiment", parents=[common], help="Desk-scale experiment grids"
    )
    experiment.add_argument("grid", choices=["views", "budget", "augmentations"])
    experiment.add_argument("--objects", type=_positive_int)
    experiment.add_argument("--max-views", type=_positive_int)
    experiment.add_argument("--test-objects", type=_positive_int)
    experiment.add_argument("--total", type=_positive_int, help="budget_total")
    experiment.add_argument("--seeds", type=_positive_int)
    experiment.add_argument("--out", required=True)
    return parser


@contextlib.contextmanager
def _executor(jobs: int) -> Iterator[Optional[Executor]]:
    if jobs <= 1:
        yield None
        return
    with ThreadPoolExecutor(jobs) as pool:
        yield pool


def _sample(dataset: store.InrDataset, index: int, flag: str) -> LabeledSample:
    if not 0 <= index < len(dataset):
        raise ConfigError(
            f"--{flag} {index} out of range for {len(dataset)} samples", key=flag
        )
    return dataset.samples[index]


def _absolute(path: str) -> str:
    return str(Path(path).resolve())


class Runner:
    def __init__(self, args: argparse.Namespace, cfg: RunConfig) -> None:
        self.args = args
        self.cfg = cfg
        self.jobs = args.jobs or default_jobs()
        self.temporal_address = args.temporal_address or default_temporal_address()

    def run(self) -> int:
        command = self.args.command.replace("-", "_")
        return getattr(self, f"cmd_{command}")()

    def _remote(self, call: Callable[[Any, Client], Awaitable[T]]) -> T:
        # Imported lazily: the local path never touches the workflow code.
        from orchestration import starter

        async def go() -> T:
            try:
                client = await starter.connect(self.temporal_address)
            except RuntimeError as err:
                raise OrchestrationError(
                    f"Cannot reach Temporal at {self.temporal_address}: {err}"
                ) from err
            return await call(starter, client)

        return asyncio.run(go())

    def cmd_gen(self) -> int:
        args = self.args
        manifest = self.cfg.dataset.manifest(
            args.objects, args.views, args.object_offset, args.view_offset
        )
        if self.temporal_address:
            dataset = self._remote(lambda s, client: s.build_dataset(client, manifest))
        else:
            with _executor(self.jobs) as pool:
                dataset = store.build_from_manifest(manifest, pool)
        store.save(dataset, args.out)
        logger.info("Saved %d samples to %s", len(dataset), args.out)
        return 0

    def cmd_augment(self) -> int:
        args = self.args
        pipeline = self.cfg.augment
        if args.pipeline:
            pipeline = load_pipeline(args.pipeline)
        if args.seed is not None:
            pipeline = dataclasses.replace(pipeline, seed=args.seed)
        dataset = store.load(args.input)
        pipeline.check(dataset.spec)
        samples = [
            LabeledSample(
                apply_pipeline(
                    pipeline,
                    s.v,
                    dataset.spec,
                    derive_seed(pipeline.seed, s.object_id, s.view_id),
                ),
                s.label,
                s.object_id,
                s.view_id,
            )
            for s in dataset.samples
        ]
        manifest = dataclasses.replace(
            dataset.manifest,
            notes={
                "derived_from": _absolute(args.input),
                "pipeline": dataclasses.asdict(pipeline),
            },
        )
        store.save(store.InrDataset(dataset.spec, samples, manifest), args.out)
        return 0

    def cmd_align(self) -> int:
        dataset = store.load(self.args.input)
        a = _sample(dataset, self.args.a, "a")
        b = _sample(dataset, self.args.b, "b")
        align_cfg = self.cfg.align
        result = weight_matching(a.v, b.v, align_cfg.max_sweeps, align_cfg.seed)
        report = {
            "permutations": result.p.to_lists(),
            "objective": result.objective,
            "sweeps_used": result.sweeps_used,
            "converged": result.converged,
        }
        print(yaml.safe_dump(report, sort_keys=False), end="")
        return 0

    def cmd_mixup(self) -> int:
        args = self.args
        dataset = store.load(args.input)
        a = _sample(dataset, args.a, "a")
        b = _sample(dataset, args.b, "b")
        base = self.cfg.mixup or MixupConfig(align=self.cfg.align)
        mix_cfg = dataclasses.replace(
            base, variant=args.variant, fixed_lambda=args.lam, seed=args.seed
        )
        mixed = mix(a, b, mix_cfg, np.random.default_rng(args.seed))
        store.save_sample(mixed, dataset.spec, args.out)
        return 0

    def cmd_verify(self) -> int:
        args = self.args
        dataset = store.load(args.input)
        check = check_symmetries if args.check == "symmetry" else check_geometric
        rows = []
        for s in dataset.samples:
            seed = derive_seed(args.seed, s.object_id, s.view_id)
            for result in check(s.v, dataset.spec, seed, args.resolution):
                rows.append(
                    {
                        "object_id": s.object_id,
                        "view_id": s.view_id,
                        "check": result.name,
                        "max_abs_diff": result.max_abs_diff,
                        "passed": result.passed,
                    }
                )
        frame = pd.DataFrame(rows)
        failed = int((~frame["passed"]).sum())
        if args.out:
            reporting.write_csv(frame, args.out, args.seed, check=args.check)
        logger.info(
            "%d of %d %s checks passed (worst diff %.3g)",
            len(frame) - failed,
            len(frame),
            args.check,
            frame["max_abs_diff"].max(),
        )
        return FAILURE if failed else 0

    def cmd_lmc(self) -> int:
        args = self.args
        lmc_cfg = self.cfg.lmc
        pairs = args.pairs or lmc_cfg.pairs
        modes: Sequence[bool] = (False, True)
        if args.aligned is not None:
            modes = (args.aligned,)
        dataset = store.load(args.input)
        if self.temporal_address:
            frame = self._remote(
                lambda s, client: s.lmc_scan(
                    client,
                    _absolute(args.input),
                    experiments.lmc_pairs(dataset, pairs),
                    modes,
                    lmc_cfg.num_lambdas,
                    self.cfg.align,
                )
            )
        else:
            with _executor(self.jobs) as pool:
                frame = experiments.lmc_scan(
                    dataset, pairs, modes, lmc_cfg.num_lambdas, self.cfg.align, pool
                )
        reporting.write_csv(frame, args.out, self.cfg.align.seed)
        for aligned, group in frame.groupby("aligned"):
            logger.info(
                "Mean barrier (aligned=%s): %.6g", aligned, group["barrier"].mean()
            )
        return 0

    def cmd_train_probe(self) -> int:
        args = self.args
        cfg = self.cfg
        if args.aug:
            aug_cfg = load_config(args.aug)
            cfg = dataclasses.replace(cfg, augment=aug_cfg.augment, mixup=aug_cfg.mixup)
        if self.temporal_address:
            runs = self._remote(
                lambda s, client: s.probe_sweep(
                    client, _absolute(args.train), _absolute(args.test), cfg, args.seeds
                )
            )
        else:
            train, test = store.load(args.train), store.load(args.test)
            aug = ProbeAugmentation(cfg.augment, cfg.mixup)
            with _executor(self.jobs) as pool:
                runs = experiments.probe_runs(
                    train, test, aug, cfg.probe, args.seeds, pool
                )
        table = reporting.seed_table(
            [r.seed for r in runs], [r.accuracy for r in runs]
        )
        reporting.write_csv(table, args.out, cfg.probe.seed)
        if args.log_csv:
            curves = experiments.curves_frame(runs)
            reporting.write_csv(curves, args.log_csv, cfg.probe.seed)
        logger.info(
            "Accuracy over %d seeds: %.4f +- %.4f",
            len(runs),
            table["accuracy"].iloc[-2],
            table["accuracy"].iloc[-1],
        )
        return 0

    def cmd_experiment(self) -> int:
        args = self.args
        overrides = {
            "objects": args.objects,
            "max_views": args.max_views,
            "test_objects": args.test_objects,
            "budget_total": args.total,
            "seeds": args.seeds,
        }
        exp = dataclasses.replace(
            self.cfg.experiment,
            **{k: v for k, v in overrides.items() if v is not None},
        )
        cfg = dataclasses.replace(self.cfg, experiment=exp)
        grids = {
            "views": experiments.views_experiment,
            "budget": experiments.budget_experiment,
            "augmentations": experiments.augmentations_experiment,
        }
        with _executor(self.jobs) as pool:
            frame = grids[args.grid](cfg, pool)
        reporting.write_csv(frame, args.out, cfg.probe.seed, grid=args.grid)
        return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s [%(levelname)8s] %(message)s",
    )
    try:
        cfg = load_config(args.config)
        logger.info("Resolved config:\n%s", to_yaml(cfg))
        return Runner(args, cfg).run()
    except ConfigError as err:
        print(f"weightspace: config error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except (WeightSpaceError, OSError, WorkflowFailureError, RPCError) as err:
        print(f"weightspace: {err}", file=sys.stderr)
        return FAILURE
