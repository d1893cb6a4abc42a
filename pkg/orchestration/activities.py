import dataclasses
from dataclasses import dataclass
from typing import Any, Dict

from temporalio import activity
from temporalio.exceptions import ApplicationError

from weightspace import experiments, store
from weightspace.align import AlignConfig
from weightspace.config import config_from_dict
from weightspace.core import LabeledSample
from weightspace.errors import WeightSpaceError
from weightspace.experiments import LmcPair, ProbeRun
from weightspace.probe import ProbeAugmentation
from weightspace.store import DatasetManifest


@dataclass
class FitViewInput:
    manifest: DatasetManifest
    object_id: int
    view_id: int


@dataclass
class ProbeSeedInput:
    train_path: str
    test_path: str
    # A RunConfig as a plain mapping, validated again on the worker.
    config: Dict[str, Any]
    # Run i of a sweep trains with probe seed config.probe.seed + i.
    index: int


@dataclass
class LmcPairInput:
    dataset_path: str
    pair: LmcPair
    aligned: bool
    num_lambdas: int
    align: AlignConfig


def _non_retryable(err: WeightSpaceError) -> ApplicationError:
    # Every toolkit failure is deterministic, so a retry would fail the same way.
    return ApplicationError(str(err), type=type(err).__name__, non_retryable=True)


@activity.defn
def fit_view(input: FitViewInput) -> LabeledSample:
    job = store.fit_job(input.manifest, input.object_id, input.view_id)

    def heartbeat(step: int, loss: float) -> None:
        activity.heartbeat(step)

    try:
        return store.run_fit_job(job, input.manifest, on_step=heartbeat)
    except WeightSpaceError as err:
        raise _non_retryable(err) from err


@activity.defn
def train_probe_seed(input: ProbeSeedInput) -> ProbeRun:
    activity.logger.info(
        "Training probe",
        extra={"index": input.index, "train_path": input.train_path},
    )
    try:
        cfg = config_from_dict(input.config)
        train = store.load(input.train_path)
        test = store.load(input.test_path)
        aug = ProbeAugmentation(cfg.augment, cfg.mixup)
        probe_cfg = dataclasses.replace(cfg.probe, seed=cfg.probe.seed + input.index)
        return experiments.probe_run(train, test, aug, probe_cfg)
    except WeightSpaceError as err:
        raise _non_retryable(err) from err


@activity.defn
def lmc_pair(input: LmcPairInput) -> Dict[str, Any]:
    try:
        dataset = store.load(input.dataset_path)
        return experiments.lmc_pair(
            dataset, input.pair, input.aligned, input.num_lambdas, input.align
        )
    except WeightSpaceError as err:
        raise _non_retryable(err) from err
