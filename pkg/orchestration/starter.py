"""Client-side helpers: run the fan-out workflows and turn their results back
into toolkit objects. Used by ``weightspace --temporal-address``."""

import logging
import uuid
from typing import List, Sequence

import pandas as pd
from temporalio.client import Client

from orchestration.shared import TASK_QUEUE, weightspace_data_converter
from orchestration.workflows import (
    BuildDatasetInput,
    BuildDatasetWorkflow,
    LmcScanInput,
    LmcScanWorkflow,
    ProbeSweepInput,
    ProbeSweepWorkflow,
)
from weightspace import config as run_config
from weightspace.align import AlignConfig
from weightspace.core import LabeledSample
from weightspace.experiments import LmcPair, ProbeRun
from weightspace.store import DatasetManifest, InrDataset, decode_samples

logger = logging.getLogger(__name__)


async def connect(address: str) -> Client:
    return await Client.connect(address, data_converter=weightspace_data_converter)


async def build_dataset(
    client: Client, manifest: DatasetManifest, task_queue: str = TASK_QUEUE
) -> InrDataset:
    blob = await client.execute_workflow(
        BuildDatasetWorkflow.run,
        BuildDatasetInput(manifest),
        id=f"weightspace-build-{uuid.uuid4()}",
        task_queue=task_queue,
    )
    samples = [
        LabeledSample.one_hot(v, label, manifest.num_classes, object_id, view_id)
        for object_id, view_id, label, v in decode_samples(
            blob, manifest.spec, manifest.num_classes
        )
    ]
    return InrDataset(manifest.spec, samples, manifest)


async def probe_sweep(
    client: Client,
    train_path: str,
    test_path: str,
    cfg: run_config.RunConfig,
    seeds: int,
    task_queue: str = TASK_QUEUE,
) -> List[ProbeRun]:
    return await client.execute_workflow(
        ProbeSweepWorkflow.run,
        ProbeSweepInput(train_path, test_path, run_config.to_dict(cfg), seeds),
        id=f"weightspace-probe-{uuid.uuid4()}",
        task_queue=task_queue,
    )


async def lmc_scan(
    client: Client,
    dataset_path: str,
    pairs: Sequence[LmcPair],
    modes: Sequence[bool],
    num_lambdas: int,
    align: AlignConfig,
    task_queue: str = TASK_QUEUE,
) -> pd.DataFrame:
    rows = await client.execute_workflow(
        LmcScanWorkflow.run,
        LmcScanInput(dataset_path, list(pairs), list(modes), num_lambdas, align),
        id=f"weightspace-lmc-{uuid.uuid4()}",
        task_queue=task_queue,
    )
    return pd.DataFrame(rows)
