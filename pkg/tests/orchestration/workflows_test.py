import uuid

import pandas as pd
import pytest
from temporalio.client import Client

from orchestration import starter
from orchestration.shared import weightspace_data_converter
from orchestration.worker import make_worker
from tests.weightspace.helpers import quick_fit
from weightspace import experiments, store
from weightspace.align import AlignConfig
from weightspace.config import RunConfig
from weightspace.core import MlpSpec
from weightspace.probe import ProbeAugmentation, ProbeConfig

pytestmark = pytest.mark.workflow

MANIFEST = store.make_manifest(
    2,
    2,
    resolution=8,
    fit_cfg=quick_fit(steps=20),
    seed=1,
    spec=MlpSpec.siren([2, 8, 8, 1]),
)


def _with_converter(client: Client) -> Client:
    config = client.config()
    config["data_converter"] = weightspace_data_converter
    return Client(**config)


async def test_build_dataset_matches_local_build(client: Client):
    client = _with_converter(client)
    task_queue = f"tq-{uuid.uuid4()}"
    async with make_worker(client, task_queue, jobs=2):
        remote = await starter.build_dataset(client, MANIFEST, task_queue)
    local = store.build_from_manifest(MANIFEST)
    assert remote.manifest == MANIFEST
    assert store.encode_samples(remote.samples) == store.encode_samples(local.samples)


async def test_probe_sweep_and_lmc_scan(client: Client, tmp_path):
    client = _with_converter(client)
    path = tmp_path / "d"
    dataset = store.build_from_manifest(MANIFEST)
    store.save(dataset, path)
    cfg = RunConfig(probe=ProbeConfig(steps=10, batch_size=2))
    task_queue = f"tq-{uuid.uuid4()}"
    async with make_worker(client, task_queue, jobs=2):
        runs = await starter.probe_sweep(
            client, str(path), str(path), cfg, 2, task_queue
        )
        pairs = experiments.lmc_pairs(dataset, 2)
        frame = await starter.lmc_scan(
            client, str(path), pairs, [False, True], 5, AlignConfig(), task_queue
        )

    local = experiments.probe_runs(dataset, dataset, ProbeAugmentation(), cfg.probe, 2)
    assert [r.seed for r in runs] == [0, 1]
    assert [r.accuracy for r in runs] == [r.accuracy for r in local]
    assert runs[0].log.steps == local[0].log.steps

    expected = experiments.lmc_scan(dataset, 2, (False, True), 5, AlignConfig())
    pd.testing.assert_frame_equal(frame, expected)
