import asyncio
from dataclasses import dataclass
from datetime import timedelta
from typing import Any, Dict, List

from temporalio import workflow
from temporalio.common import RetryPolicy

with workflow.unsafe.imports_passed_through():
    from orchestration.activities import (
        FitViewInput,
        LmcPairInput,
        ProbeSeedInput,
        fit_view,
        lmc_pair,
        train_probe_seed,
    )
    from weightspace.align import AlignConfig
    from weightspace.experiments import LmcPair, ProbeRun
    from weightspace.store import DatasetManifest, encode_samples, plan_fits

RETRY_POLICY = RetryPolicy(maximum_attempts=3)


@dataclass
class BuildDatasetInput:
    manifest: DatasetManifest


@dataclass
class ProbeSweepInput:
    train_path: str
    test_path: str
    config: Dict[str, Any]
    seeds: int


@dataclass
class LmcScanInput:
    dataset_path: str
    pairs: List[LmcPair]
    modes: List[bool]
    num_lambdas: int
    align: AlignConfig


@workflow.defn
class BuildDatasetWorkflow:
    """Fits every (object, view) of a manifest in parallel and returns the WSDS
    blob of the samples in (object, view) order."""

    @workflow.run
    async def run(self, input: BuildDatasetInput) -> bytes:
        jobs = plan_fits(input.manifest)
        workflow.logger.info(
            "BuildDatasetWorkflow started",
            extra={"fits": len(jobs), "seed": input.manifest.seed},
        )
        samples = await asyncio.gather(
            *(
                workflow.execute_activity(
                    fit_view,
                    FitViewInput(input.manifest, job.object_id, job.view_id),
                    start_to_close_timeout=timedelta(minutes=30),
                    # fit_view heartbeats every logged fit step
                    heartbeat_timeout=timedelta(minutes=2),
                    retry_policy=RETRY_POLICY,
                )
                for job in jobs
            )
        )
        return encode_samples(list(samples))


@workflow.defn
class ProbeSweepWorkflow:
    @workflow.run
    async def run(self, input: ProbeSweepInput) -> List[ProbeRun]:
        workflow.logger.info(
            "ProbeSweepWorkflow started", extra={"seeds": input.seeds}
        )
        return list(
            await asyncio.gather(
                *(
                    workflow.execute_activity(
                        train_probe_seed,
                        ProbeSeedInput(
                            input.train_path, input.test_path, input.config, index
                        ),
                        start_to_close_timeout=timedelta(hours=1),
                        retry_policy=RETRY_POLICY,
                    )
                    for index in range(input.seeds)
                )
            )
        )


@workflow.defn
class LmcScanWorkflow:
    @workflow.run
    async def run(self, input: LmcScanInput) -> List[Dict[str, Any]]:
        workflow.logger.info(
            "LmcScanWorkflow started",
            extra={"pairs": len(input.pairs), "modes": input.modes},
        )
        return list(
            await asyncio.gather(
                *(
                    workflow.execute_activity(
                        lmc_pair,
                        LmcPairInput(
                            input.dataset_path,
                            pair,
                            aligned,
                            input.num_lambdas,
                            input.align,
                        ),
                        start_to_close_timeout=timedelta(minutes=30),
                        retry_policy=RETRY_POLICY,
                    )
                    for pair in input.pairs
                    for aligned in input.modes
                )
            )
        )
