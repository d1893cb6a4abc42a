import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor

from temporalio.client import Client
from temporalio.worker import Worker

from orchestration.activities import fit_view, lmc_pair, train_probe_seed
from orchestration.shared import TASK_QUEUE, weightspace_data_converter
from orchestration.workflows import (
    BuildDatasetWorkflow,
    LmcScanWorkflow,
    ProbeSweepWorkflow,
)
from weightspace.config import default_jobs, default_temporal_address

interrupt_event = asyncio.Event()

WORKFLOWS = [BuildDatasetWorkflow, ProbeSweepWorkflow, LmcScanWorkflow]
ACTIVITIES = [fit_view, train_probe_seed, lmc_pair]


def make_worker(client: Client, task_queue: str, jobs: int) -> Worker:
    return Worker(
        client,
        task_queue=task_queue,
        workflows=WORKFLOWS,
        activities=ACTIVITIES,
        # Fits and probe runs are numpy-bound and synchronous.
        activity_executor=ThreadPoolExecutor(jobs),
        max_concurrent_activities=jobs,
    )


async def main():
    address = default_temporal_address() or "localhost:7233"
    jobs = default_jobs()
    client = await Client.connect(address, data_converter=weightspace_data_converter)

    async with make_worker(client, TASK_QUEUE, jobs):
        logging.info("Worker started on %s with %d activity slots", address, jobs)
        # Wait until interrupted
        await interrupt_event.wait()
        logging.info("Shutting down")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    loop = asyncio.new_event_loop()
    try:
        loop.run_until_complete(main())
    except KeyboardInterrupt:
        interrupt_event.set()
        loop.run_until_complete(loop.shutdown_asyncgens())
