"""
Replica fan-out shared by the simulation runners.

Replicas are independent: each derives its stream from (master seed,
replica index), so the pool size never changes the results. Records are
reduced in replica order and persisted one file per replica, with the
manifest written last.
"""

import asyncio
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from ..schemas.run import RunConfig, RunRecord
from ..utils.config import settings
from ..utils.errors import LabError
from ..utils.logger import RunLogger
from ..utils.persistence import read_json, write_json, write_manifest, write_series_csv


def run_directory(config: RunConfig) -> Path:
    """output_dir/runs/<model>-<preset>-<seed>."""
    base = Path(config.output_dir) if config.output_dir else settings.output_dir
    name = f"{config.model}-{config.preset or 'custom'}-{config.seed}"
    return base / "runs" / name


def positions_array(records: Sequence[RunRecord]) -> np.ndarray:
    """Stack replica positions into shape (replicas, times, d)."""
    return np.asarray([r.positions for r in records], dtype=float)


def guarded(summary: Dict[str, Any], key: str, fn: Callable[[], Any]) -> None:
    """Store fn() under key, or the error document when an estimator refuses."""
    try:
        summary[key] = fn()
    except LabError as e:
        summary.setdefault("skipped", {})[key] = e.to_dict()


class ReplicaRunner:
    """Base class: subclasses provide `simulate` and `summarize`."""

    name = "runner"

    def __init__(self, workers: Optional[int] = None):
        self.logger = RunLogger(self.name)
        self.workers = workers or settings.workers
        self.artifacts: List[Path] = []
        self.summary: Dict[str, Any] = {}

    # --- to override ---

    @staticmethod
    def simulate(config: RunConfig, replica: int) -> Any:
        raise NotImplementedError

    def summarize(self, config: RunConfig, records: List[RunRecord]) -> Dict[str, Any]:
        return {}

    def persist_extra(self, run_dir: Path, replica: int, payload: Any) -> None:
        """Hook for per-replica artifacts besides the record (event logs, fields)."""

    def to_record(self, payload: Any) -> RunRecord:
        return payload

    # --- driver ---

    async def fan_out(self, config: RunConfig) -> List[Any]:
        replicas = list(range(config.replicas))
        if self.workers > 1 and len(replicas) > 1:
            loop = asyncio.get_running_loop()
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                futures = [loop.run_in_executor(pool, self.simulate, config, i) for i in replicas]
                return list(await asyncio.gather(*futures))
        payloads = []
        for i in replicas:
            payloads.append(self.simulate(config, i))
            self.logger.progress(i + 1, len(replicas))
        return payloads

    async def run(self, config: RunConfig, save_to_file: bool = True) -> List[RunRecord]:
        """
        Simulate every replica, summarize, and persist.

        Args:
            config: Validated run configuration
            save_to_file: Write records, series and the manifest

        Returns:
            RunRecords in replica order
        """
        self.logger.bind(seed=config.seed)
        self.logger.info("Starting run", model=config.model, replicas=config.replicas, workers=self.workers)
        payloads = await self.fan_out(config)
        records = [self.to_record(p) for p in payloads]

        self.summary = self.summarize(config, records)
        self.logger.info("Run finished", replicas=len(records))

        if save_to_file:
            run_dir = self._persist(config, records, payloads)
            self.logger.info(f"Saved run to {run_dir}")
        return records

    def _persist(self, config: RunConfig, records: List[RunRecord], payloads: List[Any]) -> Path:
        run_dir = run_directory(config)
        self.artifacts = []
        for record, payload in zip(records, payloads):
            stem = f"replica_{record.replica:04d}"
            self.artifacts.append(write_json(run_dir / "records" / f"{stem}.json", record.model_dump(mode="json")))
            if record.positions:
                self.artifacts.append(
                    write_series_csv(run_dir / "series" / f"{stem}.csv", record.times, np.asarray(record.positions))
                )
            self.persist_extra(run_dir, record.replica, payload)

        self.artifacts.append(write_json(run_dir / "summary.json", self.summary))
        write_manifest(run_dir, self.artifacts, config.model_dump(mode="json"), config.seed)
        return run_dir

    @staticmethod
    def load_records(run_dir: Path) -> List[RunRecord]:
        """Load the RunRecords of a run directory in replica order."""
        folder = Path(run_dir) / "records"
        if not folder.exists():
            return []
        return [RunRecord(**read_json(p)) for p in sorted(folder.glob("replica_*.json"))]
