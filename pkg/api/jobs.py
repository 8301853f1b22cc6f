"""
Simulation Jobs
Runs, sweeps and topology reports submitted over the API.

Each job owns an output directory under the server's output root
(`<kind>_<job_id>` unless the config names one). The POST handler returns
the job right away; the work runs in an executor thread and clients poll
GET /api/jobs/{id} for progress and the JSON result.
"""
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional


class JobStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


STATUS_VALUES = [s.value for s in JobStatus]


@dataclass
class SimJob:
    """One submitted run, sweep or report and where it writes."""
    job_id: str
    operation: str
    output_dir: Path
    status: JobStatus = JobStatus.PENDING
    step: int = 0
    steps: int = 0
    message: str = ""
    result: Any = None
    error: Optional[str] = None
    created_at: float = field(default_factory=time.time)
    started_at: Optional[float] = None
    completed_at: Optional[float] = None

    @property
    def finished(self) -> bool:
        return self.status in (JobStatus.COMPLETED, JobStatus.FAILED)

    def report(self, current: int, total: int, message: str):
        """progress_callback signature used by ExperimentRunner."""
        self.step, self.steps, self.message = current, total, message

    def start(self):
        self.status = JobStatus.RUNNING
        self.started_at = time.time()

    def finish(self, result: Any):
        self.result = result
        self.status = JobStatus.COMPLETED
        self.completed_at = time.time()

    def fail(self, error: str):
        self.error = error
        self.status = JobStatus.FAILED
        self.completed_at = time.time()

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "operation": self.operation,
            "output_dir": str(self.output_dir),
            "status": self.status.value,
            "progress": {"current": self.step, "total": self.steps, "message": self.message},
            "result": self.result,
            "error": self.error,
            "created_at": self.created_at,
            "started_at": self.started_at,
            "completed_at": self.completed_at,
        }


class JobManager:
    """Jobs of one server; at most MAX_JOBS are kept, finished ones dropped first."""

    MAX_JOBS = 100

    def __init__(self, output_root: Path):
        self.output_root = Path(output_root)
        self._jobs: Dict[str, SimJob] = {}
        self._lock = threading.Lock()

    def create_job(self, operation: str, kind: str, output_dir: Optional[str] = None) -> SimJob:
        """New pending job writing to output_dir or <output_root>/<kind>_<id>."""
        job_id = uuid.uuid4().hex[:8]
        out = Path(output_dir) if output_dir else self.output_root / f"{kind}_{job_id}"
        job = SimJob(job_id=job_id, operation=operation, output_dir=out)
        with self._lock:
            self._jobs[job_id] = job
            self._prune()
        return job

    def get_job(self, job_id: str) -> Optional[SimJob]:
        return self._jobs.get(job_id)

    def list_jobs(self, status: Optional[str] = None) -> List[dict]:
        if status is not None and status not in STATUS_VALUES:
            raise ValueError(f"unknown job status '{status}'. Choose from: {STATUS_VALUES}")
        with self._lock:
            jobs = list(self._jobs.values())
        return [j.to_dict() for j in jobs if status is None or j.status.value == status]

    def counts(self) -> Dict[str, int]:
        with self._lock:
            jobs = list(self._jobs.values())
        return {s: sum(1 for j in jobs if j.status.value == s) for s in STATUS_VALUES}

    def execute(self, job: SimJob, work: Callable[[SimJob], Any],
                log_callback: Optional[Callable] = None) -> Callable[[], None]:
        """Blocking body for run_in_executor: work(job) returns the JSON result."""
        def log(line: str):
            if log_callback:
                log_callback(f"[job {job.job_id}] {job.operation} {line}")

        # the closing log line is written before the status flips
        def run():
            job.start()
            try:
                result = work(job)
            except Exception as e:
                log(f"failed: {e}")
                job.fail(str(e))
                return
            log("completed")
            job.finish(result)
        return run

    def _prune(self):
        if len(self._jobs) <= self.MAX_JOBS:
            return
        finished = sorted((j for j in self._jobs.values() if j.finished), key=lambda j: j.created_at)
        for job in finished[:len(self._jobs) - self.MAX_JOBS]:
            del self._jobs[job.job_id]
